//! Builds `data/langid/profiles.json` from a directory of `<lang>.txt` files.
//!
//! cargo run -p onionscope-core --example train_langid -- TRAIN_DIR OUT_JSON [PROFILE_LEN]

use std::fs;

use onionscope::langid::{ProfileSet, DEFAULT_PROFILE_LEN};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let [dir, out, rest @ ..] = args.as_slice() else {
        return Err("usage: train_langid TRAIN_DIR OUT_JSON [PROFILE_LEN]".into());
    };
    let len = rest.first().map(|s| s.parse()).transpose()?.unwrap_or(DEFAULT_PROFILE_LEN);
    let mut corpora = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "txt") {
            let lang = path.file_stem().unwrap().to_string_lossy().into_owned();
            corpora.push((lang, fs::read_to_string(&path)?));
        }
    }
    corpora.sort();
    let set = ProfileSet::train(corpora.iter().map(|(l, t)| (l.as_str(), t.as_str())), len);
    fs::write(out, set.to_json())?;
    eprintln!("{} profiles of {len} n-grams", set.profiles.len());
    Ok(())
}
