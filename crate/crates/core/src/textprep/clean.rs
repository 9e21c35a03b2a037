use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// Currency symbols and codes treated as monetary values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoneyConfig {
    pub symbols: Vec<String>,
    pub codes: Vec<String>,
}

impl Default for MoneyConfig {
    fn default() -> Self {
        Self {
            symbols: ["$", "€", "£"].map(String::from).to_vec(),
            codes: ["usd", "eur", "btc", "xmr"].map(String::from).to_vec(),
        }
    }
}

/// Compiled noise-removal patterns.
#[derive(Debug, Clone)]
pub struct Preprocessor {
    removals: Vec<Regex>,
}

const PUNCT: &str = ".,:;?!'\"()-";

/// Passes needed in the worst case are bounded by input length; this cap is
/// only a guard, real inputs settle in one or two.
const MAX_PASSES: usize = 16;

impl Preprocessor {
    pub fn new(money: &MoneyConfig) -> Self {
        let escape_all = |xs: &[String]| xs.iter().map(|x| regex::escape(x)).collect::<Vec<_>>().join("|");
        let mut pats = vec![
            r"(?s)-----BEGIN PGP[^\n]*?-----.*?(?:-----END PGP[^\n]*?-----|\z)".to_string(),
            r"(?s)-----(?:BEGIN|END) PGP[^\n]*".to_string(),
            r"</?[A-Za-z!][^<>]*>".to_string(),
            r"(?i)\b(?:https?|ftp)://\S+".to_string(),
            r"(?i)\S+\.onion\S*".to_string(),
            r"\S+@\S+\.\S+".to_string(),
            r"(?i)\bbc1[a-z0-9]{11,71}\b".to_string(),
            r"\b[13][a-km-zA-HJ-NP-Z1-9]{25,34}\b".to_string(),
        ];
        if !money.symbols.is_empty() {
            pats.push(format!(r"(?:{})\s?\d[\d.,]*", escape_all(&money.symbols)));
        }
        if !money.codes.is_empty() {
            pats.push(format!(r"(?i)\b\d[\d.,]*\s?(?:{})\b", escape_all(&money.codes)));
        }
        let removals = pats.iter().map(|p| Regex::new(p).expect("valid pattern")).collect();
        Self { removals }
    }

    /// Cleans text to a single line of space-separated words.
    ///
    /// The result is a fixed point: `run(run(x)) == run(x)`.
    pub fn run(&self, text: &str) -> String {
        let mut cur = self.pass(text);
        for _ in 0..MAX_PASSES {
            let next = self.pass(&cur);
            if next == cur {
                break;
            }
            cur = next;
        }
        cur
    }

    fn pass(&self, text: &str) -> String {
        let mut s = text.to_string();
        for re in &self.removals {
            if re.is_match(&s) {
                s = re.replace_all(&s, " ").into_owned();
            }
        }
        let s = collapse_repeats(&strip_special(&s));
        let sentences = split_sentences(&s);
        let mut out: Vec<String> = Vec::with_capacity(sentences.len());
        for sent in sentences {
            let sent = dedupe_words(sent);
            if sent.is_empty() {
                continue;
            }
            if out.last().is_some_and(|prev| prev.to_lowercase() == sent.to_lowercase()) {
                continue;
            }
            out.push(sent);
        }
        out.join(" ")
    }
}

impl Default for Preprocessor {
    fn default() -> Self {
        Self::new(&MoneyConfig::default())
    }
}

/// Noise removal with the default currency list.
pub fn preprocess(text: &str) -> String {
    static P: OnceLock<Preprocessor> = OnceLock::new();
    P.get_or_init(Preprocessor::default).run(text)
}

fn strip_special(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_alphanumeric() || PUNCT.contains(c) || c == ' ' {
                c
            } else if c.is_whitespace() || c.is_control() {
                ' '
            } else if is_combining(c) {
                c
            } else {
                ' '
            }
        })
        .collect()
}

/// Combining marks belong to the preceding letter (Devanagari, Thai, ...).
fn is_combining(c: char) -> bool {
    matches!(c as u32,
        0x0300..=0x036F | 0x0483..=0x0489 | 0x0591..=0x05BD | 0x0610..=0x061A | 0x064B..=0x065F
        | 0x0670 | 0x06D6..=0x06DC | 0x0900..=0x0903 | 0x093A..=0x094F | 0x0951..=0x0957
        | 0x0962..=0x0963 | 0x0981..=0x0983 | 0x09BC..=0x09D7 | 0x0E31 | 0x0E34..=0x0E3A
        | 0x0E47..=0x0E4E | 0x1AB0..=0x1AFF | 0x1DC0..=0x1DFF | 0x200C..=0x200D | 0x20D0..=0x20FF
        | 0xFE20..=0xFE2F)
}

/// Runs of one punctuation mark become one mark; runs of three or more of the
/// same letter become one letter. Whitespace collapses to single spaces.
fn collapse_repeats(s: &str) -> String {
    let chars: Vec<char> = s.chars().collect();
    let mut out = String::with_capacity(s.len());
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let mut j = i + 1;
        while j < chars.len() && chars[j] == c {
            j += 1;
        }
        let run = j - i;
        let keep = if c == ' ' || PUNCT.contains(c) {
            1
        } else if c.is_alphabetic() && run >= 3 {
            1
        } else {
            run
        };
        if !(c == ' ' && (out.is_empty() || j == chars.len())) {
            out.extend(std::iter::repeat_n(c, keep));
        }
        i = j;
    }
    out
}

/// Splits after `.`, `?` or `!` when followed by whitespace and an uppercase
/// letter or digit.
pub fn split_sentences(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut it = s.char_indices().peekable();
    while let Some((i, c)) = it.next() {
        if !matches!(c, '.' | '?' | '!') {
            continue;
        }
        let rest = &s[i + c.len_utf8()..];
        let trimmed = rest.trim_start();
        if trimmed.len() == rest.len() {
            continue;
        }
        if trimmed.chars().next().is_some_and(|n| n.is_uppercase() || n.is_ascii_digit()) {
            let end = i + c.len_utf8();
            let piece = s[start..end].trim();
            if !piece.is_empty() {
                out.push(piece);
            }
            start = end;
        }
    }
    let tail = s[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

fn dedupe_words(sentence: &str) -> String {
    let mut out: Vec<&str> = Vec::new();
    for w in sentence.split_whitespace() {
        if out.last().is_some_and(|p| p.to_lowercase() == w.to_lowercase()) {
            continue;
        }
        out.push(w);
    }
    out.join(" ")
}
