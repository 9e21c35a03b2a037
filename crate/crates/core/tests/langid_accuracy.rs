use std::collections::BTreeMap;

use chrono::{TimeZone, Utc};
use onionscope::dedup::DupGroup;
use onionscope::langid::{
    detect_language, language_histogram, propagate_language, LanguageDetector, LanguageVerdict, NgramDetector,
    ProfileSet,
};

const HELDOUT: &str = include_str!("fixtures/langid/heldout.jsonl");

#[derive(serde::Deserialize)]
struct Snippet {
    lang: String,
    text: String,
}

#[test]
fn heldout_snippets_at_least_95_percent() {
    let d = NgramDetector::bundled();
    let snippets: Vec<Snippet> = HELDOUT.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(snippets.len(), 500);
    let mut per_lang: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for s in &snippets {
        assert!(s.text.split_whitespace().count() >= 100);
        let e = per_lang.entry(s.lang.as_str()).or_default();
        e.1 += 1;
        if d.detect(&s.text).lang == s.lang {
            e.0 += 1;
        }
    }
    assert_eq!(per_lang.len(), 10);
    let correct: usize = per_lang.values().map(|v| v.0).sum();
    let acc = correct as f64 / snippets.len() as f64;
    assert!(acc >= 0.95, "accuracy {acc}: {per_lang:?}");
}

#[test]
fn english_and_russian_fixtures() {
    let d = NgramDetector::bundled();
    let en = detect_language(&d, include_str!("fixtures/langid/en_200.txt"));
    let ru = detect_language(&d, include_str!("fixtures/langid/ru_200.txt"));
    assert_eq!(en.lang, "en");
    assert_eq!(ru.lang, "ru");
    assert!(en.confidence > 0.0 && en.confidence <= 1.0);
}

#[test]
fn profile_inventory_round_trips() {
    let set = ProfileSet::bundled();
    assert!(set.languages().len() >= 30);
    for l in ["en", "ru", "de", "fr", "es", "pt", "it", "nl", "pl", "tr", "zh", "ar"] {
        assert!(set.languages().contains(&l), "{l}");
    }
    assert_eq!(ProfileSet::from_json(&set.to_json()).unwrap(), set);
}

fn group(id: u32, rep: &str, dups: &[&str]) -> DupGroup {
    let mut members = vec![rep.to_string()];
    members.extend(dups.iter().map(|s| s.to_string()));
    DupGroup {
        id,
        founder: rep.into(),
        representative: rep.into(),
        rep_len: 100,
        rep_downloaded_at: Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
        members,
        degenerate: false,
    }
}

fn v(lang: &str) -> LanguageVerdict {
    LanguageVerdict { lang: lang.into(), confidence: 0.9 }
}

#[test]
fn duplicates_inherit_representative_language() {
    let verdicts: BTreeMap<String, LanguageVerdict> = [("a".to_string(), v("en"))].into();
    let out = propagate_language(&verdicts, &[group(0, "a", &["b", "c", "d"])]);
    assert_eq!(out.len(), 4);
    assert!(out.values().all(|r| r.lang == "en"));
    assert_eq!(out.values().filter(|r| r.propagated).count(), 3);
}

#[test]
fn uniques_only_is_identity() {
    let verdicts: BTreeMap<String, LanguageVerdict> = [("a".into(), v("en")), ("b".into(), v("ru"))].into();
    let out = propagate_language(&verdicts, &[]);
    assert_eq!(out.len(), 2);
    for (k, r) in &out {
        assert_eq!(r.lang, verdicts[k].lang);
        assert!(!r.propagated);
    }
}

#[test]
fn heavy_replication_shifts_distribution() {
    // 6 of 10 uniques English; one English site has 20 copies
    let langs = ["en", "en", "en", "en", "en", "en", "ru", "ru", "es", "de"];
    let verdicts: BTreeMap<String, LanguageVerdict> =
        langs.iter().enumerate().map(|(i, l)| (format!("u{i}"), v(l))).collect();
    let dups: Vec<String> = (0..20).map(|i| format!("copy{i}")).collect();
    let dup_refs: Vec<&str> = dups.iter().map(String::as_str).collect();
    let out = propagate_language(&verdicts, &[group(0, "u0", &dup_refs)]);
    let unique = language_histogram(verdicts.values().map(|v| v.lang.as_str()));
    let total = language_histogram(out.values().map(|r| r.lang.as_str()));
    assert_eq!(unique.values().sum::<usize>(), 10);
    assert_eq!(total.values().sum::<usize>(), 30);
    let unique_share = unique["en"] as f64 / 10.0;
    let total_share = total["en"] as f64 / 30.0;
    assert_eq!(total["en"], 26);
    assert!(total_share > unique_share);
    for other in ["ru", "es", "de"] {
        assert_eq!(unique[other], total[other]);
    }
}
