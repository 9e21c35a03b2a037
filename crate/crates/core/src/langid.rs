//! Language identification by character n-gram rank profiles, and
//! propagation of verdicts across duplicate groups.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dedup::DupGroup;

pub const UNDETERMINED: &str = "und";
pub const MAX_NGRAM: usize = 5;
pub const DEFAULT_PROFILE_LEN: usize = 2000;
pub const DEFAULT_DOC_LEN: usize = 400;
/// Texts shorter than this many words get a proportionally scaled confidence.
pub const CONFIDENT_WORDS: usize = 20;

const BUNDLED_PROFILES: &str = include_str!("../data/langid/profiles.json");

#[derive(Debug, Error)]
pub enum LangIdError {
    #[error("bad profile data: {0}")]
    BadProfiles(String),
    #[error("no language profiles loaded")]
    NoProfiles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageVerdict {
    pub lang: String,
    pub confidence: f64,
}

impl LanguageVerdict {
    pub fn undetermined() -> Self {
        Self { lang: UNDETERMINED.into(), confidence: 0.0 }
    }
}

pub trait LanguageDetector: Send + Sync {
    fn detect(&self, text: &str) -> LanguageVerdict;
}

/// Ranked n-gram frequencies of `text`, most frequent first, ties
/// lexicographic. Words are runs of letters, lowercased and padded with `_`.
pub fn ranked_ngrams(text: &str, limit: usize) -> Vec<String> {
    let mut counts: HashMap<String, u32> = HashMap::new();
    let lower = text.to_lowercase();
    for word in lower.split(|c: char| !c.is_alphabetic()).filter(|w| !w.is_empty()) {
        let chars: Vec<char> = std::iter::once('_').chain(word.chars()).chain(std::iter::once('_')).collect();
        for n in 1..=MAX_NGRAM {
            for win in chars.windows(n) {
                if n == 1 && win[0] == '_' {
                    continue;
                }
                *counts.entry(win.iter().collect()).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(String, u32)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(limit);
    ranked.into_iter().map(|(g, _)| g).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSet {
    pub profile_len: usize,
    /// Language code to n-grams by rank.
    pub profiles: BTreeMap<String, Vec<String>>,
}

impl ProfileSet {
    pub fn train<'a>(corpora: impl IntoIterator<Item = (&'a str, &'a str)>, profile_len: usize) -> Self {
        let profiles = corpora.into_iter().map(|(lang, text)| (lang.to_string(), ranked_ngrams(text, profile_len))).collect();
        Self { profile_len, profiles }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("profiles serialize")
    }

    pub fn from_json(s: &str) -> Result<Self, LangIdError> {
        let set: Self = serde_json::from_str(s).map_err(|e| LangIdError::BadProfiles(e.to_string()))?;
        if set.profiles.is_empty() {
            return Err(LangIdError::NoProfiles);
        }
        Ok(set)
    }

    pub fn bundled() -> Self {
        Self::from_json(BUNDLED_PROFILES).expect("bundled profiles are valid")
    }

    pub fn languages(&self) -> Vec<&str> {
        self.profiles.keys().map(String::as_str).collect()
    }
}

/// Out-of-place rank distance classifier.
#[derive(Debug, Clone)]
pub struct NgramDetector {
    profile_len: usize,
    doc_len: usize,
    ranks: Vec<(String, HashMap<String, usize>)>,
}

impl NgramDetector {
    pub fn new(set: &ProfileSet) -> Self {
        let ranks = set
            .profiles
            .iter()
            .map(|(lang, grams)| (lang.clone(), grams.iter().enumerate().map(|(i, g)| (g.clone(), i)).collect()))
            .collect();
        Self { profile_len: set.profile_len, doc_len: DEFAULT_DOC_LEN.min(set.profile_len), ranks }
    }

    /// Number of document n-grams compared against each profile.
    pub fn with_doc_len(mut self, doc_len: usize) -> Self {
        self.doc_len = doc_len.max(1);
        self
    }

    pub fn bundled() -> Self {
        Self::new(&ProfileSet::bundled())
    }

    /// Normalized distance in [0, 1] to every profile, sorted ascending.
    pub fn distances(&self, text: &str) -> Vec<(String, f64)> {
        let doc = ranked_ngrams(text, self.doc_len);
        if doc.is_empty() {
            return Vec::new();
        }
        let max_penalty = self.profile_len;
        let mut out: Vec<(String, f64)> = self
            .ranks
            .iter()
            .map(|(lang, ranks)| {
                let d: usize = doc
                    .iter()
                    .enumerate()
                    .map(|(i, g)| ranks.get(g).map_or(max_penalty, |&r| r.abs_diff(i).min(max_penalty)))
                    .sum();
                (lang.clone(), d as f64 / (doc.len() * max_penalty) as f64)
            })
            .collect();
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        out
    }
}

impl LanguageDetector for NgramDetector {
    /// Confidence is the relative margin between the two closest profiles,
    /// scaled down linearly for texts under [`CONFIDENT_WORDS`] words.
    fn detect(&self, text: &str) -> LanguageVerdict {
        let d = self.distances(text);
        let Some((best, d1)) = d.first().cloned() else {
            return LanguageVerdict::undetermined();
        };
        let margin = match d.get(1) {
            Some((_, d2)) if *d2 > 0.0 => (d2 - d1) / d2,
            _ => 1.0,
        };
        let words = text.split_whitespace().count();
        let scale = (words as f64 / CONFIDENT_WORDS as f64).min(1.0);
        LanguageVerdict { lang: best, confidence: (margin * scale).clamp(0.0, 1.0) }
    }
}

pub fn detect_language(detector: &dyn LanguageDetector, text: &str) -> LanguageVerdict {
    if text.trim().is_empty() {
        return LanguageVerdict::undetermined();
    }
    detector.detect(text)
}

/// Language of one document after propagation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageRow {
    pub address: String,
    pub lang: String,
    pub confidence: f64,
    pub propagated: bool,
}

/// Every member of a group takes its representative's verdict; documents
/// outside any group keep their own.
pub fn propagate_language(
    verdicts: &BTreeMap<String, LanguageVerdict>,
    groups: &[DupGroup],
) -> BTreeMap<String, LanguageRow> {
    let mut out: BTreeMap<String, LanguageRow> = verdicts
        .iter()
        .map(|(doc, v)| {
            (doc.clone(), LanguageRow { address: doc.clone(), lang: v.lang.clone(), confidence: v.confidence, propagated: false })
        })
        .collect();
    for g in groups {
        let Some(rep) = verdicts.get(&g.representative) else { continue };
        for m in &g.members {
            if *m == g.representative {
                continue;
            }
            out.insert(
                m.clone(),
                LanguageRow { address: m.clone(), lang: rep.lang.clone(), confidence: rep.confidence, propagated: true },
            );
        }
    }
    out
}

/// Documents per language.
pub fn language_histogram<'a>(langs: impl IntoIterator<Item = &'a str>) -> BTreeMap<String, usize> {
    let mut h = BTreeMap::new();
    for l in langs {
        *h.entry(l.to_string()).or_default() += 1;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ngrams_pad_words() {
        let g = ranked_ngrams("ab", 100);
        for want in ["a", "b", "_a", "ab", "b_", "_ab", "ab_", "_ab_"] {
            assert!(g.iter().any(|x| x == want), "{want}");
        }
        assert!(!g.iter().any(|x| x == "_"));
        assert!(ranked_ngrams("12 !!", 10).is_empty());
    }

    #[test]
    fn empty_is_undetermined() {
        let d = NgramDetector::bundled();
        assert_eq!(detect_language(&d, ""), LanguageVerdict::undetermined());
        assert_eq!(detect_language(&d, "   ").lang, "und");
    }

    #[test]
    fn bundled_inventory() {
        assert!(ProfileSet::bundled().profiles.len() >= 30);
    }

    #[test]
    fn short_text_lowers_confidence() {
        let d = NgramDetector::bundled();
        let long = "the quick brown fox jumps over the lazy dog and then it runs away into the forest where nobody can find it again because the trees are very tall";
        let short = "the quick brown fox";
        assert!(d.detect(short).confidence <= d.detect(long).confidence);
    }
}
