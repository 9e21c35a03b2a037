//! Exact and near-duplicate detection across the accumulated corpus.

mod minhash;

pub use minhash::{
    estimate_jaccard, lsh_candidates, minhash_signature, shingle, LshIndex, MinHashSignature,
    PermutationFamily, ShingleSet, BANDS, DEFAULT_SHINGLE_K, NUM_PERM, ROWS_PER_BAND,
};

use std::collections::HashMap;

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use xxhash_rust::xxh3::xxh3_128;

pub const DEFAULT_THRESHOLD: f64 = 0.9;
pub const DEFAULT_SEED: u64 = 0x6f6e_696f_6e73;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DedupConfig {
    pub shingle_k: usize,
    pub seed: u64,
    pub threshold: f64,
}

impl Default for DedupConfig {
    fn default() -> Self {
        Self { shingle_k: DEFAULT_SHINGLE_K, seed: DEFAULT_SEED, threshold: DEFAULT_THRESHOLD }
    }
}

#[derive(Debug, Error)]
pub enum DedupError {
    #[error("corpus snapshot is inconsistent: {0}")]
    BadSnapshot(String),
}

/// One document entering deduplication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DedupInput {
    pub id: String,
    pub text: String,
    pub downloaded_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Verdict {
    ExactDuplicateOf { rep: String },
    NearDuplicateOf { rep: String, jaccard: f64 },
    Unique,
}

impl Verdict {
    pub fn label(&self) -> &'static str {
        match self {
            Verdict::ExactDuplicateOf { .. } => "exact",
            Verdict::NearDuplicateOf { .. } => "near",
            Verdict::Unique => "unique",
        }
    }

    pub fn is_duplicate(&self) -> bool {
        !matches!(self, Verdict::Unique)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DedupOutcome {
    pub doc: String,
    pub verdict: Verdict,
    /// Representative of the doc's group once this verdict was made.
    pub representative: String,
    pub group: u32,
}

/// A set of documents sharing content.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DupGroup {
    pub id: u32,
    /// The group's first document, whose verdict was `Unique`.
    pub founder: String,
    /// Longest member so far (ties go to the earliest download).
    pub representative: String,
    pub rep_len: usize,
    pub rep_downloaded_at: DateTime<Utc>,
    /// All members in arrival order, founder first.
    pub members: Vec<String>,
    /// Group of empty texts.
    pub degenerate: bool,
}

impl DupGroup {
    pub fn duplicates(&self) -> usize {
        self.members.len() - 1
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IndexedDoc {
    group: u32,
    text: String,
}

/// Persistent deduplication state carried from one daily batch to the next.
#[derive(Debug, Clone)]
pub struct CorpusState {
    cfg: DedupConfig,
    family: PermutationFamily,
    exact: HashMap<u128, u32>,
    groups: Vec<DupGroup>,
    member_group: HashMap<String, u32>,
    indexed: Vec<IndexedDoc>,
    shingles: Vec<ShingleSet>,
    lsh: LshIndex,
}

/// Serializable form of [`CorpusState`]; derived structures are rebuilt on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusSnapshot {
    pub config: DedupConfig,
    pub groups: Vec<DupGroup>,
    /// Content hash (hex) to group id.
    pub exact: Vec<(String, u32)>,
    indexed: Vec<IndexedDoc>,
}

struct Prepared {
    hash: u128,
    shingles: ShingleSet,
    signature: Option<MinHashSignature>,
}

impl CorpusState {
    pub fn new(cfg: DedupConfig) -> Self {
        Self {
            cfg,
            family: PermutationFamily::new(cfg.seed),
            exact: HashMap::new(),
            groups: Vec::new(),
            member_group: HashMap::new(),
            indexed: Vec::new(),
            shingles: Vec::new(),
            lsh: LshIndex::new(),
        }
    }

    pub fn config(&self) -> &DedupConfig {
        &self.cfg
    }

    pub fn groups(&self) -> &[DupGroup] {
        &self.groups
    }

    pub fn group_of(&self, doc: &str) -> Option<&DupGroup> {
        self.member_group.get(doc).map(|&g| &self.groups[g as usize])
    }

    pub fn doc_count(&self) -> usize {
        self.member_group.len()
    }

    /// Documents whose shingle sets are searchable for near duplicates.
    pub fn indexed_count(&self) -> usize {
        self.indexed.len()
    }

    fn prepare(&self, text: &str) -> Prepared {
        let shingles = shingle(text, self.cfg.shingle_k);
        let signature = (!text.trim().is_empty() && !shingles.is_empty()).then(|| self.family.signature(&shingles));
        Prepared { hash: xxh3_128(text.as_bytes()), shingles, signature }
    }

    fn index(&mut self, group: u32, text: &str, shingles: ShingleSet, sig: &MinHashSignature) {
        let id = self.indexed.len() as u32;
        self.lsh.insert(id, sig);
        self.indexed.push(IndexedDoc { group, text: text.to_string() });
        self.shingles.push(shingles);
    }

    /// Best verified near match: (group, jaccard), ties to the lowest group.
    fn near_match(&self, p: &Prepared) -> Option<(u32, f64)> {
        let sig = p.signature.as_ref()?;
        let mut best: Option<(u32, f64)> = None;
        for cand in self.lsh.candidates(sig) {
            let j = p.shingles.jaccard(&self.shingles[cand as usize]);
            if j < self.cfg.threshold {
                continue;
            }
            let g = self.indexed[cand as usize].group;
            best = match best {
                Some((bg, bj)) if bj > j || (bj == j && bg <= g) => Some((bg, bj)),
                _ => Some((g, j)),
            };
        }
        best
    }

    /// Classifies `docs` in order against everything seen so far (including
    /// earlier docs of the same batch) and updates the state.
    pub fn dedup_batch(&mut self, docs: &[DedupInput]) -> Vec<DedupOutcome> {
        let prepared: Vec<Prepared> = docs.par_iter().map(|d| self.prepare(&d.text)).collect();
        let mut out = Vec::with_capacity(docs.len());
        for (doc, p) in docs.iter().zip(prepared) {
            out.push(self.classify(doc, p));
        }
        out
    }

    fn classify(&mut self, doc: &DedupInput, p: Prepared) -> DedupOutcome {
        let len = doc.text.chars().count();
        if let Some(&g) = self.exact.get(&p.hash) {
            let rep = self.groups[g as usize].representative.clone();
            self.join(g, doc, len, None);
            return DedupOutcome {
                doc: doc.id.clone(),
                verdict: Verdict::ExactDuplicateOf { rep },
                representative: self.groups[g as usize].representative.clone(),
                group: g,
            };
        }
        if let Some((g, jaccard)) = self.near_match(&p) {
            let rep = self.groups[g as usize].representative.clone();
            self.exact.insert(p.hash, g);
            self.join(g, doc, len, Some(p));
            return DedupOutcome {
                doc: doc.id.clone(),
                verdict: Verdict::NearDuplicateOf { rep, jaccard },
                representative: self.groups[g as usize].representative.clone(),
                group: g,
            };
        }
        let g = self.groups.len() as u32;
        self.groups.push(DupGroup {
            id: g,
            founder: doc.id.clone(),
            representative: doc.id.clone(),
            rep_len: len,
            rep_downloaded_at: doc.downloaded_at,
            members: vec![doc.id.clone()],
            degenerate: doc.text.trim().is_empty(),
        });
        self.member_group.insert(doc.id.clone(), g);
        self.exact.insert(p.hash, g);
        if let Some(sig) = &p.signature {
            self.index(g, &doc.text, p.shingles, sig);
        }
        DedupOutcome { doc: doc.id.clone(), verdict: Verdict::Unique, representative: doc.id.clone(), group: g }
    }

    /// Adds a member; a longer member (or an equally long, earlier one)
    /// becomes the representative and is indexed for future near matches.
    fn join(&mut self, g: u32, doc: &DedupInput, len: usize, near: Option<Prepared>) {
        self.member_group.insert(doc.id.clone(), g);
        let group = &mut self.groups[g as usize];
        group.members.push(doc.id.clone());
        let promote = len > group.rep_len || (len == group.rep_len && doc.downloaded_at < group.rep_downloaded_at);
        if !promote {
            return;
        }
        group.representative = doc.id.clone();
        group.rep_len = len;
        group.rep_downloaded_at = doc.downloaded_at;
        if let Some(p) = near {
            if let Some(sig) = &p.signature {
                self.index(g, &doc.text, p.shingles, sig);
            }
        }
    }

    pub fn snapshot(&self) -> CorpusSnapshot {
        let mut exact: Vec<(String, u32)> = self.exact.iter().map(|(h, g)| (format!("{h:032x}"), *g)).collect();
        exact.sort();
        CorpusSnapshot {
            config: self.cfg,
            groups: self.groups.clone(),
            exact,
            indexed: self.indexed.clone(),
        }
    }

    /// Rebuilds the state, recomputing shingles, signatures and LSH tables.
    pub fn restore(snap: CorpusSnapshot) -> Result<Self, DedupError> {
        let mut state = Self::new(snap.config);
        let n = snap.groups.len() as u32;
        for (i, g) in snap.groups.iter().enumerate() {
            if g.id != i as u32 || g.members.is_empty() {
                return Err(DedupError::BadSnapshot(format!("group {i} malformed")));
            }
            for m in &g.members {
                state.member_group.insert(m.clone(), g.id);
            }
        }
        for (hex, g) in snap.exact {
            let h = u128::from_str_radix(&hex, 16).map_err(|e| DedupError::BadSnapshot(e.to_string()))?;
            if g >= n {
                return Err(DedupError::BadSnapshot(format!("hash points at missing group {g}")));
            }
            state.exact.insert(h, g);
        }
        state.groups = snap.groups;
        let prepared: Vec<Prepared> = snap.indexed.par_iter().map(|d| state.prepare(&d.text)).collect();
        for (d, p) in snap.indexed.iter().zip(prepared) {
            if d.group >= n {
                return Err(DedupError::BadSnapshot(format!("indexed doc in missing group {}", d.group)));
            }
            if let Some(sig) = &p.signature {
                state.index(d.group, &d.text, p.shingles, sig);
            }
        }
        Ok(state)
    }
}

impl Default for CorpusState {
    fn default() -> Self {
        Self::new(DedupConfig::default())
    }
}

/// Free-function form of [`CorpusState::dedup_batch`].
pub fn dedup_batch(new_docs: &[DedupInput], corpus_state: &mut CorpusState) -> Vec<DedupOutcome> {
    corpus_state.dedup_batch(new_docs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn input(id: &str, text: &str, secs: i64) -> DedupInput {
        DedupInput {
            id: id.into(),
            text: text.into(),
            downloaded_at: Utc.timestamp_opt(1_675_000_000 + secs, 0).unwrap(),
        }
    }

    fn words(prefix: &str, n: usize) -> String {
        (0..n).map(|i| format!("{prefix}{i}")).collect::<Vec<_>>().join(" ")
    }

    #[test]
    fn byte_identical_is_exact() {
        let mut st = CorpusState::default();
        let t = words("w", 50);
        let out = st.dedup_batch(&[input("a", &t, 0), input("b", &t, 1)]);
        assert_eq!(out[0].verdict, Verdict::Unique);
        assert_eq!(out[1].verdict, Verdict::ExactDuplicateOf { rep: "a".into() });
        assert_eq!(st.groups()[0].members, ["a", "b"]);
    }

    #[test]
    fn disjoint_vocabularies_are_unique() {
        let mut st = CorpusState::default();
        let out = st.dedup_batch(&[input("a", &words("x", 60), 0), input("b", &words("y", 60), 1)]);
        assert!(out.iter().all(|o| o.verdict == Verdict::Unique));
        assert_eq!(st.groups().len(), 2);
    }

    #[test]
    fn empties_collapse_to_one_degenerate_group() {
        let mut st = CorpusState::default();
        let out = st.dedup_batch(&[input("a", "", 0), input("b", "", 1), input("c", "one two", 2)]);
        assert_eq!(out[1].verdict.label(), "exact");
        assert!(st.groups()[0].degenerate);
        assert_eq!(st.indexed_count(), 0, "short and empty texts never enter the LSH index");
        assert_eq!(out[2].verdict, Verdict::Unique);
    }

    #[test]
    fn longer_member_becomes_representative() {
        let mut st = CorpusState::default();
        let base = words("w", 200);
        let longer = format!("{base} tail");
        let out = st.dedup_batch(&[input("a", &base, 0), input("b", &longer, 1), input("c", &base, 2)]);
        assert!(matches!(&out[1].verdict, Verdict::NearDuplicateOf { rep, jaccard } if rep == "a" && *jaccard >= 0.9));
        assert_eq!(out[1].representative, "b");
        assert_eq!(out[2].verdict, Verdict::ExactDuplicateOf { rep: "b".into() });
        // earlier verdicts are untouched
        assert_eq!(out[0].verdict, Verdict::Unique);
    }

    #[test]
    fn equal_length_tie_goes_to_earlier_download() {
        let mut st = CorpusState::default();
        let a = words("w", 100);
        let c = a.replace("w50", "q50");
        assert_eq!(a.chars().count(), c.chars().count());
        st.dedup_batch(&[input("late", &a, 10), input("early", &c, 5)]);
        assert_eq!(st.groups()[0].representative, "early");
    }

    #[test]
    fn snapshot_round_trip_preserves_behaviour() {
        let mut st = CorpusState::default();
        let docs: Vec<_> = (0..20).map(|i| input(&format!("d{i}"), &words(&format!("t{}_", i % 7), 40), i)).collect();
        st.dedup_batch(&docs);
        let json = serde_json::to_string(&st.snapshot()).unwrap();
        let mut restored = CorpusState::restore(serde_json::from_str(&json).unwrap()).unwrap();
        let probe = [input("p1", &words("t3_", 40), 100), input("p2", &words("new", 40), 101)];
        assert_eq!(st.dedup_batch(&probe), restored.dedup_batch(&probe));
    }
}
