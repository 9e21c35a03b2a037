//! Topic modelling of English documents: embed, reduce, density-cluster,
//! c-TF-IDF keywords, cosine hierarchy and the low/high label map.

pub mod ctfidf;
pub mod embed;
pub mod hdbscan;
pub mod hierarchy;
pub mod reduce;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use ctfidf::{CtfIdf, DEFAULT_MIN_DF};
pub use embed::{EmbeddingProvider, HashingEmbedder, ProtocolClient, SidecarProvider, FALLBACK_DIM};
pub use hdbscan::{hdbscan, HdbscanParams, NOISE};
pub use hierarchy::{cosine_distance, topic_hierarchy, Dendrogram, MergeStep};
pub use reduce::{Pca, PcaModel, Reduced, Reducer};

pub const UNASSIGNED: &str = "unassigned";

#[derive(Debug, Error)]
pub enum TopicsError {
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("embedding provider error: {0}")]
    Provider(String),
    #[error("embedding protocol violation: {0}")]
    Protocol(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("need at least {needed} documents, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("no term reaches the minimum document frequency")]
    EmptyVocabulary,
    #[error("cluster {0} has no entry in the label map")]
    UnmappedCluster(i32),
    #[error("bad label map: {0}")]
    BadLabelMap(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HierarchyVectors {
    #[default]
    Ctfidf,
    /// Mean reduced embedding of each cluster.
    Centroid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopicsConfig {
    pub reduced_dim: usize,
    pub min_cluster_size: usize,
    pub min_samples: usize,
    pub min_df: usize,
    pub top_k: usize,
    pub assign_floor: f64,
    pub embed_seed: u64,
    pub hierarchy_vectors: HierarchyVectors,
}

impl Default for TopicsConfig {
    fn default() -> Self {
        Self {
            reduced_dim: 5,
            min_cluster_size: 15,
            min_samples: 5,
            min_df: DEFAULT_MIN_DF,
            top_k: 5,
            assign_floor: 0.1,
            embed_seed: 0,
            hierarchy_vectors: HierarchyVectors::Ctfidf,
        }
    }
}

impl TopicsConfig {
    pub fn hdbscan_params(&self) -> HdbscanParams {
        HdbscanParams { min_cluster_size: self.min_cluster_size, min_samples: self.min_samples }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicCluster {
    pub id: i32,
    pub size: usize,
    pub top_words: Vec<(String, f64)>,
    /// Non-zero c-TF-IDF weights as (vocabulary index, weight).
    pub ctfidf_vector: Vec<(u32, f64)>,
}

impl TopicCluster {
    pub fn dense(&self, len: usize) -> Vec<f64> {
        let mut v = vec![0.0; len];
        for &(i, w) in &self.ctfidf_vector {
            v[i as usize] = w;
        }
        v
    }
}

/// Frozen topic model; serialized as `topic_model.json`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TopicModel {
    pub embedder: String,
    pub clusters: Vec<TopicCluster>,
    /// Average token count per class.
    pub avg_class_tokens: f64,
    pub vocabulary: Vec<String>,
    pub idf: Vec<f64>,
    pub hierarchy: Dendrogram,
    pub label_map_version: String,
    pub noise_docs: usize,
}

impl TopicModel {
    pub fn cluster(&self, id: i32) -> Option<&TopicCluster> {
        self.clusters.iter().find(|c| c.id == id)
    }

    pub fn top_words(&self, id: i32, k: usize) -> Vec<(String, f64)> {
        let Some(c) = self.cluster(id) else { return Vec::new() };
        let mut words: Vec<(String, f64)> =
            c.ctfidf_vector.iter().map(|&(i, w)| (self.vocabulary[i as usize].clone(), w)).collect();
        words.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        if words.len() < k {
            // zero-weight terms follow in lexicographic order
            let have: std::collections::HashSet<&str> = words.iter().map(|w| w.0.as_str()).collect();
            let extra: Vec<(String, f64)> = self
                .vocabulary
                .iter()
                .filter(|t| !have.contains(t.as_str()))
                .take(k - words.len())
                .map(|t| (t.clone(), 0.0))
                .collect();
            words.extend(extra);
        }
        words.truncate(k);
        words
    }

    fn project(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.vocabulary.len()];
        let mut n = 0usize;
        for tok in ctfidf::tokenize(text) {
            n += 1;
            if let Ok(i) = self.vocabulary.binary_search(&tok) {
                v[i] += 1.0;
            }
        }
        if n > 0 {
            for (x, w) in v.iter_mut().zip(&self.idf) {
                *x = *x / n as f64 * w;
            }
        }
        v
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("topic model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// Nearest topic by cosine similarity of the projected text; `NOISE` below
/// `floor` or for texts without known terms.
pub fn assign_topic(model: &TopicModel, text: &str, floor: f64) -> i32 {
    let v = model.project(text);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return NOISE;
    }
    let mut best = (NOISE, f64::NEG_INFINITY);
    for c in &model.clusters {
        let cn = c.ctfidf_vector.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        if cn == 0.0 {
            continue;
        }
        let dot: f64 = c.ctfidf_vector.iter().map(|&(i, w)| v[i as usize] * w).sum();
        let sim = dot / (norm * cn);
        if sim > best.1 {
            best = (c.id, sim);
        }
    }
    if best.1 < floor {
        NOISE
    } else {
        best.0
    }
}

/// Result of fitting a model on one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicFit {
    pub model: TopicModel,
    /// Cluster per input text, `NOISE` for outliers.
    pub assignments: Vec<i32>,
    pub degenerate: bool,
}

pub fn embed_documents(provider: &dyn EmbeddingProvider, texts: &[String]) -> Result<Vec<Vec<f64>>, TopicsError> {
    let vectors = provider.embed(texts)?;
    if vectors.len() != texts.len() {
        return Err(TopicsError::Protocol(format!("{} vectors for {} texts", vectors.len(), texts.len())));
    }
    let dim = provider.dim();
    if vectors.iter().any(|v| v.len() != dim || v.iter().any(|x| !x.is_finite())) {
        return Err(TopicsError::Protocol(format!("vectors do not match dimension {dim}")));
    }
    Ok(vectors)
}

pub fn fit_topics(
    texts: &[String],
    provider: &dyn EmbeddingProvider,
    reducer: &dyn Reducer,
    config: &TopicsConfig,
    label_map: &LabelMap,
) -> Result<TopicFit, TopicsError> {
    let n = texts.len();
    let mut model = TopicModel {
        embedder: provider.model().to_string(),
        label_map_version: label_map.version.clone(),
        noise_docs: n,
        ..TopicModel::default()
    };
    let r = config.reduced_dim.min(provider.dim().saturating_sub(1));
    if n < config.min_cluster_size.max(2) || n < r + 1 || r == 0 {
        return Ok(TopicFit { model, assignments: vec![NOISE; n], degenerate: false });
    }
    let vectors = embed_documents(provider, texts)?;
    let reduced = reducer.reduce(&vectors, r)?;
    let assignments = hdbscan(&reduced.vectors, config.hdbscan_params());
    let k = assignments.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize);
    model.noise_docs = assignments.iter().filter(|&&a| a == NOISE).count();
    if k == 0 {
        return Ok(TopicFit { model, assignments, degenerate: reduced.degenerate });
    }
    let mut classes: Vec<Vec<&str>> = vec![Vec::new(); k];
    for (t, &a) in texts.iter().zip(&assignments) {
        if a >= 0 {
            classes[a as usize].push(t);
        }
    }
    let tfidf = CtfIdf::fit(&classes, config.min_df)?;
    let clusters: Vec<TopicCluster> = (0..k)
        .map(|c| TopicCluster {
            id: c as i32,
            size: classes[c].len(),
            top_words: tfidf.top_words(c, config.top_k),
            ctfidf_vector: tfidf.weights[c]
                .iter()
                .enumerate()
                .filter(|(_, &w)| w != 0.0)
                .map(|(i, &w)| (i as u32, w))
                .collect(),
        })
        .collect();
    let topic_vectors: Vec<Vec<f64>> = match config.hierarchy_vectors {
        HierarchyVectors::Ctfidf => tfidf.weights.iter().map(|w| ctfidf::l2_normalized(w)).collect(),
        HierarchyVectors::Centroid => (0..k)
            .map(|c| {
                let mut m = vec![0.0; r];
                for (v, _) in reduced.vectors.iter().zip(&assignments).filter(|(_, &a)| a == c as i32) {
                    for (x, y) in m.iter_mut().zip(v) {
                        *x += y;
                    }
                }
                m.iter_mut().for_each(|x| *x /= classes[c].len() as f64);
                m
            })
            .collect(),
    };
    let ids: Vec<i32> = (0..k as i32).collect();
    model.hierarchy = topic_hierarchy(&ids, &topic_vectors);
    model.clusters = clusters;
    model.avg_class_tokens = tfidf.avg_class_tokens;
    model.vocabulary = tfidf.vocabulary;
    model.idf = tfidf.idf;
    Ok(TopicFit { model, assignments, degenerate: reduced.degenerate })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub cluster: i32,
    pub low_label: String,
    pub high_label: String,
}

/// Cluster id to (low-level, high-level) label.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelMap {
    pub version: String,
    entries: BTreeMap<i32, (String, String)>,
}

const SHIPPED_LABEL_MAP: &str = include_str!("../../data/label_map.json");

impl LabelMap {
    /// The 35-cluster map bundled with the crate.
    pub fn shipped() -> Self {
        Self::from_json(SHIPPED_LABEL_MAP).expect("bundled label map is valid")
    }

    pub fn from_entries(rows: Vec<LabelEntry>) -> Result<Self, TopicsError> {
        let mut entries = BTreeMap::new();
        for row in rows {
            if row.cluster < 0 {
                return Err(TopicsError::BadLabelMap(format!("negative cluster id {}", row.cluster)));
            }
            if entries.insert(row.cluster, (row.low_label, row.high_label)).is_some() {
                return Err(TopicsError::BadLabelMap(format!("cluster {} listed twice", row.cluster)));
            }
        }
        let mut map = Self { version: String::new(), entries };
        let digest = Sha256::digest(serde_json::to_vec(&map.rows()).expect("rows serialize"));
        map.version = digest[..6].iter().map(|b| format!("{b:02x}")).collect();
        Ok(map)
    }

    pub fn from_json(s: &str) -> Result<Self, TopicsError> {
        let rows: Vec<LabelEntry> = serde_json::from_str(s).map_err(|e| TopicsError::BadLabelMap(e.to_string()))?;
        Self::from_entries(rows)
    }

    pub fn rows(&self) -> Vec<LabelEntry> {
        self.entries
            .iter()
            .map(|(&cluster, (l, h))| LabelEntry { cluster, low_label: l.clone(), high_label: h.clone() })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lookup(&self, cluster: i32) -> Result<(String, String), TopicsError> {
        if cluster < 0 {
            return Ok((UNASSIGNED.into(), UNASSIGNED.into()));
        }
        self.entries.get(&cluster).cloned().ok_or(TopicsError::UnmappedCluster(cluster))
    }

    pub fn high_labels(&self) -> Vec<String> {
        let mut v: Vec<String> = self.entries.values().map(|(_, h)| h.clone()).collect();
        v.sort();
        v.dedup();
        v
    }
}

pub fn apply_label_map(assignments: &[i32], map: &LabelMap) -> Result<Vec<(String, String)>, TopicsError> {
    assignments.iter().map(|&c| map.lookup(c)).collect()
}

/// One row of `topics.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicRow {
    pub address: String,
    pub cluster: i32,
    pub low_label: String,
    pub high_label: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_map_lookups() {
        let m = LabelMap::shipped();
        assert_eq!(m.len(), 35);
        assert_eq!(m.high_labels().len(), 11);
        assert_eq!(m.lookup(0).unwrap(), ("Sexual content".into(), "Sexual and violent content".into()));
        assert_eq!(m.lookup(3).unwrap(), ("Cryptocurrencies".into(), "Cryptocurrencies".into()));
        assert_eq!(m.lookup(NOISE).unwrap(), (UNASSIGNED.into(), UNASSIGNED.into()));
        assert!(matches!(m.lookup(35), Err(TopicsError::UnmappedCluster(35))));
        assert!(matches!(apply_label_map(&[0, 99], &m), Err(TopicsError::UnmappedCluster(99))));
    }

    #[test]
    fn label_map_rejects_duplicates() {
        let row = LabelEntry { cluster: 1, low_label: "a".into(), high_label: "b".into() };
        assert!(LabelMap::from_entries(vec![row.clone(), row]).is_err());
    }

    fn toy_model() -> TopicModel {
        let t = CtfIdf::fit(&[vec!["cat cat dog"], vec!["dog dog bird bird"]], 1).unwrap();
        TopicModel {
            clusters: (0..2)
                .map(|c| TopicCluster {
                    id: c as i32,
                    size: 1,
                    top_words: t.top_words(c, 5),
                    ctfidf_vector: t.weights[c].iter().enumerate().filter(|p| *p.1 != 0.0).map(|(i, &w)| (i as u32, w)).collect(),
                })
                .collect(),
            avg_class_tokens: t.avg_class_tokens,
            vocabulary: t.vocabulary,
            idf: t.idf,
            ..TopicModel::default()
        }
    }

    #[test]
    fn assign_matches_class_documents() {
        let m = toy_model();
        assert_eq!(assign_topic(&m, "cat cat dog", 0.1), 0);
        assert_eq!(assign_topic(&m, "dog dog bird bird", 0.1), 1);
        assert_eq!(assign_topic(&m, "", 0.1), NOISE);
        assert_eq!(assign_topic(&m, "zebra", 0.1), NOISE);
    }

    #[test]
    fn model_json_round_trip() {
        let m = toy_model();
        assert_eq!(TopicModel::from_json(&m.to_json()).unwrap(), m);
        assert_eq!(m.top_words(0, 1)[0].0, "cat");
        assert_eq!(m.top_words(0, 10).len(), 3);
    }

    #[test]
    fn too_few_documents_are_noise() {
        let texts: Vec<String> = (0..5).map(|i| format!("doc {i}")).collect();
        let fit = fit_topics(&texts, &HashingEmbedder::default(), &Pca, &TopicsConfig::default(), &LabelMap::shipped())
            .unwrap();
        assert!(fit.assignments.iter().all(|&a| a == NOISE));
        assert!(fit.model.clusters.is_empty());
    }
}
