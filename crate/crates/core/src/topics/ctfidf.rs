use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::TopicsError;

pub const DEFAULT_MIN_DF: usize = 2;

pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(str::to_lowercase)
}

/// Class-based TF-IDF weights for a set of classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtfIdf {
    /// Sorted terms.
    pub vocabulary: Vec<String>,
    /// `ln(1 + A / f(t))` per vocabulary term.
    pub idf: Vec<f64>,
    /// Average token count per class.
    pub avg_class_tokens: f64,
    /// Dense weights per class, aligned with `vocabulary`.
    pub weights: Vec<Vec<f64>>,
}

impl CtfIdf {
    /// `classes[c]` holds the documents of class `c`; each class is treated
    /// as one concatenated document.
    ///
    /// `W(t,c) = tf(t,c) * ln(1 + A / f(t))` with `tf` the term count over
    /// the class token count, `f(t)` the corpus count of `t` and `A` the mean
    /// class token count. Terms occurring fewer than `min_df` times corpus-wide
    /// are left out of the vocabulary.
    pub fn fit(classes: &[Vec<&str>], min_df: usize) -> Result<Self, TopicsError> {
        let mut class_counts: Vec<HashMap<String, usize>> = Vec::with_capacity(classes.len());
        let mut class_tokens = Vec::with_capacity(classes.len());
        let mut total: BTreeMap<String, usize> = BTreeMap::new();
        for docs in classes {
            let mut counts = HashMap::new();
            let mut n = 0usize;
            for doc in docs {
                for tok in tokenize(doc) {
                    *total.entry(tok.clone()).or_default() += 1;
                    *counts.entry(tok).or_default() += 1;
                    n += 1;
                }
            }
            class_counts.push(counts);
            class_tokens.push(n);
        }
        let vocabulary: Vec<String> =
            total.iter().filter(|(_, &c)| c >= min_df.max(1)).map(|(t, _)| t.clone()).collect();
        if vocabulary.is_empty() {
            return Err(TopicsError::EmptyVocabulary);
        }
        let avg = class_tokens.iter().sum::<usize>() as f64 / classes.len().max(1) as f64;
        let idf: Vec<f64> = vocabulary.iter().map(|t| (1.0 + avg / total[t] as f64).ln()).collect();
        let weights = class_counts
            .iter()
            .zip(&class_tokens)
            .map(|(counts, &n)| {
                vocabulary
                    .iter()
                    .zip(&idf)
                    .map(|(t, w)| {
                        if n == 0 {
                            0.0
                        } else {
                            counts.get(t).copied().unwrap_or(0) as f64 / n as f64 * w
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(Self { vocabulary, idf, avg_class_tokens: avg, weights })
    }

    pub fn term_index(&self, term: &str) -> Option<usize> {
        self.vocabulary.binary_search_by(|t| t.as_str().cmp(term)).ok()
    }

    /// `k` largest weights of a class, ties broken lexicographically.
    pub fn top_words(&self, class: usize, k: usize) -> Vec<(String, f64)> {
        let w = &self.weights[class];
        let mut idx: Vec<usize> = (0..w.len()).collect();
        idx.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then_with(|| self.vocabulary[a].cmp(&self.vocabulary[b])));
        idx.into_iter().take(k).map(|i| (self.vocabulary[i].clone(), w[i])).collect()
    }

    /// TF-IDF vector of an arbitrary text in this model's term space.
    pub fn project(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.vocabulary.len()];
        let mut n = 0usize;
        for tok in tokenize(text) {
            n += 1;
            if let Some(i) = self.term_index(&tok) {
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
}

pub fn l2_normalized(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        v.to_vec()
    } else {
        v.iter().map(|x| x / norm).collect()
    }
}
