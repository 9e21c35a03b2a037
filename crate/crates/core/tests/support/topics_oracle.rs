#![allow(dead_code)]

use std::collections::HashMap;

pub fn choose2(x: u64) -> f64 {
    (x * x.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index, computed from the contingency table.
pub fn ari(a: &[i64], b: &[i64]) -> f64 {
    let mut table: HashMap<(i64, i64), u64> = HashMap::new();
    let mut ra: HashMap<i64, u64> = HashMap::new();
    let mut rb: HashMap<i64, u64> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *ra.entry(x).or_default() += 1;
        *rb.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&v| choose2(v)).sum();
    let sa: f64 = ra.values().map(|&v| choose2(v)).sum();
    let sb: f64 = rb.values().map(|&v| choose2(v)).sum();
    let total = choose2(a.len() as u64);
    let expected = sa * sb / total;
    let max = (sa + sb) / 2.0;
    (index - expected) / (max - expected)
}

/// Noise points become singleton clusters so they count against agreement.
pub fn with_singletons(labels: &[i32]) -> Vec<i64> {
    labels.iter().enumerate().map(|(i, &l)| if l < 0 { -1 - i as i64 } else { l as i64 }).collect()
}

pub fn brute_ctfidf(classes: &[Vec<String>], min_df: usize) -> (Vec<String>, Vec<Vec<f64>>) {
    let toks: Vec<Vec<String>> =
        classes.iter().map(|docs| docs.iter().flat_map(|d| d.split_whitespace().map(str::to_lowercase)).collect()).collect();
    let mut vocab: Vec<String> = toks.iter().flatten().cloned().collect();
    vocab.sort();
    vocab.dedup();
    let count = |t: &str, c: &[String]| c.iter().filter(|x| x.as_str() == t).count() as f64;
    vocab.retain(|t| toks.iter().map(|c| count(t, c)).sum::<f64>() >= min_df as f64);
    let a = toks.iter().map(Vec::len).sum::<usize>() as f64 / classes.len() as f64;
    let weights = toks
        .iter()
        .map(|c| {
            vocab
                .iter()
                .map(|t| {
                    let f: f64 = toks.iter().map(|k| count(t, k)).sum();
                    if c.is_empty() {
                        0.0
                    } else {
                        count(t, c) / c.len() as f64 * (1.0 + a / f).ln()
                    }
                })
                .collect()
        })
        .collect();
    (vocab, weights)
}
