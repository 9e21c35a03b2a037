//! Average-linkage agglomeration of topic vectors under cosine distance.

use serde::{Deserialize, Serialize};

/// Node `n + i` of the dendrogram is created by `merges[i]`; nodes below
/// `n` are the input topics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergeStep {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dendrogram {
    /// Topic ids in input order.
    pub leaves: Vec<i32>,
    pub merges: Vec<MergeStep>,
}

impl Dendrogram {
    /// Leaf indices under `node`.
    pub fn members(&self, node: usize) -> Vec<usize> {
        let n = self.leaves.len();
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(x) = stack.pop() {
            if x < n {
                out.push(x);
            } else {
                let m = &self.merges[x - n];
                stack.push(m.right);
                stack.push(m.left);
            }
        }
        out.sort_unstable();
        out
    }
}

/// `1 - a·b` after normalizing both vectors; zero vectors are at distance 1
/// from everything.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    if a == b && a.iter().any(|&x| x != 0.0) {
        return 0.0;
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (1.0 - dot / (na * nb)).max(0.0)
}

pub fn distance_matrix(vectors: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = vectors.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = cosine_distance(&vectors[i], &vectors[j]);
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    d
}

/// Heights are clamped to be non-decreasing, which only absorbs rounding.
/// Ties pick the pair with the smallest node ids.
pub fn topic_hierarchy(ids: &[i32], vectors: &[Vec<f64>]) -> Dendrogram {
    let n = vectors.len();
    let base = distance_matrix(vectors);
    // active clusters: (node id, member leaves)
    let mut active: Vec<(usize, Vec<usize>)> = (0..n).map(|i| (i, vec![i])).collect();
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    let mut last = 0.0f64;
    while active.len() > 1 {
        let mut best = (f64::INFINITY, 0, 0);
        for a in 0..active.len() {
            for b in a + 1..active.len() {
                let (ma, mb) = (&active[a].1, &active[b].1);
                let sum: f64 = ma.iter().flat_map(|&i| mb.iter().map(move |&j| (i, j))).map(|(i, j)| base[i][j]).sum();
                let d = sum / (ma.len() * mb.len()) as f64;
                let key = (active[a].0.min(active[b].0), active[a].0.max(active[b].0));
                let cur = (active[best.1].0.min(active[best.2].0), active[best.1].0.max(active[best.2].0));
                if d < best.0 || (d == best.0 && key < cur) {
                    best = (d, a, b);
                }
            }
        }
        let (d, a, b) = best;
        let (nb, mb) = active.remove(b);
        let (na, mut ma) = active.remove(a);
        ma.extend(mb);
        let (left, right) = if na < nb { (na, nb) } else { (nb, na) };
        let height = d.max(last);
        last = height;
        merges.push(MergeStep { left, right, height, size: ma.len() });
        active.push((n + merges.len() - 1, ma));
    }
    Dendrogram { leaves: ids.to_vec(), merges }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_and_orthogonal() {
        assert!(cosine_distance(&[1.0, 2.0], &[2.0, 4.0]) < 1e-15);
        assert!((cosine_distance(&[1.0, 0.0], &[0.0, 3.0]) - 1.0).abs() < 1e-15);
        let d = topic_hierarchy(&[0, 1], &[vec![1.0, 1.0], vec![1.0, 1.0]]);
        assert_eq!(d.merges.len(), 1);
        assert_eq!(d.merges[0].height, 0.0);
    }

    #[test]
    fn single_topic_has_no_merges() {
        assert!(topic_hierarchy(&[4], &[vec![1.0]]).merges.is_empty());
    }

    #[test]
    fn average_linkage_height() {
        // e1, e2 merge at 0; e3 is orthogonal to both -> average distance 1
        let v = vec![vec![1.0, 0.0, 0.0], vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]];
        let d = topic_hierarchy(&[0, 1, 2], &v);
        assert_eq!((d.merges[0].left, d.merges[0].right), (0, 1));
        assert_eq!((d.merges[1].left, d.merges[1].right), (2, 3));
        assert!((d.merges[1].height - 1.0).abs() < 1e-15);
        assert_eq!(d.members(4), vec![0, 1, 2]);
    }
}
