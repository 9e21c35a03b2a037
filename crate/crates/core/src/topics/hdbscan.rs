//! Hierarchical density-based clustering (HDBSCAN) with excess-of-mass
//! cluster extraction.

use serde::{Deserialize, Serialize};

pub const NOISE: i32 = -1;

/// Lambda used for zero distances (duplicate points).
const MAX_LAMBDA: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HdbscanParams {
    pub min_cluster_size: usize,
    pub min_samples: usize,
}

impl Default for HdbscanParams {
    fn default() -> Self {
        Self { min_cluster_size: 15, min_samples: 5 }
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn lambda_of(d: f64) -> f64 {
    if d > 0.0 {
        (1.0 / d).min(MAX_LAMBDA)
    } else {
        MAX_LAMBDA
    }
}

/// Distance to the `min_samples`-th nearest point, counting the point itself.
fn core_distances(points: &[Vec<f64>], min_samples: usize) -> Vec<f64> {
    let n = points.len();
    let k = min_samples.clamp(1, n);
    (0..n)
        .map(|i| {
            let mut d: Vec<f64> = (0..n).map(|j| euclid(&points[i], &points[j])).collect();
            d.select_nth_unstable_by(k - 1, f64::total_cmp);
            d[k - 1]
        })
        .collect()
}

/// Prim's algorithm on the dense mutual-reachability graph; edges sorted by weight.
fn mst(points: &[Vec<f64>], core: &[f64]) -> Vec<(usize, usize, f64)> {
    let n = points.len();
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut from = vec![0usize; n];
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    let mut cur = 0;
    in_tree[0] = true;
    for _ in 1..n {
        for j in 0..n {
            if in_tree[j] {
                continue;
            }
            let d = euclid(&points[cur], &points[j]).max(core[cur]).max(core[j]);
            if d < best[j] {
                best[j] = d;
                from[j] = cur;
            }
        }
        let mut next = usize::MAX;
        for j in 0..n {
            if !in_tree[j] && (next == usize::MAX || best[j] < best[next]) {
                next = j;
            }
        }
        in_tree[next] = true;
        edges.push((from[next], next, best[next]));
        cur = next;
    }
    edges.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    edges
}

/// Single-linkage merges: node `n + i` joins `left` and `right` at `dist`.
struct Merge {
    left: usize,
    right: usize,
    dist: f64,
    size: usize,
}

fn single_linkage(n: usize, edges: &[(usize, usize, f64)]) -> Vec<Merge> {
    let mut parent: Vec<usize> = (0..2 * n).collect();
    let mut size = vec![1usize; 2 * n];
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    for (i, &(a, b, d)) in edges.iter().enumerate() {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        let node = n + i;
        parent[ra] = node;
        parent[rb] = node;
        size[node] = size[ra] + size[rb];
        merges.push(Merge { left: ra, right: rb, dist: d, size: size[node] });
    }
    merges
}

/// Row of the condensed tree: `child` (a point `< n` or a cluster `>= n`)
/// leaves `parent` at density `lambda`.
#[derive(Debug, Clone, Copy)]
struct CondensedRow {
    parent: usize,
    child: usize,
    lambda: f64,
    size: usize,
}

fn leaves(merges: &[Merge], n: usize, node: usize, out: &mut Vec<usize>) {
    let mut stack = vec![node];
    while let Some(x) = stack.pop() {
        if x < n {
            out.push(x);
        } else {
            let m = &merges[x - n];
            stack.push(m.left);
            stack.push(m.right);
        }
    }
}

fn condense(merges: &[Merge], n: usize, min_cluster_size: usize) -> (Vec<CondensedRow>, usize) {
    let root = 2 * n - 2;
    let size_of = |x: usize| if x < n { 1 } else { merges[x - n].size };
    let mut rows = Vec::new();
    let mut next_label = n + 1;
    // (single-linkage node, condensed cluster label)
    let mut stack = vec![(root, n)];
    let mut buf = Vec::new();
    while let Some((node, label)) = stack.pop() {
        if node < n {
            continue;
        }
        let m = &merges[node - n];
        let lambda = lambda_of(m.dist);
        let (l, r) = (m.left, m.right);
        let (ls, rs) = (size_of(l), size_of(r));
        match (ls >= min_cluster_size, rs >= min_cluster_size) {
            (true, true) => {
                for (child, sz) in [(l, ls), (r, rs)] {
                    let lab = next_label;
                    next_label += 1;
                    rows.push(CondensedRow { parent: label, child: lab, lambda, size: sz });
                    stack.push((child, lab));
                }
            }
            (false, false) => {
                for child in [l, r] {
                    buf.clear();
                    leaves(merges, n, child, &mut buf);
                    for &p in &buf {
                        rows.push(CondensedRow { parent: label, child: p, lambda, size: 1 });
                    }
                }
            }
            (true, false) | (false, true) => {
                let (big, small) = if ls >= min_cluster_size { (l, r) } else { (r, l) };
                buf.clear();
                leaves(merges, n, small, &mut buf);
                for &p in &buf {
                    rows.push(CondensedRow { parent: label, child: p, lambda, size: 1 });
                }
                stack.push((big, label));
            }
        }
    }
    (rows, next_label)
}

/// Cluster label per point; `NOISE` for outliers. Labels are numbered by
/// their smallest member index.
pub fn hdbscan(points: &[Vec<f64>], params: HdbscanParams) -> Vec<i32> {
    let n = points.len();
    let mcs = params.min_cluster_size.max(2);
    if n < mcs || n < 2 {
        return vec![NOISE; n];
    }
    let core = core_distances(points, params.min_samples);
    let edges = mst(points, &core);
    let merges = single_linkage(n, &edges);
    let (rows, end_label) = condense(&merges, n, mcs);

    let n_clusters = end_label - n;
    let idx = |c: usize| c - n;
    let mut birth = vec![0.0f64; n_clusters];
    let mut parent_of = vec![usize::MAX; n_clusters];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n_clusters];
    for r in rows.iter().filter(|r| r.child >= n) {
        birth[idx(r.child)] = r.lambda;
        parent_of[idx(r.child)] = r.parent;
        children[idx(r.parent)].push(r.child);
    }
    let mut stability = vec![0.0f64; n_clusters];
    for r in &rows {
        stability[idx(r.parent)] += (r.lambda - birth[idx(r.parent)]) * r.size as f64;
    }

    let mut selected = vec![false; n_clusters];
    if children[0].is_empty() {
        // the root never splits: one cluster of the points that persist longest
        let max_lambda = rows.iter().map(|r| r.lambda).fold(0.0, f64::max);
        let members: Vec<usize> = rows.iter().filter(|r| r.lambda >= max_lambda).map(|r| r.child).collect();
        let mut labels = vec![NOISE; n];
        if members.len() >= mcs {
            for p in members {
                labels[p] = 0;
            }
        }
        return labels;
    }
    // children always carry larger labels than their parents
    for c in (1..n_clusters).rev() {
        let child_sum: f64 = children[c].iter().map(|&k| stability[idx(k)]).sum();
        if !children[c].is_empty() && child_sum > stability[c] {
            stability[c] = child_sum;
        } else {
            selected[c] = true;
        }
    }
    // keep only the topmost selected clusters
    for c in 1..n_clusters {
        let mut p = parent_of[c];
        while p != n && p != usize::MAX {
            if selected[idx(p)] {
                selected[c] = false;
                break;
            }
            p = parent_of[idx(p)];
        }
    }

    let mut raw = vec![NOISE as i64; n];
    for r in rows.iter().filter(|r| r.child < n) {
        let mut c = r.parent;
        while c != n {
            if selected[idx(c)] {
                raw[r.child] = c as i64;
                break;
            }
            c = parent_of[idx(c)];
        }
    }
    // renumber by first member
    let mut map = std::collections::HashMap::new();
    let mut labels = vec![NOISE; n];
    for (i, &c) in raw.iter().enumerate() {
        if c >= 0 {
            let next = map.len() as i32;
            labels[i] = *map.entry(c).or_insert(next);
        }
    }
    labels
}
