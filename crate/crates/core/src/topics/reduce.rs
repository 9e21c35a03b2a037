use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::TopicsError;

/// Output of a reducer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reduced {
    pub vectors: Vec<Vec<f64>>,
    /// All inputs were identical; `vectors` are zeros.
    pub degenerate: bool,
}

/// Dimensionality reduction step of the topic pipeline.
pub trait Reducer: Send + Sync {
    fn reduce(&self, vectors: &[Vec<f64>], r: usize) -> Result<Reduced, TopicsError>;
}

/// Principal-component projection.
#[derive(Debug, Clone, Copy, Default)]
pub struct Pca;

/// Fitted principal axes, reusable to project new points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `r` unit axes of the input dimension, by decreasing variance.
    pub axes: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn fit(vectors: &[Vec<f64>], r: usize) -> Result<Self, TopicsError> {
        let n = vectors.len();
        let d = vectors.first().map_or(0, Vec::len);
        if r == 0 || r > d {
            return Err(TopicsError::InvalidParameter(format!("cannot reduce dimension {d} to {r}")));
        }
        if n < r + 1 {
            return Err(TopicsError::InsufficientData { needed: r + 1, got: n });
        }
        if vectors.iter().any(|v| v.len() != d || v.iter().any(|x| !x.is_finite())) {
            return Err(TopicsError::InvalidParameter("vectors must be finite and equally long".into()));
        }
        let mut mean = vec![0.0; d];
        for v in vectors {
            for (m, x) in mean.iter_mut().zip(v) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let x = DMatrix::from_fn(n, d, |i, j| vectors[i][j] - mean[j]);
        let cov = (x.transpose() * &x) / (n - 1).max(1) as f64;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let mut axes = Vec::with_capacity(r);
        let mut explained_variance = Vec::with_capacity(r);
        for &k in order.iter().take(r) {
            let mut axis: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            // deterministic sign: largest-magnitude entry positive
            let pivot = axis
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .unwrap_or(0);
            if axis[pivot] < 0.0 {
                axis.iter_mut().for_each(|v| *v = -*v);
            }
            axes.push(axis);
            explained_variance.push(eig.eigenvalues[k].max(0.0));
        }
        Ok(Self { mean, axes, explained_variance })
    }

    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        self.axes
            .iter()
            .map(|axis| axis.iter().zip(v).zip(&self.mean).map(|((a, x), m)| a * (x - m)).sum())
            .collect()
    }
}

impl Reducer for Pca {
    fn reduce(&self, vectors: &[Vec<f64>], r: usize) -> Result<Reduced, TopicsError> {
        let model = PcaModel::fit(vectors, r)?;
        let total: f64 = model.explained_variance.iter().sum();
        let first = &vectors[0];
        if total <= 0.0 && vectors.iter().all(|v| v == first) {
            return Ok(Reduced { vectors: vec![vec![0.0; r]; vectors.len()], degenerate: true });
        }
        Ok(Reduced { vectors: vectors.iter().map(|v| model.project(v)).collect(), degenerate: false })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    }

    #[test]
    fn plane_is_recovered_exactly() {
        let u = [1.0, 2.0, 0.0, -1.0];
        let w = [0.0, 1.0, 1.0, 1.0];
        let pts: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let (a, b) = ((i as f64 * 0.37).sin() * 3.0, (i as f64 * 1.3).cos());
                (0..4).map(|k| 5.0 + a * u[k] + b * w[k]).collect()
            })
            .collect();
        let m = PcaModel::fit(&pts, 2).unwrap();
        for p in &pts {
            let z = m.project(p);
            let back: Vec<f64> =
                (0..4).map(|k| m.mean[k] + z[0] * m.axes[0][k] + z[1] * m.axes[1][k]).collect();
            assert!(dist(p, &back) <= 1e-9);
        }
    }

    #[test]
    fn full_rank_preserves_distances() {
        let pts: Vec<Vec<f64>> =
            (0..12).map(|i| (0..5).map(|k| ((i * 7 + k * 3) as f64).sin() * (k + 1) as f64).collect()).collect();
        let red = Pca.reduce(&pts, 5).unwrap();
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                assert!((dist(&pts[i], &pts[j]) - dist(&red.vectors[i], &red.vectors[j])).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn degenerate_and_insufficient() {
        let same = vec![vec![1.0, 2.0, 3.0]; 4];
        let red = Pca.reduce(&same, 2).unwrap();
        assert!(red.degenerate);
        assert!(red.vectors.iter().flatten().all(|&x| x == 0.0));
        assert!(matches!(Pca.reduce(&same[..2], 2), Err(TopicsError::InsufficientData { .. })));
        assert!(Pca.reduce(&same, 4).is_err());
    }
}
