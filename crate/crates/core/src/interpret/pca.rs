//! PCA projection of penultimate features and a silhouette-based
//! separability score for the labeled 2-D embedding.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;

use crate::data::GradeLabel;
use crate::error::{Error, Result};

/// Projection of n feature vectors onto the top principal directions.
#[derive(Debug, Clone)]
pub struct FeatureEmbedding {
    /// `(n, k)` projected coordinates.
    pub coords: Array2<f64>,
    /// Non-increasing, each in `[0, 1]`; fractions of total variance.
    pub explained_variance: Vec<f64>,
    /// `(d, k)` orthonormal principal directions (columns).
    pub components: Array2<f64>,
    /// Grade per row, when the caller attaches labels.
    pub labels: Vec<GradeLabel>,
    /// Mean silhouette over points, in `[-1, 1]`; NaN until computed.
    pub separability: f64,
}

/// Mean-center columns (no variance scaling) and project onto the top
/// `n_components` eigenvectors of the covariance. Component signs are fixed
/// by making each component's largest-magnitude loading positive.
pub fn pca_project(features: &Array2<f64>, n_components: usize) -> Result<FeatureEmbedding> {
    let (n, d) = (features.shape()[0], features.shape()[1]);
    if n < 2 {
        return Err(Error::validation("need at least 2 samples for PCA"));
    }
    if n_components == 0 || n_components > d {
        return Err(Error::validation(format!(
            "n_components must be in 1..={d}, got {n_components}"
        )));
    }

    let mut centered = features.clone();
    for j in 0..d {
        let mean = centered.column(j).sum() / n as f64;
        centered.column_mut(j).mapv_inplace(|v| v - mean);
    }

    // covariance, d x d
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let mut s = 0.0;
            for r in 0..n {
                s += centered[[r, i]] * centered[[r, j]];
            }
            let c = s / (n as f64 - 1.0);
            cov[(i, j)] = c;
            cov[(j, i)] = c;
        }
    }
    let total_variance: f64 = (0..d).map(|i| cov[(i, i)]).sum();
    if total_variance <= f64::EPSILON {
        return Err(Error::validation("zero-variance data: nothing to project"));
    }

    let eig = nalgebra::SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut components = Array2::<f64>::zeros((d, n_components));
    let mut explained = Vec::with_capacity(n_components);
    for (k, &src) in order.iter().take(n_components).enumerate() {
        let mut col: DVector<f64> = eig.eigenvectors.column(src).into_owned();
        // deterministic sign: largest-magnitude loading positive
        let mut arg = 0usize;
        for i in 1..d {
            if col[i].abs() > col[arg].abs() {
                arg = i;
            }
        }
        if col[arg] < 0.0 {
            col.neg_mut();
        }
        for i in 0..d {
            components[[i, k]] = col[i];
        }
        explained.push(eig.eigenvalues[src].max(0.0) / total_variance);
    }

    let coords = centered.dot(&components);
    Ok(FeatureEmbedding {
        coords,
        explained_variance: explained,
        components,
        labels: Vec::new(),
        separability: f64::NAN,
    })
}

/// Mean silhouette coefficient over points with Euclidean distance.
///
/// Needs at least two classes and two points per class. Points with a zero
/// max(a, b) denominator contribute 0 (coincident-cluster convention).
pub fn separability_score(coords: &Array2<f64>, labels: &[GradeLabel]) -> Result<f64> {
    let n = coords.shape()[0];
    if labels.len() != n {
        return Err(Error::validation("labels and coordinates differ in length"));
    }
    let mut per_class: std::collections::BTreeMap<GradeLabel, Vec<usize>> = Default::default();
    for (i, &g) in labels.iter().enumerate() {
        per_class.entry(g).or_default().push(i);
    }
    if per_class.len() < 2 {
        return Err(Error::validation("need at least two classes present"));
    }
    if per_class.values().any(|v| v.len() < 2) {
        return Err(Error::validation("need at least two points per class"));
    }

    let dist = |a: usize, b: usize| -> f64 {
        let mut s = 0.0;
        for k in 0..coords.shape()[1] {
            let diff = coords[[a, k]] - coords[[b, k]];
            s += diff * diff;
        }
        s.sqrt()
    };

    let mut total = 0.0;
    for i in 0..n {
        let own = &per_class[&labels[i]];
        let a = own
            .iter()
            .filter(|&&j| j != i)
            .map(|&j| dist(i, j))
            .sum::<f64>()
            / (own.len() - 1) as f64;
        let b = per_class
            .iter()
            .filter(|(g, _)| **g != labels[i])
            .map(|(_, members)| {
                members.iter().map(|&j| dist(i, j)).sum::<f64>() / members.len() as f64
            })
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        total += if denom == 0.0 { 0.0 } else { (b - a) / denom };
    }
    Ok(total / n as f64)
}
