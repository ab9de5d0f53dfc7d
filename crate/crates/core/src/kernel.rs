//! Modified Mahalanobis distances and the row-stochastic Gaussian kernel.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{invalid_input, invalid_param, Error, Result};
use crate::features::{FeatureSeries, LocalCovariances};

/// `½ (zᵢ − zⱼ)ᵀ (Cᵢ† + Cⱼ†) (zᵢ − zⱼ)`, clamped at zero.
pub fn mahalanobis_distance(
    zi: &[f64],
    zj: &[f64],
    pinv_i: &DMatrix<f64>,
    pinv_j: &DMatrix<f64>,
) -> Result<f64> {
    let n = zi.len();
    if zj.len() != n || pinv_i.shape() != (n, n) || pinv_j.shape() != (n, n) {
        return Err(invalid_input(format!(
            "dimension mismatch: z {} / {}, pseudo-inverses {:?} / {:?}",
            n,
            zj.len(),
            pinv_i.shape(),
            pinv_j.shape()
        )));
    }
    let delta = DVector::from_iterator(n, zi.iter().zip(zj).map(|(a, b)| a - b));
    let q = (delta.transpose() * (pinv_i + pinv_j) * &delta)[(0, 0)];
    Ok((0.5 * q).max(0.0))
}

/// Same quadratic form through the `Lᵀ L = C†` factors, as a sum of squares.
fn factored_distance(delta: &DVector<f64>, li: &DMatrix<f64>, lj: &DMatrix<f64>) -> f64 {
    0.5 * ((li * delta).norm_squared() + (lj * delta).norm_squared())
}

/// Pairwise distances between frames.
#[derive(Clone, Debug)]
pub struct DistanceMatrix {
    pub values: DMatrix<f64>,
    /// Median of the strict upper triangle.
    pub median: f64,
}

impl DistanceMatrix {
    pub fn from_values(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != values.ncols() {
            return Err(invalid_input("distance matrix must be square"));
        }
        let median = upper_triangle_median(&values).unwrap_or(0.0);
        Ok(Self { values, median })
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }
}

/// Median of the `N(N−1)/2` strict upper-triangle entries; an even count
/// averages the two central values.
pub fn upper_triangle_median(m: &DMatrix<f64>) -> Option<f64> {
    let n = m.nrows();
    let mut v: Vec<f64> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .map(|(i, j)| m[(i, j)])
        .collect();
    if v.is_empty() {
        return None;
    }
    let len = v.len();
    let mid = len / 2;
    let (_, &mut upper, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    if len % 2 == 1 {
        Some(upper)
    } else {
        let lower = v[..mid].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Some(0.5 * (lower + upper))
    }
}

pub fn distance_matrix(feats: &FeatureSeries, covs: &LocalCovariances) -> Result<DistanceMatrix> {
    let n = feats.len();
    if covs.len() != n {
        return Err(invalid_input(format!(
            "{} covariances for {n} frames",
            covs.len()
        )));
    }
    let dim = feats.dim();
    if let Some(i) = covs.inverses.iter().position(|p| p.factor.ncols() != dim) {
        return Err(invalid_input(format!(
            "frame {i}: covariance dimension {} does not match features {dim}",
            covs.inverses[i].factor.ncols()
        )));
    }
    let rows: Vec<DVector<f64>> = feats.frames.row_iter().map(|r| r.transpose()).collect();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let li = &covs.inverses[i].factor;
            (i + 1..n)
                .map(|j| {
                    let delta = &rows[i] - &rows[j];
                    factored_distance(&delta, li, &covs.inverses[j].factor)
                })
                .collect()
        })
        .collect();
    let mut values = DMatrix::zeros(n, n);
    for (i, row) in upper.iter().enumerate() {
        for (k, &d) in row.iter().enumerate() {
            let j = i + 1 + k;
            if !d.is_finite() {
                return Err(Error::Numeric(format!("non-finite distance between frames {i} and {j}")));
            }
            values[(i, j)] = d;
            values[(j, i)] = d;
        }
    }
    DistanceMatrix::from_values(values)
}

/// Distances from one new frame to every training frame.
pub fn distances_to(
    z: &[f64],
    factor: &DMatrix<f64>,
    feats: &FeatureSeries,
    covs: &LocalCovariances,
) -> Result<DVector<f64>> {
    if z.len() != feats.dim() || factor.ncols() != feats.dim() {
        return Err(invalid_input(format!(
            "new frame dimension {} does not match training dimension {}",
            z.len(),
            feats.dim()
        )));
    }
    let zv = DVector::from_column_slice(z);
    Ok(DVector::from_iterator(
        feats.len(),
        feats.frames.row_iter().zip(&covs.inverses).map(|(row, p)| {
            let delta = &zv - row.transpose();
            factored_distance(&delta, factor, &p.factor)
        }),
    ))
}

/// Kernel scale `factor · median`.
pub fn select_epsilon(dist: &DistanceMatrix, factor: f64) -> Result<f64> {
    if dist.len() < 2 {
        return Err(invalid_input("need at least two frames to pick a kernel scale"));
    }
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(invalid_param(format!("epsilon factor must be > 0, got {factor}")));
    }
    if dist.values.iter().all(|&d| d == 0.0) {
        return Err(Error::DegenerateData("all pairwise distances are zero".into()));
    }
    let eps = factor * dist.median;
    if eps > 0.0 {
        Ok(eps)
    } else {
        // more than half the pairs coincide
        Err(Error::DegenerateData(format!("median distance is {}", dist.median)))
    }
}

/// Gaussian kernel with its row normalization.
#[derive(Clone, Debug)]
pub struct AffinityOperator {
    pub kernel: DMatrix<f64>,
    pub row_sums: DVector<f64>,
    /// Row-stochastic `D⁻¹ K`.
    pub markov: DMatrix<f64>,
    pub epsilon: f64,
}

impl AffinityOperator {
    /// Normalizes an arbitrary symmetric nonnegative kernel.
    pub fn from_kernel(kernel: DMatrix<f64>, epsilon: f64) -> Result<Self> {
        let n = kernel.nrows();
        if kernel.ncols() != n {
            return Err(invalid_input("kernel must be square"));
        }
        let row_sums = DVector::from_fn(n, |i, _| kernel.row(i).sum());
        if let Some(i) = row_sums.iter().position(|&s| !(s > 0.0)) {
            return Err(Error::Numeric(format!("kernel row {i} sums to zero")));
        }
        let mut markov = kernel.clone();
        for (i, mut row) in markov.row_iter_mut().enumerate() {
            row /= row_sums[i];
        }
        Ok(Self {
            kernel,
            row_sums,
            markov,
            epsilon,
        })
    }

    pub fn len(&self) -> usize {
        self.kernel.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.kernel.nrows() == 0
    }
}

/// `K = exp(−d/ε)` (distances are already squared-form), `W = D⁻¹K`.
pub fn affinity(dist: &DistanceMatrix, epsilon: f64) -> Result<AffinityOperator> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(invalid_param(format!("epsilon must be > 0, got {epsilon}")));
    }
    let kernel = dist.values.map(|d| (-d.max(0.0) / epsilon).exp());
    let op = AffinityOperator::from_kernel(kernel, epsilon)?;
    // K(i,i) = 1, so row sums are at least one
    debug_assert!(op.row_sums.iter().all(|&s| s >= 1.0));
    Ok(op)
}

/// Row of affinities from a new frame to the training frames, normalized to
/// sum to one.
pub fn affinity_row(distances: &DVector<f64>, epsilon: f64) -> Result<DVector<f64>> {
    if !(epsilon > 0.0) {
        return Err(invalid_param(format!("epsilon must be > 0, got {epsilon}")));
    }
    if distances.is_empty() || distances.iter().any(|d| !d.is_finite()) {
        return Err(Error::Numeric("kernel row needs finite distances".into()));
    }
    // shifting by the nearest distance cancels in the normalization and
    // keeps far-away frames from underflowing to an all-zero row
    let nearest = distances.iter().fold(f64::INFINITY, |a, &d| a.min(d.max(0.0)));
    let k = distances.map(|d| (-(d.max(0.0) - nearest) / epsilon).exp());
    let s = k.sum();
    Ok(k / s)
}
