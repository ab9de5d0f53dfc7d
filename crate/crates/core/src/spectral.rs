//! Spectrum of the row-stochastic kernel: eigenpairs, Fokker–Planck rates,
//! dimension selection and embedding coordinates.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, invalid_param, Error, Result};
use crate::kernel::AffinityOperator;
use crate::linalg::symmetric_eigen_desc;

/// Eigenpairs of `W`, `μ₀ = 1 ≥ μ₁ ≥ …`, eigenvectors as columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub mu: Vec<f64>,
    pub psi: DMatrix<f64>,
}

/// Everything the observer needs from the diffusion-maps stage.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionModel {
    pub mu: Vec<f64>,
    /// `N × count` eigenvectors; column 0 is the all-ones vector.
    pub psi: DMatrix<f64>,
    /// Fokker–Planck rates `λℓ`; `None` where `μℓ ≤ 0`.
    pub lambda: Vec<Option<f64>>,
    pub epsilon: f64,
    pub beta: f64,
    /// Embedding dimension (number of nontrivial coordinates).
    pub m: usize,
    pub frame_dt: f64,
}

impl DiffusionModel {
    pub fn new(
        spectrum: Spectrum,
        epsilon: f64,
        beta: f64,
        policy: DimensionPolicy,
        frame_dt: f64,
    ) -> Result<Self> {
        let lambda = fp_eigenvalues(&spectrum.mu, epsilon, beta)?;
        let m = select_dimension(&spectrum.mu, policy)?;
        if m + 1 > spectrum.mu.len() {
            return Err(invalid_input(format!(
                "dimension {m} needs {} eigenpairs, have {}",
                m + 1,
                spectrum.mu.len()
            )));
        }
        Ok(Self {
            mu: spectrum.mu,
            psi: spectrum.psi,
            lambda,
            epsilon,
            beta,
            m,
            frame_dt,
        })
    }

    pub fn frames(&self) -> usize {
        self.psi.nrows()
    }

    pub fn count(&self) -> usize {
        self.mu.len()
    }

    pub fn embedding(&self) -> DMatrix<f64> {
        embedding(self, self.m).expect("model dimension is validated at construction")
    }
}

/// Tolerances the trivial pair must meet on every run.
pub const TRIVIAL_EIGENVALUE_TOL: f64 = 1e-10;
pub const TRIVIAL_VECTOR_TOL: f64 = 1e-8;
const RESIDUAL_TOL: f64 = 1e-8;

/// Top `count` eigenpairs of `W = D⁻¹K` through the symmetric conjugate
/// `S = D^{-1/2} K D^{-1/2}` and `ψ = D^{-1/2} φ`.
///
/// The stationary direction `φ₀ ∝ D^{1/2}·1` is known in closed form; it is
/// deflated out of `S` so `ψ₀` is exactly the all-ones vector even when the
/// graph is disconnected. Remaining vectors have unit Euclidean norm and a
/// positive largest-magnitude entry (first such index on ties).
pub fn diffusion_eigs(op: &AffinityOperator, count: usize) -> Result<Spectrum> {
    let n = op.len();
    if n < 2 {
        return Err(invalid_input("need at least two frames"));
    }
    if count == 0 || count > n {
        return Err(invalid_param(format!("eigenpair count {count} not in [1, {n}]")));
    }
    let inv_sqrt_d = op.row_sums.map(|d| 1.0 / d.sqrt());
    let mut s = DMatrix::from_fn(n, n, |i, j| op.kernel[(i, j)] * inv_sqrt_d[i] * inv_sqrt_d[j]);
    s = (&s + s.transpose()) * 0.5;

    // shift the trivial direction to −2, below the spectrum of S ⊂ [−1, 1]
    let mut v0 = op.row_sums.map(f64::sqrt);
    v0 /= v0.norm();
    s -= &v0 * v0.transpose() * 3.0;

    let (values, vectors) = symmetric_eigen_desc(&s);
    if let Some(&top) = values.first() {
        if top > 1.0 + TRIVIAL_EIGENVALUE_TOL {
            return Err(Error::Numeric(format!(
                "eigenvalue {top} exceeds 1; kernel is not a valid Markov operator"
            )));
        }
    }

    let mut mu = Vec::with_capacity(count);
    let mut psi = DMatrix::zeros(n, count);
    mu.push(1.0);
    psi.column_mut(0).fill(1.0);
    for k in 1..count {
        mu.push(values[k - 1]);
        let mut col: DVector<f64> = vectors.column(k - 1).component_mul(&inv_sqrt_d);
        let norm = col.norm();
        if !(norm > 0.0) {
            return Err(Error::Numeric(format!("eigenvector {k} vanished after back-transform")));
        }
        col /= norm;
        fix_sign(&mut col);
        psi.set_column(k, &col);
    }

    for k in 0..count {
        let x = psi.column(k);
        let r = (&op.markov * x - x * mu[k]).norm();
        if r > RESIDUAL_TOL * x.norm() {
            return Err(Error::Numeric(format!(
                "eigenpair {k} residual {r:.3e} exceeds {RESIDUAL_TOL:e}"
            )));
        }
    }
    Ok(Spectrum { mu, psi })
}

/// Flips `v` so its largest-magnitude entry (first on ties) is positive.
pub fn fix_sign(v: &mut DVector<f64>) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.neg_mut();
    }
}

/// `−λℓ = (2/(βε))·ln μℓ`; nonpositive `μℓ` are marked unusable.
pub fn fp_eigenvalues(mu: &[f64], epsilon: f64, beta: f64) -> Result<Vec<Option<f64>>> {
    if !(epsilon > 0.0) {
        return Err(invalid_param(format!("epsilon must be > 0, got {epsilon}")));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(invalid_param(format!("beta must be finite and > 0, got {beta}")));
    }
    Ok(mu
        .iter()
        .enumerate()
        .map(|(l, &m)| {
            if m > 0.0 {
                Some(-(2.0 / (beta * epsilon)) * m.ln())
            } else {
                warn!("eigenvalue μ{l} = {m:.3e} is not positive; mode excluded from the dynamics");
                None
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DimensionPolicy {
    /// Index before the largest consecutive drop among `μ₁ … μ_L`.
    Gap,
    Fixed { m: usize },
}

/// Largest index considered by the gap rule.
pub const GAP_SEARCH_LIMIT: usize = 20;

pub fn select_dimension(mu: &[f64], policy: DimensionPolicy) -> Result<usize> {
    let n = mu.len();
    match policy {
        DimensionPolicy::Fixed { m } => {
            if m == 0 || m >= n {
                return Err(invalid_input(format!("fixed dimension {m} not in [1, {n})")));
            }
            Ok(m)
        }
        DimensionPolicy::Gap => {
            if n < 3 {
                return Err(invalid_input(format!("gap rule needs >= 3 eigenvalues, got {n}")));
            }
            let limit = (n - 1).min(GAP_SEARCH_LIMIT);
            let mut best = 1;
            for l in 1..limit {
                if mu[l] - mu[l + 1] > mu[best] - mu[best + 1] {
                    best = l;
                }
            }
            Ok(best)
        }
    }
}

/// Columns `ψ₁ … ψ_m`; row `i` embeds frame `i`.
pub fn embedding(model: &DiffusionModel, m: usize) -> Result<DMatrix<f64>> {
    if m == 0 || m >= model.count() {
        return Err(invalid_input(format!(
            "embedding dimension {m} not in [1, {})",
            model.count()
        )));
    }
    Ok(model.psi.columns(1, m).into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{affinity, DistanceMatrix};

    fn op_from_kernel(k: &[f64], n: usize) -> AffinityOperator {
        AffinityOperator::from_kernel(DMatrix::from_row_slice(n, n, k), 1.0).unwrap()
    }

    #[test]
    fn uniform_kernel_rank_one() {
        let d = DistanceMatrix::from_values(DMatrix::zeros(3, 3)).unwrap();
        let s = diffusion_eigs(&affinity(&d, 1.0).unwrap(), 3).unwrap();
        assert_eq!(s.mu[0], 1.0);
        assert!(s.mu[1].abs() < 1e-12 && s.mu[2].abs() < 1e-12);
        assert!(s.psi.column(0).iter().all(|&x| x == 1.0));
    }

    #[test]
    fn two_state_chain() {
        // D = (2, 1) gives W = [[0.9, 0.1], [0.2, 0.8]]
        let op = op_from_kernel(&[1.8, 0.2, 0.2, 0.8], 2);
        assert!((op.markov[(0, 0)] - 0.9).abs() < 1e-15);
        assert!((op.markov[(1, 0)] - 0.2).abs() < 1e-15);
        let s = diffusion_eigs(&op, 2).unwrap();
        assert!((s.mu[1] - 0.7).abs() < 1e-12);
        // (W − 0.7) v = 0 ⇒ v ∝ (1, −2); sign rule picks (−1, 2)/√5
        let r5 = 5f64.sqrt();
        assert!((s.psi[(0, 1)] + 1.0 / r5).abs() < 1e-12);
        assert!((s.psi[(1, 1)] - 2.0 / r5).abs() < 1e-12);
    }

    #[test]
    fn disconnected_blocks_have_double_unit_eigenvalue() {
        let k = [
            1.0, 0.5, 0.0, 0.0, //
            0.5, 1.0, 0.0, 0.0, //
            0.0, 0.0, 1.0, 0.3, //
            0.0, 0.0, 0.3, 1.0,
        ];
        let s = diffusion_eigs(&op_from_kernel(&k, 4), 4).unwrap();
        assert_eq!(s.mu[0], 1.0);
        assert!((s.mu[1] - 1.0).abs() < 1e-12);
        assert!(s.psi.column(0).iter().all(|&x| x == 1.0));
    }

    fn random_operator(seed: u64, n: usize) -> AffinityOperator {
        let mut rng = crate::rng::SimRng::new(seed, 0);
        let pts: Vec<f64> = (0..2 * n).map(|_| rng.standard_normal()).collect();
        let mut d = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                d[(i, j)] = (pts[2 * i] - pts[2 * j]).powi(2) + (pts[2 * i + 1] - pts[2 * j + 1]).powi(2);
            }
        }
        let d = DistanceMatrix::from_values(d).unwrap();
        affinity(&d, d.median).unwrap()
    }

    #[test]
    fn eigen_residuals_and_normalization() {
        let op = random_operator(4, 40);
        let s = diffusion_eigs(&op, 10).unwrap();
        for k in 0..10 {
            let x = s.psi.column(k);
            assert!((&op.markov * x - x * s.mu[k]).norm() <= 1e-8 * x.norm());
            if k > 0 {
                assert!((x.norm() - 1.0).abs() < 1e-12);
                let big = x.iter().cloned().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
                assert!(big > 0.0);
            }
        }
        assert!(s.mu.windows(2).all(|w| w[0] >= w[1]));
        assert!(s.mu.iter().all(|&m| m > -1.0 && m <= 1.0));
    }

    #[test]
    fn matches_nonsymmetric_solver() {
        for seed in 0..5 {
            let op = random_operator(100 + seed, 10);
            let s = diffusion_eigs(&op, 10).unwrap();
            let mut oracle: Vec<f64> = op.markov.complex_eigenvalues().iter().map(|c| c.re).collect();
            oracle.sort_by(|a, b| b.total_cmp(a));
            for (a, b) in s.mu.iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-8, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn deterministic_including_signs() {
        let op = random_operator(9, 30);
        let a = diffusion_eigs(&op, 6).unwrap();
        let b = diffusion_eigs(&op, 6).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn count_validation() {
        let op = random_operator(1, 5);
        assert!(diffusion_eigs(&op, 0).is_err());
        assert!(diffusion_eigs(&op, 6).is_err());
    }

    #[test]
    fn fp_rate_examples() {
        let eps: f64 = 0.4;
        let beta: f64 = 1.5;
        let target = (-beta * eps / 2.0).exp();
        let l = fp_eigenvalues(&[1.0, target, 0.0, -0.2], eps, beta).unwrap();
        assert_eq!(l[0], Some(0.0));
        assert!((l[1].unwrap() - 1.0).abs() < 1e-14);
        assert_eq!(l[2], None);
        assert_eq!(l[3], None);
        assert!(fp_eigenvalues(&[1.0], 0.0, 1.0).is_err());
        assert!(fp_eigenvalues(&[1.0], 1.0, 0.0).is_err());
    }

    #[test]
    fn dimension_selection() {
        let mu = [1.0, 0.9, 0.88, 0.3, 0.28];
        // largest drop μ₂ − μ₃ leaves two nontrivial coordinates before the gap
        assert_eq!(select_dimension(&mu, DimensionPolicy::Gap).unwrap(), 2);
        assert_eq!(select_dimension(&mu, DimensionPolicy::Fixed { m: 2 }).unwrap(), 2);
        assert!(select_dimension(&mu, DimensionPolicy::Fixed { m: 5 }).is_err());
        assert!(select_dimension(&mu, DimensionPolicy::Fixed { m: 0 }).is_err());
        assert!(select_dimension(&mu[..2], DimensionPolicy::Gap).is_err());

        let geo: Vec<f64> = (0..30).map(|l| 0.9f64.powi(l)).collect();
        assert_eq!(select_dimension(&geo, DimensionPolicy::Gap).unwrap(), 1);
    }

    #[test]
    fn gap_search_is_capped() {
        let mut mu: Vec<f64> = (0..40).map(|l| 1.0 - 0.001 * l as f64).collect();
        mu[25] = 0.0;
        for v in mu.iter_mut().skip(26) {
            *v = -0.1;
        }
        // the big drop at 24→25 is beyond the search window
        assert!(select_dimension(&mu, DimensionPolicy::Gap).unwrap() < GAP_SEARCH_LIMIT);
    }

    #[test]
    fn embedding_columns() {
        let op = random_operator(2, 12);
        let s = diffusion_eigs(&op, 5).unwrap();
        let model = DiffusionModel::new(s.clone(), op.epsilon, 1.0, DimensionPolicy::Fixed { m: 3 }, 1.0).unwrap();
        let e1 = embedding(&model, 1).unwrap();
        assert_eq!(e1.column(0), s.psi.column(1));
        assert_eq!(model.embedding().ncols(), 3);
        assert!(embedding(&model, 5).is_err());
        assert!(embedding(&model, 0).is_err());
    }

    #[test]
    fn duplicated_frames_share_coordinates() {
        let mut rng = crate::rng::SimRng::new(6, 0);
        let mut pts: Vec<f64> = (0..15).map(|_| rng.standard_normal()).collect();
        pts.push(pts[3]);
        let n = pts.len();
        let d = DMatrix::from_fn(n, n, |i, j| (pts[i] - pts[j]).powi(2));
        let d = DistanceMatrix::from_values(d).unwrap();
        let op = affinity(&d, d.median).unwrap();
        let s = diffusion_eigs(&op, 4).unwrap();
        for k in 0..4 {
            assert!((s.psi[(3, k)] - s.psi[(n - 1, k)]).abs() < 1e-8);
        }
    }

    #[test]
    fn permuting_frames_permutes_rows() {
        let mut rng = crate::rng::SimRng::new(8, 0);
        let pts: Vec<f64> = (0..20).map(|_| rng.standard_normal() * 2.0).collect();
        let n = pts.len();
        let perm: Vec<usize> = (0..n).map(|i| (i * 7 + 3) % n).collect();
        let build = |p: &dyn Fn(usize) -> f64| {
            let d = DMatrix::from_fn(n, n, |i, j| (p(i) - p(j)).powi(2));
            let d = DistanceMatrix::from_values(d).unwrap();
            diffusion_eigs(&affinity(&d, d.median).unwrap(), 5).unwrap()
        };
        let a = build(&|i| pts[i]);
        let b = build(&|i| pts[perm[i]]);
        for k in 0..5 {
            assert!((a.mu[k] - b.mu[k]).abs() < 1e-10);
            for i in 0..n {
                assert!((b.psi[(i, k)] - a.psi[(perm[i], k)]).abs() < 1e-8);
            }
        }
    }
}
