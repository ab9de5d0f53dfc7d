//! Dense linear-algebra helpers shared by the pipeline stages.

use faer::dyn_stack::{GlobalPodBuffer, PodStack};
use faer::linalg::evd::{
    compute_hermitian_evd, compute_hermitian_evd_req, ComputeVectors, HermitianEvdParams,
};
use faer::{Mat, Parallelism};
use nalgebra::{DMatrix, DVector};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_param, Error, Result};

/// Eigen-decomposition of a symmetric matrix with eigenvalues in descending
/// order. Ties keep ascending solver index (stable sort).
///
/// Runs single-threaded so results do not depend on the thread pool.
pub fn symmetric_eigen_desc(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "symmetric_eigen_desc needs a square matrix");
    if n == 0 {
        return (Vec::new(), DMatrix::zeros(0, 0));
    }
    let a = Mat::<f64>::from_fn(n, n, |i, j| m[(i, j)]);
    let mut s = Mat::<f64>::zeros(n, 1);
    let mut u = Mat::<f64>::zeros(n, n);
    let par = Parallelism::None;
    let params = HermitianEvdParams::default();
    let req = compute_hermitian_evd_req::<f64>(n, ComputeVectors::Yes, par, params)
        .expect("workspace size overflow");
    let mut mem = GlobalPodBuffer::new(req);
    compute_hermitian_evd(
        a.as_ref(),
        s.as_mut().col_mut(0),
        Some(u.as_mut()),
        par,
        PodStack::new(&mut mem),
        params,
    );

    // solver output is ascending; stable sort on descending value
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| s.read(j, 0).total_cmp(&s.read(i, 0)));
    let values = order.iter().map(|&k| s.read(k, 0)).collect();
    let vectors = DMatrix::from_fn(n, n, |i, c| u.read(i, order[c]));
    (values, vectors)
}

/// Which singular values of a local covariance survive pseudo-inversion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RankPolicy {
    /// Keep the `d` largest singular values.
    Fixed { d: usize },
    /// Keep singular values `σ ≥ tau·σ_max`.
    Relative { tau: f64 },
}

impl Default for RankPolicy {
    fn default() -> Self {
        RankPolicy::Relative { tau: 1e-3 }
    }
}

impl RankPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            RankPolicy::Fixed { d } if d == 0 => Err(invalid_param("fixed rank must be >= 1")),
            RankPolicy::Relative { tau } if !(tau > 0.0 && tau < 1.0) => {
                Err(invalid_param(format!("relative rank threshold {tau} not in (0,1)")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for RankPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RankPolicy::Fixed { d } => write!(f, "fixed:{d}"),
            RankPolicy::Relative { tau } => write!(f, "relative:{tau}"),
        }
    }
}

/// Parses `fixed:<d>` or `relative:<tau>`.
impl FromStr for RankPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, value) = s
            .split_once(':')
            .ok_or_else(|| invalid_param(format!("rank policy '{s}' is not fixed:<d> or relative:<tau>")))?;
        let policy = match kind.trim() {
            "fixed" => RankPolicy::Fixed {
                d: value
                    .trim()
                    .parse()
                    .map_err(|_| invalid_param(format!("bad fixed rank '{value}'")))?,
            },
            "relative" => RankPolicy::Relative {
                tau: value
                    .trim()
                    .parse()
                    .map_err(|_| invalid_param(format!("bad relative threshold '{value}'")))?,
            },
            other => return Err(invalid_param(format!("unknown rank policy '{other}'"))),
        };
        policy.validate()?;
        Ok(policy)
    }
}

/// Singular values below this fraction of the largest are treated as exact
/// zeros under every policy, so a fixed rank larger than the numerical rank
/// never inverts round-off.
const NUMERICAL_ZERO: f64 = 1e-13;

/// Pseudo-inverse of a symmetric positive semi-definite matrix.
#[derive(Clone, Debug)]
pub struct PsdPseudoInverse {
    pub pinv: DMatrix<f64>,
    /// `r × n` factor `L` with `Lᵀ L = pinv`, so `xᵀ pinv x = ‖L x‖²`.
    pub factor: DMatrix<f64>,
    pub rank: usize,
}

pub fn psd_pseudo_inverse(c: &DMatrix<f64>, policy: RankPolicy) -> PsdPseudoInverse {
    let n = c.nrows();
    let sym = (c + c.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let sigma_max = order.first().map(|&k| eig.eigenvalues[k].max(0.0)).unwrap_or(0.0);

    let floor = sigma_max * NUMERICAL_ZERO;
    let kept: Vec<usize> = order
        .iter()
        .copied()
        .enumerate()
        .take_while(|&(pos, k)| {
            let s = eig.eigenvalues[k];
            let by_policy = match policy {
                RankPolicy::Fixed { d } => pos < d,
                RankPolicy::Relative { tau } => s >= tau * sigma_max,
            };
            by_policy && s > floor && s > 0.0
        })
        .map(|(_, k)| k)
        .collect();

    let rank = kept.len();
    let mut factor = DMatrix::zeros(rank, n);
    for (r, &k) in kept.iter().enumerate() {
        let scale = 1.0 / eig.eigenvalues[k].sqrt();
        for i in 0..n {
            factor[(r, i)] = eig.eigenvectors[(i, k)] * scale;
        }
    }
    let pinv = factor.transpose() * &factor;
    PsdPseudoInverse { pinv, factor, rank }
}

/// Moore–Penrose pseudo-inverse of a general matrix via SVD, keeping
/// singular values `σ > rel_tol·σ_max`. Returns the pseudo-inverse, the rank
/// and the singular values in descending order.
pub fn svd_pseudo_inverse(a: &DMatrix<f64>, rel_tol: f64) -> (DMatrix<f64>, usize, Vec<f64>) {
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let mut pinv = DMatrix::zeros(a.ncols(), a.nrows());
    let mut rank = 0;
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > rel_tol * sigma_max && s > 0.0 {
            rank += 1;
            let v = vt.row(k).transpose();
            let uk = u.column(k);
            pinv += (v * uk.transpose()) / s;
        }
    }
    let mut sv: Vec<f64> = svd.singular_values.iter().cloned().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    (pinv, rank, sv)
}

pub fn mean_rows(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows().max(1) as f64;
    DVector::from_fn(m.ncols(), |j, _| m.column(j).sum() / n)
}

/// Sample covariance of the rows of `m`, normalized by `(count − 1)`.
pub fn sample_covariance(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mean = mean_rows(m);
    let mut centered = m.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    (centered.transpose() * centered) / (n as f64 - 1.0)
}
