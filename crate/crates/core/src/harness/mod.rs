//! Experiment drivers: regression alignment, metrics, baselines and the
//! sphere, eigenvalue and extension studies.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid_input, Error, Result};
use crate::lift::LiftOperator;

mod experiments;
mod report;

pub use experiments::*;
pub use report::*;

/// Lowest reported nRMSE, used when the estimate is exact.
pub const NRMSE_FLOOR_DB: f64 = -300.0;

/// Ordinary least-squares fit of every truth column on `[1, coords]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Alignment {
    /// `N × q` fitted values.
    pub fitted: DMatrix<f64>,
    /// `(p + 1) × q`; row 0 is the intercept.
    pub weights: DMatrix<f64>,
}

pub fn align_linear(coords: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<Alignment> {
    let (n, p) = coords.shape();
    if p == 0 {
        return Err(invalid_input("alignment needs at least one coordinate"));
    }
    if truth.nrows() != n {
        return Err(invalid_input(format!("{n} coordinate rows but {} truth rows", truth.nrows())));
    }
    if n <= p + 1 {
        return Err(Error::DegenerateRegression(format!(
            "{n} samples cannot fit {} regressors",
            p + 1
        )));
    }
    let design = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { coords[(i, j - 1)] });
    // column scaling keeps the rank test independent of coordinate units
    let scales: Vec<f64> = design
        .column_iter()
        .map(|c| {
            let s = c.norm();
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    let scaled = DMatrix::from_fn(n, p + 1, |i, j| design[(i, j)] / scales[j]);
    let svd = scaled.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-10 * smax) {
        return Err(Error::DegenerateRegression(format!(
            "design matrix is singular (condition {:.3e})",
            smax / smin
        )));
    }
    let solved = svd
        .solve(truth, 0.0)
        .map_err(|e| Error::DegenerateRegression(e.to_string()))?;
    let weights = DMatrix::from_fn(p + 1, truth.ncols(), |j, k| solved[(j, k)] / scales[j]);
    let fitted = &design * &weights;
    Ok(Alignment { fitted, weights })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub nrmse_db: f64,
    pub correlation: f64,
}

/// Normalized RMSE in dB and Pearson correlation. A constant estimate has
/// correlation 0.
pub fn metrics(estimate: &[f64], truth: &[f64]) -> Result<Metrics> {
    if estimate.len() != truth.len() {
        return Err(invalid_input(format!(
            "estimate has {} samples, truth {}",
            estimate.len(),
            truth.len()
        )));
    }
    if truth.len() < 2 {
        return Err(invalid_input("metrics need at least two samples"));
    }
    if estimate.iter().chain(truth).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite value in metric input".into()));
    }
    let n = truth.len() as f64;
    let tm = truth.iter().sum::<f64>() / n;
    let em = estimate.iter().sum::<f64>() / n;
    let (mut stt, mut see, mut ste, mut err) = (0.0, 0.0, 0.0, 0.0);
    for (&e, &t) in estimate.iter().zip(truth) {
        stt += (t - tm) * (t - tm);
        see += (e - em) * (e - em);
        ste += (t - tm) * (e - em);
        err += (e - t) * (e - t);
    }
    if stt == 0.0 {
        return Err(Error::UndefinedMetric("truth is constant".into()));
    }
    let nrmse_db = if err == 0.0 {
        NRMSE_FLOOR_DB
    } else {
        (10.0 * (err / stt).log10()).max(NRMSE_FLOOR_DB)
    };
    let correlation = if see == 0.0 {
        0.0
    } else {
        (ste / (stt.sqrt() * see.sqrt())).clamp(-1.0, 1.0)
    };
    Ok(Metrics { nrmse_db, correlation })
}

/// Causal moving average over the last `w` rows; the first rows average the
/// available prefix.
pub fn moving_average(series: &DMatrix<f64>, w: usize) -> Result<DMatrix<f64>> {
    if w == 0 {
        return Err(invalid_input("moving-average window must be >= 1"));
    }
    let (n, m) = series.shape();
    let mut out = DMatrix::zeros(n, m);
    let mut acc = DVector::<f64>::zeros(m);
    for i in 0..n {
        acc += series.row(i).transpose();
        if i >= w {
            acc -= series.row(i - w).transpose();
        }
        let count = (i + 1).min(w) as f64;
        out.row_mut(i).copy_from(&(&acc / count).transpose());
    }
    Ok(out)
}

/// Moving average of `α†(z − mean)` over the last `w` frames.
pub fn moving_average_baseline(
    lift: &LiftOperator,
    feats: &crate::features::FeatureSeries,
    w: usize,
) -> Result<DMatrix<f64>> {
    moving_average(&lift.invert_all(feats)?, w)
}

/// Arithmetic mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}
