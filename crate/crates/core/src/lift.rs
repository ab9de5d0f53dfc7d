//! Linear lift from embedding coordinates back to measurements.
//!
//! `α` has entries `αⱼℓ = Σᵢ zⱼ(tᵢ) ψℓ(tᵢ)` over mean-centered features; the
//! mean travels with the operator so reconstructions are in the original
//! feature units.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, Error, Result};
use crate::features::FeatureSeries;
use crate::linalg::{mean_rows, svd_pseudo_inverse};

/// Relative singular-value threshold for the rank of `α`.
pub const LIFT_RANK_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LiftWeighting {
    /// Plain discrete inner product.
    #[default]
    Uniform,
    /// Inner product weighted by an equilibrium density estimate.
    Density,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LiftOperator {
    /// `n × m`.
    pub alpha: DMatrix<f64>,
    /// `m × n` left pseudo-inverse.
    pub alpha_pinv: DMatrix<f64>,
    pub rank: usize,
    /// Feature mean removed before fitting.
    pub mean: DVector<f64>,
    pub weighting: LiftWeighting,
}

impl LiftOperator {
    /// Assemble an operator from a given `α`, computing `α†` and checking rank.
    pub fn from_alpha(alpha: DMatrix<f64>, mean: DVector<f64>, weighting: LiftWeighting) -> Result<Self> {
        if alpha.ncols() == 0 {
            return Err(invalid_input("lift needs at least one coordinate"));
        }
        if mean.len() != alpha.nrows() {
            return Err(invalid_input(format!(
                "feature mean has length {}, α has {} rows",
                mean.len(),
                alpha.nrows()
            )));
        }
        if alpha.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite entry in α".into()));
        }
        let (alpha_pinv, rank, sv) = svd_pseudo_inverse(&alpha, LIFT_RANK_TOL);
        if rank < alpha.ncols() {
            let floor = LIFT_RANK_TOL * sv.first().copied().unwrap_or(0.0);
            return Err(Error::DegenerateLift {
                columns: deficient_columns(&alpha, floor),
            });
        }
        Ok(Self {
            alpha,
            alpha_pinv,
            rank,
            mean,
            weighting,
        })
    }

    /// Feature dimension `n`.
    pub fn features(&self) -> usize {
        self.alpha.nrows()
    }

    /// Embedding dimension `m`.
    pub fn dim(&self) -> usize {
        self.alpha.ncols()
    }

    /// `αx`, without the feature mean.
    pub fn project(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(x.len())?;
        Ok(&self.alpha * x)
    }

    /// `α†v` for an already centered feature vector.
    pub fn apply_pinv(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_features(v.len())?;
        Ok(&self.alpha_pinv * v)
    }

    /// `ẑ = αΨ + mean`.
    pub fn reconstruct(&self, psi: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.project(psi)? + &self.mean)
    }

    /// `α†(z − mean)`.
    pub fn invert(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_features(z.len())?;
        Ok(&self.alpha_pinv * (z - &self.mean))
    }

    /// Row-wise reconstruction of an `N × m` coordinate block.
    pub fn reconstruct_all(&self, coords: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(coords.ncols())?;
        let mut out = coords * self.alpha.transpose();
        for mut row in out.row_iter_mut() {
            row += self.mean.transpose();
        }
        Ok(out)
    }

    /// Row-wise `α†(z − mean)` for every frame.
    pub fn invert_all(&self, feats: &FeatureSeries) -> Result<DMatrix<f64>> {
        self.check_features(feats.dim())?;
        let mut centered = feats.frames.clone();
        for mut row in centered.row_iter_mut() {
            row -= self.mean.transpose();
        }
        Ok(centered * self.alpha_pinv.transpose())
    }

    fn check_dim(&self, m: usize) -> Result<()> {
        if m != self.dim() {
            return Err(invalid_input(format!(
                "coordinate dimension {m} does not match lift dimension {}",
                self.dim()
            )));
        }
        Ok(())
    }

    fn check_features(&self, n: usize) -> Result<()> {
        if n != self.features() {
            return Err(invalid_input(format!(
                "feature dimension {n} does not match lift feature dimension {}",
                self.features()
            )));
        }
        Ok(())
    }
}

/// Columns that add no rank when scanned left to right.
fn deficient_columns(alpha: &DMatrix<f64>, floor: f64) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut deficient = Vec::new();
    for (l, col) in alpha.column_iter().enumerate() {
        let mut v = col.into_owned();
        // two Gram–Schmidt passes for stability
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&v);
                v.axpy(-c, q, 1.0);
            }
        }
        let norm = v.norm();
        if norm <= floor || norm == 0.0 {
            deficient.push(l);
        } else {
            basis.push(v / norm);
        }
    }
    deficient
}

/// Fit `α` with the plain discrete inner product.
pub fn fit_lift(feats: &FeatureSeries, coords: &DMatrix<f64>) -> Result<LiftOperator> {
    fit(feats, coords, None)
}

/// Fit `α` with frame weights `q(tᵢ)`, rescaled to mean one so that uniform
/// weights reproduce [`fit_lift`].
pub fn fit_lift_weighted(
    feats: &FeatureSeries,
    coords: &DMatrix<f64>,
    density: &[f64],
) -> Result<LiftOperator> {
    if density.len() != feats.len() {
        return Err(invalid_input(format!(
            "{} density weights for {} frames",
            density.len(),
            feats.len()
        )));
    }
    if density.iter().any(|&q| !q.is_finite() || q < 0.0) {
        return Err(invalid_input("density weights must be finite and non-negative"));
    }
    let total: f64 = density.iter().sum();
    if total <= 0.0 {
        return Err(invalid_input("density weights sum to zero"));
    }
    let scale = density.len() as f64 / total;
    let w: Vec<f64> = density.iter().map(|q| q * scale).collect();
    fit(feats, coords, Some(&w))
}

fn fit(feats: &FeatureSeries, coords: &DMatrix<f64>, weights: Option<&[f64]>) -> Result<LiftOperator> {
    if coords.nrows() != feats.len() {
        return Err(invalid_input(format!(
            "{} coordinate rows for {} frames",
            coords.nrows(),
            feats.len()
        )));
    }
    if coords.ncols() == 0 {
        return Err(invalid_input("lift needs m ≥ 1"));
    }
    let mean = mean_rows(&feats.frames);
    let mut centered = feats.frames.clone();
    for (i, mut row) in centered.row_iter_mut().enumerate() {
        row -= mean.transpose();
        if let Some(w) = weights {
            row *= w[i];
        }
    }
    let alpha = centered.transpose() * coords;
    let weighting = if weights.is_some() {
        LiftWeighting::Density
    } else {
        LiftWeighting::Uniform
    };
    LiftOperator::from_alpha(alpha, mean, weighting)
}

/// `‖Z − (ΨαT + mean)‖_F / ‖Z − mean‖_F` on the training frames.
pub fn relative_reconstruction_error(
    lift: &LiftOperator,
    feats: &FeatureSeries,
    coords: &DMatrix<f64>,
) -> Result<f64> {
    let rec = lift.reconstruct_all(coords)?;
    let mut centered = feats.frames.clone();
    for mut row in centered.row_iter_mut() {
        row -= lift.mean.transpose();
    }
    let denom = centered.norm();
    if denom == 0.0 {
        return Err(Error::DegenerateData("features are constant".into()));
    }
    Ok((&feats.frames - rec).norm() / denom)
}
