//! Contracting observer on diffusion coordinates, its closed-form filter and
//! the two out-of-sample extension schemes.
//!
//! One frame advances the estimate by
//! `Ψ̂′ = Ψ̂ + dt·[(1−γ)ΛΨ̂ + γΛα†(z − mean)]`, with `Λ = −diag(λ₁ … λ_m)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid_input, invalid_param, Error, Result};
use crate::features::FeatureSeries;
use crate::lift::LiftOperator;
use crate::spectral::DiffusionModel;

pub const DEFAULT_GAMMA: f64 = 0.85;

#[derive(Clone, Debug, PartialEq)]
pub struct ObserverModel {
    /// Diagonal of `Λ`, strictly negative.
    pub lambda_diag: Vec<f64>,
    pub gamma: f64,
    pub dt_eff: f64,
    pub lift: LiftOperator,
    /// `κ = γΛα†`, `m × n`.
    pub gain: DMatrix<f64>,
}

/// Initial observer state.
#[derive(Clone, Debug, PartialEq)]
pub enum Init {
    Vector(DVector<f64>),
    Zero,
    /// Coordinates of the first frame, `α†(z₀ − mean)`.
    FirstCoordinate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObserverTrajectory {
    /// `(frames + 1) × m`; row 0 is the initial state.
    pub states: DMatrix<f64>,
    pub init: Init,
    /// `‖z − ẑ‖` against the estimate entering each frame.
    pub innovations: Vec<f64>,
}

impl ObserverTrajectory {
    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.nrows() == 0
    }

    pub fn last_state(&self) -> DVector<f64> {
        self.states.row(self.states.nrows() - 1).transpose()
    }

    /// Estimates after each frame, without the initial state.
    pub fn estimates(&self) -> DMatrix<f64> {
        self.states.rows(1, self.states.nrows() - 1).into_owned()
    }
}

/// Largest admissible `dt_eff` for a mode with rate `λ`.
pub fn max_stable_dt(lambda: f64, gamma: f64) -> f64 {
    2.0 / ((1.0 - gamma) * lambda)
}

impl ObserverModel {
    /// Build from explicit positive rates.
    pub fn from_rates(rates: &[f64], lift: LiftOperator, gamma: f64, dt_eff: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(invalid_param(format!("γ = {gamma} must lie in the open interval (0,1)")));
        }
        if !(dt_eff.is_finite() && dt_eff > 0.0) {
            return Err(invalid_param(format!("dt_eff = {dt_eff} must be positive and finite")));
        }
        if rates.len() != lift.dim() {
            return Err(invalid_input(format!(
                "{} rates for a lift of dimension {}",
                rates.len(),
                lift.dim()
            )));
        }
        for (l, &r) in rates.iter().enumerate() {
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::InvalidModel(format!(
                    "mode {} has rate {r}; observer modes need λ > 0",
                    l + 1
                )));
            }
        }
        // the tightest mode decides the admissible step
        let (worst, max_dt) = rates
            .iter()
            .enumerate()
            .map(|(l, &r)| (l + 1, max_stable_dt(r, gamma)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("at least one mode");
        if dt_eff >= max_dt {
            return Err(Error::StepTooLarge { mode: worst, max_dt });
        }
        let lambda_diag: Vec<f64> = rates.iter().map(|r| -r).collect();
        let mut gain = lift.alpha_pinv.clone();
        for (l, mut row) in gain.row_iter_mut().enumerate() {
            row *= gamma * lambda_diag[l];
        }
        Ok(Self {
            lambda_diag,
            gamma,
            dt_eff,
            lift,
            gain,
        })
    }

    pub fn dim(&self) -> usize {
        self.lambda_diag.len()
    }

    /// Diagonal of the per-step Jacobian `I + (1−γ)Λ·dt_eff`.
    pub fn jacobian_diag(&self) -> Vec<f64> {
        self.lambda_diag
            .iter()
            .map(|l| 1.0 + (1.0 - self.gamma) * l * self.dt_eff)
            .collect()
    }

    /// Spectral radius of the per-step Jacobian.
    pub fn contraction_rate(&self) -> f64 {
        self.jacobian_diag().iter().fold(0.0, |a, b| a.max(b.abs()))
    }

    /// Number of sub-steps used per frame of duration `frame_dt`.
    pub fn substeps(&self, frame_dt: f64) -> usize {
        if frame_dt > self.dt_eff {
            ((frame_dt / self.dt_eff) * (1.0 - 1e-12)).ceil() as usize
        } else {
            1
        }
    }

    /// One update with the measurement `z` (uncentered).
    pub fn step(&self, psi: &DVector<f64>, z: &DVector<f64>) -> Result<DVector<f64>> {
        let drive = self.drive(z)?;
        self.step_driven(psi, &drive)
    }

    /// `κ(z − mean)`.
    fn drive(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        if z.len() != self.lift.features() {
            return Err(invalid_input(format!(
                "measurement has dimension {}, observer expects {}",
                z.len(),
                self.lift.features()
            )));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite measurement".into()));
        }
        Ok(&self.gain * (z - &self.lift.mean))
    }

    fn step_driven(&self, psi: &DVector<f64>, drive: &DVector<f64>) -> Result<DVector<f64>> {
        if psi.len() != self.dim() {
            return Err(invalid_input(format!(
                "state has dimension {}, observer expects {}",
                psi.len(),
                self.dim()
            )));
        }
        if psi.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite observer state".into()));
        }
        let dt = self.dt_eff;
        Ok(DVector::from_fn(self.dim(), |l, _| {
            psi[l] + dt * ((1.0 - self.gamma) * self.lambda_diag[l] * psi[l] + drive[l])
        }))
    }

    fn initial_state(&self, init: &Init, feats: &FeatureSeries) -> Result<DVector<f64>> {
        match init {
            Init::Vector(v) => {
                if v.len() != self.dim() {
                    return Err(invalid_input(format!(
                        "initial state has dimension {}, observer expects {}",
                        v.len(),
                        self.dim()
                    )));
                }
                Ok(v.clone())
            }
            Init::Zero => Ok(DVector::zeros(self.dim())),
            Init::FirstCoordinate => {
                if feats.is_empty() {
                    Ok(DVector::zeros(self.dim()))
                } else {
                    self.lift.invert(&feats.frames.row(0).transpose())
                }
            }
        }
    }

    /// Iterate the observer over every frame, sub-stepping with `z` held fixed.
    pub fn run(&self, feats: &FeatureSeries, init: Init) -> Result<ObserverTrajectory> {
        let start = self.initial_state(&init, feats)?;
        self.iterate(feats, start, init)
    }

    fn iterate(&self, feats: &FeatureSeries, start: DVector<f64>, init: Init) -> Result<ObserverTrajectory> {
        if feats.dim() != self.lift.features() {
            return Err(invalid_input(format!(
                "features have dimension {}, observer expects {}",
                feats.dim(),
                self.lift.features()
            )));
        }
        let m = self.dim();
        let sub = self.substeps(feats.frame_dt);
        let mut states = DMatrix::zeros(feats.len() + 1, m);
        states.row_mut(0).copy_from(&start.transpose());
        let mut innovations = Vec::with_capacity(feats.len());
        let mut psi = start;
        for i in 0..feats.len() {
            let z = feats.frames.row(i).transpose();
            let predicted = self.lift.reconstruct(&psi)?;
            innovations.push((&z - predicted).norm());
            let drive = self.drive(&z)?;
            for _ in 0..sub {
                psi = self.step_driven(&psi, &drive)?;
            }
            states.row_mut(i + 1).copy_from(&psi.transpose());
        }
        Ok(ObserverTrajectory {
            states,
            init,
            innovations,
        })
    }

    /// Continue the recursion from `state` over new frames with the frozen model.
    pub fn extend(&self, state: &DVector<f64>, new_feats: &FeatureSeries) -> Result<ObserverTrajectory> {
        if state.len() != self.dim() {
            return Err(invalid_input(format!(
                "carried state has dimension {}, observer expects {}",
                state.len(),
                self.dim()
            )));
        }
        self.iterate(new_feats, state.clone(), Init::Vector(state.clone()))
    }
}

/// Rates `λ₁ … λ_m` of a trained model; every mode must have a positive rate.
pub fn model_rates(model: &DiffusionModel, m: usize) -> Result<Vec<f64>> {
    if m + 1 > model.lambda.len() {
        return Err(invalid_input(format!(
            "{m} modes requested, model has {} nontrivial",
            model.lambda.len().saturating_sub(1)
        )));
    }
    (1..=m)
        .map(|l| match model.lambda[l] {
            Some(r) if r > 0.0 => Ok(r),
            _ => Err(Error::InvalidModel(format!(
                "mode {l} (μ = {}) has no usable positive rate",
                model.mu[l]
            ))),
        })
        .collect()
}

/// Observer over the first `lift.dim()` nontrivial modes of a trained model.
pub fn build_observer(
    model: &DiffusionModel,
    lift: LiftOperator,
    gamma: f64,
    dt_eff: f64,
) -> Result<ObserverModel> {
    let rates = model_rates(model, lift.dim())?;
    ObserverModel::from_rates(&rates, lift, gamma, dt_eff)
}

/// Observer on the frame clock: rates `λℓ / frame_dt`, so one frame of
/// duration `frame_dt` advances each mode by `λℓ` whatever the sub-step.
/// `dt_eff` defaults to one step per frame.
pub fn frame_clock_observer(
    model: &DiffusionModel,
    lift: LiftOperator,
    gamma: f64,
    dt_eff: Option<f64>,
) -> Result<ObserverModel> {
    let rates: Vec<f64> = model_rates(model, lift.dim())?
        .into_iter()
        .map(|r| r / model.frame_dt)
        .collect();
    ObserverModel::from_rates(&rates, lift, gamma, dt_eff.unwrap_or(model.frame_dt))
}

/// Continue a trained observer across frames it has not seen.
pub fn extend_observer(
    obs: &ObserverModel,
    state: &DVector<f64>,
    new_feats: &FeatureSeries,
) -> Result<ObserverTrajectory> {
    obs.extend(state, new_feats)
}

/// Closed form of the zero-initialized observer as a per-mode weighted sum
/// of past transformed measurements.
pub fn diffusion_filter(obs: &ObserverModel, feats: &FeatureSeries) -> Result<ObserverTrajectory> {
    let u = obs.lift.invert_all(feats)?;
    let n = feats.len();
    let m = obs.dim();
    let k = obs.substeps(feats.frame_dt) as i32;
    let mut states = DMatrix::zeros(n + 1, m);
    for l in 0..m {
        let lam = obs.lambda_diag[l];
        let a = 1.0 + (1.0 - obs.gamma) * lam * obs.dt_eff;
        let b = obs.gamma * lam * obs.dt_eff;
        // one frame of k sub-steps: a^k on the state, b(1 + a + … + a^{k−1}) on the input
        let per_frame = b * (0..k).map(|j| a.powi(j)).sum::<f64>();
        let decay = a.powi(k);
        for t in 1..=n {
            let mut acc = 0.0;
            for i in 0..t {
                acc += decay.powi((t - 1 - i) as i32) * per_frame * u[(i, l)];
            }
            states[(t, l)] = acc;
        }
    }
    let zeros = DVector::zeros(m);
    let mut innovations = Vec::with_capacity(n);
    for t in 0..n {
        let psi = states.row(t).transpose();
        let z = feats.frames.row(t).transpose();
        let pred = if t == 0 { obs.lift.reconstruct(&zeros)? } else { obs.lift.reconstruct(&psi)? };
        innovations.push((z - pred).norm());
    }
    Ok(ObserverTrajectory {
        states,
        init: Init::Zero,
        innovations,
    })
}

/// `ψℓ(new) = (1/μℓ) Σⱼ W(new, j) ψℓ(tⱼ)` for `ℓ = 1 … m`.
pub fn nystrom_extend(model: &DiffusionModel, kernel_row: &DVector<f64>) -> Result<DVector<f64>> {
    nystrom_extend_dim(model, kernel_row, model.m)
}

pub fn nystrom_extend_dim(model: &DiffusionModel, kernel_row: &DVector<f64>, m: usize) -> Result<DVector<f64>> {
    if kernel_row.len() != model.frames() {
        return Err(invalid_input(format!(
            "kernel row has length {}, model has {} frames",
            kernel_row.len(),
            model.frames()
        )));
    }
    if m == 0 || m >= model.count() {
        return Err(invalid_input(format!("extension dimension {m} not in [1, {})", model.count())));
    }
    let mut out = DVector::zeros(m);
    for l in 1..=m {
        let mu = model.mu[l];
        if mu <= 0.0 {
            return Err(Error::InvalidModel(format!("mode {l} has μ = {mu} ≤ 0")));
        }
        out[l - 1] = model.psi.column(l).dot(kernel_row) / mu;
    }
    Ok(out)
}
