//! Seeded simulators for latent Langevin dynamics and their measurements.
//!
//! All integrators use the explicit Euler–Maruyama step
//! `θ ← θ − ∇U(θ)·dt + sqrt(2·dt/β)·ξ` with independent standard normal
//! coordinates `ξ` (see [`crate::rng`] for the generator).

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, invalid_param, Error, Result};
use crate::rng::{streams, SimRng};

/// Latent trajectory `θ(tᵢ)`, one row per time step.
#[derive(Clone, Debug, PartialEq)]
pub struct StateTrajectory {
    pub dt: f64,
    pub states: DMatrix<f64>,
}

impl StateTrajectory {
    pub fn dim(&self) -> usize {
        self.states.ncols()
    }

    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.nrows() == 0
    }
}

/// Measurements `z(tᵢ)`, one row per time step.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSeries {
    pub dt: f64,
    pub samples: DMatrix<f64>,
}

impl ObservationSeries {
    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }

    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.nrows() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    /// Inverse temperature; `f64::INFINITY` switches the noise off.
    pub beta: f64,
    pub dt: f64,
    pub steps: usize,
    pub initial_state: Vec<f64>,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(invalid_param(format!("beta must be > 0, got {}", self.beta)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid_param(format!("dt must be > 0, got {}", self.dt)));
        }
        if self.steps == 0 {
            return Err(invalid_param("steps must be >= 1"));
        }
        if self.initial_state.is_empty() {
            return Err(invalid_param("initial state must have dimension >= 1"));
        }
        if self.initial_state.iter().any(|x| !x.is_finite()) {
            return Err(invalid_param("initial state must be finite"));
        }
        Ok(())
    }
}

/// Variance of one Euler–Maruyama noise increment per coordinate, `2·dt/β`.
pub fn step_variance(dt: f64, beta: f64) -> f64 {
    2.0 * dt / beta
}

/// Inverse temperature matching a constant diffusion coefficient `σ`
/// (`σ = sqrt(2/β)`); zero noise maps to `β = ∞`.
pub fn beta_for_sigma(sigma: f64) -> f64 {
    if sigma == 0.0 {
        f64::INFINITY
    } else {
        2.0 / (sigma * sigma)
    }
}

fn em_step<G>(grad: &G, theta: &mut [f64], scratch: &mut [f64], dt: f64, noise: f64, rng: &mut SimRng)
where
    G: Fn(&[f64], &mut [f64]),
{
    grad(theta, scratch);
    for (x, g) in theta.iter_mut().zip(scratch.iter()) {
        *x -= g * dt;
        if noise > 0.0 {
            *x += noise * rng.standard_normal();
        }
    }
}

/// Overdamped Langevin dynamics for a potential with gradient `grad`
/// (written into the second argument). The trajectory holds `steps + 1`
/// rows, starting at the initial state.
pub fn simulate_langevin<G>(grad: G, cfg: &SimConfig) -> Result<StateTrajectory>
where
    G: Fn(&[f64], &mut [f64]),
{
    cfg.validate()?;
    let d = cfg.initial_state.len();
    let noise = step_variance(cfg.dt, cfg.beta).sqrt();
    let mut rng = SimRng::new(cfg.seed, streams::DYNAMICS);
    let mut states = DMatrix::zeros(cfg.steps + 1, d);
    let mut theta = cfg.initial_state.clone();
    let mut scratch = vec![0.0; d];
    for (j, &x) in theta.iter().enumerate() {
        states[(0, j)] = x;
    }
    for step in 1..=cfg.steps {
        em_step(&grad, &mut theta, &mut scratch, cfg.dt, noise, &mut rng);
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::SimulationDiverged { step });
        }
        for (j, &x) in theta.iter().enumerate() {
            states[(step, j)] = x;
        }
    }
    Ok(StateTrajectory { dt: cfg.dt, states })
}

/// Ornstein–Uhlenbeck process `dθ = k(μ − θ)dt + σ dW`, applied per
/// coordinate. `cfg.beta` is ignored; the noise level comes from `sigma`.
pub fn simulate_ou(k: f64, mu: f64, sigma: f64, cfg: &SimConfig) -> Result<StateTrajectory> {
    if !(k > 0.0) {
        return Err(invalid_param(format!("OU rate k must be > 0, got {k}")));
    }
    if !(sigma >= 0.0) {
        return Err(invalid_param(format!("OU sigma must be >= 0, got {sigma}")));
    }
    let cfg = SimConfig {
        beta: beta_for_sigma(sigma),
        ..cfg.clone()
    };
    simulate_langevin(
        move |th: &[f64], g: &mut [f64]| {
            for (gi, x) in g.iter_mut().zip(th) {
                *gi = k * (x - mu);
            }
        },
        &cfg,
    )
}

/// Tone whose pitch follows the first latent coordinate in semitones around
/// `base_hz`, held piecewise constant over each step, phase-continuous.
pub fn synth_tone(traj: &StateTrajectory, rate: f64, base_hz: f64, amplitude: f64) -> Result<Vec<f64>> {
    if !(rate > 0.0 && base_hz > 0.0) {
        return Err(invalid_param("sample rate and base frequency must be > 0"));
    }
    if traj.dim() == 0 {
        return Err(invalid_input("trajectory has no coordinates"));
    }
    let per_step = (traj.dt * rate).round() as usize;
    if per_step == 0 {
        return Err(invalid_param(format!("dt = {} is shorter than one sample", traj.dt)));
    }
    let mut out = Vec::with_capacity(per_step * traj.len());
    let mut phase = 0.0_f64;
    for i in 0..traj.len() {
        let f = base_hz * (traj.states[(i, 0)] / 12.0).exp2();
        if !(f < rate / 2.0) {
            return Err(Error::Numeric(format!("pitch {f:.1} Hz at step {i} exceeds Nyquist")));
        }
        let inc = 2.0 * PI * f / rate;
        for _ in 0..per_step {
            out.push(amplitude * phase.sin());
            phase = (phase + inc) % (2.0 * PI);
        }
    }
    Ok(out)
}

/// Equilibrium angles (elevation, azimuth) of the sphere toy.
pub const SPHERE_MEANS: [f64; 2] = [PI / 2.0, PI / 10.0];

/// Parameters of the radiating object on the unit sphere.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SphereToy {
    /// Drift rate toward the equilibrium angles.
    pub c: f64,
    /// Noise coefficient multiplying the Brownian increment.
    pub b: f64,
}

impl SphereToy {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) {
            return Err(invalid_param(format!("sphere drift rate c must be > 0, got {}", self.c)));
        }
        if !(self.b >= 0.0) {
            return Err(invalid_param(format!("sphere noise b must be >= 0, got {}", self.b)));
        }
        Ok(())
    }

    pub fn beta(&self) -> f64 {
        beta_for_sigma(self.b)
    }

    pub fn grad(&self) -> impl Fn(&[f64], &mut [f64]) + Copy {
        let c = self.c;
        move |th: &[f64], g: &mut [f64]| {
            g[0] = c * (th[0] - SPHERE_MEANS[0]);
            g[1] = c * (th[1] - SPHERE_MEANS[1]);
        }
    }
}

/// Position on the unit sphere for elevation `θ₁` and azimuth `θ₂`.
pub fn sphere_position(theta: &[f64]) -> [f64; 3] {
    let s1 = theta[0].sin();
    let (s2, c2) = (theta[1].sin(), theta[1].cos());
    [c2 * s1, s2 * s1, theta[0].cos()]
}

fn measure_rows<M, const N: usize>(states: &DMatrix<f64>, dt: f64, measure: M) -> ObservationSeries
where
    M: Fn(&[f64]) -> [f64; N],
{
    let mut samples = DMatrix::zeros(states.nrows(), N);
    let mut row = vec![0.0; states.ncols()];
    for i in 0..states.nrows() {
        for (j, r) in row.iter_mut().enumerate() {
            *r = states[(i, j)];
        }
        for (j, v) in measure(&row).into_iter().enumerate() {
            samples[(i, j)] = v;
        }
    }
    ObservationSeries { dt, samples }
}

/// Sphere toy: angles follow two decoupled parabolic-potential Langevin
/// equations, positions are the spherical map of the angles. An empty
/// `initial_state` starts at the equilibrium angles; `cfg.beta` is ignored.
pub fn simulate_sphere_toy(
    toy: SphereToy,
    cfg: &SimConfig,
) -> Result<(StateTrajectory, ObservationSeries)> {
    toy.validate()?;
    let mut cfg = SimConfig {
        beta: toy.beta(),
        ..cfg.clone()
    };
    if cfg.initial_state.is_empty() {
        cfg.initial_state = SPHERE_MEANS.to_vec();
    }
    if cfg.initial_state.len() != 2 {
        return Err(invalid_input("sphere toy state is 2-dimensional"));
    }
    let traj = simulate_langevin(toy.grad(), &cfg)?;
    let obs = measure_rows(&traj.states, traj.dt, sphere_position);
    Ok((traj, obs))
}

/// Poisson "Geiger counter" sensors: `z_j = Pois(exp(−‖s_j − x‖)) + Pois(noise_rate)`.
pub fn poisson_sensor_observe(
    positions: &ObservationSeries,
    sensors: &[[f64; 3]],
    noise_rate: f64,
    seed: u64,
) -> Result<ObservationSeries> {
    if !(noise_rate >= 0.0 && noise_rate.is_finite()) {
        return Err(invalid_param(format!("noise rate must be >= 0, got {noise_rate}")));
    }
    if positions.dim() != 3 {
        return Err(invalid_input(format!(
            "sensor model needs 3-D positions, got dimension {}",
            positions.dim()
        )));
    }
    let mut rng = SimRng::new(seed, streams::SENSORS);
    let n = positions.len();
    let mut samples = DMatrix::zeros(n, sensors.len());
    for i in 0..n {
        let x = positions.samples.row(i);
        for (j, s) in sensors.iter().enumerate() {
            let dist = ((s[0] - x[0]).powi(2) + (s[1] - x[1]).powi(2) + (s[2] - x[2]).powi(2)).sqrt();
            let rate = (-dist).exp();
            let count = rng.poisson(rate) + rng.poisson(noise_rate);
            samples[(i, j)] = count as f64;
        }
    }
    Ok(ObservationSeries {
        dt: positions.dt,
        samples,
    })
}

fn circle_grad(th: &[f64], g: &mut [f64]) {
    g[0] = th[0];
}

fn circle_position(theta: &[f64]) -> [f64; 2] {
    let (s, c) = theta[0].sin_cos();
    [c, s]
}

/// Circle toy: `dθ = −θ dt + sqrt(2/β) dW` measured as `(cos θ, sin θ)`.
/// With `β = 1` the backward Fokker–Planck eigenvalues are `−ℓ`.
pub fn simulate_circle_toy(cfg: &SimConfig) -> Result<(StateTrajectory, ObservationSeries)> {
    if cfg.initial_state.len() != 1 {
        return Err(invalid_input("circle toy state is 1-dimensional"));
    }
    let traj = simulate_langevin(circle_grad, cfg)?;
    let obs = measure_rows(&traj.states, traj.dt, circle_position);
    Ok((traj, obs))
}

/// One anchor of a burst sample: the retained state, its measurement and
/// `burst_len` measurements of independent one-step propagations from it.
#[derive(Clone, Debug, PartialEq)]
pub struct Burst {
    pub index: usize,
    pub state: Vec<f64>,
    pub observation: Vec<f64>,
    pub samples: DMatrix<f64>,
}

/// Generic burst sampler. Simulates `cfg.steps` steps, retains `n_points`
/// anchors at a stride of `steps / n_points`, and from each anchor draws
/// `burst_len` one-step propagations on a separate random stream.
pub fn burst_sample_with<G, M>(
    grad: G,
    measure: M,
    cfg: &SimConfig,
    burst_len: usize,
    n_points: usize,
) -> Result<Vec<Burst>>
where
    G: Fn(&[f64], &mut [f64]) + Copy,
    M: Fn(&[f64]) -> Vec<f64>,
{
    if burst_len < 2 {
        return Err(invalid_param("burst length must be >= 2"));
    }
    if n_points == 0 {
        return Err(invalid_param("need at least one burst anchor"));
    }
    if cfg.steps < n_points {
        return Err(invalid_param(format!(
            "{} steps cannot host {} anchors",
            cfg.steps, n_points
        )));
    }
    let traj = simulate_langevin(grad, cfg)?;
    let stride = cfg.steps / n_points;
    let noise = step_variance(cfg.dt, cfg.beta).sqrt();
    let mut rng = SimRng::new(cfg.seed, streams::BURSTS);
    let mut out = Vec::with_capacity(n_points);
    for k in 0..n_points {
        let index = stride * (k + 1);
        let state: Vec<f64> = traj.states.row(index).iter().copied().collect();
        let observation = measure(&state);
        let samples = propagate_burst(&grad, &measure, &state, cfg.dt, noise, burst_len, &mut rng)
            .map_err(|_| Error::SimulationDiverged { step: index })?;
        out.push(Burst {
            index,
            state,
            observation,
            samples,
        });
    }
    Ok(out)
}

fn propagate_burst<G, M>(
    grad: &G,
    measure: &M,
    state: &[f64],
    dt: f64,
    noise: f64,
    burst_len: usize,
    rng: &mut SimRng,
) -> Result<DMatrix<f64>>
where
    G: Fn(&[f64], &mut [f64]),
    M: Fn(&[f64]) -> Vec<f64>,
{
    let n = measure(state).len();
    let mut scratch = vec![0.0; state.len()];
    let mut samples = DMatrix::zeros(burst_len, n);
    for b in 0..burst_len {
        let mut th = state.to_vec();
        em_step(grad, &mut th, &mut scratch, dt, noise, rng);
        if th.iter().any(|x| !x.is_finite()) {
            return Err(Error::SimulationDiverged { step: 1 });
        }
        for (j, v) in measure(&th).into_iter().enumerate() {
            samples[(b, j)] = v;
        }
    }
    Ok(samples)
}

/// `burst_len` one-step circle-toy propagations from the fixed angle `theta`,
/// measured as `(cos, sin)`.
pub fn circle_burst_at(
    theta: f64,
    dt: f64,
    beta: f64,
    burst_len: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if burst_len < 2 {
        return Err(invalid_param("burst length must be >= 2"));
    }
    let mut rng = SimRng::new(seed, streams::BURSTS);
    let noise = step_variance(dt, beta).sqrt();
    propagate_burst(
        &circle_grad,
        &|th: &[f64]| circle_position(th).to_vec(),
        &[theta],
        dt,
        noise,
        burst_len,
        &mut rng,
    )
}

/// Burst sample of the circle toy.
pub fn burst_sample(cfg: &SimConfig, burst_len: usize, n_points: usize) -> Result<Vec<Burst>> {
    if cfg.initial_state.len() != 1 {
        return Err(invalid_input("circle toy state is 1-dimensional"));
    }
    burst_sample_with(circle_grad, |th| circle_position(th).to_vec(), cfg, burst_len, n_points)
}

/// Burst sample of the sphere toy measured by the clean positions.
pub fn sphere_burst_sample(
    toy: SphereToy,
    cfg: &SimConfig,
    burst_len: usize,
    n_points: usize,
) -> Result<Vec<Burst>> {
    toy.validate()?;
    let mut cfg = SimConfig {
        beta: toy.beta(),
        ..cfg.clone()
    };
    if cfg.initial_state.is_empty() {
        cfg.initial_state = SPHERE_MEANS.to_vec();
    }
    burst_sample_with(toy.grad(), |th| sphere_position(th).to_vec(), &cfg, burst_len, n_points)
}
