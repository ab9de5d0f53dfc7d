//! Sphere, eigenvalue and extension studies.

use std::time::Instant;

use log::info;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{Chart, ExperimentReport, Panel, ReportRow, Series};
use super::{align_linear, metrics, moving_average_baseline};
use crate::datagen::{
    burst_sample, poisson_sensor_observe, simulate_sphere_toy, step_variance, SimConfig, SphereToy,
};
use crate::error::{invalid_param, Result};
use crate::features::{
    frame_means, histogram_features, local_covariances, CovarianceMode, FeatureMeta, FeatureSeries,
};
use crate::kernel::{affinity_row, distances_to};
use crate::lift::{fit_lift, LiftOperator};
use crate::linalg::RankPolicy;
use crate::observer::{frame_clock_observer, nystrom_extend_dim, Init, ObserverModel};
use crate::pipeline::{embed, EmbedConfig, Embedding};
use crate::spectral::DimensionPolicy;

pub const DIFFUSION_MAPS: &str = "diffusion_maps";
pub const OBSERVER: &str = "observer";
pub const NYSTROM: &str = "nystrom";
pub const ANGLES: [&str; 2] = ["theta_1", "theta_2"];

/// Simulation, feature and model settings shared by the sphere studies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphereSetup {
    pub b: f64,
    pub dt: f64,
    pub frame_len: usize,
    pub bins: usize,
    pub noise_rate: f64,
    pub sensors: Vec<[f64; 3]>,
    pub covariance_window: usize,
    pub rank_policy: RankPolicy,
    pub epsilon_factor: f64,
    pub eig_count: usize,
    /// Diffusion coordinates used for regression and by the observer.
    pub coords: usize,
    pub gamma: f64,
}

impl Default for SphereSetup {
    fn default() -> Self {
        Self {
            b: 0.005,
            dt: 0.1,
            frame_len: 60,
            bins: 10,
            noise_rate: 0.1,
            sensors: vec![[1.0, 0.0, 0.5], [0.5, 1.0, 0.0], [1.0, 0.5, -0.5]],
            covariance_window: 30,
            rank_policy: RankPolicy::default(),
            epsilon_factor: 1.0,
            eig_count: 8,
            coords: 4,
            gamma: crate::observer::DEFAULT_GAMMA,
        }
    }
}

impl SphereSetup {
    pub fn validate(&self) -> Result<()> {
        SphereToy { c: 1.0, b: self.b }.validate()?;
        if !(self.dt > 0.0) {
            return Err(invalid_param(format!("dt must be positive, got {}", self.dt)));
        }
        if self.frame_len == 0 || self.bins < 2 {
            return Err(invalid_param("need frame_len >= 1 and bins >= 2"));
        }
        if !(self.noise_rate >= 0.0) {
            return Err(invalid_param(format!("noise rate must be >= 0, got {}", self.noise_rate)));
        }
        if self.sensors.is_empty() {
            return Err(invalid_param("need at least one sensor"));
        }
        if self.covariance_window < 2 {
            return Err(invalid_param("covariance window must be >= 2"));
        }
        self.rank_policy.validate()?;
        if self.coords == 0 || self.coords >= self.eig_count {
            return Err(invalid_param(format!(
                "coords = {} needs 1 <= coords < eig_count = {}",
                self.coords, self.eig_count
            )));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(invalid_param(format!("γ = {} must lie in the open interval (0,1)", self.gamma)));
        }
        Ok(())
    }

    fn embed_config(&self) -> EmbedConfig {
        EmbedConfig {
            epsilon_factor: self.epsilon_factor,
            eig_count: self.eig_count,
            beta: 1.0,
            dimension: DimensionPolicy::Fixed { m: self.coords },
        }
    }
}

/// Simulated sphere run reduced to per-frame histograms and frame-mean angles.
#[derive(Clone, Debug)]
pub struct SphereData {
    pub truth: DMatrix<f64>,
    pub feats: FeatureSeries,
}

pub fn simulate_sphere_features(setup: &SphereSetup, c: f64, frames: usize, seed: u64) -> Result<SphereData> {
    let toy = SphereToy { c, b: setup.b };
    let cfg = SimConfig {
        seed,
        beta: toy.beta(),
        dt: setup.dt,
        steps: frames * setup.frame_len,
        initial_state: Vec::new(),
    };
    let (traj, positions) = simulate_sphere_toy(toy, &cfg)?;
    let counts = poisson_sensor_observe(&positions, &setup.sensors, setup.noise_rate, seed)?;
    let feats = histogram_features(&counts, setup.frame_len, setup.bins, None)?;
    let truth = frame_means(&traj.states, setup.frame_len);
    let truth = truth.rows(0, feats.len()).into_owned();
    Ok(SphereData { truth, feats })
}

/// Diffusion model, lift and observer trained on one feature series.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub embedding: Embedding,
    pub lift: LiftOperator,
    pub observer: ObserverModel,
}

/// Rates are read on the frame clock (β = 1); the observer runs one step per frame.
pub fn train_sphere_model(setup: &SphereSetup, feats: &FeatureSeries) -> Result<TrainedModel> {
    let covs = local_covariances(
        feats,
        CovarianceMode::Window { w: setup.covariance_window },
        setup.rank_policy,
    )?;
    let embedding = embed(feats, covs, &setup.embed_config())?;
    let coords = embedding.model.embedding();
    let lift = fit_lift(feats, &coords)?;
    let observer = frame_clock_observer(&embedding.model, lift.clone(), setup.gamma, None)?;
    Ok(TrainedModel {
        embedding,
        lift,
        observer,
    })
}

fn angle_rows(method: &str, c: f64, seed: u64, estimate: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<Vec<ReportRow>> {
    let aligned = align_linear(estimate, truth)?;
    let mut rows = Vec::with_capacity(2 * ANGLES.len());
    for (k, name) in ANGLES.iter().enumerate() {
        let e: Vec<f64> = aligned.fitted.column(k).iter().copied().collect();
        let t: Vec<f64> = truth.column(k).iter().copied().collect();
        let m = metrics(&e, &t)?;
        for (metric, value) in [("correlation", m.correlation), ("nrmse_db", m.nrmse_db)] {
            rows.push(ReportRow {
                method: method.to_string(),
                coord: name.to_string(),
                c: Some(c),
                seed,
                metric: metric.to_string(),
                value,
            });
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphereExperimentConfig {
    pub setup: SphereSetup,
    pub c_values: Vec<f64>,
    pub seeds: Vec<u64>,
    pub frames: usize,
    pub ma_windows: Vec<usize>,
}

impl Default for SphereExperimentConfig {
    fn default() -> Self {
        Self {
            setup: SphereSetup::default(),
            c_values: vec![0.008, 0.012, 0.016, 0.02, 0.024],
            seeds: (0..5).collect(),
            frames: 1000,
            ma_windows: vec![2, 3, 5],
        }
    }
}

impl SphereExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.setup.validate()?;
        if self.c_values.is_empty() || self.c_values.iter().any(|c| !(*c > 0.0)) {
            return Err(invalid_param("drift rates must be non-empty and positive"));
        }
        if self.seeds.is_empty() {
            return Err(invalid_param("need at least one seed"));
        }
        if self.frames < 2 * self.setup.eig_count {
            return Err(invalid_param(format!(
                "{} frames is too few for {} eigenpairs",
                self.frames, self.setup.eig_count
            )));
        }
        if self.ma_windows.iter().any(|&w| w == 0) {
            return Err(invalid_param("moving-average windows must be >= 1"));
        }
        Ok(())
    }
}

pub fn ma_method(w: usize) -> String {
    format!("ma{w}")
}

/// Metrics of every method for one `(c, seed)` cell.
pub fn sphere_cell(cfg: &SphereExperimentConfig, c: f64, seed: u64) -> Result<Vec<ReportRow>> {
    let data = simulate_sphere_features(&cfg.setup, c, cfg.frames, seed)?;
    let trained = train_sphere_model(&cfg.setup, &data.feats)?;
    let coords = trained.embedding.model.embedding();
    let mut rows = angle_rows(DIFFUSION_MAPS, c, seed, &coords, &data.truth)?;
    let traj = trained
        .observer
        .run(&data.feats, Init::Vector(coords.row(0).transpose()))?;
    rows.extend(angle_rows(OBSERVER, c, seed, &traj.estimates(), &data.truth)?);
    for &w in &cfg.ma_windows {
        let ma = moving_average_baseline(&trained.lift, &data.feats, w)?;
        rows.extend(angle_rows(&ma_method(w), c, seed, &ma, &data.truth)?);
    }
    Ok(rows)
}

pub fn run_sphere_experiment(cfg: &SphereExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let start = Instant::now();
    let cells: Vec<(f64, u64)> = cfg
        .c_values
        .iter()
        .flat_map(|&c| cfg.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let results: Vec<Vec<ReportRow>> = cells
        .par_iter()
        .map(|&(c, seed)| sphere_cell(cfg, c, seed).map_err(|e| e.context(format!("sphere cell c={c}, seed={seed}"))))
        .collect::<Result<_>>()?;
    let rows = results.into_iter().flatten().collect();
    let report = ExperimentReport::new("sphere", cfg, cfg.seeds.clone(), rows, start.elapsed())?;
    info!("sphere experiment: {} cells in {:.1?}", cells.len(), report.runtime);
    Ok(report)
}

/// Metric-versus-drift panels, one per angle and metric.
pub fn sphere_chart(report: &ExperimentReport) -> Chart {
    let mut methods: Vec<&str> = Vec::new();
    let mut cs: Vec<f64> = Vec::new();
    for s in &report.summary {
        if !methods.contains(&s.method.as_str()) {
            methods.push(&s.method);
        }
        if let Some(c) = s.c {
            if !cs.contains(&c) {
                cs.push(c);
            }
        }
    }
    let mut panels = Vec::new();
    for (metric, label) in [("nrmse_db", "nRMSE [dB]"), ("correlation", "correlation")] {
        for angle in ANGLES {
            let series = methods
                .iter()
                .map(|&m| Series {
                    name: m.to_string(),
                    points: cs
                        .iter()
                        .filter_map(|&c| report.summary_for(m, angle, Some(c), metric).map(|s| (c, s.mean, s.std)))
                        .collect(),
                    dashed: m.starts_with("ma"),
                })
                .collect();
            panels.push(Panel {
                title: format!("{angle}: {label}"),
                x_label: "drift rate c".into(),
                y_label: label.into(),
                series,
            });
        }
    }
    Chart { panels }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EigenvalueConfig {
    pub frames: usize,
    pub burst_len: usize,
    pub dt: f64,
    /// Trajectory steps between consecutive anchors.
    pub stride: usize,
    pub epsilon_factor: f64,
    pub beta: f64,
    pub rank_policy: RankPolicy,
    pub seeds: Vec<u64>,
    pub modes: usize,
}

impl Default for EigenvalueConfig {
    fn default() -> Self {
        Self {
            frames: 1600,
            burst_len: 200,
            dt: 0.1,
            stride: 10,
            epsilon_factor: 0.16,
            beta: 1.0,
            rank_policy: RankPolicy::default(),
            seeds: (0..10).collect(),
            modes: 4,
        }
    }
}

impl EigenvalueConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 * (self.modes + 2) {
            return Err(invalid_param(format!("{} frames is too few", self.frames)));
        }
        if self.burst_len < 2 {
            return Err(invalid_param("burst length must be >= 2"));
        }
        if !(self.dt > 0.0 && self.beta > 0.0 && self.epsilon_factor > 0.0) {
            return Err(invalid_param("dt, beta and epsilon factor must be positive"));
        }
        if self.stride == 0 || self.modes == 0 || self.seeds.is_empty() {
            return Err(invalid_param("stride, modes and seeds must be non-empty"));
        }
        self.rank_policy.validate()
    }
}

/// Estimated rates `λ₁ … λ_modes` for one seed of the circle toy; unusable
/// modes come back as NaN.
pub fn circle_rates(cfg: &EigenvalueConfig, seed: u64) -> Result<(Vec<f64>, Embedding)> {
    let sim = SimConfig {
        seed,
        beta: cfg.beta,
        dt: cfg.dt,
        steps: cfg.frames * cfg.stride,
        initial_state: vec![0.0],
    };
    let bursts = burst_sample(&sim, cfg.burst_len, cfg.frames)?;
    let dim = bursts[0].observation.len();
    let frames = DMatrix::from_fn(bursts.len(), dim, |i, j| bursts[i].observation[j]);
    let feats = FeatureSeries::new(frames, cfg.dt * cfg.stride as f64, FeatureMeta::Raw)?;
    let samples: Vec<DMatrix<f64>> = bursts.into_iter().map(|b| b.samples).collect();
    // one-step burst spread in units of the latent step variance
    let covs = local_covariances(&feats, CovarianceMode::Bursts(&samples), cfg.rank_policy)?
        .scaled(1.0 / step_variance(cfg.dt, cfg.beta));
    let embed_cfg = EmbedConfig {
        epsilon_factor: cfg.epsilon_factor,
        eig_count: cfg.modes + 2,
        beta: cfg.beta,
        dimension: DimensionPolicy::Fixed { m: cfg.modes },
    };
    let embedding = embed(&feats, covs, &embed_cfg)?;
    let rates = (1..=cfg.modes)
        .map(|l| embedding.model.lambda[l].unwrap_or(f64::NAN))
        .collect();
    Ok((rates, embedding))
}

pub fn run_eigenvalue_experiment(cfg: &EigenvalueConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let start = Instant::now();
    let per_seed: Vec<Vec<f64>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            circle_rates(cfg, seed)
                .map(|(r, _)| r)
                .map_err(|e| e.context(format!("eigenvalue run seed={seed}")))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (seed, rates) in cfg.seeds.iter().zip(&per_seed) {
        for (l, &r) in rates.iter().enumerate() {
            rows.push(ReportRow {
                method: DIFFUSION_MAPS.into(),
                coord: format!("lambda_{}", l + 1),
                c: None,
                seed: *seed,
                metric: "estimate".into(),
                value: r,
            });
        }
    }
    let report = ExperimentReport::new("eigs", cfg, cfg.seeds.clone(), rows, start.elapsed())?;
    info!("eigenvalue experiment: {} seeds in {:.1?}", cfg.seeds.len(), report.runtime);
    Ok(report)
}

/// Mean and sample variance of each estimated rate across seeds.
pub fn eigenvalue_moments(report: &ExperimentReport) -> Vec<(f64, f64)> {
    report
        .summary
        .iter()
        .filter(|s| s.metric == "estimate")
        .map(|s| (s.mean, s.std * s.std))
        .collect()
}

pub fn eigenvalue_chart(report: &ExperimentReport) -> Chart {
    let est: Vec<(f64, f64, f64)> = report
        .summary
        .iter()
        .filter(|s| s.metric == "estimate")
        .enumerate()
        .map(|(l, s)| ((l + 1) as f64, s.mean, s.std))
        .collect();
    let truth = est.iter().map(|&(x, _, _)| (x, x, 0.0)).collect();
    Chart {
        panels: vec![Panel {
            title: "Fokker–Planck rates".into(),
            x_label: "mode ℓ".into(),
            y_label: "λℓ".into(),
            series: vec![
                Series {
                    name: "estimate".into(),
                    points: est,
                    dashed: false,
                },
                Series {
                    name: "ground truth".into(),
                    points: truth,
                    dashed: true,
                },
            ],
        }],
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtensionConfig {
    pub setup: SphereSetup,
    pub c: f64,
    pub seeds: Vec<u64>,
    pub train_frames: usize,
    pub extend_frames: usize,
}

impl Default for ExtensionConfig {
    fn default() -> Self {
        Self {
            setup: SphereSetup::default(),
            c: 0.024,
            seeds: (0..5).collect(),
            train_frames: 750,
            extend_frames: 250,
        }
    }
}

impl ExtensionConfig {
    pub fn validate(&self) -> Result<()> {
        self.setup.validate()?;
        if !(self.c > 0.0) {
            return Err(invalid_param("drift rate must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(invalid_param("need at least one seed"));
        }
        if self.train_frames < 10 * self.setup.coords {
            return Err(invalid_param(format!(
                "train split {} must be at least 10 × coords = {}",
                self.train_frames,
                10 * self.setup.coords
            )));
        }
        if self.extend_frames < self.setup.coords + 2 {
            return Err(invalid_param("extension split too short to evaluate"));
        }
        Ok(())
    }
}

/// Coordinates of the extension frames from both schemes.
#[derive(Clone, Debug)]
pub struct ExtensionOutcome {
    pub truth: DMatrix<f64>,
    pub observer: DMatrix<f64>,
    pub nystrom: DMatrix<f64>,
}

pub fn extension_cell(cfg: &ExtensionConfig, seed: u64) -> Result<ExtensionOutcome> {
    let total = cfg.train_frames + cfg.extend_frames;
    let data = simulate_sphere_features(&cfg.setup, cfg.c, total, seed)?;
    let train = data.feats.slice(0, cfg.train_frames);
    let fresh = data.feats.slice(cfg.train_frames, cfg.extend_frames);
    let trained = train_sphere_model(&cfg.setup, &train)?;
    let model = &trained.embedding.model;
    let coords = model.embedding();

    let fitted = trained.observer.run(&train, Init::Vector(coords.row(0).transpose()))?;
    let carried = trained.observer.extend(&fitted.last_state(), &fresh)?;

    // covariances of new frames come from their own neighbourhood in the stream
    let all_covs = local_covariances(
        &data.feats,
        CovarianceMode::Window { w: cfg.setup.covariance_window },
        cfg.setup.rank_policy,
    )?;
    let train_covs = &trained.embedding.covariances;
    let rows: Vec<DVector<f64>> = (0..cfg.extend_frames)
        .into_par_iter()
        .map(|i| {
            let k = cfg.train_frames + i;
            let z: Vec<f64> = data.feats.frames.row(k).iter().copied().collect();
            let d = distances_to(&z, &all_covs.inverses[k].factor, &train, train_covs)?;
            let w = affinity_row(&d, model.epsilon)?;
            nystrom_extend_dim(model, &w, cfg.setup.coords)
        })
        .collect::<Result<_>>()?;
    let nystrom = DMatrix::from_fn(cfg.extend_frames, cfg.setup.coords, |i, l| rows[i][l]);
    Ok(ExtensionOutcome {
        truth: data.truth.rows(cfg.train_frames, cfg.extend_frames).into_owned(),
        observer: carried.estimates(),
        nystrom,
    })
}

pub fn run_extension_experiment(cfg: &ExtensionConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let start = Instant::now();
    let results: Vec<Vec<ReportRow>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let out = extension_cell(cfg, seed).map_err(|e| e.context(format!("extension seed={seed}")))?;
            let mut rows = angle_rows(OBSERVER, cfg.c, seed, &out.observer, &out.truth)?;
            rows.extend(angle_rows(NYSTROM, cfg.c, seed, &out.nystrom, &out.truth)?);
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    let rows = results.into_iter().flatten().collect();
    let report = ExperimentReport::new("extend", cfg, cfg.seeds.clone(), rows, start.elapsed())?;
    info!("extension experiment: {} seeds in {:.1?}", cfg.seeds.len(), report.runtime);
    Ok(report)
}

/// Correlation per angle for both extension schemes.
pub fn extension_chart(report: &ExperimentReport) -> Chart {
    let series = [OBSERVER, NYSTROM]
        .iter()
        .map(|&m| Series {
            name: m.to_string(),
            points: ANGLES
                .iter()
                .enumerate()
                .filter_map(|(k, a)| {
                    report
                        .summary
                        .iter()
                        .find(|s| s.method == m && s.coord == *a && s.metric == "correlation")
                        .map(|s| ((k + 1) as f64, s.mean, s.std))
                })
                .collect(),
            dashed: m == NYSTROM,
        })
        .collect();
    Chart {
        panels: vec![Panel {
            title: "out-of-sample correlation".into(),
            x_label: "angle index".into(),
            y_label: "correlation".into(),
            series,
        }],
    }
}
