use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use dobs::datagen::{
    poisson_sensor_observe, simulate_circle_toy, simulate_ou, simulate_sphere_toy, synth_tone, ObservationSeries,
    SimConfig, SphereToy,
};
use dobs::features::{
    histogram_features, local_covariances, read_wav, stft_features, write_wav, Audio, CovarianceMode, FeatureMeta,
    FeatureSeries, Window,
};
use dobs::harness::{
    eigenvalue_chart, extension_chart, run_eigenvalue_experiment, run_extension_experiment, run_sphere_experiment,
    sphere_chart, Chart, EigenvalueConfig, ExperimentReport, ExtensionConfig, SphereExperimentConfig, SphereSetup,
};
use dobs::io::{
    feature_table, features_from_container, features_from_table, features_to_container, observation_table,
    observer_table, sphere_table, trajectory_table, Container, ObserverSettings, SavedModel, Table, MAGIC,
};
use dobs::kernel::{affinity, affinity_row, distance_matrix, distances_to};
use dobs::lift::{fit_lift as fit_lift_operator, fit_lift_weighted};
use dobs::linalg::RankPolicy;
use dobs::observer::{frame_clock_observer, nystrom_extend_dim, Init, ObserverModel, DEFAULT_GAMMA};
use dobs::pipeline::{embed as embed_features, EmbedConfig};
use dobs::spectral::{embedding, DimensionPolicy};

use crate::config::{ConfigFile, DimsValue};
use crate::{
    CliError, EmbedArgs, ExperimentArgs, ExperimentKind, ExtendArgs, ExtendMethod, FeatureMode, FeaturizeArgs,
    FitLiftArgs, InitArg, ObserveArgs, Preset, SimulateArgs, WeightingArg, WindowArg,
};

type CliResult<T = ()> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Flag value, else config value, else `default`.
fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

fn file_enum<E: ValueEnum>(flag: Option<E>, file: &Option<String>, key: &str) -> CliResult<Option<E>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match file {
        Some(s) => E::from_str(s, true)
            .map(Some)
            .map_err(|_| usage(format!("config key {key}: unrecognized value {s:?}"))),
        None => Ok(None),
    }
}

fn check_gamma(gamma: f64) -> CliResult {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(usage(format!("γ = {gamma} must lie in the open interval (0,1)")))
    }
}

fn check_positive(name: &str, v: Option<f64>) -> CliResult {
    match v {
        Some(x) if !(x > 0.0 && x.is_finite()) => Err(usage(format!("{name} must be positive, got {x}"))),
        _ => Ok(()),
    }
}

fn rank_policy(flag: &Option<String>, file: &Option<String>) -> CliResult<RankPolicy> {
    match flag.as_ref().or(file.as_ref()) {
        Some(s) => s.parse().map_err(|e: dobs::Error| usage(format!("rank policy: {e}"))),
        None => Ok(RankPolicy::default()),
    }
}

fn dims_policy(flag: &Option<String>, file: &Option<DimsValue>) -> CliResult<DimensionPolicy> {
    let text = match (flag, file) {
        (Some(s), _) => s.clone(),
        (None, Some(DimsValue::Fixed(m))) => return Ok(DimensionPolicy::Fixed { m: *m }),
        (None, Some(DimsValue::Named(s))) => s.clone(),
        (None, None) => return Ok(DimensionPolicy::Gap),
    };
    if text.eq_ignore_ascii_case("gap") {
        return Ok(DimensionPolicy::Gap);
    }
    text.parse::<usize>()
        .map(|m| DimensionPolicy::Fixed { m })
        .map_err(|_| usage(format!("dims must be \"gap\" or a positive integer, got {text:?}")))
}

fn is_binary_path(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("bin" | "dobs")
    )
}

fn is_wav(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
}

fn has_magic(path: &Path) -> CliResult<bool> {
    let mut f = File::open(path).map_err(|e| CliError::Run(dobs::Error::from(e).context(path.display().to_string())))?;
    let mut head = [0u8; 5];
    let mut read = 0;
    while read < head.len() {
        match f.read(&mut head[read..]) {
            Ok(0) => break,
            Ok(n) => read += n,
            Err(e) => return Err(CliError::Run(e.into())),
        }
    }
    Ok(read == head.len() && &head == MAGIC)
}

fn write_table(table: &Table, path: &Path) -> CliResult {
    if is_binary_path(path) {
        table.to_container().save(path)?;
    } else {
        table.save_csv(path)?;
    }
    info!("wrote {}", path.display());
    Ok(())
}

fn read_table(path: &Path) -> CliResult<Table> {
    if has_magic(path)? {
        Ok(Table::from_container(&Container::load(path)?)?)
    } else {
        Ok(Table::load_csv(path)?)
    }
}

fn write_features(feats: &FeatureSeries, path: &Path) -> CliResult {
    if is_binary_path(path) {
        features_to_container(feats).save(path)?;
    } else {
        feature_table(feats).save_csv(path)?;
    }
    info!("wrote {} frames to {}", feats.len(), path.display());
    Ok(())
}

/// Features from CSV, DOBS1 or (given STFT settings) WAV.
fn read_features(path: &Path, stft: Option<&FeatureMeta>) -> CliResult<FeatureSeries> {
    if is_wav(path) {
        return match stft {
            Some(&FeatureMeta::Stft {
                frame_ms,
                hop_ms,
                window,
            }) => Ok(stft_features(&read_wav(path)?, frame_ms, hop_ms, window)?),
            _ => Err(usage(format!(
                "{}: WAV input needs a model trained on STFT features",
                path.display()
            ))),
        };
    }
    if has_magic(path)? {
        let c = Container::load(path)?;
        if c.kind == "features" {
            return Ok(features_from_container(&c)?);
        }
        return Ok(features_from_table(&Table::from_container(&c)?, None)?);
    }
    let t = Table::load_csv(path)?;
    features_from_table(&t, None).map_err(|e| CliError::Run(e.context(path.display().to_string())))
}

pub fn simulate(a: &SimulateArgs, f: &ConfigFile) -> CliResult {
    let preset = file_enum(a.preset, &f.preset, "preset")?.unwrap_or(Preset::Sphere);
    let seed = pick(a.seed, f.seed, 0);
    let steps = pick(a.steps, f.steps, 6000);
    match preset {
        Preset::Sphere => {
            let toy = SphereToy {
                c: pick(a.c, f.c, 0.024),
                b: pick(a.b, f.b, 0.005),
            };
            toy.validate()?;
            let noise = pick(a.noise_rate, f.noise_rate, SphereSetup::default().noise_rate);
            let sensors = f.sensors.clone().unwrap_or_else(|| SphereSetup::default().sensors);
            let cfg = SimConfig {
                seed,
                beta: toy.beta(),
                dt: pick(a.dt, f.dt, 0.1),
                steps,
                initial_state: Vec::new(),
            };
            let (traj, positions) = simulate_sphere_toy(toy, &cfg)?;
            write_table(&sphere_table(&traj, &positions)?, &a.output)?;
            if let Some(p) = &a.observations {
                let obs = poisson_sensor_observe(&positions, &sensors, noise, seed)?;
                write_table(&observation_table(&obs), p)?;
            }
        }
        Preset::Circle => {
            let cfg = SimConfig {
                seed,
                beta: pick(a.beta, f.beta, 1.0),
                dt: pick(a.dt, f.dt, 0.1),
                steps,
                initial_state: vec![0.0],
            };
            cfg.validate()?;
            let (traj, obs) = simulate_circle_toy(&cfg)?;
            write_table(&trajectory_table(&traj), &a.output)?;
            if let Some(p) = &a.observations {
                write_table(&observation_table(&obs), p)?;
            }
        }
        Preset::MusicSynth => {
            let Some(audio_path) = &a.audio else {
                return Err(usage("the music-synth preset needs --audio <file.wav>"));
            };
            let rate = pick(a.sample_rate, f.sample_rate, 8000.0);
            let base = pick(a.base_hz, f.base_hz, 440.0);
            check_positive("sample rate", Some(rate))?;
            check_positive("base frequency", Some(base))?;
            let cfg = SimConfig {
                seed,
                beta: 1.0,
                dt: pick(a.dt, f.dt, 0.05),
                steps,
                initial_state: vec![0.0],
            };
            cfg.validate()?;
            let traj = simulate_ou(pick(a.k, f.k, 1.0), 0.0, pick(a.sigma, f.sigma, 2.0), &cfg)?;
            let samples = synth_tone(&traj, rate, base, 0.5)?;
            write_table(&trajectory_table(&traj), &a.output)?;
            write_wav(audio_path, &Audio { samples, rate })?;
            if a.observations.is_some() {
                warn!("music-synth writes audio; --observations is ignored");
            }
        }
    }
    Ok(())
}

pub fn featurize(a: &FeaturizeArgs, f: &ConfigFile) -> CliResult {
    let wav = is_wav(&a.input);
    let mode = file_enum(a.mode, &f.mode, "mode")?.unwrap_or(if wav { FeatureMode::Stft } else { FeatureMode::Histogram });
    let feats = match (mode, wav) {
        (FeatureMode::Stft, true) => {
            let window = match file_enum(a.window, &f.window, "window")?.unwrap_or(WindowArg::Hann) {
                WindowArg::Hann => Window::Hann,
                WindowArg::Rectangular => Window::Rectangular,
            };
            let frame_ms = pick(a.frame_ms, f.frame_ms, 40.0);
            let hop_ms = pick(a.hop_ms, f.hop_ms, 20.0);
            check_positive("frame_ms", Some(frame_ms))?;
            check_positive("hop_ms", Some(hop_ms))?;
            stft_features(&read_wav(&a.input)?, frame_ms, hop_ms, window)?
        }
        (FeatureMode::Stft, false) => return Err(usage("STFT features need a WAV input")),
        (_, true) => return Err(usage("WAV input only supports --mode stft")),
        (mode, false) => {
            let t = read_table(&a.input)?;
            let dt = t
                .time_step()
                .ok_or_else(|| CliError::Run(dobs::Error::Format("need a t column with two or more rows".into())))?;
            let obs = ObservationSeries {
                dt,
                samples: t.values(),
            };
            if mode == FeatureMode::Raw {
                FeatureSeries::raw(&obs)?
            } else {
                histogram_features(&obs, pick(a.frame_len, f.frame_len, 60), pick(a.bins, f.bins, 10), None)?
            }
        }
    };
    write_features(&feats, &a.output)
}

pub fn embed(a: &EmbedArgs, f: &ConfigFile) -> CliResult {
    let cfg = EmbedConfig {
        epsilon_factor: pick(a.epsilon_factor, f.epsilon_factor, 1.0),
        eig_count: pick(a.eig_count, f.eig_count, 10),
        beta: pick(a.beta, f.beta, 1.0),
        dimension: dims_policy(&a.dims, &f.dims)?,
    };
    cfg.validate()?;
    let policy = rank_policy(&a.rank_policy, &f.rank_policy)?;
    let w = pick(a.covariance_window, f.covariance_window, 30);
    if w < 2 {
        return Err(usage("covariance window must be >= 2"));
    }
    let feats = read_features(&a.features, None)?;
    let covs = local_covariances(&feats, CovarianceMode::Window { w }, policy)?;
    let e = embed_features(&feats, covs, &cfg)?;
    info!(
        "ε = {:.6e}, m = {}, μ = {:?}",
        e.model.epsilon,
        e.model.m,
        &e.model.mu[..e.model.count().min(6)]
    );
    let coords = e.model.embedding();
    let mut saved = SavedModel::new(e.model, feats, &e.covariances);
    match fit_lift_operator(&saved.features, &coords) {
        Ok(l) => saved.lift = Some(l),
        Err(err) => warn!("no lift stored: {err}"),
    }
    saved.save(&a.output)?;
    info!("wrote model {}", a.output.display());
    if let Some(p) = &a.coords {
        write_table(&Table::timed("psi", &coords, 0.0, saved.model.frame_dt), p)?;
    }
    Ok(())
}

pub fn fit_lift(a: &FitLiftArgs, f: &ConfigFile) -> CliResult {
    let gamma = pick(a.gamma, f.gamma, DEFAULT_GAMMA);
    check_gamma(gamma)?;
    let dt_eff = a.dt_eff.or(f.dt_eff);
    check_positive("dt_eff", dt_eff)?;
    let weighting = match a.weighting {
        Some(w) => w,
        None => file_enum(None, &f.weighting, "weighting")?.unwrap_or(WeightingArg::Uniform),
    };
    let mut saved = SavedModel::load(&a.model)?;
    let m = a.coords.or(f.coords).or(saved.lift.as_ref().map(|l| l.dim())).unwrap_or(saved.model.m);
    if m == 0 || m >= saved.model.count() {
        return Err(usage(format!(
            "coords = {m} needs 1 <= coords < {} stored eigenpairs",
            saved.model.count()
        )));
    }
    let coords = embedding(&saved.model, m)?;
    let lift = match weighting {
        WeightingArg::Uniform => fit_lift_operator(&saved.features, &coords)?,
        WeightingArg::Density => {
            let dist = distance_matrix(&saved.features, &saved.covariances())?;
            let op = affinity(&dist, saved.model.epsilon)?;
            fit_lift_weighted(&saved.features, &coords, op.row_sums.as_slice())?
        }
    };
    let obs = frame_clock_observer(&saved.model, lift.clone(), gamma, dt_eff)?;
    info!("observer contraction rate {:.6}", obs.contraction_rate());
    saved.lift = Some(lift);
    saved.observer = Some(ObserverSettings { gamma, dt_eff });
    let out = a.output.as_ref().unwrap_or(&a.model);
    saved.save(out)?;
    info!("wrote model {}", out.display());
    Ok(())
}

fn observer_for(saved: &SavedModel, gamma: Option<f64>, dt_eff: Option<f64>) -> CliResult<ObserverModel> {
    let stored = saved.observer;
    let gamma = gamma.or(stored.map(|s| s.gamma)).unwrap_or(DEFAULT_GAMMA);
    check_gamma(gamma)?;
    let dt_eff = dt_eff.or(stored.and_then(|s| s.dt_eff));
    check_positive("dt_eff", dt_eff)?;
    let lift = saved.lift.clone().ok_or_else(|| {
        CliError::Run(dobs::Error::InvalidModel("model has no lift; run fit-lift first".into()))
    })?;
    Ok(frame_clock_observer(&saved.model, lift, gamma, dt_eff)?)
}

pub fn observe(a: &ObserveArgs, f: &ConfigFile) -> CliResult {
    if let Some(g) = a.gamma.or(f.gamma) {
        check_gamma(g)?;
    }
    let init = file_enum(a.init, &f.init, "init")?.unwrap_or(InitArg::First);
    let saved = SavedModel::load(&a.model)?;
    let obs = observer_for(&saved, a.gamma.or(f.gamma), a.dt_eff.or(f.dt_eff))?;
    let feats = read_features(&a.features, Some(&saved.features.meta))?;
    let traj = obs.run(
        &feats,
        match init {
            InitArg::Zero => Init::Zero,
            InitArg::First => Init::FirstCoordinate,
        },
    )?;
    write_table(&observer_table(&traj, 0.0, feats.frame_dt), &a.output)
}

pub fn extend(a: &ExtendArgs, f: &ConfigFile) -> CliResult {
    if let Some(g) = a.gamma.or(f.gamma) {
        check_gamma(g)?;
    }
    let method = file_enum(a.method, &f.method, "method")?.unwrap_or(ExtendMethod::Observer);
    let w = pick(a.covariance_window, f.covariance_window, 30);
    if w < 2 {
        return Err(usage("covariance window must be >= 2"));
    }
    if method == ExtendMethod::Observer && a.from.is_none() {
        return Err(usage("observer extension needs --from <trajectory>"));
    }
    let saved = SavedModel::load(&a.model)?;
    let feats = read_features(&a.features, Some(&saved.features.meta))?;
    let table = match method {
        ExtendMethod::Observer => {
            let obs = observer_for(&saved, a.gamma.or(f.gamma), a.dt_eff.or(f.dt_eff))?;
            let from = a.from.as_ref().expect("checked above");
            let (t_last, state) = trajectory_tail(&read_table(from)?, obs.dim(), from)?;
            let traj = obs.extend(&state, &feats)?;
            Table::timed("psi", &traj.estimates(), t_last + feats.frame_dt, feats.frame_dt)
        }
        ExtendMethod::Nystrom => {
            let m = saved.lift.as_ref().map(|l| l.dim()).unwrap_or(saved.model.m);
            let train_covs = saved.covariances();
            let policy = rank_policy(&None, &f.rank_policy)?;
            let covs = local_covariances(&feats, CovarianceMode::Window { w }, policy)?;
            let rows: Vec<DVector<f64>> = (0..feats.len())
                .into_par_iter()
                .map(|i| {
                    let z: Vec<f64> = feats.frames.row(i).iter().copied().collect();
                    let d = distances_to(&z, &covs.inverses[i].factor, &saved.features, &train_covs)?;
                    let k = affinity_row(&d, saved.model.epsilon)?;
                    nystrom_extend_dim(&saved.model, &k, m)
                })
                .collect::<dobs::Result<_>>()?;
            let coords = DMatrix::from_fn(rows.len(), m, |i, l| rows[i][l]);
            Table::timed("psi", &coords, 0.0, feats.frame_dt)
        }
    };
    write_table(&table, &a.output)
}

/// Time and `psi_*` values of the last row.
fn trajectory_tail(t: &Table, m: usize, path: &PathBuf) -> CliResult<(f64, DVector<f64>)> {
    let n = t.data.nrows();
    if n == 0 {
        return Err(CliError::Run(dobs::Error::InvalidInput(format!("{} is empty", path.display()))));
    }
    let time = t.column_index("t").map(|j| t.data[(n - 1, j)]).unwrap_or(0.0);
    let cols: Vec<usize> = (1..=m)
        .map(|k| {
            t.column_index(&format!("psi_{k}")).ok_or_else(|| {
                CliError::Run(dobs::Error::InvalidInput(format!(
                    "{} lacks column psi_{k} for a {m}-mode observer",
                    path.display()
                )))
            })
        })
        .collect::<CliResult<_>>()?;
    Ok((time, DVector::from_iterator(m, cols.iter().map(|&j| t.data[(n - 1, j)]))))
}

fn sphere_setup(f: &ConfigFile) -> CliResult<SphereSetup> {
    let d = SphereSetup::default();
    Ok(SphereSetup {
        b: f.b.unwrap_or(d.b),
        dt: f.dt.unwrap_or(d.dt),
        frame_len: f.frame_len.unwrap_or(d.frame_len),
        bins: f.bins.unwrap_or(d.bins),
        noise_rate: f.noise_rate.unwrap_or(d.noise_rate),
        sensors: f.sensors.clone().unwrap_or(d.sensors),
        covariance_window: f.covariance_window.unwrap_or(d.covariance_window),
        rank_policy: rank_policy(&None, &f.rank_policy)?,
        epsilon_factor: f.epsilon_factor.unwrap_or(d.epsilon_factor),
        eig_count: f.eig_count.unwrap_or(d.eig_count),
        coords: f.coords.unwrap_or(d.coords),
        gamma: f.gamma.unwrap_or(d.gamma),
    })
}

pub fn experiment(a: &ExperimentArgs, f: &ConfigFile, quiet: bool) -> CliResult {
    let seeds = a.seeds.map(|n| (0..n).collect::<Vec<u64>>()).or(f.seeds.clone());
    let out_dir = a
        .out_dir
        .clone()
        .or(f.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    let (report, chart): (ExperimentReport, Chart) = match a.kind {
        ExperimentKind::Sphere => {
            let d = SphereExperimentConfig::default();
            let cfg = SphereExperimentConfig {
                setup: sphere_setup(f)?,
                c_values: f.c_values.clone().unwrap_or(d.c_values),
                seeds: seeds.unwrap_or(d.seeds),
                frames: pick(a.frames, f.frames, d.frames),
                ma_windows: f.ma_windows.clone().unwrap_or(d.ma_windows),
            };
            cfg.validate()?;
            let r = run_sphere_experiment(&cfg)?;
            let c = sphere_chart(&r);
            (r, c)
        }
        ExperimentKind::Eigs => {
            let d = EigenvalueConfig::default();
            let cfg = EigenvalueConfig {
                frames: pick(a.frames, f.frames, d.frames),
                burst_len: f.burst_len.unwrap_or(d.burst_len),
                dt: f.dt.unwrap_or(d.dt),
                stride: f.stride.unwrap_or(d.stride),
                epsilon_factor: f.epsilon_factor.unwrap_or(d.epsilon_factor),
                beta: f.beta.unwrap_or(d.beta),
                rank_policy: match &f.rank_policy {
                    Some(_) => rank_policy(&None, &f.rank_policy)?,
                    None => d.rank_policy,
                },
                seeds: seeds.unwrap_or(d.seeds),
                modes: f.modes.unwrap_or(d.modes),
            };
            cfg.validate()?;
            let r = run_eigenvalue_experiment(&cfg)?;
            let c = eigenvalue_chart(&r);
            (r, c)
        }
        ExperimentKind::Extend => {
            if a.frames.is_some() {
                return Err(usage("extend experiments take train_frames and extend_frames, not --frames"));
            }
            let d = ExtensionConfig::default();
            let cfg = ExtensionConfig {
                setup: sphere_setup(f)?,
                c: f.c.unwrap_or(d.c),
                seeds: seeds.unwrap_or(d.seeds),
                train_frames: f.train_frames.unwrap_or(d.train_frames),
                extend_frames: f.extend_frames.unwrap_or(d.extend_frames),
            };
            cfg.validate()?;
            let r = run_extension_experiment(&cfg)?;
            let c = extension_chart(&r);
            (r, c)
        }
    };
    for p in report.write_all(&out_dir, &chart)? {
        info!("wrote {}", p.display());
    }
    if !quiet {
        println!("{:<16} {:<10} {:>8} {:<12} {:>10} {:>10}", "method", "coord", "c", "metric", "mean", "std");
        for s in &report.summary {
            let c = s.c.map(|c| format!("{c}")).unwrap_or_else(|| "-".into());
            println!(
                "{:<16} {:<10} {:>8} {:<12} {:>10.4} {:>10.4}",
                s.method, s.coord, c, s.metric, s.mean, s.std
            );
        }
        println!("config sha256 {}", report.config_hash);
    }
    Ok(())
}
