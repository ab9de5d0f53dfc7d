//! File formats: CSV series, the `DOBS1` binary container and `.dob` model files.
//!
//! Binary layout, all integers and floats little-endian:
//!
//! ```text
//! b"DOBS1" | u64 header length | header (UTF-8 JSON) | blocks
//! ```
//!
//! The header carries `kind`, free-form `meta` and a `blocks` list of
//! `{name, rows, cols}`; block payloads follow in that order as row-major f64.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::{ObservationSeries, StateTrajectory};
use crate::error::{Error, Result};
use crate::features::{FeatureMeta, FeatureSeries, LocalCovariances};
use crate::lift::{LiftOperator, LiftWeighting};
use crate::observer::ObserverTrajectory;
use crate::spectral::DiffusionModel;

pub const MAGIC: &[u8; 5] = b"DOBS1";
pub const MODEL_VERSION: u32 = 1;
pub const MODEL_KIND: &str = "model";

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

/// Column names `t, <prefix>_1, …, <prefix>_n`.
pub fn series_columns(prefix: &str, n: usize) -> Vec<String> {
    std::iter::once("t".to_string())
        .chain((1..=n).map(|k| format!("{prefix}_{k}")))
        .collect()
}

/// Numeric table with named columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub data: DMatrix<f64>,
}

impl Table {
    pub fn new(columns: Vec<String>, data: DMatrix<f64>) -> Result<Self> {
        if columns.len() != data.ncols() {
            return Err(format_err(format!(
                "{} column names for {} columns",
                columns.len(),
                data.ncols()
            )));
        }
        Ok(Self { columns, data })
    }

    /// Prepends a time column `t = t0 + i·dt`.
    pub fn timed(prefix: &str, values: &DMatrix<f64>, t0: f64, dt: f64) -> Self {
        let n = values.ncols();
        let data = DMatrix::from_fn(values.nrows(), n + 1, |i, j| {
            if j == 0 {
                t0 + i as f64 * dt
            } else {
                values[(i, j - 1)]
            }
        });
        Self {
            columns: series_columns(prefix, n),
            data,
        }
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Columns after the leading `t`.
    pub fn values(&self) -> DMatrix<f64> {
        let start = usize::from(self.columns.first().map(String::as_str) == Some("t"));
        self.data.columns(start, self.data.ncols() - start).into_owned()
    }

    /// Spacing of the `t` column; `None` with fewer than two rows or no `t`.
    pub fn time_step(&self) -> Option<f64> {
        let t = self.column_index("t")?;
        (self.data.nrows() >= 2).then(|| self.data[(1, t)] - self.data[(0, t)])
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.columns).map_err(csv_err)?;
        let mut record = Vec::with_capacity(self.data.ncols());
        for row in self.data.row_iter() {
            record.clear();
            // shortest representation that parses back to the same f64
            record.extend(row.iter().map(|v| v.to_string()));
            out.write_record(&record).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut input = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let columns: Vec<String> = input.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
        if columns.is_empty() || columns.iter().any(String::is_empty) {
            return Err(format_err("CSV header has empty column names"));
        }
        let mut values = Vec::new();
        let mut rows = 0;
        for (i, rec) in input.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            if rec.len() != columns.len() {
                return Err(format_err(format!("row {} has {} fields, expected {}", i + 1, rec.len(), columns.len())));
            }
            for (j, field) in rec.iter().enumerate() {
                let v: f64 = field
                    .parse()
                    .map_err(|_| format_err(format!("row {}, column {}: cannot parse {field:?}", i + 1, columns[j])))?;
                values.push(v);
            }
            rows += 1;
        }
        let data = DMatrix::from_row_slice(rows, columns.len(), &values);
        Ok(Self { columns, data })
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
        self.write_csv(BufWriter::new(file))
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
        Self::read_csv(BufReader::new(file)).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn to_container(&self) -> Container {
        Container {
            kind: "table".into(),
            meta: serde_json::json!({ "columns": self.columns }),
            blocks: vec![("data".into(), self.data.clone())],
        }
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("table")?;
        let columns: Vec<String> = serde_json::from_value(c.meta["columns"].clone())
            .map_err(|e| format_err(format!("table columns: {e}")))?;
        Self::new(columns, c.block("data")?.clone())
    }
}

fn csv_err(e: csv::Error) -> Error {
    format_err(format!("CSV: {e}"))
}

pub fn trajectory_table(traj: &StateTrajectory) -> Table {
    Table::timed("theta", &traj.states, 0.0, traj.dt)
}

pub fn observation_table(obs: &ObservationSeries) -> Table {
    Table::timed("z", &obs.samples, 0.0, obs.dt)
}

/// Sphere run: angles followed by the Cartesian position.
pub fn sphere_table(traj: &StateTrajectory, positions: &ObservationSeries) -> Result<Table> {
    if positions.len() != traj.len() || positions.dim() != 3 {
        return Err(format_err("positions and states differ in length"));
    }
    let mut t = trajectory_table(traj);
    let n = t.data.nrows();
    let base = t.data.ncols();
    t.data = t.data.resize_horizontally(base + 3, 0.0);
    for i in 0..n {
        for k in 0..3 {
            t.data[(i, base + k)] = positions.samples[(i, k)];
        }
    }
    t.columns.extend((1..=3).map(|k| format!("x_{k}")));
    Ok(t)
}

pub fn feature_table(feats: &FeatureSeries) -> Table {
    Table::timed("f", &feats.frames, 0.0, feats.frame_dt)
}

/// Feature series from a table; spacing comes from `t` unless `frame_dt`
/// is given.
pub fn features_from_table(table: &Table, frame_dt: Option<f64>) -> Result<FeatureSeries> {
    let dt = match frame_dt.or_else(|| table.time_step()) {
        Some(dt) => dt,
        None => return Err(format_err("cannot infer frame spacing: need a t column with two rows")),
    };
    FeatureSeries::new(table.values(), dt, FeatureMeta::Raw)
}

/// Observer states `t, psi_1 …`; row 0 is the initial state.
pub fn observer_table(traj: &ObserverTrajectory, t0: f64, frame_dt: f64) -> Table {
    Table::timed("psi", &traj.states, t0, frame_dt)
}

/// Parsed `DOBS1` file.
#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: serde_json::Value,
    pub blocks: Vec<(String, DMatrix<f64>)>,
}

#[derive(Serialize, Deserialize)]
struct BlockHeader {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct ContainerHeader {
    kind: String,
    meta: serde_json::Value,
    blocks: Vec<BlockHeader>,
}

impl Container {
    pub fn block(&self, name: &str) -> Result<&DMatrix<f64>> {
        self.blocks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| format_err(format!("{} file has no block {name:?}", self.kind)))
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(format_err(format!("expected a {kind} file, found {}", self.kind)));
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let header = ContainerHeader {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            blocks: self
                .blocks
                .iter()
                .map(|(name, m)| BlockHeader {
                    name: name.clone(),
                    rows: m.nrows(),
                    cols: m.ncols(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| format_err(e.to_string()))?;
        w.write_all(MAGIC)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for (_, m) in &self.blocks {
            for row in m.row_iter() {
                for v in row.iter() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)
            .map_err(|_| format_err("file too short for a DOBS1 header"))?;
        if &magic != MAGIC {
            return Err(format_err("not a DOBS1 file (bad magic)"));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len);
        if len > 1 << 32 {
            return Err(format_err(format!("implausible header length {len}")));
        }
        let mut json = vec![0u8; len as usize];
        r.read_exact(&mut json).map_err(|_| format_err("truncated header"))?;
        let header: ContainerHeader =
            serde_json::from_slice(&json).map_err(|e| format_err(format!("header: {e}")))?;
        let mut blocks = Vec::with_capacity(header.blocks.len());
        let mut buf = [0u8; 8];
        for b in header.blocks {
            let mut m = DMatrix::zeros(b.rows, b.cols);
            for i in 0..b.rows {
                for j in 0..b.cols {
                    r.read_exact(&mut buf)
                        .map_err(|_| format_err(format!("block {:?} is truncated", b.name)))?;
                    m[(i, j)] = f64::from_le_bytes(buf);
                }
            }
            blocks.push((b.name, m));
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(format_err("trailing bytes after the last block"));
        }
        Ok(Self {
            kind: header.kind,
            meta: header.meta,
            blocks,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
        self.write(BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
        Self::read(BufReader::new(file)).map_err(|e| e.context(path.display().to_string()))
    }
}

pub fn features_to_container(feats: &FeatureSeries) -> Container {
    Container {
        kind: "features".into(),
        meta: serde_json::json!({ "frame_dt": feats.frame_dt, "meta": feats.meta }),
        blocks: vec![("frames".into(), feats.frames.clone())],
    }
}

pub fn features_from_container(c: &Container) -> Result<FeatureSeries> {
    c.expect_kind("features")?;
    let frame_dt = c.meta["frame_dt"]
        .as_f64()
        .ok_or_else(|| format_err("features file lacks frame_dt"))?;
    let meta: FeatureMeta =
        serde_json::from_value(c.meta["meta"].clone()).map_err(|e| format_err(format!("feature meta: {e}")))?;
    FeatureSeries::new(c.block("frames")?.clone(), frame_dt, meta)
}

/// Hex sha256 of a matrix's little-endian row-major bytes and its shape.
pub fn matrix_digest(m: &DMatrix<f64>) -> String {
    let mut h = Sha256::new();
    h.update((m.nrows() as u64).to_le_bytes());
    h.update((m.ncols() as u64).to_le_bytes());
    for row in m.row_iter() {
        for v in row.iter() {
            h.update(v.to_le_bytes());
        }
    }
    format!("{:x}", h.finalize())
}

/// Observer settings stored with a model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObserverSettings {
    pub gamma: f64,
    /// `None` runs one step per frame on the frame clock.
    pub dt_eff: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ModelHeader {
    version: u32,
    epsilon: f64,
    beta: f64,
    m: usize,
    mu: Vec<f64>,
    lambda: Vec<Option<f64>>,
    frame_dt: f64,
    frames: usize,
    features: usize,
    feature_meta: FeatureMeta,
    covariance_ranks: Vec<usize>,
    lift: Option<LiftHeader>,
    observer: Option<ObserverSettings>,
    provenance: Provenance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct LiftHeader {
    rank: usize,
    weighting: LiftWeighting,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub features_sha256: String,
    pub tool: String,
}

/// Everything `.dob` files carry: the diffusion model, its training frames and
/// metric factors (for out-of-sample distances), and optionally a lift and
/// observer settings.
#[derive(Clone, Debug)]
pub struct SavedModel {
    pub model: DiffusionModel,
    pub features: FeatureSeries,
    /// `r × n` factors of the training pseudo-inverse covariances.
    pub cov_factors: Vec<DMatrix<f64>>,
    pub lift: Option<LiftOperator>,
    pub observer: Option<ObserverSettings>,
    pub provenance: Provenance,
}

impl SavedModel {
    pub fn new(model: DiffusionModel, features: FeatureSeries, covs: &LocalCovariances) -> Self {
        let provenance = Provenance {
            features_sha256: matrix_digest(&features.frames),
            tool: format!("dobs {}", env!("CARGO_PKG_VERSION")),
        };
        Self {
            model,
            features,
            cov_factors: covs.inverses.iter().map(|p| p.factor.clone()).collect(),
            lift: None,
            observer: None,
            provenance,
        }
    }

    pub fn covariances(&self) -> LocalCovariances {
        LocalCovariances::from_factors(self.cov_factors.clone())
    }

    pub fn to_container(&self) -> Container {
        let d = self.features.dim();
        let ranks: Vec<usize> = self.cov_factors.iter().map(|f| f.nrows()).collect();
        let total: usize = ranks.iter().sum();
        let mut stacked = DMatrix::zeros(total, d);
        let mut at = 0;
        for f in &self.cov_factors {
            stacked.rows_mut(at, f.nrows()).copy_from(f);
            at += f.nrows();
        }
        let header = ModelHeader {
            version: MODEL_VERSION,
            epsilon: self.model.epsilon,
            beta: self.model.beta,
            m: self.model.m,
            mu: self.model.mu.clone(),
            lambda: self.model.lambda.clone(),
            frame_dt: self.model.frame_dt,
            frames: self.model.frames(),
            features: d,
            feature_meta: self.features.meta.clone(),
            covariance_ranks: ranks,
            lift: self.lift.as_ref().map(|l| LiftHeader {
                rank: l.rank,
                weighting: l.weighting,
            }),
            observer: self.observer,
            provenance: self.provenance.clone(),
        };
        let mut blocks = vec![
            ("psi".to_string(), self.model.psi.clone()),
            ("features".to_string(), self.features.frames.clone()),
            ("cov_factors".to_string(), stacked),
        ];
        if let Some(l) = &self.lift {
            blocks.push(("alpha".into(), l.alpha.clone()));
            blocks.push(("alpha_pinv".into(), l.alpha_pinv.clone()));
            blocks.push(("mean".into(), DMatrix::from_column_slice(l.mean.len(), 1, l.mean.as_slice())));
        }
        Container {
            kind: MODEL_KIND.into(),
            meta: serde_json::to_value(header).expect("model header serializes"),
            blocks,
        }
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind(MODEL_KIND)?;
        match c.meta.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == MODEL_VERSION as u64 => {}
            Some(v) => {
                return Err(format_err(format!(
                    "unsupported model version {v} (this build reads version {MODEL_VERSION})"
                )))
            }
            None => return Err(format_err("model header has no version")),
        }
        let h: ModelHeader =
            serde_json::from_value(c.meta.clone()).map_err(|e| format_err(format!("model header: {e}")))?;
        let psi = c.block("psi")?.clone();
        if psi.nrows() != h.frames || psi.ncols() != h.mu.len() || h.lambda.len() != h.mu.len() {
            return Err(format_err("eigenvector block disagrees with the header"));
        }
        let frames = c.block("features")?.clone();
        if frames.nrows() != h.frames || frames.ncols() != h.features {
            return Err(format_err("feature block disagrees with the header"));
        }
        let stacked = c.block("cov_factors")?;
        if h.covariance_ranks.len() != h.frames
            || stacked.nrows() != h.covariance_ranks.iter().sum::<usize>()
            || stacked.ncols() != h.features
        {
            return Err(format_err("covariance block disagrees with the header"));
        }
        let mut cov_factors = Vec::with_capacity(h.frames);
        let mut at = 0;
        for &r in &h.covariance_ranks {
            cov_factors.push(stacked.rows(at, r).into_owned());
            at += r;
        }
        let lift = match &h.lift {
            Some(lh) => {
                let alpha = c.block("alpha")?.clone();
                let alpha_pinv = c.block("alpha_pinv")?.clone();
                let mean = c.block("mean")?;
                if alpha.nrows() != h.features || alpha_pinv.shape() != (alpha.ncols(), alpha.nrows()) {
                    return Err(format_err("lift blocks disagree with the header"));
                }
                Some(LiftOperator {
                    alpha,
                    alpha_pinv,
                    rank: lh.rank,
                    mean: DVector::from_column_slice(mean.as_slice()),
                    weighting: lh.weighting,
                })
            }
            None => None,
        };
        let model = DiffusionModel {
            mu: h.mu,
            psi,
            lambda: h.lambda,
            epsilon: h.epsilon,
            beta: h.beta,
            m: h.m,
            frame_dt: h.frame_dt,
        };
        let features = FeatureSeries::new(frames, h.frame_dt, h.feature_meta)?;
        Ok(Self {
            model,
            features,
            cov_factors,
            lift,
            observer: h.observer,
            provenance: h.provenance,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_container(&Container::load(path)?).map_err(|e| e.context(path.display().to_string()))
    }
}
