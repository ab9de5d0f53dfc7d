//! Feature extraction and per-frame local covariances.

use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::datagen::ObservationSeries;
use crate::error::{invalid_input, invalid_param, Error, Result};
use crate::linalg::{psd_pseudo_inverse, sample_covariance, PsdPseudoInverse};

pub use crate::linalg::RankPolicy;

/// How a feature series was produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureMeta {
    Raw,
    Histogram { bins: usize, frame_len: usize },
    Stft { frame_ms: f64, hop_ms: f64, window: Window },
}

/// Per-frame feature vectors, one row per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSeries {
    pub frames: DMatrix<f64>,
    pub frame_dt: f64,
    pub meta: FeatureMeta,
}

impl FeatureSeries {
    pub fn new(frames: DMatrix<f64>, frame_dt: f64, meta: FeatureMeta) -> Result<Self> {
        if !(frame_dt > 0.0 && frame_dt.is_finite()) {
            return Err(invalid_param(format!("frame_dt must be > 0, got {frame_dt}")));
        }
        if frames.ncols() == 0 {
            return Err(invalid_input("feature vectors must have dimension >= 1"));
        }
        Ok(Self {
            frames,
            frame_dt,
            meta,
        })
    }

    /// Observations used as-is, one frame per sample.
    pub fn raw(obs: &ObservationSeries) -> Result<Self> {
        Self::new(obs.samples.clone(), obs.dt, FeatureMeta::Raw)
    }

    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }

    /// Frames `range` as a new series with the same timing.
    pub fn slice(&self, start: usize, len: usize) -> Self {
        Self {
            frames: self.frames.rows(start, len).into_owned(),
            frame_dt: self.frame_dt,
            meta: self.meta.clone(),
        }
    }
}

/// Histograms over non-overlapping frames of `frame_len` samples, `bins`
/// bins per channel, concatenated channel-wise. Bin edges are shared by all
/// frames: `range` if given, else each channel's global min/max. Samples
/// outside an explicit range are counted in the nearest edge bin.
pub fn histogram_features(
    obs: &ObservationSeries,
    frame_len: usize,
    bins: usize,
    range: Option<(f64, f64)>,
) -> Result<FeatureSeries> {
    if frame_len == 0 {
        return Err(invalid_param("frame length must be >= 1"));
    }
    if bins < 2 {
        return Err(invalid_param("need at least 2 histogram bins"));
    }
    let frames = obs.len() / frame_len;
    if frames == 0 {
        return Err(invalid_input(format!(
            "{} samples do not fill one frame of {frame_len}",
            obs.len()
        )));
    }
    let channels = obs.dim();
    let edges: Vec<(f64, f64)> = match range {
        Some((lo, hi)) => {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(invalid_input(format!("empty histogram range [{lo}, {hi}]")));
            }
            vec![(lo, hi); channels]
        }
        None => (0..channels)
            .map(|j| {
                let col = obs.samples.column(j);
                let lo = col.min();
                let hi = col.max();
                // a constant channel still needs a non-empty bin
                if lo < hi {
                    (lo, hi)
                } else {
                    (lo - 0.5, hi + 0.5)
                }
            })
            .collect(),
    };

    let mut out = DMatrix::zeros(frames, channels * bins);
    for f in 0..frames {
        for (j, &(lo, hi)) in edges.iter().enumerate() {
            let width = (hi - lo) / bins as f64;
            for i in f * frame_len..(f + 1) * frame_len {
                let x = obs.samples[(i, j)];
                let b = ((x - lo) / width).floor();
                let b = if b.is_nan() { 0 } else { b.clamp(0.0, (bins - 1) as f64) as usize };
                out[(f, j * bins + b)] += 1.0;
            }
        }
    }
    FeatureSeries::new(
        out,
        obs.dt * frame_len as f64,
        FeatureMeta::Histogram { bins, frame_len },
    )
}

/// Mean of each non-overlapping frame of `frame_len` rows.
pub fn frame_means(m: &DMatrix<f64>, frame_len: usize) -> DMatrix<f64> {
    let frames = m.nrows() / frame_len.max(1);
    DMatrix::from_fn(frames, m.ncols(), |f, j| {
        m.view((f * frame_len, j), (frame_len, 1)).sum() / frame_len as f64
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Audio {
    pub samples: Vec<f64>,
    pub rate: f64,
}

/// Reads 16-bit PCM or 32-bit float RIFF/WAVE; stereo is averaged to mono.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Audio> {
    let mut reader = hound::WavReader::open(path.as_ref())
        .map_err(|e| Error::Format(format!("{}: {e}", path.as_ref().display())))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if !(1..=2).contains(&channels) {
        return Err(Error::Format(format!("unsupported channel count {channels}")));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>(),
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>(),
        (fmt, bits) => {
            return Err(Error::Format(format!("unsupported WAV encoding {fmt:?} {bits}-bit")))
        }
    }
    .map_err(|e| Error::Format(e.to_string()))?;
    let samples = interleaved
        .chunks_exact(channels)
        .map(|c| c.iter().sum::<f64>() / channels as f64)
        .collect();
    Ok(Audio {
        samples,
        rate: spec.sample_rate as f64,
    })
}

/// Writes mono 16-bit PCM, clipping to [-1, 1].
pub fn write_wav(path: impl AsRef<Path>, audio: &Audio) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: audio.rate as u32,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path.as_ref(), spec)
        .map_err(|e| Error::Format(e.to_string()))?;
    for &s in &audio.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        w.write_sample(v).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.finalize().map_err(|e| Error::Format(e.to_string()))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    #[default]
    Rectangular,
    Hann,
}

impl Window {
    fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; len],
            Window::Hann => (0..len)
                .map(|i| {
                    0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / len as f64).cos()
                })
                .collect(),
        }
    }
}

/// Number of whole samples covered by `ms` milliseconds at `rate` Hz.
pub fn samples_per(ms: f64, rate: f64) -> usize {
    // tolerance keeps exact products like 0.023·1000·… from flooring one short
    (rate * ms / 1000.0 + 1e-9).floor() as usize
}

/// Magnitude spectrogram: `|DFT|` of each windowed frame, one row per frame,
/// `⌊frame/2⌋ + 1` bins.
pub fn stft_features(audio: &Audio, frame_ms: f64, hop_ms: f64, window: Window) -> Result<FeatureSeries> {
    if !(audio.rate > 0.0) {
        return Err(invalid_param("sample rate must be > 0"));
    }
    let frame = samples_per(frame_ms, audio.rate);
    let hop = samples_per(hop_ms, audio.rate);
    if frame < 16 {
        return Err(invalid_param(format!("{frame_ms} ms gives {frame} samples; need >= 16")));
    }
    if hop == 0 {
        return Err(invalid_param("hop must cover at least one sample"));
    }
    if audio.samples.len() < frame {
        return Err(invalid_input(format!(
            "{} samples shorter than one {frame}-sample frame",
            audio.samples.len()
        )));
    }
    let count = (audio.samples.len() - frame) / hop + 1;
    let bins = frame / 2 + 1;
    let win = window.coefficients(frame);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(frame);
    let mut out = DMatrix::zeros(count, bins);
    let mut buf = vec![Complex::new(0.0, 0.0); frame];
    for f in 0..count {
        let chunk = &audio.samples[f * hop..f * hop + frame];
        for ((b, &x), &w) in buf.iter_mut().zip(chunk).zip(&win) {
            *b = Complex::new(x * w, 0.0);
        }
        fft.process(&mut buf);
        for k in 0..bins {
            out[(f, k)] = buf[k].norm();
        }
    }
    FeatureSeries::new(
        out,
        hop as f64 / audio.rate,
        FeatureMeta::Stft { frame_ms, hop_ms, window },
    )
}

/// Source of the samples each frame's covariance is estimated from.
#[derive(Clone, Copy, Debug)]
pub enum CovarianceMode<'a> {
    /// Centered window of `w` consecutive frames, truncated at the ends.
    Window { w: usize },
    /// One matrix of burst observations (rows) per frame.
    Bursts(&'a [DMatrix<f64>]),
}

/// Per-frame covariance and its pseudo-inverse.
#[derive(Clone, Debug)]
pub struct LocalCovariances {
    pub covariances: Vec<DMatrix<f64>>,
    pub inverses: Vec<PsdPseudoInverse>,
}

impl LocalCovariances {
    pub fn len(&self) -> usize {
        self.covariances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.covariances.is_empty()
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.inverses.iter().map(|p| p.rank).collect()
    }

    /// Rescales every covariance by `factor` (pseudo-inverses by `1/factor`).
    pub fn scaled(mut self, factor: f64) -> Self {
        assert!(factor > 0.0 && factor.is_finite());
        let root = factor.sqrt();
        for c in &mut self.covariances {
            *c *= factor;
        }
        for p in &mut self.inverses {
            p.pinv /= factor;
            p.factor /= root;
        }
        self
    }

    /// Pseudo-inverse matrices from stored `r × n` factors.
    pub fn from_factors(factors: Vec<DMatrix<f64>>) -> Self {
        let inverses: Vec<PsdPseudoInverse> = factors
            .into_iter()
            .map(|factor| PsdPseudoInverse {
                pinv: factor.transpose() * &factor,
                rank: factor.nrows(),
                factor,
            })
            .collect();
        let covariances = inverses
            .iter()
            .map(|p| crate::linalg::svd_pseudo_inverse(&p.pinv, 1e-12).0)
            .collect();
        Self {
            covariances,
            inverses,
        }
    }
}

/// Centered window bounds `[start, end)` of `w` frames around `i`, truncated
/// to `[0, n)`.
pub fn window_bounds(i: usize, w: usize, n: usize) -> (usize, usize) {
    let before = (w - 1) / 2;
    let after = w / 2;
    let start = i.saturating_sub(before);
    let end = (i + after + 1).min(n);
    (start, end)
}

pub fn local_covariances(
    feats: &FeatureSeries,
    mode: CovarianceMode<'_>,
    policy: RankPolicy,
) -> Result<LocalCovariances> {
    policy.validate()?;
    let n = feats.len();
    if n < 2 {
        return Err(invalid_input(format!("need at least 2 frames, got {n}")));
    }
    let covariances: Vec<DMatrix<f64>> = match mode {
        CovarianceMode::Window { w } => {
            if w < 2 {
                return Err(invalid_param("covariance window must be >= 2"));
            }
            (0..n)
                .into_par_iter()
                .map(|i| {
                    let (mut s, mut e) = window_bounds(i, w, n);
                    // never estimate from fewer than two frames
                    if e - s < 2 {
                        if e < n {
                            e += 1;
                        } else {
                            s -= 1;
                        }
                    }
                    sample_covariance(&feats.frames.rows(s, e - s).into_owned())
                })
                .collect()
        }
        CovarianceMode::Bursts(bursts) => {
            if bursts.len() != n {
                return Err(invalid_input(format!(
                    "{} bursts for {n} frames",
                    bursts.len()
                )));
            }
            if let Some((i, b)) = bursts
                .iter()
                .enumerate()
                .find(|(_, b)| b.nrows() < 2 || b.ncols() != feats.dim())
            {
                return Err(invalid_input(format!(
                    "burst {i} has shape {}x{}; need >= 2 rows of dimension {}",
                    b.nrows(),
                    b.ncols(),
                    feats.dim()
                )));
            }
            bursts.par_iter().map(sample_covariance).collect()
        }
    };
    let inverses = covariances
        .par_iter()
        .map(|c| psd_pseudo_inverse(c, policy))
        .collect();
    Ok(LocalCovariances {
        covariances,
        inverses,
    })
}
