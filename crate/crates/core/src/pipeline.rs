//! Features and local covariances to a diffusion model in one call.

use serde::{Deserialize, Serialize};

use crate::error::{invalid_param, Result};
use crate::features::{FeatureSeries, LocalCovariances};
use crate::kernel::{affinity, distance_matrix, select_epsilon, AffinityOperator};
use crate::spectral::{diffusion_eigs, DiffusionModel, DimensionPolicy};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbedConfig {
    /// `ε = factor · median` of the pairwise distances.
    pub epsilon_factor: f64,
    /// Eigenpairs to compute, including the trivial one.
    pub eig_count: usize,
    /// Inverse temperature used to convert `μ` into rates.
    pub beta: f64,
    pub dimension: DimensionPolicy,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            epsilon_factor: 1.0,
            eig_count: 10,
            beta: 1.0,
            dimension: DimensionPolicy::Gap,
        }
    }
}

impl EmbedConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_factor > 0.0 && self.epsilon_factor.is_finite()) {
            return Err(invalid_param(format!(
                "epsilon factor must be positive, got {}",
                self.epsilon_factor
            )));
        }
        if self.eig_count < 2 {
            return Err(invalid_param("need at least 2 eigenpairs"));
        }
        if !(self.beta > 0.0) {
            return Err(invalid_param(format!("beta must be positive, got {}", self.beta)));
        }
        if let DimensionPolicy::Fixed { m } = self.dimension {
            if m == 0 || m >= self.eig_count {
                return Err(invalid_param(format!(
                    "dimension {m} needs 1 <= m < eig_count = {}",
                    self.eig_count
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Embedding {
    pub model: DiffusionModel,
    pub covariances: LocalCovariances,
    pub operator: AffinityOperator,
    pub median: f64,
}

pub fn embed(feats: &FeatureSeries, covariances: LocalCovariances, cfg: &EmbedConfig) -> Result<Embedding> {
    cfg.validate()?;
    let dist = distance_matrix(feats, &covariances)?;
    let epsilon = select_epsilon(&dist, cfg.epsilon_factor)?;
    let operator = affinity(&dist, epsilon)?;
    let count = cfg.eig_count.min(feats.len());
    let spectrum = diffusion_eigs(&operator, count)?;
    let model = DiffusionModel::new(spectrum, epsilon, cfg.beta, cfg.dimension, feats.frame_dt)?;
    Ok(Embedding {
        model,
        covariances,
        operator,
        median: dist.median,
    })
}
