//! Experiment configuration, loaded from JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autocal::MeasureSettings;
use crate::caldac::LadderSpec;
use crate::crossbar::{CrossbarError, CrossbarParams, CrossbarState, Sampling};
use crate::devices::{BodyBiasModel, SelectorModel};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl From<CrossbarError> for ConfigError {
    fn from(e: CrossbarError) -> Self {
        ConfigError::Invalid(e.to_string())
    }
}

/// Every knob of an experiment. Missing keys take the defaults below;
/// unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub rows: usize,
    pub cols: usize,
    pub r_lrs: f64,
    pub r_hrs: f64,
    pub r_on: f64,
    pub g_off: f64,
    pub v_ref: f64,
    pub v_d: f64,
    pub v_calibref: f64,
    pub eta: f64,
    pub sigma_os: f64,
    pub offset_truncation: Option<f64>,
    pub noise_sigma: f64,
    pub n_samples: u64,
    pub seed: u64,
    pub v_read: f64,
    pub integ_cap: f64,
    pub comp_threshold: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let p = CrossbarParams::default();
        Self {
            rows: 4,
            cols: 4,
            r_lrs: p.r_lrs,
            r_hrs: p.r_hrs,
            r_on: p.selector.r_on,
            g_off: p.selector.g_off,
            v_ref: p.ladder.v_ref,
            v_d: p.ladder.v_d,
            v_calibref: p.body.v_calibref,
            eta: p.body.eta,
            sigma_os: p.sigma_os,
            offset_truncation: p.offset_truncation,
            noise_sigma: crate::crossbar::DEFAULT_NOISE_SIGMA,
            n_samples: 1_000_000,
            seed: 1,
            v_read: 0.3,
            integ_cap: p.integ_cap,
            comp_threshold: p.comp_threshold,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn params(&self) -> CrossbarParams {
        CrossbarParams {
            r_lrs: self.r_lrs,
            r_hrs: self.r_hrs,
            selector: SelectorModel {
                r_on: self.r_on,
                g_off: self.g_off,
            },
            ladder: LadderSpec {
                v_ref: self.v_ref,
                v_d: self.v_d,
            },
            body: BodyBiasModel {
                eta: self.eta,
                v_calibref: self.v_calibref,
            },
            sigma_os: self.sigma_os,
            offset_truncation: self.offset_truncation,
            integ_cap: self.integ_cap,
            comp_threshold: self.comp_threshold,
            ..CrossbarParams::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.rows == 0 || self.cols == 0 {
            return Err(ConfigError::Invalid(format!(
                "array must be at least 1x1 (got {}x{})",
                self.rows, self.cols
            )));
        }
        if self.n_samples == 0 {
            return Err(ConfigError::Invalid("n_samples must be >= 1".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(ConfigError::Invalid(format!(
                "noise_sigma = {}",
                self.noise_sigma
            )));
        }
        if !(self.v_read.abs() <= crate::devices::MAX_READ_VOLTAGE) {
            return Err(ConfigError::Invalid(format!(
                "v_read = {} V exceeds 1 V",
                self.v_read
            )));
        }
        self.params().validate()?;
        Ok(())
    }

    pub fn measure_settings(&self, sampling: Sampling) -> MeasureSettings {
        MeasureSettings {
            n_samples: self.n_samples,
            noise_sigma: self.noise_sigma,
            sampling,
        }
    }

    /// A fresh array built from this config.
    pub fn build(&self, seed: u64) -> Result<CrossbarState, ConfigError> {
        Ok(CrossbarState::new(
            self.rows,
            self.cols,
            self.params(),
            seed,
        )?)
    }
}
