//! Pipeline configuration, read from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::distributions::GammaParams;
use crate::dppmm::{FitConfig, Hyperparams};
use crate::error::{Error, Result};
use crate::monitor::{validate_keep_ratio, MonitorConfig};
use crate::segmentation::SegmentationParams;
use crate::windowing::{ThresholdPolicy, WindowSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub threshold: ThresholdPolicy,
    pub window: WindowSpec,
    pub prior: GammaParams,
    pub alpha: f64,
    pub sweeps: usize,
    pub burn_in: usize,
    /// Noise windows used to train the background model.
    pub training_windows: usize,
    pub segmentation: SegmentationParams,
    pub keep_ratio: f64,
    pub monitor: MonitorConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threshold: ThresholdPolicy::default(),
            window: WindowSpec {
                length: 4096,
                overlap: 0.0,
            },
            prior: GammaParams::unit(),
            alpha: 1.0,
            sweeps: 200,
            burn_in: 50,
            training_windows: 20,
            segmentation: SegmentationParams::default(),
            keep_ratio: 1.0,
            monitor: MonitorConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| Error::Config(e.to_string());
        self.threshold.validate().map_err(wrap)?;
        self.window.validate().map_err(wrap)?;
        self.hyperparams().map_err(wrap)?;
        self.fit_config().validate().map_err(wrap)?;
        validate_keep_ratio(self.keep_ratio).map_err(wrap)?;
        self.monitor.validate().map_err(wrap)?;
        if !(0.0..=1.0).contains(&self.segmentation.min_probability) {
            return Err(Error::Config(
                "segmentation min_probability must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    pub fn hyperparams(&self) -> Result<Hyperparams> {
        Hyperparams::new(self.alpha, self.prior)
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig::new(self.sweeps, self.burn_in, self.seed)
    }
}
