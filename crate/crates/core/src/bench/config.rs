//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dataset::DatasetConfig;
use crate::calibration::{Predictive, DEFAULT_LEVELS};
use crate::error::{Error, Result};
use crate::gating::DEFAULT_PERCENTILE;
use crate::log::digest_of;
use crate::losses::LossConfig;
use crate::regressor::TrainSchedule;
use crate::sampling::{Method, SamplerConfig};

/// Environment variable overriding `output_dir`.
pub const OUTPUT_ENV: &str = "POSE_UQ_OUT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GateConfig {
    pub percentile: f64,
    pub sweep: Vec<f64>,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            percentile: DEFAULT_PERCENTILE,
            sweep: vec![0.05, 0.10, 0.15, 0.25, 0.40],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    pub levels: usize,
    pub predictive: Predictive,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            levels: DEFAULT_LEVELS,
            predictive: Predictive::Gaussian,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub schedule: TrainSchedule,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub gate: GateConfig,
    #[serde(default)]
    pub calibration: CalibrationConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            output_dir: PathBuf::from("out"),
            dataset: DatasetConfig::default(),
            loss: LossConfig::default(),
            schedule: TrainSchedule::default(),
            sampler: SamplerConfig::default(),
            gate: GateConfig::default(),
            calibration: CalibrationConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("no methods selected".into()));
        }
        self.dataset.validate()?;
        self.loss.validate()?;
        self.schedule.validate()?;
        self.sampler.validate()?;
        let g = &self.gate;
        if !(g.percentile > 0.0 && g.percentile < 1.0) {
            return Err(Error::Config("gate percentile must be in (0, 1)".into()));
        }
        if g.sweep.iter().any(|p| !(*p > 0.0 && *p < 1.0))
            || g.sweep.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::Config(
                "sweep percentiles must be strictly increasing in (0, 1)".into(),
            ));
        }
        if self.calibration.levels < 2 {
            return Err(Error::Config(
                "at least 2 calibration levels are needed".into(),
            ));
        }
        Ok(())
    }

    /// Sets every seed (dataset and training) from one value.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.dataset.seed = seed;
        self.schedule.seed = seed;
        self
    }

    /// `output_dir`, unless the environment overrides it.
    pub fn resolved_output(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output_dir.clone(),
        }
    }

    /// Digest of everything that affects results; the output location is excluded.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        digest_of(&c)
    }

    /// Dropout rate of the trained network for `method`.
    pub fn train_dropout(&self, method: Method) -> f64 {
        match method {
            Method::Mcd => self.sampler.dropout_p,
            Method::De | Method::Der => 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_files_fill_defaults() {
        let cfg = ExperimentConfig::from_toml(
            "methods = [\"DER\"]\noutput_dir = \"x\"\n[dataset]\nseed = 4\n",
        )
        .unwrap();
        assert_eq!(cfg.dataset.seed, 4);
        assert_eq!(cfg.dataset.n_val, 4541);
        assert_eq!(cfg.methods, vec![Method::Der]);
    }

    #[test]
    fn invalid_files_are_config_errors() {
        for text in [
            "methods = []\noutput_dir = \"x\"\n",
            "methods = [\"DE\"]\noutput_dir = \"x\"\n[sampler]\nn_models = 1\n",
            "methods = [\"DE\"]\noutput_dir = \"x\"\nunknown = 3\n",
            "methods = [\"DE\"]\noutput_dir = \"x\"\n[gate]\nsweep = [0.2, 0.1]\n",
        ] {
            assert!(
                matches!(ExperimentConfig::from_toml(text), Err(Error::Config(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn shipped_config_equals_defaults() {
        let text = include_str!("../../../../configs/default.toml");
        assert_eq!(
            ExperimentConfig::from_toml(text).unwrap(),
            ExperimentConfig::default()
        );
    }

    #[test]
    fn digest_ignores_output_dir() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.output_dir = "elsewhere".into();
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), a.clone().with_seed(9).digest());
    }
}
