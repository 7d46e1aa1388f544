//! JSON run configuration.
//!
//! Every field has a default, so a config file only needs the values it
//! changes. Defaults are the desk-scale settings (16-pixel images, base width
//! 16) rather than the full-size architecture defaults of
//! [`ArchitectureConfig::default`]. Command-line flags override file values.
//!
//! ```json
//! {
//!   "seed": 0,
//!   "threads": null,
//!   "architecture": {"latent_dim": 100, "image_size": 16, "channels": 3, "base_width": 16},
//!   "dataset": {"n": 2000, "distribution": {...}},
//!   "gan": {"batch_size": 64, "iterations": 3000, "optimizer": {...}, "log_every": 100},
//!   "encoder": {...}, "bigan": {...},
//!   "gradient": {"steps": 500, "step_size": 0.1},
//!   "eval": {"n_samples": 256},
//!   "search": {"k": 5},
//!   "superres": {"sigma": 1.0, "n_samples": 64}
//! }
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::AttributeDistribution;
use crate::error::{Error, Result};
use crate::gan_training::TrainConfig;
use crate::inversion::GradientInversionConfig;
use crate::models::ArchitectureConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub n: usize,
    pub distribution: AttributeDistribution,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n: 2000,
            distribution: AttributeDistribution::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub n_samples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { n_samples: 256 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub k: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig { k: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuperresConfig {
    pub sigma: f32,
    pub n_samples: usize,
}

impl Default for SuperresConfig {
    fn default() -> Self {
        SuperresConfig {
            sigma: 1.0,
            n_samples: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; `None` uses all available cores.
    pub threads: Option<usize>,
    pub architecture: ArchitectureConfig,
    pub dataset: DatasetConfig,
    pub gan: TrainConfig,
    pub encoder: TrainConfig,
    pub bigan: TrainConfig,
    pub gradient: GradientInversionConfig,
    pub eval: EvalConfig,
    pub search: SearchConfig,
    pub superres: SuperresConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            threads: None,
            architecture: ArchitectureConfig::new(100, 16, 3, 16),
            dataset: DatasetConfig::default(),
            gan: TrainConfig {
                iterations: 3000,
                ..TrainConfig::default()
            },
            encoder: TrainConfig {
                iterations: 2000,
                ..TrainConfig::default()
            },
            bigan: TrainConfig {
                iterations: 2000,
                ..TrainConfig::default()
            },
            gradient: GradientInversionConfig::default(),
            eval: EvalConfig::default(),
            search: SearchConfig::default(),
            superres: SuperresConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Reads a config file; parse errors name the file and the byte offset.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = RunConfig::from_json(&text).map_err(|e| {
            let offset = text
                .split_inclusive('\n')
                .take(e.line().saturating_sub(1))
                .map(str::len)
                .sum::<usize>()
                + e.column().saturating_sub(1);
            Error::Parse {
                path: path.to_path_buf(),
                offset: offset as u64,
                message: e.to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads `path` when given, otherwise the defaults.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => RunConfig::load(p),
            None => Ok(RunConfig::default()),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.architecture.validate()?;
        self.dataset.distribution.validate()?;
        for t in [&self.gan, &self.encoder, &self.bigan] {
            t.validate()?;
        }
        if self.dataset.n == 0 {
            return Err(Error::validation("dataset.n must be at least 1"));
        }
        if self.eval.n_samples == 0 {
            return Err(Error::validation("eval.n_samples must be at least 1"));
        }
        if self.search.k == 0 {
            return Err(Error::validation("search.k must be at least 1"));
        }
        if !(self.superres.sigma > 0.0) {
            return Err(Error::validation("superres.sigma must be positive"));
        }
        if self.threads == Some(0) {
            return Err(Error::validation("threads must be at least 1"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_files_fill_defaults() {
        let cfg = RunConfig::from_json(r#"{"seed": 4, "gan": {"iterations": 10}}"#).unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.gan.iterations, 10);
        assert_eq!(cfg.gan.batch_size, 64);
        assert_eq!(cfg.encoder, RunConfig::default().encoder);
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(RunConfig::from_json(r#"{"sed": 4}"#).is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, "{\n  \"seed\": \"x\"\n}").unwrap();
        match RunConfig::load(&path) {
            Err(Error::Parse { offset, .. }) => assert!(offset > 0),
            other => panic!("{other:?}"),
        }
        std::fs::write(&path, r#"{"search": {"k": 0}}"#).unwrap();
        assert!(matches!(RunConfig::load(&path), Err(Error::Validation(_))));
    }
}
