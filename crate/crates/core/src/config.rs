//! Run configuration read from a single TOML file.
//!
//! ```toml
//! seed = 7
//!
//! [data]
//! samples = 200
//! agents = 3
//! agents_max = 3
//!
//! [model]
//! hidden = 16
//!
//! [train]
//! epochs = 10
//!
//! [paths]
//! dataset = "data/synthetic.bin"
//! out = "runs"
//! ```
//!
//! Every section is optional and unknown keys are rejected. The root
//! `seed`, when present, replaces the seeds of the `data`, `train`,
//! `split` and `probe` sections.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{FileFormat, SyntheticConfig};
use crate::error::{Error, Result};
use crate::model::ModelHyper;
use crate::train::{ProbeConfig, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Feature file. Without it, commands other than `gen-data` generate
    /// the `data` section in memory.
    pub dataset: Option<PathBuf>,
    /// Written by `gen-data`; read back by detecting the file's magic.
    pub format: Option<FileFormat>,
    pub checkpoint: Option<PathBuf>,
    /// Output directory for CSVs and reports.
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub data: SyntheticConfig,
    pub model: ModelHyper,
    pub train: TrainConfig,
    pub split: SplitConfig,
    pub probe: ProbeConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads and validates `path`. A missing file is an IO error.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io_at(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.apply_seed();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets the root seed and pushes it into every section.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.apply_seed();
    }

    fn apply_seed(&mut self) {
        if let Some(s) = self.seed {
            self.data.seed = s;
            self.train.seed = s;
            self.split.seed = s;
            self.probe.seed = s;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.train.validate()?;
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "split.train_fraction ({}) must lie strictly between 0 and 1",
                self.split.train_fraction
            )));
        }
        if self.model.hidden == 0 || self.model.fused == Some(0) {
            return Err(Error::Config("model.hidden and model.fused must be positive".into()));
        }
        Ok(())
    }

    pub fn out_dir(&self) -> PathBuf {
        self.paths.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.train.batch_size, 32);
        assert_eq!(cfg.model.hidden, 300);
    }

    #[test]
    fn shipped_config_is_valid() {
        let mut cfg = RunConfig::from_toml(include_str!("../../../configs/desk.toml")).unwrap();
        cfg.apply_seed();
        cfg.validate().unwrap();
        assert_eq!(cfg.train.seed, 1);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml("[train]\nepochz = 3\n").unwrap_err();
        assert!(matches!(err, Error::Config(m) if m.contains("epochz")));
        assert!(RunConfig::from_toml("colour = 1\n").is_err());
    }

    #[test]
    fn root_seed_reaches_every_section() {
        let mut cfg = RunConfig::from_toml("seed = 9\n[data]\nseed = 2\n").unwrap();
        cfg.apply_seed();
        assert_eq!((cfg.data.seed, cfg.train.seed, cfg.split.seed, cfg.probe.seed), (9, 9, 9, 9));
        cfg.set_seed(4);
        assert_eq!(cfg.data.seed, 4);
    }

    #[test]
    fn sections_parse() {
        let cfg = RunConfig::from_toml(
            "[train]\nvariant = \"cgan_gfu\"\nepochs = 3\n[paths]\nformat = \"text\"\nout = \"o\"\n",
        )
        .unwrap();
        assert_eq!(cfg.train.variant, crate::model::Variant::CganGfu);
        assert_eq!(cfg.paths.format, Some(FileFormat::Text));
        assert_eq!(cfg.out_dir(), PathBuf::from("o"));
    }

    #[test]
    fn invalid_values_fail_validation() {
        let mut cfg = RunConfig::default();
        cfg.split.train_fraction = 1.0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = RunConfig::from_toml("[data]\nagents = 3\nagents_max = 4\n").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(m)) if m.contains("agents_max")));
    }
}
