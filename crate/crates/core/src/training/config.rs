use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{LossConfig, LossToggles, PoolSpec};
use crate::network::{ArchSpec, OutputActivation, SIZE_MULTIPLE};

/// Training run settings, read from TOML. Every key is optional except
/// `data_dir`; missing keys take the defaults below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Flat image directory or a directory of sequence subdirectories.
    pub data_dir: PathBuf,
    /// Where checkpoints and logs go; nothing is written when unset.
    pub output_dir: Option<PathBuf>,
    /// Normal-light references matched to held-out images by file stem (flat
    /// layout) or by sequence name. When set, model selection uses PSNR.
    pub reference_dir: Option<PathBuf>,
    pub image_size: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Optional cap on optimizer steps, applied on top of `epochs`.
    pub max_steps: Option<usize>,
    pub eval_every: usize,
    pub w_is: f64,
    pub n_disturbances: usize,
    pub seed: u64,
    /// Held-out share of a flat directory; 0 evaluates on the training set.
    pub val_fraction: f64,
    pub losses: LossToggles,
    pub pool: PoolSpec,
    pub base_channels: usize,
    pub output_activation: OutputActivation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::new(),
            output_dir: None,
            reference_dir: None,
            image_size: 64,
            batch_size: 8,
            learning_rate: 1e-4,
            epochs: 500,
            max_steps: None,
            eval_every: 50,
            w_is: 10.0,
            n_disturbances: 1,
            seed: 0,
            val_fraction: 0.1,
            losses: LossToggles::default(),
            pool: PoolSpec::default(),
            base_channels: 16,
            output_activation: OutputActivation::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn arch(&self) -> ArchSpec {
        ArchSpec {
            base_channels: self.base_channels,
            output_activation: self.output_activation,
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            pool: self.pool,
            w_is: self.w_is,
            toggles: self.losses,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.data_dir.as_os_str().is_empty() {
            return bad("data_dir is required".into());
        }
        if self.image_size == 0 || !self.image_size.is_multiple_of(SIZE_MULTIPLE) {
            return bad(format!(
                "image_size {} must be a positive multiple of {SIZE_MULTIPLE}",
                self.image_size
            ));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("eval_every", self.eval_every),
            ("base_channels", self.base_channels),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.max_steps == Some(0) {
            return bad("max_steps must be at least 1 when set".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!("learning_rate {} must be finite and non-negative", self.learning_rate));
        }
        if !(self.w_is.is_finite() && self.w_is >= 0.0) {
            return bad(format!("w_is {} must be finite and non-negative", self.w_is));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!("val_fraction {} must lie in [0, 1)", self.val_fraction));
        }
        if self.pool.n_exposure == 0 || self.pool.m_structure == 0 {
            return bad("pool windows must be at least 1".into());
        }
        if self.pool.n_exposure > self.image_size || self.pool.m_structure > self.image_size {
            return bad(format!(
                "pool windows ({}, {}) exceed image_size {}",
                self.pool.n_exposure, self.pool.m_structure, self.image_size
            ));
        }
        self.arch().validate()
    }
}
