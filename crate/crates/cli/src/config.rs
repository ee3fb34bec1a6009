//! Experiment config files: toy defaults plus explicit overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use xmodal_core::midi::CorpusConfig;
use xmodal_core::model::Perturbation;
use xmodal_core::retrieval::PoolConfig;
use xmodal_core::train::{TrainConfig, TRAIN_SCHEMA_VERSION};

use crate::Failure;

/// Every field but `schema_version` is optional and falls back to the
/// desk-scale default of the chosen arm.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub arm: Option<String>,
    pub corpus: Option<CorpusConfig>,
    pub corpus_seed: Option<u64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub base_lr: Option<f64>,
    pub seed: Option<u64>,
    pub eval_every: Option<usize>,
    pub val_frac: Option<f64>,
    pub pool: Option<PoolConfig>,
    pub control: Option<Perturbation>,
}

impl ExperimentConfig {
    pub fn minimal() -> Self {
        Self { schema_version: TRAIN_SCHEMA_VERSION, ..Self::default() }
    }

    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Failure::config(format!("config {}: {e}", path.display())))?;
        if cfg.schema_version != TRAIN_SCHEMA_VERSION {
            return Err(Failure::config(format!(
                "config {}: schema version {} (supported: {TRAIN_SCHEMA_VERSION})",
                path.display(),
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self, Failure> {
        path.map_or_else(|| Ok(Self::minimal()), Self::load)
    }

    pub fn corpus_config(&self) -> CorpusConfig {
        self.corpus.clone().unwrap_or_default()
    }

    /// Training config for `arm` (falling back to the file's arm).
    pub fn train_config(&self, arm: Option<&str>) -> Result<TrainConfig, Failure> {
        let arm = arm
            .or(self.arm.as_deref())
            .ok_or_else(|| Failure::config("no arm given: pass --arm or set \"arm\" in the config".into()))?;
        let mut c = TrainConfig::toy(arm)?;
        if let Some(v) = &self.corpus {
            c.corpus = v.clone();
        }
        c.corpus_seed = self.corpus_seed.unwrap_or(c.corpus_seed);
        c.epochs = self.epochs.unwrap_or(c.epochs);
        c.batch_size = self.batch_size.unwrap_or(c.batch_size);
        c.base_lr = self.base_lr.unwrap_or(c.base_lr);
        c.seed = self.seed.unwrap_or(c.seed);
        c.eval_every = self.eval_every.unwrap_or(c.eval_every);
        c.val_frac = self.val_frac.unwrap_or(c.val_frac);
        c.pool = self.pool.unwrap_or(c.pool);
        c.control = self.control.or(c.control);
        c.validate()?;
        Ok(c)
    }
}
