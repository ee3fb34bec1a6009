//! Scientific validation battery run against frozen checkpoints.

mod ablation;
mod alignment;
mod battery;
mod cka;
mod effect;
mod invariance;
mod probe;
mod sensitivity;

pub use ablation::{ablate, param_matched_controls, AblationResult, AblationSide, AblationSpec};
pub use battery::{run_test, BatteryConfig, TestId, NOT_APPLICABLE};
pub use alignment::{cosine_alignment, export_embeddings, read_embeddings, AlignmentStats, EmbeddingRow, HIST_BINS};
pub use cka::{cka, cka_matrix, rsa, CkaReport};
pub use effect::{effect_size, EffectSize};
pub use invariance::{
    invariance_suite, transposition_sweep, InvarianceReport, InvarianceRow, TranspositionReport, OCTAVE, SHIFT_FRACTION,
    SNR_DB, VELOCITY_FACTORS,
};
pub use probe::{linear_probe, probe_target, probe_targets, ProbeResult, ProbeTarget};
pub use sensitivity::{band_sensitivity, BandReport};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::midi::{Corpus, CorpusItem};
use crate::model::{Embeddings, Model, Sample};
use crate::retrieval::{evaluate, EvalPool, Metrics, PoolConfig, REPORT_SCHEMA_VERSION};
use crate::scalar::Scalar;
use crate::train::{apply_control, item_meta, TrainConfig};

/// A frozen model bound to the held-out split and its retrieval pool.
pub struct Evaluator<'a, T> {
    pub train: &'a TrainConfig,
    pub model: &'a Model<T>,
    pub items: Vec<CorpusItem>,
    pub pool: EvalPool,
}

impl<'a, T: Scalar> Evaluator<'a, T> {
    /// Held-out items of `corpus` under the run's split, scored on `pool`.
    pub fn new(train: &'a TrainConfig, model: &'a Model<T>, corpus: &Corpus, pool: PoolConfig) -> Result<Self> {
        if corpus.config != train.corpus || corpus.seed != train.corpus_seed {
            return Err(Error::Config("corpus does not match the checkpoint's training configuration".into()));
        }
        let (_, val) = corpus.split(train.val_frac);
        let pool = EvalPool::build(&item_meta(corpus, &val), pool)?;
        let items = val.iter().map(|&i| corpus.items[i].clone()).collect();
        Ok(Self { train, model, items, pool })
    }

    /// Model inputs for `items` (aligned with the pool), control applied.
    pub fn samples(&self, items: &[CorpusItem]) -> Result<Vec<Sample>> {
        let arm = &self.model.config;
        let kinds = arm.descriptor_kinds();
        let mut s = crate::parallel_map(items, |it| Sample::prepare(&it.audio, &it.midi, &kinds, arm))?;
        if let Some(c) = self.train.control {
            apply_control(&mut s, arm, c, self.train.seed)?;
        }
        Ok(s)
    }

    pub fn clean_samples(&self) -> Result<Vec<Sample>> {
        self.samples(&self.items)
    }

    pub fn embed(&self, samples: &[Sample], taps: bool) -> Result<Embeddings> {
        self.model.embed(samples, taps)
    }

    pub fn score(&self, samples: &[Sample]) -> Result<Metrics> {
        let e = self.model.embed(samples, false)?;
        evaluate(&self.pool, &e.audio, &e.midi)
    }
}

/// One test's result document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationReport {
    pub schema_version: u32,
    pub arm: String,
    pub test: String,
    pub config_hash: String,
    pub seed: u64,
    pub inputs: serde_json::Value,
    pub metrics: serde_json::Value,
}

impl ValidationReport {
    pub fn new(train: &TrainConfig, test: &str, inputs: impl Serialize, metrics: impl Serialize) -> Result<Self> {
        Ok(Self {
            schema_version: REPORT_SCHEMA_VERSION,
            arm: train.arm.arm.clone(),
            test: test.to_string(),
            config_hash: train.hash(),
            seed: train.seed,
            inputs: serde_json::to_value(inputs)?,
            metrics: serde_json::to_value(metrics)?,
        })
    }
}

/// Every report of a battery run, keyed by `<arm>-s<seed>` then test.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dashboard {
    pub runs: std::collections::BTreeMap<String, std::collections::BTreeMap<String, serde_json::Value>>,
}

impl Dashboard {
    pub fn from_reports(reports: &[ValidationReport]) -> Self {
        let mut d = Self::default();
        for r in reports {
            let run = format!("{}-s{}", r.arm, r.seed);
            d.runs.entry(run).or_default().insert(r.test.clone(), r.metrics.clone());
        }
        d
    }
}
