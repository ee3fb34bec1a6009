//! Training loop, run checkpoints and the multi-seed driver.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io_err, Error, Result};
use crate::loss::{third_tower_graph, vicreg_graph, LossBreakdown, TowerWeights, VicregWeights};
use crate::midi::{generate_corpus, Corpus, CorpusConfig};
use crate::model::{perturb_descriptors, ArmConfig, Model, Perturbation, Sample};
use crate::retrieval::{evaluate, EvalPool, ItemMeta, PoolConfig};
use crate::rng::{permutation, sub_rng, sub_seed, uniform};
use crate::scalar::Scalar;
use crate::signal::{audio_descriptor, AudioSegment};
use crate::tensor::nn::Ctx;
use crate::tensor::{AdamW, AdamWConfig, Checkpoint, LrSchedule, StepOutcome, Tensor};

pub const TRAIN_SCHEMA_VERSION: u32 = 1;
pub const BEST_CKPT: &str = "best.xmck";
pub const LAST_CKPT: &str = "last.xmck";
pub const HISTORY_FILE: &str = "history.jsonl";

/// Optional training-time audio augmentation. Off by default.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Augmentation {
    /// Uniform random gain in `[-gain_db, +gain_db]`; audio descriptors are
    /// recomputed from the scaled signal.
    pub gain_db: f64,
}

impl Augmentation {
    pub fn is_off(&self) -> bool {
        self.gain_db == 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub schema_version: u32,
    pub arm: ArmConfig,
    pub corpus: CorpusConfig,
    pub corpus_seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub schedule: LrSchedule,
    pub optimizer: AdamWConfig,
    pub loss: VicregWeights,
    pub seed: u64,
    /// Validation S every this many epochs (and after the last); 0 disables it.
    pub eval_every: usize,
    /// Fraction of pieces held out for validation.
    pub val_frac: f64,
    pub pool: PoolConfig,
    /// Parameter-matched control: descriptor content replaced on every sample.
    #[serde(default)]
    pub control: Option<Perturbation>,
    #[serde(default)]
    pub augment: Augmentation,
}

impl TrainConfig {
    /// Desk-scale defaults for `arm`.
    pub fn toy(arm: &str) -> Result<Self> {
        Ok(Self {
            schema_version: TRAIN_SCHEMA_VERSION,
            arm: ArmConfig::toy(arm)?,
            corpus: CorpusConfig::default(),
            corpus_seed: 0,
            epochs: 20,
            batch_size: 16,
            base_lr: 3e-3,
            schedule: LrSchedule::cosine_tail(30, 20),
            optimizer: AdamWConfig::default(),
            loss: VicregWeights::default(),
            seed: 42,
            eval_every: 1,
            val_frac: 0.2,
            pool: PoolConfig::toy(),
            control: None,
            augment: Augmentation::default(),
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != TRAIN_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "train config schema version {} (supported: {TRAIN_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.arm.validate()?;
        self.corpus.validate()?;
        self.schedule.validate()?;
        self.loss.validate()?;
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch_size must be at least 2, got {}", self.batch_size)));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(Error::Config(format!("base_lr must be positive, got {}", self.base_lr)));
        }
        if !(self.val_frac > 0.0 && self.val_frac < 1.0) {
            return Err(Error::Config(format!("val_frac must lie in (0, 1), got {}", self.val_frac)));
        }
        if !(self.augment.gain_db.is_finite() && self.augment.gain_db >= 0.0) {
            return Err(Error::Config("augment.gain_db must be finite and non-negative".into()));
        }
        if self.control.is_some() && self.arm.descriptor_kinds().is_empty() {
            return Err(Error::Config(format!("arm {} has no descriptor path to control", self.arm.arm)));
        }
        if self.arm.sample_rate != self.corpus.sample_rate || self.arm.segment_samples != self.corpus.segment_samples() {
            return Err(Error::Config(format!(
                "arm expects {} samples at {} Hz, corpus yields {} at {} Hz",
                self.arm.segment_samples,
                self.arm.sample_rate,
                self.corpus.segment_samples(),
                self.corpus.sample_rate
            )));
        }
        if self.corpus.max_notes > self.arm.midi.max_notes {
            return Err(Error::Config(format!(
                "corpus max_notes {} exceeds the MIDI encoder's {}",
                self.corpus.max_notes, self.arm.midi.max_notes
            )));
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn hash_bytes(&self) -> [u8; 32] {
        Sha256::digest(serde_json::to_vec(self).expect("config serializes")).into()
    }

    pub fn hash(&self) -> String {
        hex::encode(self.hash_bytes())
    }

    /// Learning rate applied at optimizer step `step`.
    pub fn lr(&self, step: usize, steps_per_epoch: usize) -> f64 {
        self.base_lr * self.schedule.lr_at(step, steps_per_epoch, self.epochs)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean of the per-step losses.
    pub loss: LossBreakdown,
    /// Multiplier on `base_lr` at the epoch's last step.
    pub lr_multiplier: f64,
    /// Learning rate applied at every step of the epoch.
    pub step_lrs: Vec<f64>,
    pub val_s: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }

    pub fn from_jsonl(s: &str) -> Result<Self> {
        let records = s
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { records })
    }

    /// Epoch (1-based) and value of the best validation S; earlier wins ties.
    pub fn best(&self) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for r in &self.records {
            if let Some(s) = r.val_s {
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((r.epoch, s));
                }
            }
        }
        best
    }
}

/// Metadata stored inside every run checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub train: TrainConfig,
    /// Epochs completed when the parameters were captured.
    pub epoch: usize,
    pub val_s: Option<f64>,
}

pub fn to_checkpoint<T: Scalar>(model: &Model<T>, meta: &CheckpointMeta) -> Checkpoint<T> {
    Checkpoint {
        config_hash: meta.train.hash_bytes(),
        meta: serde_json::to_string(meta).expect("meta serializes"),
        params: model.params.clone(),
    }
}

/// Load a run checkpoint, checking its configuration hash and parameter layout.
pub fn load_run_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<(CheckpointMeta, Model<T>)> {
    let ck = Checkpoint::<T>::load(path.as_ref())?;
    let meta: CheckpointMeta =
        serde_json::from_str(&ck.meta).map_err(|e| Error::Format(format!("checkpoint metadata: {e}")))?;
    meta.train.validate()?;
    if meta.train.hash_bytes() != ck.config_hash {
        return Err(Error::Format(format!("{}: configuration hash mismatch", path.as_ref().display())));
    }
    let model = Model::from_params(meta.train.arm.clone(), ck.params)?;
    Ok((meta, model))
}

pub fn item_meta(corpus: &Corpus, indices: &[usize]) -> Vec<ItemMeta> {
    indices
        .iter()
        .map(|&i| {
            let it = &corpus.items[i];
            ItemMeta { piece_id: it.piece_id, composer_id: it.composer_id, segment_index: it.segment_index }
        })
        .collect()
}

/// Model-ready samples for `indices`, descriptors computed in parallel.
pub fn prepare_samples(corpus: &Corpus, indices: &[usize], arm: &ArmConfig) -> Result<Vec<Sample>> {
    let kinds = arm.descriptor_kinds();
    crate::parallel_map(indices, |&i| {
        let it = &corpus.items[i];
        Sample::prepare(&it.audio, &it.midi, &kinds, arm)
    })
}

/// Apply a control perturbation to every descriptor the arm reads.
pub fn apply_control(samples: &mut [Sample], arm: &ArmConfig, control: Perturbation, seed: u64) -> Result<()> {
    for kind in arm.descriptor_kinds() {
        perturb_descriptors(samples, kind, control, sub_seed(seed, "control"))?;
    }
    Ok(())
}

/// Samples of `indices` as the run sees them; a control perturbs within the set.
pub fn run_samples(cfg: &TrainConfig, corpus: &Corpus, indices: &[usize]) -> Result<Vec<Sample>> {
    let mut samples = prepare_samples(corpus, indices, &cfg.arm)?;
    if let Some(c) = cfg.control {
        apply_control(&mut samples, &cfg.arm, c, cfg.seed)?;
    }
    Ok(samples)
}

fn augment_sample(s: &Sample, arm: &ArmConfig, aug: &Augmentation, rng: &mut crate::rng::XRng) -> Result<Sample> {
    let db = (2.0 * uniform(rng) - 1.0) * aug.gain_db;
    let gain = 10f64.powf(db / 20.0);
    let mut out = s.clone();
    out.audio.iter_mut().for_each(|x| *x *= gain);
    let seg = AudioSegment::new(out.audio.clone(), arm.sample_rate);
    for kind in arm.descriptor_kinds().into_iter().filter(|k| k.is_audio()) {
        out.descriptors.insert(kind, audio_descriptor(kind, &seg, arm.stft)?);
    }
    Ok(out)
}

/// Embeddings of `samples` scored on `pool`.
pub fn validation_s<T: Scalar>(model: &Model<T>, samples: &[Sample], pool: &EvalPool) -> Result<f64> {
    let e = model.embed(samples, false)?;
    Ok(evaluate(pool, &e.audio, &e.midi)?.s)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub best: Model<T>,
    pub best_epoch: usize,
    pub best_s: Option<f64>,
    pub last: Model<T>,
    pub history: TrainHistory,
}

struct StepResult {
    loss: LossBreakdown,
}

fn train_step<T: Scalar>(
    cfg: &TrainConfig,
    model: &mut Model<T>,
    opt: &mut AdamW<T>,
    batch: &[&Sample],
    step: usize,
    lr: f64,
) -> Result<StepResult> {
    let dropout_rng = sub_rng(cfg.seed, &format!("dropout/{step}"));
    let mut ctx = Ctx::new(&model.params, true).with_dropout(cfg.arm.dropout, dropout_rng);
    let fwd = model.forward(&mut ctx, batch)?;
    let (mut total, mut breakdown) = match (&cfg.arm.tower, fwd.z_desc) {
        (Some(t), Some(zd)) => {
            let tw = TowerWeights { alpha: t.alpha, beta: t.beta, direct: t.direct };
            third_tower_graph(&mut ctx.g, fwd.z_audio, fwd.z_midi, zd, tw, &cfg.loss)?
        }
        _ => {
            let lv = vicreg_graph(&mut ctx.g, fwd.z_audio, fwd.z_midi, &cfg.loss)?;
            (lv.total, lv.breakdown(&ctx.g))
        }
    };
    if let Some(aux) = fwd.aux {
        breakdown.auxiliary = ctx.g.value(aux).item().f64();
        total = ctx.g.add(total, aux)?;
    }
    breakdown.total = ctx.g.value(total).item().f64();
    if !breakdown.total.is_finite() {
        return Err(Error::NonFinite(format!("loss {} at step {step}", breakdown.total)));
    }
    let grads = ctx.g.backward(total)?;
    let g: Vec<Option<Tensor<T>>> =
        ctx.param_vars().iter().map(|v| v.filter(|&v| grads.reached(v)).map(|v| grads.get(v))).collect();
    let updates = std::mem::take(&mut ctx.buffer_updates);
    drop(ctx);
    if opt.step(&mut model.params, &g, lr)? == StepOutcome::SkippedNonFinite {
        return Err(Error::NonFinite(format!("non-finite gradient at step {step}")));
    }
    for (name, value) in updates {
        model.params.set(&name, value)?;
    }
    Ok(StepResult { loss: breakdown })
}

fn save_models<T: Scalar>(dir: &Path, name: &str, model: &Model<T>, meta: &CheckpointMeta) -> Result<()> {
    to_checkpoint(model, meta).save(dir.join(name))
}

fn write_history(dir: &Path, h: &TrainHistory) -> Result<()> {
    let path = dir.join(HISTORY_FILE);
    let mut f = std::fs::File::create(&path).map_err(io_err(&path))?;
    f.write_all(h.to_jsonl().as_bytes()).map_err(io_err(&path))
}

/// Train on a freshly generated corpus.
pub fn train<T: Scalar>(cfg: &TrainConfig, out: Option<&Path>) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let corpus = generate_corpus(&cfg.corpus, cfg.corpus_seed)?;
    train_on(cfg, &corpus, out)
}

/// Train on `corpus`, which must match `cfg.corpus`. With `out` set, the
/// best and last checkpoints and the JSONL history are written there; on a
/// non-finite loss the last good parameters are saved before the error.
pub fn train_on<T: Scalar>(cfg: &TrainConfig, corpus: &Corpus, out: Option<&Path>) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if corpus.config != cfg.corpus || corpus.seed != cfg.corpus_seed {
        return Err(Error::Config("corpus does not match the training configuration".into()));
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let (train_idx, val_idx) = corpus.split(cfg.val_frac);
    let steps_per_epoch = train_idx.len() / cfg.batch_size;
    if steps_per_epoch == 0 {
        return Err(Error::Config(format!(
            "{} training items cannot fill one batch of {}",
            train_idx.len(),
            cfg.batch_size
        )));
    }
    let train_samples = run_samples(cfg, corpus, &train_idx)?;
    let val_samples = run_samples(cfg, corpus, &val_idx)?;
    let pool = if cfg.eval_every > 0 { Some(EvalPool::build(&item_meta(corpus, &val_idx), cfg.pool)?) } else { None };

    let mut model = Model::<T>::init(cfg.arm.clone(), cfg.seed)?;
    let mut opt = AdamW::new(cfg.optimizer, &model.params);
    let mut history = TrainHistory::default();
    let mut best = model.clone();
    let (mut best_epoch, mut best_s) = (0usize, None::<f64>);
    let meta = |epoch: usize, val_s: Option<f64>| CheckpointMeta { train: cfg.clone(), epoch, val_s };

    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let order = permutation(&mut sub_rng(cfg.seed, &format!("batch/{epoch}")), train_samples.len());
        let mut aug_rng = sub_rng(cfg.seed, &format!("augment/{epoch}"));
        let mut sum = LossBreakdown::default();
        let mut step_lrs = Vec::with_capacity(steps_per_epoch);
        for b in 0..steps_per_epoch {
            let idx = &order[b * cfg.batch_size..(b + 1) * cfg.batch_size];
            let augmented: Vec<Sample>;
            let batch: Vec<&Sample> = if cfg.augment.is_off() {
                idx.iter().map(|&i| &train_samples[i]).collect()
            } else {
                augmented = idx
                    .iter()
                    .map(|&i| augment_sample(&train_samples[i], &cfg.arm, &cfg.augment, &mut aug_rng))
                    .collect::<Result<_>>()?;
                augmented.iter().collect()
            };
            let lr = cfg.lr(step, steps_per_epoch);
            let r = match train_step(cfg, &mut model, &mut opt, &batch, step, lr) {
                Ok(r) => r,
                Err(e @ Error::NonFinite(_)) => {
                    if let Some(dir) = out {
                        save_models(dir, LAST_CKPT, &model, &meta(epoch, None))?;
                        save_models(dir, BEST_CKPT, &best, &meta(best_epoch, best_s))?;
                        write_history(dir, &history)?;
                    }
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            sum.total += r.loss.total;
            sum.invariance += r.loss.invariance;
            sum.variance += r.loss.variance;
            sum.covariance += r.loss.covariance;
            sum.auxiliary += r.loss.auxiliary;
            step_lrs.push(lr);
            step += 1;
        }
        let n = steps_per_epoch as f64;
        let loss = LossBreakdown {
            total: sum.total / n,
            invariance: sum.invariance / n,
            variance: sum.variance / n,
            covariance: sum.covariance / n,
            auxiliary: sum.auxiliary / n,
        };
        let done = epoch + 1;
        let val_s = match &pool {
            Some(p) if done % cfg.eval_every == 0 || done == cfg.epochs => Some(validation_s(&model, &val_samples, p)?),
            _ => None,
        };
        if let Some(s) = val_s {
            if best_s.is_none_or(|b| s > b) {
                best = model.clone();
                best_epoch = done;
                best_s = Some(s);
            }
        }
        history.records.push(EpochRecord {
            epoch: done,
            loss,
            lr_multiplier: cfg.schedule.lr_at(step - 1, steps_per_epoch, cfg.epochs),
            step_lrs,
            val_s,
        });
    }
    if best_s.is_none() {
        best = model.clone();
        best_epoch = cfg.epochs;
    }
    if let Some(dir) = out {
        save_models(dir, LAST_CKPT, &model, &meta(cfg.epochs, history.records.last().and_then(|r| r.val_s)))?;
        save_models(dir, BEST_CKPT, &best, &meta(best_epoch, best_s))?;
        write_history(dir, &history)?;
    }
    Ok(TrainOutcome { best, best_epoch, best_s, last: model, history })
}

/// Mean, sample standard deviation and range of a set of values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Invalid(format!("summary needs at least 2 values, got {}", values.len())));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self { n: values.len(), mean, sd, min, max })
    }

    /// `mean sd min--max`, one decimal each.
    pub fn table_row(&self) -> String {
        format!("{:.1} {:.1} {:.1}--{:.1}", self.mean, self.sd, self.min, self.max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub best_epoch: usize,
    /// Best validation S in percent.
    pub best_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiSeedReport {
    pub arm: String,
    pub runs: Vec<SeedResult>,
    pub summary: Summary,
}

/// Train `cfg` once per seed; each run writes to `out/seed-<seed>` if given.
pub fn multi_seed<T: Scalar>(cfg: &TrainConfig, seeds: &[u64], out: Option<&Path>) -> Result<MultiSeedReport> {
    if seeds.len() < 2 {
        return Err(Error::Config(format!("multi_seed needs at least 2 seeds, got {}", seeds.len())));
    }
    if cfg.eval_every == 0 {
        return Err(Error::Config("multi_seed needs validation (eval_every > 0)".into()));
    }
    cfg.validate()?;
    let corpus = generate_corpus(&cfg.corpus, cfg.corpus_seed)?;
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let c = cfg.clone().with_seed(seed);
        let dir: Option<PathBuf> = out.map(|o| o.join(format!("seed-{seed}")));
        let r = train_on::<T>(&c, &corpus, dir.as_deref())?;
        let s = r.best_s.expect("validation enabled");
        runs.push(SeedResult { seed, best_epoch: r.best_epoch, best_s: 100.0 * s });
    }
    let summary = Summary::of(&runs.iter().map(|r| r.best_s).collect::<Vec<_>>())?;
    Ok(MultiSeedReport { arm: cfg.arm.arm.clone(), runs, summary })
}
