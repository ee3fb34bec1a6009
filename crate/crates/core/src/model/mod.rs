//! Audio and MIDI encoders, descriptor injection mechanisms and projection heads.

pub mod config;
pub mod encoder;
mod input;
pub mod perturb;
pub mod layers;
pub mod spec;

pub use config::{
    attention_cost_ratio, canonical_arm, ArmConfig, AudioDims, FilmSpec, Injection, Mechanism, MidiDims, MoeSpec, Scale,
    Side, TowerSpec, ARMS,
};
pub use encoder::{audio_encode, midi_encode, tower_encode, Encoded};
pub use input::{MidiTokens, Sample};
pub use perturb::{perturb_descriptors, Perturbation};
pub use spec::{param_count, param_specs, ParamCount};

use crate::error::{Error, Result};
use crate::rng::sub_rng;
use crate::scalar::Scalar;
use crate::tensor::nn::Ctx;
use crate::tensor::{ParamStore, Var};
use layers::projection_head;

/// An arm's configuration together with its weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub config: ArmConfig,
    pub params: ParamStore<T>,
}

/// Batched forward pass: projections plus the per-sample encoder passes.
pub struct Forward {
    /// `[batch, D]` audio embeddings.
    pub z_audio: Var,
    /// `[batch, D]` MIDI embeddings.
    pub z_midi: Var,
    /// `[batch, D]` descriptor-tower embeddings.
    pub z_desc: Option<Var>,
    /// Summed MoE auxiliary loss.
    pub aux: Option<Var>,
    pub audio: Vec<Encoded>,
    pub midi: Vec<Encoded>,
}

/// Frozen embeddings of a sample set, row per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Embeddings {
    pub audio: Vec<Vec<f64>>,
    pub midi: Vec<Vec<f64>>,
    /// Per Transformer layer, per sample: token-mean of the layer output.
    pub audio_taps: Vec<Vec<Vec<f64>>>,
    pub midi_taps: Vec<Vec<Vec<f64>>>,
}

impl<T: Scalar> Model<T> {
    pub fn init(config: ArmConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = sub_rng(seed, "init");
        let params = ParamStore::init(&param_specs(&config), &mut rng)?;
        Ok(Self { config, params })
    }

    /// Wrap existing weights after checking names and shapes against the arm.
    pub fn from_params(config: ArmConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let specs = param_specs(&config);
        if specs.len() != params.len() {
            return Err(Error::Format(format!(
                "arm {} expects {} tensors, got {}",
                config.arm,
                specs.len(),
                params.len()
            )));
        }
        for (s, p) in specs.iter().zip(params.params()) {
            if s.name != p.name || s.shape != p.value.shape() || s.trainable != p.trainable {
                return Err(Error::Format(format!("parameter {} does not match arm {}", p.name, config.arm)));
            }
        }
        Ok(Self { config, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.numel(true)
    }

    /// Encode a batch and project both sides. Training-mode batch norm needs
    /// at least two samples.
    pub fn forward(&self, ctx: &mut Ctx<T>, batch: &[&Sample]) -> Result<Forward> {
        if batch.is_empty() {
            return Err(Error::Invalid("empty batch".into()));
        }
        let cfg = &self.config;
        let mut audio = Vec::with_capacity(batch.len());
        let mut midi = Vec::with_capacity(batch.len());
        let mut towers = Vec::new();
        let mut aux: Option<Var> = None;
        for s in batch {
            let a = audio_encode(ctx, cfg, s)?;
            let m = midi_encode(ctx, cfg, s, None)?;
            for x in [a.aux, m.aux].into_iter().flatten() {
                aux = Some(match aux {
                    None => x,
                    Some(acc) => ctx.g.add(acc, x)?,
                });
            }
            if let Some(t) = &cfg.tower {
                towers.push(tower_encode(ctx, t, s.descriptor(t.descriptor)?)?);
            }
            audio.push(a);
            midi.push(m);
        }
        let aux = aux.map(|a| ctx.g.scale(a, T::one() / T::of(batch.len() as f64)));
        let ha = ctx.g.concat_rows(&audio.iter().map(|e| e.pooled).collect::<Vec<_>>())?;
        let hm = ctx.g.concat_rows(&midi.iter().map(|e| e.pooled).collect::<Vec<_>>())?;
        let z_audio = projection_head(ctx, ha, "head.audio")?;
        let z_midi = projection_head(ctx, hm, "head.midi")?;
        let z_desc = if towers.is_empty() { None } else { Some(ctx.g.concat_rows(&towers)?) };
        Ok(Forward { z_audio, z_midi, z_desc, aux, audio, midi })
    }

    /// Eval-mode embedding of one sample.
    fn embed_one(&self, s: &Sample, taps: bool) -> Result<(Vec<f64>, Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let mut ctx = Ctx::new(&self.params, false);
        let f = self.forward(&mut ctx, &[s])?;
        let row = |v: Var| ctx.g.value(v).data().iter().map(|x| x.f64()).collect::<Vec<f64>>();
        let pool_taps = |e: &Encoded| -> Vec<Vec<f64>> {
            if !taps {
                return Vec::new();
            }
            e.taps.iter().map(|&t| masked_token_mean(ctx.g.value(t), &e.mask)).collect()
        };
        Ok((row(f.z_audio), row(f.z_midi), pool_taps(&f.audio[0]), pool_taps(&f.midi[0])))
    }

    /// Embed every sample in eval mode, spreading samples over worker threads.
    pub fn embed(&self, samples: &[Sample], taps: bool) -> Result<Embeddings> {
        let results = crate::parallel_map(samples, |s| self.embed_one(s, taps))?;
        let n_a = if taps { self.config.audio.layers } else { 0 };
        let n_m = if taps { self.config.midi.layers } else { 0 };
        let mut out = Embeddings {
            audio: Vec::with_capacity(samples.len()),
            midi: Vec::with_capacity(samples.len()),
            audio_taps: vec![Vec::with_capacity(samples.len()); n_a],
            midi_taps: vec![Vec::with_capacity(samples.len()); n_m],
        };
        for (a, m, ta, tm) in results {
            out.audio.push(a);
            out.midi.push(m);
            for (l, t) in ta.into_iter().enumerate() {
                out.audio_taps[l].push(t);
            }
            for (l, t) in tm.into_iter().enumerate() {
                out.midi_taps[l].push(t);
            }
        }
        Ok(out)
    }
}

fn masked_token_mean<T: Scalar>(t: &crate::tensor::Tensor<T>, mask: &[bool]) -> Vec<f64> {
    let d = t.cols();
    let mut m = vec![0.0; d];
    let mut n = 0usize;
    for (r, _) in mask.iter().enumerate().filter(|(_, &v)| v) {
        for (acc, x) in m.iter_mut().zip(t.row(r)) {
            *acc += x.f64();
        }
        n += 1;
    }
    m.iter_mut().for_each(|v| *v /= n.max(1) as f64);
    m
}
