use std::collections::BTreeMap;

use serde::Serialize;

use crate::model::config::{ArmConfig, Injection, Mechanism, CNN_LAYERS};
use crate::midi::N_DURATION_BUCKETS;
use crate::tensor::{Init, ParamSpec};

pub const PITCH_VOCAB: usize = 128;
pub const VELOCITY_VOCAB: usize = 128;

struct Specs(Vec<ParamSpec>);

impl Specs {
    fn linear(&mut self, name: &str, input: usize, output: usize) {
        self.0.push(ParamSpec::weight(format!("{name}.weight"), &[input, output]));
        self.0.push(ParamSpec::zeros(format!("{name}.bias"), &[output]));
    }

    fn zero_linear(&mut self, name: &str, input: usize, output: usize) {
        self.0.push(ParamSpec::zeros(format!("{name}.weight"), &[input, output]));
        self.0.push(ParamSpec::zeros(format!("{name}.bias"), &[output]));
    }

    fn norm(&mut self, name: &str, d: usize) {
        self.0.push(ParamSpec::ones(format!("{name}.weight"), &[d]));
        self.0.push(ParamSpec::zeros(format!("{name}.bias"), &[d]));
    }

    fn batch_norm(&mut self, name: &str, d: usize) {
        self.norm(name, d);
        self.0.push(ParamSpec::buffer(format!("{name}.running_mean"), &[d], Init::Zeros));
        self.0.push(ParamSpec::buffer(format!("{name}.running_var"), &[d], Init::Ones));
    }

    fn table(&mut self, name: &str, rows: usize, d: usize) {
        self.0.push(ParamSpec::weight(name, &[rows, d]));
    }

    fn attention(&mut self, prefix: &str, d: usize) {
        for p in ["q", "k", "v", "o"] {
            self.linear(&format!("{prefix}.{p}"), d, d);
        }
    }

    fn ffn(&mut self, prefix: &str, d: usize, d_ff: usize) {
        self.linear(&format!("{prefix}.fc1"), d, d_ff);
        self.linear(&format!("{prefix}.fc2"), d_ff, d);
    }

    /// Pre-norm Transformer block; `experts` swaps the FFN for a gated mixture.
    fn block(&mut self, prefix: &str, d: usize, d_ff: usize, experts: Option<usize>) {
        self.norm(&format!("{prefix}.ln1"), d);
        self.attention(&format!("{prefix}.attn"), d);
        self.norm(&format!("{prefix}.ln2"), d);
        match experts {
            None => self.ffn(&format!("{prefix}.ffn"), d, d_ff),
            Some(e) => {
                self.0.push(ParamSpec::weight(format!("{prefix}.moe.gate.weight"), &[d, e]));
                for i in 0..e {
                    self.ffn(&format!("{prefix}.moe.expert{i}"), d, d_ff);
                }
            }
        }
    }

    fn injection(&mut self, prefix: &str, inj: Injection, d: usize, query_slots: usize) {
        let k = inj.descriptor.dims();
        match inj.mechanism {
            Mechanism::Concat | Mechanism::CrossModal => {
                self.linear(&format!("{prefix}.proj"), d + k, d);
                self.norm(&format!("{prefix}.ln"), d);
            }
            Mechanism::CrossAttention => {
                self.linear(&format!("{prefix}.desc"), k, d);
                self.norm(&format!("{prefix}.ln"), d);
                self.attention(&format!("{prefix}.attn"), d);
            }
            Mechanism::Reverse => {
                self.linear(&format!("{prefix}.desc"), k, d);
                self.table(&format!("{prefix}.pos"), query_slots, d);
                self.norm(&format!("{prefix}.ln_q"), d);
                self.norm(&format!("{prefix}.ln_kv"), d);
                self.attention(&format!("{prefix}.attn"), d);
            }
        }
    }

    fn head(&mut self, prefix: &str, input: usize, hidden: usize, out: usize) {
        self.linear(&format!("{prefix}.fc0"), input, hidden);
        self.batch_norm(&format!("{prefix}.bn0"), hidden);
        self.linear(&format!("{prefix}.fc1"), hidden, hidden);
        self.batch_norm(&format!("{prefix}.bn1"), hidden);
        self.linear(&format!("{prefix}.fc2"), hidden, out);
    }

    fn film(&mut self, prefix: &str, k: usize, hidden: usize, d: usize, layers: usize) {
        for l in 0..layers {
            self.linear(&format!("{prefix}.{l}.fc1"), k, hidden);
            self.zero_linear(&format!("{prefix}.{l}.fc2"), hidden, 2 * d);
        }
    }
}

/// Every parameter and buffer of an arm, in a fixed order.
pub fn param_specs(cfg: &ArmConfig) -> Vec<ParamSpec> {
    let mut s = Specs(Vec::new());
    let a = &cfg.audio;
    let m = &cfg.midi;
    let moe_experts = |audio: bool, l: usize, layers: usize| {
        cfg.moe
            .as_ref()
            .filter(|moe| if audio { moe.audio } else { moe.midi })
            .filter(|_| l + 1 == layers)
            .map(|moe| moe.experts)
    };

    let mut c_in = 1;
    for (i, (&c_out, &(kernel, _, _))) in a.cnn_channels.iter().zip(CNN_LAYERS.iter()).enumerate() {
        s.linear(&format!("audio.cnn.{i}.conv"), c_in * kernel, c_out);
        s.norm(&format!("audio.cnn.{i}.gn"), c_out);
        c_in = c_out;
    }
    if let Some(inj) = cfg.audio_injection {
        s.injection("inject.audio", inj, a.d_model, cfg.descriptor_frames());
    }
    s.table("audio.pos", a.max_positions, a.d_model);
    for l in 0..a.layers {
        s.block(&format!("audio.tf.{l}"), a.d_model, a.d_ff, moe_experts(true, l, a.layers));
    }

    s.table("midi.emb.pitch", PITCH_VOCAB, m.d_model / 2);
    s.table("midi.emb.velocity", VELOCITY_VOCAB, m.d_model / 4);
    s.table("midi.emb.duration", N_DURATION_BUCKETS, m.d_model / 4);
    s.linear("midi.emb.proj", m.d_model, m.d_model);
    s.norm("midi.emb.ln", m.d_model);
    if let Some(inj) = cfg.midi_injection {
        s.injection("inject.midi", inj, m.d_model, m.max_notes);
    }
    for l in 0..m.layers {
        s.block(&format!("midi.tf.{l}"), m.d_model, m.d_ff, moe_experts(false, l, m.layers));
    }
    s.norm("midi.out_ln", m.d_model);

    if let Some(f) = &cfg.film {
        if let Some(k) = f.audio {
            s.film("film.audio", k.dims(), f.hidden, a.d_model, a.layers);
        }
        if let Some(k) = f.midi {
            s.film("film.midi", k.dims(), f.hidden, m.d_model, m.layers);
        }
    }

    if let Some(t) = &cfg.tower {
        s.linear("tower.in", t.descriptor.dims(), t.d_model);
        s.table("tower.pos", cfg.descriptor_frames(), t.d_model);
        for l in 0..t.layers {
            s.block(&format!("tower.tf.{l}"), t.d_model, t.d_ff, None);
        }
        s.norm("tower.ln", t.d_model);
        s.linear("tower.out", t.d_model, cfg.embed_dim);
    }

    s.head("head.audio", a.d_model, a.head_hidden, cfg.embed_dim);
    s.head("head.midi", m.d_model, m.head_hidden, cfg.embed_dim);
    s.0
}

/// Trainable parameter counts grouped by component.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamCount {
    pub components: BTreeMap<String, usize>,
    pub total: usize,
}

/// Component of a parameter name: the first two path segments.
pub fn component_of(name: &str) -> String {
    name.split('.').take(2).collect::<Vec<_>>().join(".")
}

pub fn param_count(cfg: &ArmConfig) -> ParamCount {
    let mut components = BTreeMap::new();
    let mut total = 0;
    for p in param_specs(cfg).iter().filter(|p| p.trainable) {
        *components.entry(component_of(&p.name)).or_insert(0) += p.numel();
        total += p.numel();
    }
    ParamCount { components, total }
}
