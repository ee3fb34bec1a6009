use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::signal::{DescriptorKind, StftParams};
use crate::tensor::nn::conv_out_len;

pub const SCHEMA_VERSION: u32 = 1;

/// Fixed CNN geometry: (kernel, stride, padding) per layer.
pub const CNN_LAYERS: [(usize, usize, usize); 4] = [(10, 5, 0), (3, 2, 1), (3, 2, 1), (3, 2, 1)];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    /// `LN(W [h || d])` on the own encoder's features.
    Concat,
    /// Encoder features attend to descriptor tokens.
    CrossAttention,
    /// Descriptor tokens attend to encoder features; the stream becomes `T_D` long.
    Reverse,
    /// Concat of the other modality's descriptor, resampled to this encoder's time base.
    CrossModal,
}

impl Mechanism {
    pub fn code(self) -> &'static str {
        match self {
            Self::Concat => "C",
            Self::CrossAttention => "X",
            Self::Reverse => "R",
            Self::CrossModal => "CM",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Injection {
    pub descriptor: DescriptorKind,
    pub mechanism: Mechanism,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Audio,
    Midi,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AudioDims {
    pub cnn_channels: [usize; 4],
    pub gn_groups: usize,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub d_ff: usize,
    pub max_positions: usize,
    pub head_hidden: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MidiDims {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub d_ff: usize,
    pub max_notes: usize,
    pub head_hidden: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilmSpec {
    pub audio: Option<DescriptorKind>,
    pub midi: Option<DescriptorKind>,
    pub hidden: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoeSpec {
    pub experts: usize,
    pub top_k: usize,
    pub audio: bool,
    pub midi: bool,
    pub balance_coef: f64,
    pub entropy_coef: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TowerSpec {
    pub descriptor: DescriptorKind,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub d_ff: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Keep the direct audio/MIDI VICReg term.
    pub direct: bool,
}

/// Full architecture of one experimental arm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmConfig {
    pub schema_version: u32,
    pub arm: String,
    pub sample_rate: u32,
    pub segment_samples: usize,
    pub stft: StftParams,
    pub audio: AudioDims,
    pub midi: MidiDims,
    pub embed_dim: usize,
    pub dropout: f64,
    pub audio_injection: Option<Injection>,
    pub midi_injection: Option<Injection>,
    pub film: Option<FilmSpec>,
    pub moe: Option<MoeSpec>,
    pub tower: Option<TowerSpec>,
}

/// Architecture scale presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scale {
    Full,
    Toy,
}

/// Arm identifiers in catalog order.
pub const ARMS: &[&str] = &[
    "D0", "D4", "A4", "A7", "A8", "A9", "D4x", "A4x", "A7x", "D4r", "A4r", "d4a4", "d4a4cm", "d4-a4r", "film-a4",
    "film-d4", "film-dual", "moe-a4", "moe-dual", "moe-a4-v2", "moe-a4-v3", "moe-a4-v4", "t3-wt", "t3-tri", "t3-anc",
];

/// Resolve an arm name case-insensitively to its catalog spelling.
pub fn canonical_arm(name: &str) -> Result<&'static str> {
    ARMS.iter()
        .find(|a| a.eq_ignore_ascii_case(name))
        .copied()
        .ok_or_else(|| Error::Config(format!("unknown arm {name:?}; valid arms: {}", ARMS.join(", "))))
}

fn inj(descriptor: DescriptorKind, mechanism: Mechanism) -> Option<Injection> {
    Some(Injection { descriptor, mechanism })
}

struct Wiring {
    audio: Option<Injection>,
    midi: Option<Injection>,
    film: Option<(Option<DescriptorKind>, Option<DescriptorKind>)>,
    moe: Option<(usize, usize, bool, bool)>,
    tower: Option<(f64, f64, bool)>,
}

fn wiring(arm: &str) -> Wiring {
    use DescriptorKind::*;
    use Mechanism::*;
    let mut w = Wiring { audio: None, midi: None, film: None, moe: None, tower: None };
    match arm {
        "D0" => {}
        "D4" => w.midi = inj(D4, Concat),
        "A4" => w.audio = inj(A4, Concat),
        "A7" => w.audio = inj(A7, Concat),
        "A8" => w.audio = inj(A8, Concat),
        "A9" => w.audio = inj(A9, Concat),
        "D4x" => w.midi = inj(D4, CrossAttention),
        "A4x" => w.audio = inj(A4, CrossAttention),
        "A7x" => w.audio = inj(A7, CrossAttention),
        "D4r" => w.midi = inj(D4, Reverse),
        "A4r" => w.audio = inj(A4, Reverse),
        "d4a4" => {
            w.audio = inj(A4, Concat);
            w.midi = inj(D4, Concat);
        }
        "d4a4cm" => {
            w.audio = inj(D4, CrossModal);
            w.midi = inj(A4, CrossModal);
        }
        "d4-a4r" => {
            w.audio = inj(A4, Reverse);
            w.midi = inj(D4, Concat);
        }
        "film-a4" => w.film = Some((Some(A4), None)),
        "film-d4" => w.film = Some((None, Some(D4))),
        "film-dual" => w.film = Some((Some(A4), Some(D4))),
        "moe-a4" => {
            w.audio = inj(A4, Concat);
            w.moe = Some((4, 2, true, false));
        }
        "moe-dual" => {
            w.audio = inj(A4, Concat);
            w.midi = inj(D4, Concat);
            w.moe = Some((4, 2, true, true));
        }
        "moe-a4-v2" => {
            w.audio = inj(A4, Concat);
            w.moe = Some((8, 2, true, false));
        }
        "moe-a4-v3" => {
            w.audio = inj(A4, Concat);
            w.moe = Some((4, 1, true, false));
        }
        "moe-a4-v4" => {
            w.audio = inj(A4, Concat);
            w.moe = Some((4, 4, true, false));
        }
        "t3-wt" => w.tower = Some((0.5, 0.5, true)),
        "t3-tri" => w.tower = Some((1.0, 1.0, true)),
        "t3-anc" => w.tower = Some((1.0, 1.0, false)),
        _ => unreachable!("arm list and wiring table agree"),
    }
    w
}

impl AudioDims {
    pub fn full() -> Self {
        Self {
            cnn_channels: [512, 512, 512, 1024],
            gn_groups: 32,
            d_model: 1024,
            heads: 8,
            layers: 4,
            d_ff: 4096,
            max_positions: 6000,
            head_hidden: 512,
        }
    }

    pub fn toy() -> Self {
        Self {
            cnn_channels: [16, 16, 16, 64],
            gn_groups: 4,
            d_model: 64,
            heads: 4,
            layers: 2,
            d_ff: 128,
            max_positions: 64,
            head_hidden: 32,
        }
    }
}

impl MidiDims {
    pub fn full() -> Self {
        Self { d_model: 512, heads: 8, layers: 4, d_ff: 2048, max_notes: 512, head_hidden: 512 }
    }

    pub fn toy() -> Self {
        Self { d_model: 32, heads: 4, layers: 2, d_ff: 64, max_notes: 64, head_hidden: 32 }
    }
}

impl ArmConfig {
    /// Catalog configuration for `arm` at the given scale.
    pub fn new(arm: &str, scale: Scale) -> Result<Self> {
        let arm = canonical_arm(arm)?;
        let (sample_rate, segment_samples, stft, audio, midi, embed_dim) = match scale {
            Scale::Full => (24_000, 96_000, StftParams::FULL, AudioDims::full(), MidiDims::full(), 256),
            Scale::Toy => (4_000, 2_000, StftParams::TOY, AudioDims::toy(), MidiDims::toy(), 32),
        };
        let w = wiring(arm);
        let film_hidden = match scale {
            Scale::Full => 256,
            Scale::Toy => 16,
        };
        let tower_dims = match scale {
            Scale::Full => (256, 4, 2, 1024),
            Scale::Toy => (32, 4, 1, 64),
        };
        let cfg = Self {
            schema_version: SCHEMA_VERSION,
            arm: arm.to_string(),
            sample_rate,
            segment_samples,
            stft,
            audio,
            midi,
            embed_dim,
            dropout: 0.0,
            audio_injection: w.audio,
            midi_injection: w.midi,
            film: w.film.map(|(audio, midi)| FilmSpec { audio, midi, hidden: film_hidden }),
            moe: w.moe.map(|(experts, top_k, audio, midi)| MoeSpec {
                experts,
                top_k,
                audio,
                midi,
                balance_coef: 0.01,
                entropy_coef: 0.01,
            }),
            tower: w.tower.map(|(alpha, beta, direct)| TowerSpec {
                descriptor: DescriptorKind::A4,
                d_model: tower_dims.0,
                heads: tower_dims.1,
                layers: tower_dims.2,
                d_ff: tower_dims.3,
                alpha,
                beta,
                direct,
            }),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn toy(arm: &str) -> Result<Self> {
        Self::new(arm, Scale::Toy)
    }

    pub fn full(arm: &str) -> Result<Self> {
        Self::new(arm, Scale::Full)
    }

    /// Length of the CNN output sequence.
    pub fn feature_frames(&self) -> usize {
        CNN_LAYERS.iter().fold(self.segment_samples, |len, &(k, s, p)| conv_out_len(len, k, s, p))
    }

    /// STFT frame count of a segment.
    pub fn descriptor_frames(&self) -> usize {
        self.stft.frames_for(self.segment_samples)
    }

    /// Tokens entering the audio Transformer.
    pub fn audio_tokens(&self) -> usize {
        match self.audio_injection {
            Some(Injection { mechanism: Mechanism::Reverse, .. }) => self.descriptor_frames(),
            _ => self.feature_frames(),
        }
    }

    /// Every descriptor kind the arm consumes, deduplicated.
    pub fn descriptor_kinds(&self) -> Vec<DescriptorKind> {
        let mut v = Vec::new();
        v.extend(self.audio_injection.map(|i| i.descriptor));
        v.extend(self.midi_injection.map(|i| i.descriptor));
        if let Some(f) = &self.film {
            v.extend(f.audio);
            v.extend(f.midi);
        }
        if let Some(t) = &self.tower {
            v.push(t.descriptor);
        }
        v.sort();
        v.dedup();
        v
    }

    pub fn uses_descriptor(&self, kind: DescriptorKind) -> bool {
        self.descriptor_kinds().contains(&kind)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("schema_version {} (expected {SCHEMA_VERSION})", self.schema_version));
        }
        let arm = canonical_arm(&self.arm)?;
        if arm != self.arm {
            return bad(format!("arm {:?} must be spelled {arm:?}", self.arm));
        }
        let a = &self.audio;
        let m = &self.midi;
        if a.cnn_channels.iter().any(|&c| c == 0 || c % a.gn_groups.max(1) != 0) || a.gn_groups == 0 {
            return bad(format!("cnn channels {:?} not divisible into {} groups", a.cnn_channels, a.gn_groups));
        }
        if a.cnn_channels[3] != a.d_model {
            return bad(format!("last cnn channel count {} must equal audio d_model {}", a.cnn_channels[3], a.d_model));
        }
        for (side, d, h) in [("audio", a.d_model, a.heads), ("midi", m.d_model, m.heads)] {
            if h == 0 || d % h != 0 {
                return bad(format!("{side} d_model {d} not divisible into {h} heads"));
            }
        }
        if !m.d_model.is_multiple_of(4) {
            return bad(format!("midi d_model {} must be divisible by 4", m.d_model));
        }
        if a.layers == 0 || m.layers == 0 || a.d_ff == 0 || m.d_ff == 0 || self.embed_dim == 0 {
            return bad("layer counts and widths must be positive".into());
        }
        if a.head_hidden == 0 || m.head_hidden == 0 || m.max_notes == 0 {
            return bad("head widths and max_notes must be positive".into());
        }
        let tf = self.feature_frames();
        if tf == 0 {
            return bad(format!("segment of {} samples is shorter than the CNN receptive field", self.segment_samples));
        }
        if tf > a.max_positions {
            return bad(format!("{tf} CNN frames exceed the {} positional slots", a.max_positions));
        }
        if self.stft.hop == 0 || self.stft.nfft < 2 {
            return bad(format!("bad stft params {:?}", self.stft));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        check_injection(Side::Audio, self.audio_injection)?;
        check_injection(Side::Midi, self.midi_injection)?;
        if let Some(f) = &self.film {
            if f.audio.is_none() && f.midi.is_none() || f.hidden == 0 {
                return bad("film needs a descriptor on at least one side and hidden > 0".into());
            }
            if f.audio.is_some_and(|k| !k.is_audio()) || f.midi.is_some_and(|k| k.is_audio()) {
                return bad("film descriptors must come from their own modality".into());
            }
        }
        if let Some(moe) = &self.moe {
            if moe.experts == 0 || moe.top_k == 0 || moe.top_k > moe.experts {
                return bad(format!("moe top_k {} with {} experts", moe.top_k, moe.experts));
            }
            if !moe.audio && !moe.midi {
                return bad("moe must replace at least one encoder's final FFN".into());
            }
            if moe.balance_coef < 0.0 || moe.entropy_coef < 0.0 {
                return bad("moe coefficients must be non-negative".into());
            }
        }
        if let Some(t) = &self.tower {
            if t.heads == 0 || t.d_model % t.heads != 0 || t.layers == 0 || t.d_ff == 0 {
                return bad("tower dims inconsistent".into());
            }
            if !t.descriptor.is_audio() {
                return bad("tower descriptor must be an audio descriptor".into());
            }
            if t.alpha < 0.0 || t.beta < 0.0 {
                return bad("tower weights must be non-negative".into());
            }
        }
        let w = wiring(arm);
        let film_kinds = self.film.as_ref().map(|f| (f.audio, f.midi));
        let moe_shape = self.moe.as_ref().map(|m| (m.experts, m.top_k, m.audio, m.midi));
        let tower_shape = self.tower.as_ref().map(|t| (t.alpha, t.beta, t.direct));
        if w.audio != self.audio_injection
            || w.midi != self.midi_injection
            || w.film != film_kinds
            || w.moe != moe_shape
            || w.tower != tower_shape
        {
            return bad(format!("injection wiring does not match the catalog entry for arm {arm}"));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Allowed descriptor/mechanism pairs per side.
pub fn check_injection(side: Side, inj: Option<Injection>) -> Result<()> {
    use DescriptorKind::*;
    use Mechanism::*;
    let Some(i) = inj else { return Ok(()) };
    let ok = match side {
        Side::Audio => matches!(
            (i.descriptor, i.mechanism),
            (A4 | A7 | A8 | A9, Concat) | (A4 | A7, CrossAttention) | (A4, Reverse) | (D4, CrossModal)
        ),
        Side::Midi => matches!((i.descriptor, i.mechanism), (D4, Concat | CrossAttention | Reverse) | (A4, CrossModal)),
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{side:?} injection {}/{} is not in the descriptor catalog",
            i.descriptor.name(),
            i.mechanism.code()
        )))
    }
}

/// Self-attention cost ratio of the frame stream to the descriptor stream.
pub fn attention_cost_ratio(t_f: usize, t_d: usize) -> Result<f64> {
    if t_f == 0 || t_d == 0 {
        return Err(Error::Invalid(format!("token counts must be positive, got {t_f} and {t_d}")));
    }
    Ok((t_f as f64 / t_d as f64).powi(2))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_arm_builds_at_both_scales() {
        for arm in ARMS {
            ArmConfig::toy(arm).unwrap();
            ArmConfig::full(arm).unwrap();
        }
    }

    #[test]
    fn arm_names_resolve_case_insensitively() {
        assert_eq!(canonical_arm("d0").unwrap(), "D0");
        assert_eq!(canonical_arm("A4R").unwrap(), "A4r");
        let err = canonical_arm("a5").unwrap_err().to_string();
        assert!(err.contains("d4a4cm"));
    }

    #[test]
    fn frame_counts() {
        let p = ArmConfig::full("A4r").unwrap();
        assert_eq!(p.feature_frames(), 2400);
        assert_eq!(p.descriptor_frames(), 188);
        assert_eq!(p.audio_tokens(), 188);
        let t = ArmConfig::toy("d4a4").unwrap();
        assert_eq!(t.feature_frames(), 50);
        assert_eq!(t.descriptor_frames(), 32);
        assert_eq!(t.audio_tokens(), 50);
    }

    #[test]
    fn cost_ratio() {
        let r = attention_cost_ratio(2400, 188).unwrap();
        assert!((162.9..=163.0).contains(&r));
        assert_eq!(attention_cost_ratio(7, 7).unwrap(), 1.0);
        assert_eq!(attention_cost_ratio(100, 10).unwrap(), 100.0);
        assert!(attention_cost_ratio(0, 3).is_err());
    }

    #[test]
    fn catalog_rejects_off_table_pairs() {
        let mut c = ArmConfig::toy("A4").unwrap();
        c.audio_injection = inj(DescriptorKind::A8, Mechanism::Reverse);
        assert!(c.validate().is_err());
        assert!(check_injection(Side::Midi, inj(DescriptorKind::A7, Mechanism::Concat)).is_err());
        let mut c = ArmConfig::toy("A4").unwrap();
        c.audio_injection = inj(DescriptorKind::A7, Mechanism::Concat);
        assert!(c.validate().is_err(), "wiring must match the named arm");
    }

    #[test]
    fn json_round_trip_and_unknown_fields() {
        let c = ArmConfig::toy("moe-dual").unwrap();
        let s = serde_json::to_string(&c).unwrap();
        let back = ArmConfig::from_json(&s).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        let mut v: serde_json::Value = serde_json::from_str(&s).unwrap();
        v["clip_grad"] = serde_json::json!(1.0);
        assert!(ArmConfig::from_json(&v.to_string()).is_err());
        assert_ne!(ArmConfig::toy("D0").unwrap().hash(), c.hash());
    }
}
