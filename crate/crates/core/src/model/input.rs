use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::midi::{bucket_duration, d4_descriptor, MidiSegment};
use crate::model::config::ArmConfig;
use crate::signal::{audio_descriptor, AudioSegment, DescriptorKind, DescriptorTensor};

/// Event vocabulary indices of a MIDI segment's valid notes.
#[derive(Clone, Debug, PartialEq)]
pub struct MidiTokens {
    pub pitch: Vec<usize>,
    pub velocity: Vec<usize>,
    pub duration: Vec<usize>,
}

impl MidiTokens {
    pub fn from_segment(seg: &MidiSegment) -> Self {
        Self {
            pitch: seg.events.iter().map(|e| e.pitch as usize).collect(),
            velocity: seg.events.iter().map(|e| e.velocity as usize).collect(),
            duration: seg.events.iter().map(|e| bucket_duration(e.duration_s)).collect(),
        }
    }

    /// `n` padding slots holding index 0.
    pub fn padding(n: usize) -> Self {
        Self { pitch: vec![0; n], velocity: vec![0; n], duration: vec![0; n] }
    }

    pub fn len(&self) -> usize {
        self.pitch.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pitch.is_empty()
    }
}

/// Model-ready pair: raw samples, MIDI tokens and every descriptor the arm reads.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub audio: Vec<f64>,
    pub midi: MidiTokens,
    pub descriptors: BTreeMap<DescriptorKind, DescriptorTensor>,
}

impl Sample {
    /// Build a sample, computing the descriptors `kinds` from the raw pair.
    pub fn prepare(audio: &AudioSegment, midi: &MidiSegment, kinds: &[DescriptorKind], cfg: &ArmConfig) -> Result<Self> {
        let mut descriptors = BTreeMap::new();
        for &k in kinds {
            let d = match k {
                DescriptorKind::D4 => d4_descriptor(&midi.pitches()),
                _ => audio_descriptor(k, audio, cfg.stft)?,
            };
            descriptors.insert(k, d);
        }
        Ok(Self { audio: audio.samples.clone(), midi: MidiTokens::from_segment(midi), descriptors })
    }

    pub fn descriptor(&self, kind: DescriptorKind) -> Result<&DescriptorTensor> {
        self.descriptors
            .get(&kind)
            .ok_or_else(|| Error::Invalid(format!("sample carries no {} descriptor", kind.name())))
    }

    /// Check lengths and descriptor shapes against the arm.
    pub fn check(&self, cfg: &ArmConfig) -> Result<()> {
        if self.audio.len() != cfg.segment_samples {
            return Err(Error::Shape(format!(
                "audio has {} samples, expected {}",
                self.audio.len(),
                cfg.segment_samples
            )));
        }
        if self.midi.is_empty() {
            return Err(Error::Invalid("MIDI segment has no valid events".into()));
        }
        if self.midi.len() > cfg.midi.max_notes {
            return Err(Error::Shape(format!("{} notes exceed max_notes {}", self.midi.len(), cfg.midi.max_notes)));
        }
        for kind in cfg.descriptor_kinds() {
            let d = self.descriptor(kind)?;
            let frames = if kind.is_audio() { cfg.descriptor_frames() } else { self.midi.len() };
            if d.frames != frames || d.values.len() != frames * kind.dims() {
                return Err(Error::Shape(format!(
                    "{} descriptor: expected {frames} x {}, got {} x {}",
                    kind.name(),
                    kind.dims(),
                    d.frames,
                    d.values.len() / d.frames.max(1)
                )));
            }
        }
        Ok(())
    }
}
