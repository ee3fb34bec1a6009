//! Symbolic side: note events, the D4 interval descriptor, perturbations,
//! additive synthesis and the synthetic matched-pair corpus.

pub mod corpus;
pub mod d4;
pub mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use corpus::{generate_corpus, temporal_shift, Corpus, CorpusConfig, CorpusItem};
pub use d4::d4_descriptor;
pub use synth::{render_audio, SynthParams};

pub const N_DURATION_BUCKETS: usize = 32;
pub const DURATION_MIN_S: f64 = 0.05;
pub const DURATION_MAX_S: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoteEvent {
    pub pitch: u8,
    pub velocity: u8,
    pub duration_s: f64,
    pub onset_s: f64,
}

impl NoteEvent {
    pub fn validate(&self) -> Result<()> {
        if self.pitch > 127 || self.velocity > 127 {
            return Err(Error::Invalid(format!("pitch {} / velocity {} outside 0..=127", self.pitch, self.velocity)));
        }
        if !(self.duration_s > 0.0) || !(self.onset_s >= 0.0) {
            return Err(Error::Invalid(format!("duration {} must be > 0 and onset {} >= 0", self.duration_s, self.onset_s)));
        }
        Ok(())
    }

    /// Equal-tempered frequency, A4 = 440 Hz.
    pub fn frequency_hz(&self) -> f64 {
        440.0 * 2f64.powf((self.pitch as f64 - 69.0) / 12.0)
    }
}

/// Onset-ordered notes with a fixed capacity; slots past `events.len()` are padding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MidiSegment {
    pub events: Vec<NoteEvent>,
    pub max_notes: usize,
}

impl MidiSegment {
    pub fn new(mut events: Vec<NoteEvent>, max_notes: usize) -> Result<Self> {
        if events.len() > max_notes {
            return Err(Error::Invalid(format!("{} events exceed capacity {max_notes}", events.len())));
        }
        for e in &events {
            e.validate()?;
        }
        events.sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s).then(a.pitch.cmp(&b.pitch)));
        Ok(Self { events, max_notes })
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Validity flags over all `max_notes` slots.
    pub fn mask(&self) -> Vec<bool> {
        (0..self.max_notes).map(|i| i < self.events.len()).collect()
    }

    pub fn pitches(&self) -> Vec<u8> {
        self.events.iter().map(|e| e.pitch).collect()
    }
}

/// Index of the log-spaced duration bucket. The 32 edges run from 0.05 s
/// to 4 s; each bucket is `[edge_i, edge_{i+1})` and out-of-range values
/// clamp to the end buckets.
pub fn bucket_duration(duration_s: f64) -> usize {
    let last = (N_DURATION_BUCKETS - 1) as f64;
    let pos = last * (duration_s / DURATION_MIN_S).ln() / (DURATION_MAX_S / DURATION_MIN_S).ln();
    if pos.is_nan() || pos <= 0.0 {
        return 0;
    }
    // guard against 4.0 landing a hair under the last edge
    let pos = if (duration_s - DURATION_MAX_S).abs() < 1e-12 { last } else { pos };
    (pos.floor() as usize).min(N_DURATION_BUCKETS - 1)
}

pub fn duration_edges() -> Vec<f64> {
    let ratio = DURATION_MAX_S / DURATION_MIN_S;
    (0..N_DURATION_BUCKETS)
        .map(|i| DURATION_MIN_S * ratio.powf(i as f64 / (N_DURATION_BUCKETS - 1) as f64))
        .collect()
}

/// Shift every pitch by `semitones`, clamping into 0..=127.
pub fn transpose(segment: &MidiSegment, semitones: i32) -> Result<MidiSegment> {
    if semitones.abs() > 24 {
        return Err(Error::Invalid(format!("transposition {semitones} outside ±24")));
    }
    let mut out = segment.clone();
    for e in &mut out.events {
        e.pitch = (e.pitch as i32 + semitones).clamp(0, 127) as u8;
    }
    Ok(out)
}

/// `v' = clamp(round(v * factor), 0, 127)`.
pub fn scale_velocity(segment: &MidiSegment, factor: f64) -> Result<MidiSegment> {
    if !(factor > 0.0) {
        return Err(Error::Invalid(format!("velocity factor {factor} must be positive")));
    }
    let mut out = segment.clone();
    for e in &mut out.events {
        e.velocity = (e.velocity as f64 * factor).round().clamp(0.0, 127.0) as u8;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(pitches: &[u8]) -> MidiSegment {
        let ev = pitches
            .iter()
            .enumerate()
            .map(|(i, &p)| NoteEvent { pitch: p, velocity: 100, duration_s: 0.2, onset_s: i as f64 * 0.1 })
            .collect();
        MidiSegment::new(ev, 16).unwrap()
    }

    #[test]
    fn duration_bucket_examples() {
        assert_eq!(bucket_duration(0.05), 0);
        assert_eq!(bucket_duration(4.0), 31);
        assert_eq!(bucket_duration(0.447), 15);
        assert_eq!(bucket_duration(0.01), 0);
        assert_eq!(bucket_duration(30.0), 31);
        let edges = duration_edges();
        assert_eq!(edges.len(), 32);
        assert!((edges[31] - 4.0).abs() < 1e-12);
        for (i, e) in edges.iter().enumerate().take(31) {
            assert_eq!(bucket_duration(e * (1.0 + 1e-9)), i);
        }
    }

    #[test]
    fn transpose_examples() {
        let s = seg(&[60, 64, 67]);
        assert_eq!(transpose(&s, 0).unwrap(), s);
        assert_eq!(transpose(&s, 3).unwrap().pitches(), vec![63, 67, 70]);
        assert_eq!(transpose(&seg(&[126]), 6).unwrap().pitches(), vec![127]);
        assert!(transpose(&s, 25).is_err());
    }

    #[test]
    fn velocity_examples() {
        let mut s = seg(&[60, 62]);
        s.events[0].velocity = 100;
        s.events[1].velocity = 64;
        assert_eq!(scale_velocity(&s, 1.0).unwrap(), s);
        let half = scale_velocity(&s, 0.5).unwrap();
        assert_eq!(half.events[1].velocity, 32);
        assert_eq!(scale_velocity(&s, 1.5).unwrap().events[0].velocity, 127);
        assert_eq!(half.events[0].onset_s, s.events[0].onset_s);
    }

    #[test]
    fn capacity_and_mask() {
        let s = seg(&[60, 61, 62]);
        assert_eq!(s.mask().iter().filter(|m| **m).count(), 3);
        assert_eq!(s.mask().len(), 16);
        assert!(MidiSegment::new(seg(&[1, 2, 3]).events, 2).is_err());
    }
}
