use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::midi::MidiSegment;
use crate::signal::AudioSegment;

pub const PEAK_LEVEL: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthParams {
    pub n_harmonics: usize,
    /// Harmonic `h` has relative amplitude `h^-rolloff`.
    pub rolloff: f64,
    /// Envelope `exp(-decay * t)`, `t` seconds since onset.
    pub decay: f64,
    /// Note amplitude `(v / 127)^velocity_exponent`.
    pub velocity_exponent: f64,
    /// Linear attack ramp, seconds.
    pub attack_s: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self { n_harmonics: 4, rolloff: 1.0, decay: 3.0, velocity_exponent: 1.2, attack_s: 0.005 }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_harmonics == 0 {
            return Err(Error::Config("n_harmonics must be at least 1".into()));
        }
        if !(self.decay >= 0.0 && self.rolloff >= 0.0 && self.velocity_exponent > 0.0 && self.attack_s >= 0.0) {
            return Err(Error::Config(format!("invalid synth parameters {self:?}")));
        }
        Ok(())
    }
}

/// Sum of per-note additive tones, before peak normalization. Harmonics at
/// or above Nyquist are skipped; notes are cut at their offset.
pub fn render_unnormalized(segment: &MidiSegment, synth: &SynthParams, sample_rate: u32, n_samples: usize) -> Vec<f64> {
    let sr = sample_rate as f64;
    let mut out = vec![0.0; n_samples];
    for e in &segment.events {
        let amp = (e.velocity as f64 / 127.0).powf(synth.velocity_exponent);
        let f0 = e.frequency_hz();
        let start = (e.onset_s * sr).round() as usize;
        let end = (((e.onset_s + e.duration_s) * sr).round() as usize).min(n_samples);
        for h in 1..=synth.n_harmonics {
            let f = f0 * h as f64;
            if f >= sr / 2.0 {
                break;
            }
            let ha = amp * (h as f64).powf(-synth.rolloff);
            for (i, o) in out.iter_mut().enumerate().take(end).skip(start) {
                let t = (i - start) as f64 / sr;
                let attack = if synth.attack_s > 0.0 { (t / synth.attack_s).min(1.0) } else { 1.0 };
                *o += ha * attack * (-synth.decay * t).exp() * (2.0 * PI * f * t).sin();
            }
        }
    }
    out
}

/// Render a segment to audio peak-normalized to 0.9. An empty segment
/// renders silence.
pub fn render_audio(segment: &MidiSegment, synth: &SynthParams, sample_rate: u32, duration_s: f64) -> Result<AudioSegment> {
    synth.validate()?;
    if let Some(e) = segment.events.iter().find(|e| e.onset_s >= duration_s) {
        return Err(Error::Invalid(format!("onset {} not before duration {duration_s}", e.onset_s)));
    }
    let n = (duration_s * sample_rate as f64).round() as usize;
    let mut samples = render_unnormalized(segment, synth, sample_rate, n);
    let peak = samples.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if peak > 0.0 {
        let g = PEAK_LEVEL / peak;
        samples.iter_mut().for_each(|x| *x *= g);
    }
    Ok(AudioSegment::new(samples, sample_rate))
}
