//! Just-intonation ratio attractors (A7) and their IDF-weighted variant (A9).

use crate::error::Result;
use crate::signal::descriptor::{DescriptorKind, DescriptorTensor};
use crate::signal::stft::{stft_magnitude, Spectrogram};
use crate::signal::{AudioSegment, StftParams};

pub const N_ATTRACTORS: usize = 12;
pub const TOP_PEAKS: usize = 8;
pub const MIN_PEAK_HZ: f64 = 50.0;
/// Peaks weaker than this fraction of the frame's strongest peak are ignored;
/// it sits above the Hann sidelobe level (about -31 dB).
pub const PEAK_REL_FLOOR: f64 = 0.1;
pub const SIGMA: f64 = 0.02;
pub const NORM_EPS: f64 = 1e-10;
pub const IDF_TAU: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Attractor {
    pub num: u32,
    pub den: u32,
}

impl Attractor {
    pub fn ratio(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn log2(self) -> f64 {
        self.ratio().log2()
    }

    pub fn cents(self) -> f64 {
        1200.0 * self.log2()
    }
}

pub const ATTRACTORS: [Attractor; N_ATTRACTORS] = [
    Attractor { num: 1, den: 1 },
    Attractor { num: 16, den: 15 },
    Attractor { num: 9, den: 8 },
    Attractor { num: 6, den: 5 },
    Attractor { num: 5, den: 4 },
    Attractor { num: 4, den: 3 },
    Attractor { num: 7, den: 5 },
    Attractor { num: 3, den: 2 },
    Attractor { num: 8, den: 5 },
    Attractor { num: 5, den: 3 },
    Attractor { num: 7, den: 4 },
    Attractor { num: 15, den: 8 },
];

/// Spectral peaks of one frame as `(hz, magnitude)`, strongest first,
/// at most [`TOP_PEAKS`].
pub fn frame_peaks(frame: &[f64], bin_hz: f64) -> Vec<(f64, f64)> {
    let n = frame.len();
    let mut peaks: Vec<(usize, f64)> = (1..n.saturating_sub(1))
        .filter(|&k| k as f64 * bin_hz >= MIN_PEAK_HZ)
        .filter(|&k| frame[k] > 0.0 && frame[k] >= frame[k - 1] && frame[k] > frame[k + 1])
        .map(|k| (k, frame[k]))
        .collect();
    let top = peaks.iter().map(|p| p.1).fold(0.0, f64::max);
    peaks.retain(|p| p.1 >= PEAK_REL_FLOOR * top);
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    peaks.truncate(TOP_PEAKS);
    peaks.into_iter().map(|(k, m)| (k as f64 * bin_hz, m)).collect()
}

/// Unnormalized attractor activations of one frame; `None` with fewer than
/// two peaks.
pub fn frame_activations(frame: &[f64], bin_hz: f64) -> Option<[f64; N_ATTRACTORS]> {
    let mut peaks = frame_peaks(frame, bin_hz);
    if peaks.len() < 2 {
        return None;
    }
    peaks.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut acc = [0.0; N_ATTRACTORS];
    for i in 0..peaks.len() {
        for j in i + 1..peaks.len() {
            let r = (peaks[j].0 / peaks[i].0).log2().rem_euclid(1.0);
            let w = (peaks[i].1 * peaks[j].1).sqrt();
            for (c, a) in ATTRACTORS.iter().enumerate() {
                let d = r - a.log2();
                acc[c] += w * (-(d * d) / (2.0 * SIGMA * SIGMA)).exp();
            }
        }
    }
    Some(acc)
}

/// Raw activations for every frame (`None` marks frames with < 2 peaks).
pub fn raw_activations(spec: &Spectrogram) -> Vec<Option<[f64; N_ATTRACTORS]>> {
    (0..spec.frames).map(|t| frame_activations(spec.frame(t), spec.bin_hz())).collect()
}

pub fn a7_descriptor(audio: &AudioSegment, stft: StftParams) -> Result<DescriptorTensor> {
    let spec = stft_magnitude(&audio.samples, audio.sample_rate, stft.nfft, stft.hop)?;
    Ok(a7_from_spectrogram(&spec))
}

pub fn a7_from_spectrogram(spec: &Spectrogram) -> DescriptorTensor {
    let raw = raw_activations(spec);
    let mut out = DescriptorTensor::zeros(DescriptorKind::A7, spec.frames);
    for (t, row) in raw.iter().enumerate() {
        let dst = &mut out.values[t * N_ATTRACTORS..(t + 1) * N_ATTRACTORS];
        match row {
            Some(acc) => {
                let s: f64 = acc.iter().sum();
                for (d, a) in dst.iter_mut().zip(acc) {
                    *d = a / (s + NORM_EPS);
                }
            }
            None => {
                dst.fill(1.0 / N_ATTRACTORS as f64);
                out.degenerate.push(t);
            }
        }
    }
    out
}

/// `clamp(ln(1 / (df + 1e-3)), 0, 5)`.
pub fn idf(df: f64) -> f64 {
    (1.0 / (df + 1e-3)).ln().clamp(0.0, 5.0)
}

/// Document frequency of each attractor over frames (`raw > tau`).
pub fn document_frequency(raw: &[Option<[f64; N_ATTRACTORS]>]) -> [f64; N_ATTRACTORS] {
    let n = raw.len().max(1) as f64;
    std::array::from_fn(|c| raw.iter().filter(|r| r.is_some_and(|a| a[c] > IDF_TAU)).count() as f64 / n)
}

pub fn a9_descriptor(audio: &AudioSegment, stft: StftParams) -> Result<DescriptorTensor> {
    let spec = stft_magnitude(&audio.samples, audio.sample_rate, stft.nfft, stft.hop)?;
    Ok(a9_from_spectrogram(&spec))
}

pub fn a9_from_spectrogram(spec: &Spectrogram) -> DescriptorTensor {
    let raw = raw_activations(spec);
    let df = document_frequency(&raw);
    let weights: [f64; N_ATTRACTORS] = std::array::from_fn(|c| idf(df[c]));
    let mut out = DescriptorTensor::zeros(DescriptorKind::A9, spec.frames);
    for (t, row) in raw.iter().enumerate() {
        let dst = &mut out.values[t * N_ATTRACTORS..(t + 1) * N_ATTRACTORS];
        let weighted = row.map(|acc| -> [f64; N_ATTRACTORS] { std::array::from_fn(|c| acc[c] * weights[c]) });
        match weighted {
            Some(w) if w.iter().sum::<f64>() > 0.0 => {
                let s: f64 = w.iter().sum();
                for (d, v) in dst.iter_mut().zip(w) {
                    *d = v / s;
                }
            }
            _ => {
                dst.fill(1.0 / N_ATTRACTORS as f64);
                out.degenerate.push(t);
            }
        }
    }
    out
}
