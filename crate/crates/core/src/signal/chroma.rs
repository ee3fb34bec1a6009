//! Pitch-class energy (chroma) and its onset-gated variant (A8).

use crate::error::Result;
use crate::signal::descriptor::{DescriptorKind, DescriptorTensor};
use crate::signal::stft::{stft_magnitude, Spectrogram};
use crate::signal::{AudioSegment, StftParams};

/// C1 reference.
pub const F_REF_HZ: f64 = 32.7;
pub const CHROMA_EPS: f64 = 1e-8;
/// Gated rows with less total mass are flagged in A8; below it the epsilon
/// visibly biases the row sum.
pub const MIN_GATED_MASS: f64 = 1e-2;

/// `floor(12 log2(f_k / f_ref)) mod 12`; `None` for the DC bin.
pub fn pitch_class_of_bin(k: usize, bin_hz: f64) -> Option<usize> {
    if k == 0 {
        return None;
    }
    let semis = (12.0 * (k as f64 * bin_hz / F_REF_HZ).log2()).floor() as i64;
    Some(semis.rem_euclid(12) as usize)
}

/// Per-frame pitch-class energy `sum |X|^2`, unnormalized.
pub fn chroma_energy(spec: &Spectrogram) -> Vec<[f64; 12]> {
    let pcs: Vec<Option<usize>> = (0..spec.bins).map(|k| pitch_class_of_bin(k, spec.bin_hz())).collect();
    (0..spec.frames)
        .map(|t| {
            let mut c = [0.0; 12];
            for (k, &m) in spec.frame(t).iter().enumerate() {
                if let Some(pc) = pcs[k] {
                    c[pc] += m * m;
                }
            }
            c
        })
        .collect()
}

/// Half-wave rectified spectral flux; the first frame has none.
pub fn spectral_flux(spec: &Spectrogram) -> Vec<f64> {
    (0..spec.frames)
        .map(|t| {
            if t == 0 {
                return 0.0;
            }
            spec.frame(t).iter().zip(spec.frame(t - 1)).map(|(a, b)| (a - b).max(0.0)).sum()
        })
        .collect()
}

fn normalize_rows(rows: &[[f64; 12]]) -> Vec<f64> {
    rows.iter()
        .flat_map(|r| {
            let s: f64 = r.iter().sum();
            r.map(|v| v / (s + CHROMA_EPS))
        })
        .collect()
}

/// Frame-normalized chroma, `frames x 12` row-major.
pub fn chroma(audio: &AudioSegment, stft: StftParams) -> Result<Vec<f64>> {
    let spec = stft_magnitude(&audio.samples, audio.sample_rate, stft.nfft, stft.hop)?;
    Ok(chroma_from_spectrogram(&spec))
}

pub fn chroma_from_spectrogram(spec: &Spectrogram) -> Vec<f64> {
    normalize_rows(&chroma_energy(spec))
}

pub fn a8_descriptor(audio: &AudioSegment, stft: StftParams) -> Result<DescriptorTensor> {
    let spec = stft_magnitude(&audio.samples, audio.sample_rate, stft.nfft, stft.hop)?;
    Ok(a8_from_spectrogram(&spec))
}

/// Chroma energy scaled by `F[t] / max(F)`, before per-frame normalization.
/// Returns the gated rows and the raw flux.
pub fn onset_gated_chroma(spec: &Spectrogram) -> (Vec<[f64; 12]>, Vec<f64>) {
    let energy = chroma_energy(spec);
    let flux = spectral_flux(spec);
    let max_flux = flux.iter().copied().fold(0.0, f64::max);
    let gated = if max_flux > 0.0 {
        energy.iter().zip(&flux).map(|(c, &f)| c.map(|v| v * f / max_flux)).collect()
    } else {
        vec![[0.0; 12]; spec.frames]
    };
    (gated, flux)
}

/// Onset-gated chroma, normalized per frame. Frames without flux or with
/// negligible gated mass are flagged.
pub fn a8_from_spectrogram(spec: &Spectrogram) -> DescriptorTensor {
    let (gated, flux) = onset_gated_chroma(spec);
    let mut out = DescriptorTensor::zeros(DescriptorKind::A8, spec.frames);
    out.values = normalize_rows(&gated);
    out.degenerate =
        (0..spec.frames).filter(|&t| flux[t] <= 0.0 || gated[t].iter().sum::<f64>() < MIN_GATED_MASS).collect();
    out
}
