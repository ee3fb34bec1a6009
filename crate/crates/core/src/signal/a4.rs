use crate::error::Result;
use crate::signal::bands::band_table;
use crate::signal::descriptor::{DescriptorKind, DescriptorTensor};
use crate::signal::stft::{stft_magnitude, Spectrogram};
use crate::signal::{AudioSegment, StftParams};

/// Added to the band standard deviation before dividing.
pub const A4_EPS: f64 = 1e-5;
/// Bands whose delta standard deviation falls below this are flagged.
pub const NEAR_ZERO_STD: f64 = 1e-2;
/// Bands whose median |delta| falls below this are flagged: a stationary
/// band moves only in the padded edge frames.
pub const NEAR_ZERO_MEDIAN: f64 = 1e-4;
/// Bands at or below this are treated as constant and emit zeros.
pub const CONSTANT_STD: f64 = 1e-9;

/// Octave-band energy dynamics: log1p magnitude, per-band mean, temporal
/// first difference (last frame zero-padded), per-band z-score.
pub fn a4_descriptor(audio: &AudioSegment, stft: StftParams) -> Result<DescriptorTensor> {
    let spec = stft_magnitude(&audio.samples, audio.sample_rate, stft.nfft, stft.hop)?;
    Ok(a4_from_spectrogram(&spec))
}

/// Band means of `log1p |X|`, `frames x 8`; empty bands are zero.
pub fn band_log_means(spec: &Spectrogram) -> Vec<[f64; 8]> {
    let bands = band_table(spec.sample_rate, spec.nfft);
    (0..spec.frames)
        .map(|t| {
            let frame = spec.frame(t);
            std::array::from_fn(|b| {
                let band = bands[b];
                if band.is_empty() {
                    return 0.0;
                }
                let s: f64 = frame[band.bin_lo..band.bin_hi].iter().map(|m| m.ln_1p()).sum();
                s / (band.bin_hi - band.bin_lo) as f64
            })
        })
        .collect()
}

pub fn a4_from_spectrogram(spec: &Spectrogram) -> DescriptorTensor {
    let means = band_log_means(spec);
    let frames = spec.frames;
    let mut out = DescriptorTensor::zeros(DescriptorKind::A4, frames);
    for b in 0..8 {
        let mut delta: Vec<f64> = (0..frames.saturating_sub(1)).map(|t| means[t + 1][b] - means[t][b]).collect();
        delta.push(0.0);
        let n = frames as f64;
        let mu = delta.iter().sum::<f64>() / n;
        let sigma = (delta.iter().map(|d| (d - mu).powi(2)).sum::<f64>() / n).sqrt();
        let mut abs: Vec<f64> = delta.iter().map(|d| d.abs()).collect();
        abs.sort_by(f64::total_cmp);
        if sigma < NEAR_ZERO_STD || abs[abs.len() / 2] < NEAR_ZERO_MEDIAN {
            out.degenerate.push(b);
        }
        if sigma <= CONSTANT_STD {
            continue;
        }
        for (t, d) in delta.iter().enumerate() {
            out.values[t * 8 + b] = (d - mu) / (sigma + A4_EPS);
        }
    }
    out
}
