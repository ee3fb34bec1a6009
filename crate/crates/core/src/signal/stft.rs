use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// STFT magnitudes, `frames x bins` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub mags: Vec<f64>,
    pub frames: usize,
    pub bins: usize,
    pub nfft: usize,
    pub hop: usize,
    pub sample_rate: u32,
}

impl Spectrogram {
    pub fn frame(&self, t: usize) -> &[f64] {
        &self.mags[t * self.bins..(t + 1) * self.bins]
    }

    pub fn at(&self, t: usize, k: usize) -> f64 {
        self.mags[t * self.bins + k]
    }

    /// Hz per bin.
    pub fn bin_hz(&self) -> f64 {
        self.sample_rate as f64 / self.nfft as f64
    }
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// Reflect-pad by `pad` on both sides (edge sample not repeated).
pub fn reflect_pad(x: &[f64], pad: usize) -> Result<Vec<f64>> {
    if pad >= x.len() {
        return Err(Error::Invalid(format!("reflect padding {pad} needs more than {} samples", x.len())));
    }
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((1..=pad).rev().map(|i| x[i]));
    out.extend_from_slice(x);
    out.extend((0..pad).map(|i| x[n - 2 - i]));
    Ok(out)
}

/// Centered STFT magnitude: Hann window, reflect padding of `nfft / 2`,
/// `len / hop + 1` frames.
pub fn stft_magnitude(samples: &[f64], sample_rate: u32, nfft: usize, hop: usize) -> Result<Spectrogram> {
    if samples.is_empty() {
        return Err(Error::Invalid("empty audio".into()));
    }
    if !nfft.is_power_of_two() || hop == 0 {
        return Err(Error::Invalid(format!("nfft {nfft} must be a power of two and hop {hop} positive")));
    }
    let pad = nfft / 2;
    if samples.len() <= pad {
        return Err(Error::Invalid(format!("nfft {nfft} exceeds padded length of {} samples", samples.len())));
    }
    let padded = reflect_pad(samples, pad)?;
    let frames = (padded.len() - nfft) / hop + 1;
    let bins = nfft / 2 + 1;
    let window = hann(nfft);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(nfft);
    let mut buf = vec![Complex::new(0.0, 0.0); nfft];
    let mut mags = Vec::with_capacity(frames * bins);
    for t in 0..frames {
        let seg = &padded[t * hop..t * hop + nfft];
        for ((b, &s), &w) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex::new(s * w, 0.0);
        }
        fft.process(&mut buf);
        mags.extend(buf[..bins].iter().map(|c| c.norm()));
    }
    Ok(Spectrogram { mags, frames, bins, nfft, hop, sample_rate })
}
