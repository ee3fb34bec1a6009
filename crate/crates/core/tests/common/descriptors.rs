//! Brute-force descriptor re-derivations: a direct DFT instead of the FFT,
//! and every pipeline step written out longhand.

use std::f64::consts::PI;

use xmodal_core::midi::{render_audio, MidiSegment, NoteEvent, SynthParams};
use xmodal_core::rng::{below, normal, rng_from_seed, uniform, XRng};
use xmodal_core::signal::attractor::ATTRACTORS;
use xmodal_core::signal::{AudioSegment, StftParams};

pub const SR: u32 = 4000;
pub const TOY: StftParams = StftParams::TOY;
pub const FIXTURES: u64 = 12;
pub const TOL: f64 = 1e-5;

/// Frames x bins magnitudes by direct summation.
pub fn dft_stft(x: &[f64], nfft: usize, hop: usize) -> Vec<Vec<f64>> {
    let pad = nfft / 2;
    let n = x.len() as isize;
    let reflect = |i: isize| -> f64 {
        let j = if i < 0 { -i } else if i >= n { 2 * (n - 1) - i } else { i };
        x[j as usize]
    };
    let frames = x.len() / hop + 1;
    (0..frames)
        .map(|t| {
            let start = (t * hop) as isize - pad as isize;
            (0..=nfft / 2)
                .map(|k| {
                    let (mut re, mut im) = (0.0, 0.0);
                    for m in 0..nfft {
                        let w = 0.5 - 0.5 * (2.0 * PI * m as f64 / nfft as f64).cos();
                        let v = w * reflect(start + m as isize);
                        let ang = -2.0 * PI * (k * m) as f64 / nfft as f64;
                        re += v * ang.cos();
                        im += v * ang.sin();
                    }
                    (re * re + im * im).sqrt()
                })
                .collect()
        })
        .collect()
}

pub fn oracle_a4(mags: &[Vec<f64>], sr: u32, nfft: usize) -> Vec<Vec<f64>> {
    let df = sr as f64 / nfft as f64;
    let n_bins = nfft / 2 + 1;
    let edges = [47.0, 94.0, 188.0, 375.0, 750.0, 1500.0, 3000.0, 6000.0, 12000.0];
    let t_len = mags.len();
    let mut out = vec![vec![0.0; 8]; t_len];
    for b in 0..8 {
        let lo = ((edges[b] / df).round() as usize).min(n_bins);
        let hi = if edges[b + 1] >= sr as f64 / 2.0 { n_bins } else { ((edges[b + 1] / df).round() as usize).min(n_bins) };
        if hi <= lo {
            continue;
        }
        let mean: Vec<f64> =
            mags.iter().map(|f| f[lo..hi].iter().map(|m| (1.0 + m).ln()).sum::<f64>() / (hi - lo) as f64).collect();
        let mut delta = vec![0.0; t_len];
        for t in 0..t_len - 1 {
            delta[t] = mean[t + 1] - mean[t];
        }
        let mu = delta.iter().sum::<f64>() / t_len as f64;
        let var = delta.iter().map(|d| (d - mu) * (d - mu)).sum::<f64>() / t_len as f64;
        let sd = var.sqrt();
        if sd <= 1e-9 {
            continue;
        }
        for t in 0..t_len {
            out[t][b] = (delta[t] - mu) / (sd + 1e-5);
        }
    }
    out
}

/// Raw attractor sums per frame; `None` with fewer than two peaks.
pub fn oracle_raw_a7(mags: &[Vec<f64>], df: f64) -> Vec<Option<Vec<f64>>> {
    mags.iter()
        .map(|f| {
            let mut peaks = Vec::new();
            for k in 1..f.len() - 1 {
                if k as f64 * df >= 50.0 && f[k] > 0.0 && f[k] >= f[k - 1] && f[k] > f[k + 1] {
                    peaks.push((k, f[k]));
                }
            }
            let top = peaks.iter().map(|p| p.1).fold(0.0, f64::max);
            peaks.retain(|p| p.1 >= 0.1 * top);
            peaks.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            peaks.truncate(8);
            if peaks.len() < 2 {
                return None;
            }
            let mut acc = vec![0.0; 12];
            for i in 0..peaks.len() {
                for j in 0..peaks.len() {
                    let (lo, hi) = if peaks[i].0 < peaks[j].0 { (peaks[i], peaks[j]) } else { continue };
                    let mut r = ((hi.0 as f64) / (lo.0 as f64)).log2();
                    while r >= 1.0 {
                        r -= 1.0;
                    }
                    let w = (lo.1 * hi.1).sqrt();
                    for c in 0..12 {
                        let mu = (ATTRACTORS[c].num as f64 / ATTRACTORS[c].den as f64).log2();
                        acc[c] += w * (-(r - mu).powi(2) / (2.0 * 0.02 * 0.02)).exp();
                    }
                }
            }
            Some(acc)
        })
        .collect()
}

pub fn oracle_a7(mags: &[Vec<f64>], df: f64) -> Vec<Vec<f64>> {
    oracle_raw_a7(mags, df)
        .into_iter()
        .map(|r| match r {
            Some(acc) => {
                let s: f64 = acc.iter().sum();
                acc.iter().map(|a| a / (s + 1e-10)).collect()
            }
            None => vec![1.0 / 12.0; 12],
        })
        .collect()
}

pub fn oracle_a9(mags: &[Vec<f64>], df: f64) -> Vec<Vec<f64>> {
    let raw = oracle_raw_a7(mags, df);
    let t_len = raw.len() as f64;
    let idf: Vec<f64> = (0..12)
        .map(|c| {
            let dfreq = raw.iter().filter(|r| matches!(r, Some(a) if a[c] > 0.05)).count() as f64 / t_len;
            (1.0 / (dfreq + 1e-3)).ln().max(0.0).min(5.0)
        })
        .collect();
    raw.into_iter()
        .map(|r| {
            let w: Vec<f64> = match r {
                Some(acc) => (0..12).map(|c| acc[c] * idf[c]).collect(),
                None => vec![0.0; 12],
            };
            let s: f64 = w.iter().sum();
            if s > 0.0 {
                w.iter().map(|v| v / s).collect()
            } else {
                vec![1.0 / 12.0; 12]
            }
        })
        .collect()
}

pub fn oracle_chroma_energy(mags: &[Vec<f64>], df: f64) -> Vec<Vec<f64>> {
    mags.iter()
        .map(|f| {
            let mut c = vec![0.0; 12];
            for (k, m) in f.iter().enumerate().skip(1) {
                let semis = (12.0 * ((k as f64 * df) / 32.7).log2()).floor() as i64;
                c[(((semis % 12) + 12) % 12) as usize] += m * m;
            }
            c
        })
        .collect()
}

pub fn normalized(rows: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    rows.into_iter()
        .map(|r| {
            let s: f64 = r.iter().sum();
            r.iter().map(|v| v / (s + 1e-8)).collect()
        })
        .collect()
}

pub fn oracle_a8(mags: &[Vec<f64>], df: f64) -> Vec<Vec<f64>> {
    let energy = oracle_chroma_energy(mags, df);
    let mut flux = vec![0.0; mags.len()];
    for t in 1..mags.len() {
        flux[t] = mags[t].iter().zip(&mags[t - 1]).map(|(a, b)| (a - b).max(0.0)).sum();
    }
    let max = flux.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return vec![vec![0.0; 12]; mags.len()];
    }
    normalized(energy.into_iter().zip(&flux).map(|(c, f)| c.iter().map(|v| v * f / max).collect()).collect())
}

pub fn oracle_d4(p: &[u8]) -> Vec<Vec<f64>> {
    let n = p.len();
    (0..n)
        .map(|i| {
            let a = if i == 0 { 0.0 } else { p[i] as f64 - p[i - 1] as f64 };
            let b = if i == n - 1 { 0.0 } else { p[i + 1] as f64 - p[i] as f64 };
            let clamp = |x: f64| if x > 2.0 { 2.0 } else if x < -2.0 { -2.0 } else { x };
            vec![a / 24.0, b / 24.0, clamp(a / 12.0) / 2.0, clamp(b / 12.0) / 2.0]
        })
        .collect()
}

pub fn random_notes(rng: &mut XRng, n: usize) -> Vec<NoteEvent> {
    (0..n)
        .map(|_| NoteEvent {
            pitch: 40 + below(rng, 45) as u8,
            velocity: 30 + below(rng, 97) as u8,
            duration_s: 0.05 + 0.4 * uniform(rng),
            onset_s: 0.45 * uniform(rng),
        })
        .collect()
}

pub fn fixture(seed: u64) -> AudioSegment {
    let rng = &mut rng_from_seed(seed);
    let n = 1 + below(rng, 8);
    let seg = MidiSegment::new(random_notes(rng, n), 16).unwrap();
    let mut a = render_audio(&seg, &SynthParams::default(), SR, 0.5).unwrap();
    for x in &mut a.samples {
        *x += 1e-3 * normal(rng);
    }
    a
}

pub fn assert_close(name: &str, seed: u64, got: &[f64], want: &[Vec<f64>]) {
    let flat: Vec<f64> = want.iter().flatten().copied().collect();
    assert_eq!(got.len(), flat.len(), "{name} seed {seed}: length");
    for (i, (g, w)) in got.iter().zip(&flat).enumerate() {
        assert!((g - w).abs() < TOL, "{name} seed {seed} entry {i}: {g} vs {w}");
    }
}

pub fn sine(freq: f64, sr: u32, n: usize) -> Vec<f64> {
    (0..n).map(|i| (2.0 * PI * freq * i as f64 / sr as f64).sin()).collect()
}

// ---- tests ---------------------------------------------------------------

/// Largest elementwise gap between a flat result and oracle rows; infinite on a length mismatch.
pub fn max_abs_diff(got: &[f64], want: &[Vec<f64>]) -> f64 {
    let flat: Vec<f64> = want.iter().flatten().copied().collect();
    if got.len() != flat.len() {
        return f64::INFINITY;
    }
    got.iter().zip(&flat).map(|(g, w)| (g - w).abs()).fold(0.0, f64::max)
}
