use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::rng::{normal, rng_from_seed};

/// Mono audio.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioSegment {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AudioSidecar {
    pub sample_rate: u32,
    pub length: usize,
}

impl AudioSegment {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self { samples, sample_rate }
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self { samples: vec![0.0; len], sample_rate }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|x| x * x).sum::<f64>() / self.samples.len() as f64
    }

    /// Shift content by `shift` samples (positive delays), zero-filling the
    /// exposed edge. Length is preserved.
    pub fn shifted(&self, shift: isize) -> Self {
        let n = self.samples.len() as isize;
        let samples = (0..n)
            .map(|i| {
                let src = i - shift;
                if (0..n).contains(&src) {
                    self.samples[src as usize]
                } else {
                    0.0
                }
            })
            .collect();
        Self { samples, sample_rate: self.sample_rate }
    }

    /// Samples as little-endian `f32` bytes.
    pub fn to_pcm_bytes(&self) -> Vec<u8> {
        self.samples.iter().flat_map(|&x| (x as f32).to_le_bytes()).collect()
    }

    pub fn from_pcm_bytes(bytes: &[u8], sample_rate: u32) -> Result<Self> {
        if !bytes.len().is_multiple_of(4) {
            return Err(Error::Format(format!("PCM payload of {} bytes is not f32-aligned", bytes.len())));
        }
        let samples = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
        Ok(Self { samples, sample_rate })
    }

    /// Write `<path>` (raw f32 PCM) and `<path>.json` (sidecar).
    pub fn write_fixture(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_pcm_bytes()).map_err(io_err(path))?;
        let side = sidecar_path(path);
        let meta = AudioSidecar { sample_rate: self.sample_rate, length: self.samples.len() };
        std::fs::write(&side, serde_json::to_vec_pretty(&meta)?).map_err(io_err(&side))
    }

    pub fn read_fixture(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let side = sidecar_path(path);
        let meta: AudioSidecar = serde_json::from_slice(&std::fs::read(&side).map_err(io_err(&side))?)?;
        let audio = Self::from_pcm_bytes(&std::fs::read(path).map_err(io_err(path))?, meta.sample_rate)?;
        if audio.len() != meta.length {
            return Err(Error::Format(format!("sidecar says {} samples, payload has {}", meta.length, audio.len())));
        }
        Ok(audio)
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Signal-to-noise ratio requested from [`add_noise_snr`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Snr {
    Clean,
    Db(f64),
}

/// Add white Gaussian noise whose power sits exactly `snr_db` below the
/// signal power. Deterministic under `seed`.
pub fn add_noise_snr(audio: &AudioSegment, snr: Snr, seed: u64) -> Result<AudioSegment> {
    let Snr::Db(snr_db) = snr else {
        return Ok(audio.clone());
    };
    let ps = audio.power();
    if ps <= 0.0 {
        return Err(Error::Invalid("cannot set an SNR on silent audio".into()));
    }
    let target = ps / 10f64.powf(snr_db / 10.0);
    let mut rng = rng_from_seed(seed);
    let noise: Vec<f64> = (0..audio.len()).map(|_| normal(&mut rng)).collect();
    let pn = noise.iter().map(|x| x * x).sum::<f64>() / noise.len() as f64;
    let k = (target / pn).sqrt();
    let samples = audio.samples.iter().zip(&noise).map(|(&s, &n)| s + k * n).collect();
    Ok(AudioSegment { samples, sample_rate: audio.sample_rate })
}
