//! Descriptor replacement shared by causal ablations and matched controls.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::Sample;
use crate::rng::{normal, permutation, sub_rng};
use crate::signal::{DescriptorKind, DescriptorTensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    /// All-zero descriptor.
    Zero,
    /// Gaussian noise with the per-dimension mean and std of the sample set.
    Noise,
    /// Descriptors permuted across the sample set.
    Shuffle,
}

impl Perturbation {
    pub const ALL: [Perturbation; 3] = [Perturbation::Zero, Perturbation::Noise, Perturbation::Shuffle];

    pub fn name(self) -> &'static str {
        match self {
            Perturbation::Zero => "zero",
            Perturbation::Noise => "noise",
            Perturbation::Shuffle => "shuffle",
        }
    }
}

/// Per-dimension mean and population std over every frame of every sample.
fn column_stats(samples: &[Sample], kind: DescriptorKind) -> Result<(Vec<f64>, Vec<f64>)> {
    let k = kind.dims();
    let (mut sum, mut sq, mut n) = (vec![0.0; k], vec![0.0; k], 0usize);
    for s in samples {
        let d = s.descriptor(kind)?;
        for t in 0..d.frames {
            for (c, &v) in d.row(t).iter().enumerate() {
                sum[c] += v;
                sq[c] += v * v;
            }
        }
        n += d.frames;
    }
    let n = n.max(1) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std = sq.iter().zip(&mean).map(|(q, m)| (q / n - m * m).max(0.0).sqrt()).collect();
    Ok((mean, std))
}

/// `src` re-timed to `frames` rows by cycling its frames.
fn cycle_frames(src: &DescriptorTensor, frames: usize) -> Result<DescriptorTensor> {
    if src.frames == frames {
        return Ok(src.clone());
    }
    let k = src.dims();
    let mut values = Vec::with_capacity(frames * k);
    for t in 0..frames {
        values.extend_from_slice(src.row(t % src.frames.max(1)));
    }
    DescriptorTensor::new(src.kind, frames, values)
}

/// Replace descriptor `kind` in every sample. Frame counts are preserved;
/// shuffled MIDI descriptors are re-timed to the receiving sample's notes.
pub fn perturb_descriptors(samples: &mut [Sample], kind: DescriptorKind, mode: Perturbation, seed: u64) -> Result<()> {
    match mode {
        Perturbation::Zero => {
            for s in samples.iter_mut() {
                let frames = s.descriptor(kind)?.frames;
                s.descriptors.insert(kind, DescriptorTensor::zeros(kind, frames));
            }
        }
        Perturbation::Noise => {
            let (mean, std) = column_stats(samples, kind)?;
            let mut rng = sub_rng(seed, &format!("perturb/noise/{}", kind.name()));
            for s in samples.iter_mut() {
                let frames = s.descriptor(kind)?.frames;
                let values = (0..frames * kind.dims())
                    .map(|i| mean[i % mean.len()] + std[i % std.len()] * normal(&mut rng))
                    .collect();
                s.descriptors.insert(kind, DescriptorTensor::new(kind, frames, values)?);
            }
        }
        Perturbation::Shuffle => {
            let mut rng = sub_rng(seed, &format!("perturb/shuffle/{}", kind.name()));
            let order = permutation(&mut rng, samples.len());
            let originals = samples.iter().map(|s| s.descriptor(kind).cloned()).collect::<Result<Vec<_>>>()?;
            for (s, &j) in samples.iter_mut().zip(&order) {
                let frames = s.descriptor(kind)?.frames;
                s.descriptors.insert(kind, cycle_frames(&originals[j], frames)?);
            }
        }
    }
    Ok(())
}
