//! Embedding response to small offsets on individual A4 bands.

use serde::{Deserialize, Serialize};

use super::cka::pearson_r;
use super::Evaluator;
use crate::error::{Error, Result};
use crate::model::Sample;
use crate::scalar::Scalar;
use crate::signal::{DescriptorKind, DescriptorTensor};

const BANDS: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandReport {
    pub eps: f64,
    /// Mean `‖Δ[z_audio; z_midi]‖₂` per band.
    pub deltas: Vec<f64>,
    /// Per band: max |Pearson r| between the sample's frame-mean band value
    /// and any embedding dimension (0 when nothing varies).
    pub max_abs_r: Vec<f64>,
}

fn joint(e: &crate::model::Embeddings) -> Vec<Vec<f64>> {
    e.audio.iter().zip(&e.midi).map(|(a, m)| a.iter().chain(m).copied().collect()).collect()
}

/// Add `eps` to one A4 band across every frame, one band at a time.
pub fn band_sensitivity<T: Scalar>(ev: &Evaluator<'_, T>, samples: &[Sample], eps: f64) -> Result<BandReport> {
    if !ev.model.config.uses_descriptor(DescriptorKind::A4) {
        return Err(Error::NotApplicable(format!("arm {} does not read A4", ev.model.config.arm)));
    }
    if !eps.is_finite() {
        return Err(Error::Invalid(format!("eps {eps} must be finite")));
    }
    let base = joint(&ev.embed(samples, false)?);
    let mut deltas = Vec::with_capacity(BANDS);
    let mut max_abs_r = Vec::with_capacity(BANDS);
    for b in 0..BANDS {
        let mut shifted = samples.to_vec();
        for s in &mut shifted {
            let d = s.descriptor(DescriptorKind::A4)?;
            let mut values = d.values.clone();
            values.iter_mut().skip(b).step_by(BANDS).for_each(|v| *v += eps);
            let t = DescriptorTensor::new(DescriptorKind::A4, d.frames, values)?;
            s.descriptors.insert(DescriptorKind::A4, t);
        }
        let moved = joint(&ev.embed(&shifted, false)?);
        let total: f64 = base
            .iter()
            .zip(&moved)
            .map(|(a, m)| a.iter().zip(m).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
            .sum();
        deltas.push(total / samples.len().max(1) as f64);

        let band: Vec<f64> = samples
            .iter()
            .map(|s| s.descriptor(DescriptorKind::A4).map(|d| d.column(b).iter().sum::<f64>() / d.frames.max(1) as f64))
            .collect::<Result<_>>()?;
        let dims = base.first().map_or(0, Vec::len);
        let r = (0..dims)
            .filter_map(|j| pearson_r(&band, &base.iter().map(|z| z[j]).collect::<Vec<_>>()))
            .fold(0.0f64, |m, r| m.max(r.abs()));
        max_abs_r.push(r);
    }
    Ok(BandReport { eps, deltas, max_abs_r })
}
