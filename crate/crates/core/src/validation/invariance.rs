//! Retrieval under MIDI transposition and matched-pair perturbations.

use serde::{Deserialize, Serialize};

use super::Evaluator;
use crate::error::{Error, Result};
use crate::midi::{scale_velocity, temporal_shift, transpose, CorpusItem};
use crate::rng::sub_seed;
use crate::scalar::Scalar;
use crate::signal::{add_noise_snr, Snr};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranspositionReport {
    pub ks: Vec<i32>,
    pub s: Vec<f64>,
    /// `mean(S(-3), S(+3)) / S(0)`, when both ±3 were swept.
    pub retention: Option<f64>,
}

fn map_items(items: &[CorpusItem], f: impl Fn(&CorpusItem) -> Result<CorpusItem> + Sync) -> Result<Vec<CorpusItem>> {
    crate::parallel_map(items, f)
}

/// S with every MIDI segment transposed by `k`; the audio is untouched.
pub fn transposition_sweep<T: Scalar>(ev: &Evaluator<'_, T>, ks: &[i32]) -> Result<TranspositionReport> {
    if !ks.contains(&0) {
        return Err(Error::Invalid("transposition sweep must include k = 0".into()));
    }
    let mut s = Vec::with_capacity(ks.len());
    for &k in ks {
        let items = map_items(&ev.items, |it| Ok(CorpusItem { midi: transpose(&it.midi, k)?, ..it.clone() }))?;
        s.push(ev.score(&ev.samples(&items)?)?.s);
    }
    let at = |k: i32| ks.iter().position(|&x| x == k).map(|i| s[i]);
    let retention = match (at(-3), at(3), at(0)) {
        (Some(a), Some(b), Some(z)) if z > 0.0 => Some((a + b) / 2.0 / z),
        _ => None,
    };
    Ok(TranspositionReport { ks: ks.to_vec(), s, retention })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvarianceRow {
    pub perturbation: String,
    pub level: f64,
    /// Worst S over the perturbation's directions.
    pub s: f64,
    pub delta_pp: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub clean_s: f64,
    pub rows: Vec<InvarianceRow>,
}

pub const SHIFT_FRACTION: f64 = 0.08;
pub const VELOCITY_FACTORS: [f64; 4] = [0.5, 0.8, 1.2, 1.5];
pub const OCTAVE: i32 = 12;
pub const SNR_DB: [f64; 5] = [40.0, 30.0, 20.0, 10.0, 5.0];

/// Temporal shift (±8% of the segment), velocity scaling, octave transposition
/// and additive audio noise, each reported at its worst direction.
pub fn invariance_suite<T: Scalar>(ev: &Evaluator<'_, T>, seed: u64) -> Result<InvarianceReport> {
    let score = |items: &[CorpusItem]| -> Result<f64> { Ok(ev.score(&ev.samples(items)?)?.s) };
    let clean_s = score(&ev.items)?;
    let mut rows = Vec::new();
    let mut push = |name: &str, level: f64, s: f64| {
        rows.push(InvarianceRow { perturbation: name.into(), level, s, delta_pp: 100.0 * (s - clean_s) })
    };

    let shift = (SHIFT_FRACTION * ev.model.config.segment_samples as f64).round() as isize;
    let mut worst = f64::INFINITY;
    for dir in [-1, 1] {
        worst = worst.min(score(&map_items(&ev.items, |it| temporal_shift(it, dir * shift))?)?);
    }
    push("temporal_shift", shift as f64, worst);

    for f in VELOCITY_FACTORS {
        push("velocity_scale", f, score(&map_items(&ev.items, |it| {
            Ok(CorpusItem { midi: scale_velocity(&it.midi, f)?, ..it.clone() })
        })?)?);
    }

    let mut worst = f64::INFINITY;
    for k in [-OCTAVE, OCTAVE] {
        worst = worst.min(score(&map_items(&ev.items, |it| {
            Ok(CorpusItem { midi: transpose(&it.midi, k)?, ..it.clone() })
        })?)?);
    }
    push("octave", OCTAVE as f64, worst);

    for db in SNR_DB {
        let base = sub_seed(seed, &format!("invariance/noise/{db}"));
        let noisy: Vec<CorpusItem> = ev
            .items
            .iter()
            .enumerate()
            .map(|(i, it)| {
                let audio = add_noise_snr(&it.audio, Snr::Db(db), sub_seed(base, &i.to_string()))?;
                Ok(CorpusItem { audio, ..it.clone() })
            })
            .collect::<Result<_>>()?;
        push("noise_snr_db", db, score(&noisy)?);
    }
    Ok(InvarianceReport { clean_s, rows })
}
