//! Ridge-regression probes decoding musical features from frozen embeddings.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::midi::CorpusItem;
use crate::rng::{permutation, sub_rng};
use crate::signal::{chroma, StftParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeTarget {
    PitchHistogram,
    IntervalHistogram,
    Chroma,
    Centroid,
}

impl ProbeTarget {
    pub const ALL: [ProbeTarget; 4] =
        [ProbeTarget::PitchHistogram, ProbeTarget::IntervalHistogram, ProbeTarget::Chroma, ProbeTarget::Centroid];

    pub fn dims(self) -> usize {
        match self {
            ProbeTarget::PitchHistogram => 128,
            ProbeTarget::IntervalHistogram => 25,
            ProbeTarget::Chroma => 12,
            ProbeTarget::Centroid => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ProbeTarget::PitchHistogram => "pitch_histogram",
            ProbeTarget::IntervalHistogram => "interval_histogram",
            ProbeTarget::Chroma => "chroma",
            ProbeTarget::Centroid => "centroid",
        }
    }
}

fn normalized(mut h: Vec<f64>) -> Vec<f64> {
    let total: f64 = h.iter().sum();
    if total > 0.0 {
        h.iter_mut().for_each(|v| *v /= total);
    }
    h
}

/// Target vector of one item. Intervals between consecutive notes are
/// clamped into [-12, 12]; chroma is averaged over STFT frames.
pub fn probe_target(item: &CorpusItem, target: ProbeTarget, stft: StftParams) -> Result<Vec<f64>> {
    let pitches = item.midi.pitches();
    Ok(match target {
        ProbeTarget::PitchHistogram => {
            let mut h = vec![0.0; 128];
            pitches.iter().for_each(|&p| h[p as usize] += 1.0);
            normalized(h)
        }
        ProbeTarget::IntervalHistogram => {
            let mut h = vec![0.0; 25];
            for w in pitches.windows(2) {
                let d = (w[1] as i32 - w[0] as i32).clamp(-12, 12);
                h[(d + 12) as usize] += 1.0;
            }
            normalized(h)
        }
        ProbeTarget::Chroma => {
            let c = chroma(&item.audio, stft)?;
            let frames = c.len() / 12;
            let mut m = vec![0.0; 12];
            for row in c.chunks_exact(12) {
                m.iter_mut().zip(row).for_each(|(a, b)| *a += b);
            }
            m.iter_mut().for_each(|v| *v /= frames.max(1) as f64);
            m
        }
        ProbeTarget::Centroid => {
            let mean = if pitches.is_empty() {
                0.0
            } else {
                pitches.iter().map(|&p| p as f64).sum::<f64>() / pitches.len() as f64
            };
            vec![mean / 127.0]
        }
    })
}

pub fn probe_targets(items: &[CorpusItem], target: ProbeTarget, stft: StftParams) -> Result<Vec<Vec<f64>>> {
    crate::parallel_map(items, |it| probe_target(it, target, stft))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    /// Held-out R² averaged over the scored target dims.
    pub r2: f64,
    pub train_r2: f64,
    pub lambda: f64,
    pub n_train: usize,
    pub n_test: usize,
    /// Target dims with zero variance on either split, left out of both averages.
    pub excluded_dims: Vec<usize>,
}

fn matrix(rows: &[&Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
}

fn r2_per_dim(y: &DMatrix<f64>, pred: &DMatrix<f64>, dims: &[usize]) -> f64 {
    let mut total = 0.0;
    for &d in dims {
        let col = y.column(d);
        let mean = col.mean();
        let sst: f64 = col.iter().map(|v| (v - mean).powi(2)).sum();
        let sse: f64 = col.iter().zip(pred.column(d).iter()).map(|(a, b)| (a - b).powi(2)).sum();
        total += 1.0 - sse / sst;
    }
    total / dims.len() as f64
}

fn has_variance(y: &DMatrix<f64>, d: usize) -> bool {
    let col = y.column(d);
    col.iter().any(|&v| v != col[0])
}

/// Ridge regression with an unpenalized intercept, fit on a seeded 80% split
/// and scored on the remaining 20%.
pub fn linear_probe(x: &[Vec<f64>], y: &[Vec<f64>], lambda: f64, seed: u64) -> Result<ProbeResult> {
    let n = x.len();
    if y.len() != n {
        return Err(Error::Shape(format!("probe: {n} embeddings vs {} targets", y.len())));
    }
    let p = x.first().map_or(0, Vec::len);
    let t = y.first().map_or(0, Vec::len);
    if p == 0 || t == 0 || x.iter().any(|r| r.len() != p) || y.iter().any(|r| r.len() != t) {
        return Err(Error::Shape("probe: ragged or empty rows".into()));
    }
    if !(lambda > 0.0) {
        return Err(Error::Invalid(format!("ridge lambda {lambda} must be > 0")));
    }
    if n <= p {
        return Err(Error::Invalid(format!("probe needs more samples ({n}) than embedding dims ({p})")));
    }
    let order = permutation(&mut sub_rng(seed, "probe/split"), n);
    let n_train = (n * 4).div_ceil(5);
    if n - n_train < 2 {
        return Err(Error::Invalid(format!("probe: {n} samples leave fewer than 2 for testing")));
    }
    let pick = |idx: &[usize], src: &[Vec<f64>]| matrix(&idx.iter().map(|&i| &src[i]).collect::<Vec<_>>());
    let (tr, te) = order.split_at(n_train);
    let (xtr, xte, ytr, yte) = (pick(tr, x), pick(te, x), pick(tr, y), pick(te, y));

    let xm: DVector<f64> = xtr.row_mean().transpose();
    let ym: DVector<f64> = ytr.row_mean().transpose();
    let center = |m: &DMatrix<f64>, mean: &DVector<f64>| {
        let mut c = m.clone();
        for mut row in c.row_iter_mut() {
            row -= mean.transpose();
        }
        c
    };
    let xc = center(&xtr, &xm);
    let yc = center(&ytr, &ym);
    let gram = xc.transpose() * &xc + DMatrix::identity(p, p) * lambda;
    let w = gram
        .cholesky()
        .ok_or_else(|| Error::NonFinite("probe: ridge system not positive definite".into()))?
        .solve(&(xc.transpose() * &yc));
    let predict = |xs: &DMatrix<f64>| {
        let mut out = center(xs, &xm) * &w;
        for mut row in out.row_iter_mut() {
            row += ym.transpose();
        }
        out
    };

    let (kept, excluded_dims): (Vec<usize>, Vec<usize>) =
        (0..t).partition(|&d| has_variance(&ytr, d) && has_variance(&yte, d));
    if kept.is_empty() {
        return Err(Error::Invalid("probe: every target dim is constant".into()));
    }
    Ok(ProbeResult {
        r2: r2_per_dim(&yte, &predict(&xte), &kept),
        train_r2: r2_per_dim(&ytr, &predict(&xtr), &kept),
        lambda,
        n_train,
        n_test: n - n_train,
        excluded_dims,
    })
}
