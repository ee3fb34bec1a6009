//! Linear CKA and distance-based RSA between activation matrices.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Embeddings;

fn to_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let p = rows.first().map_or(0, Vec::len);
    if p == 0 || rows.iter().any(|r| r.len() != p) {
        return Err(Error::Shape(format!("{what}: rows must share a nonzero width")));
    }
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("{what} holds non-finite values")));
    }
    Ok(DMatrix::from_fn(n, p, |i, j| rows[i][j]))
}

fn centered(mut m: DMatrix<f64>) -> DMatrix<f64> {
    for mut col in m.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    m
}

/// Linear CKA `‖YᵀX‖²_F / (‖XᵀX‖_F ‖YᵀY‖_F)` on column-centered inputs.
pub fn cka(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("cka: {} vs {} rows", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::Invalid("cka needs at least 2 samples".into()));
    }
    let x = centered(to_matrix(x, "cka X")?);
    let y = centered(to_matrix(y, "cka Y")?);
    let xx = (x.transpose() * &x).norm();
    let yy = (y.transpose() * &y).norm();
    if xx == 0.0 || yy == 0.0 {
        return Err(Error::Invalid("cka: zero-variance input".into()));
    }
    let yx = (y.transpose() * &x).norm_squared();
    Ok((yx / (xx * yy)).clamp(0.0, 1.0))
}

fn upper_distances(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut d = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d.push((m.row(i) - m.row(j)).norm());
        }
    }
    d
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (saa > 0.0 && sbb > 0.0).then(|| (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

pub(crate) fn pearson_r(a: &[f64], b: &[f64]) -> Option<f64> {
    pearson(a, b)
}

/// Pearson correlation of the two upper-triangular Euclidean distance sets.
pub fn rsa(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("rsa: {} vs {} rows", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(Error::Invalid("rsa needs at least 3 samples".into()));
    }
    let dx = upper_distances(&to_matrix(x, "rsa X")?);
    let dy = upper_distances(&to_matrix(y, "rsa Y")?);
    pearson(&dx, &dy).ok_or_else(|| Error::Invalid("rsa: constant pairwise distances".into()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CkaReport {
    /// `matrix[i][j]`: audio layer `i` against MIDI layer `j`.
    pub matrix: Vec<Vec<f64>>,
    pub cross_mean: f64,
    pub rsa_matrix: Vec<Vec<f64>>,
    pub rsa_mean: f64,
    pub n: usize,
    pub rsa_method: String,
}

/// Every audio-layer × MIDI-layer pair of token-pooled activations.
pub fn cka_matrix(e: &Embeddings) -> Result<CkaReport> {
    if e.audio_taps.is_empty() || e.midi_taps.is_empty() {
        return Err(Error::Invalid("cka_matrix needs activation taps".into()));
    }
    let mut matrix = Vec::with_capacity(e.audio_taps.len());
    let mut rsa_matrix = Vec::with_capacity(e.audio_taps.len());
    for a in &e.audio_taps {
        let mut row = Vec::with_capacity(e.midi_taps.len());
        let mut rrow = Vec::with_capacity(e.midi_taps.len());
        for m in &e.midi_taps {
            row.push(cka(a, m)?);
            rrow.push(rsa(a, m)?);
        }
        matrix.push(row);
        rsa_matrix.push(rrow);
    }
    let mean = |m: &Vec<Vec<f64>>| {
        let v: Vec<f64> = m.iter().flatten().copied().collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    Ok(CkaReport {
        cross_mean: mean(&matrix),
        rsa_mean: mean(&rsa_matrix),
        n: e.audio_taps[0].len(),
        matrix,
        rsa_matrix,
        rsa_method: "pearson/euclidean".into(),
    })
}
