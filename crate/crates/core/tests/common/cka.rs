//! Loop-level CKA and RSA references and random matrices.

use nalgebra::DMatrix;
use xmodal_core::rng::{normal, rng_from_seed};

pub fn gaussian(n: usize, p: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_from_seed(seed);
    (0..n).map(|_| (0..p).map(|_| normal(&mut rng)).collect()).collect()
}

pub fn rows_times(x: &[Vec<f64>], m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    x.iter()
        .map(|r| (0..m.ncols()).map(|j| r.iter().enumerate().map(|(i, v)| v * m[(i, j)]).sum()).collect())
        .collect()
}

pub fn orthogonal(p: usize, seed: u64) -> DMatrix<f64> {
    let g = gaussian(p, p, seed);
    DMatrix::from_fn(p, p, |i, j| g[i][j]).qr().q()
}

/// Term-by-term linear CKA with explicit loops.
pub fn cka_oracle(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    let n = x.len();
    let center = |m: &[Vec<f64>]| -> Vec<Vec<f64>> {
        let p = m[0].len();
        let means: Vec<f64> = (0..p).map(|j| m.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
        m.iter().map(|r| r.iter().zip(&means).map(|(v, mu)| v - mu).collect()).collect()
    };
    let (x, y) = (center(x), center(y));
    let cross = |a: &[Vec<f64>], b: &[Vec<f64>]| -> f64 {
        let mut s = 0.0;
        for i in 0..a[0].len() {
            for j in 0..b[0].len() {
                let dot: f64 = (0..n).map(|k| a[k][i] * b[k][j]).sum();
                s += dot * dot;
            }
        }
        s
    };
    cross(&y, &x) / (cross(&x, &x).sqrt() * cross(&y, &y).sqrt())
}

pub fn rsa_oracle(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    let dist = |m: &[Vec<f64>]| {
        let mut d = Vec::new();
        for i in 0..m.len() {
            for j in i + 1..m.len() {
                d.push(m[i].iter().zip(&m[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt());
            }
        }
        d
    };
    let (a, b) = (dist(x), dist(y));
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(&b).map(|(p, q)| (p - ma) * (q - mb)).sum();
    let va: f64 = a.iter().map(|p| (p - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|q| (q - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}
