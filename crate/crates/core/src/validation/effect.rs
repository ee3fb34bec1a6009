//! Two-group effect sizes from summary statistics.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectSize {
    pub cohen_d: f64,
    pub welch_t: f64,
    pub dof: f64,
    /// Two-sided.
    pub p: f64,
}

/// Cohen's d over `sqrt((sd_a² + sd_b²) / 2)` and Welch's t with
/// Welch–Satterthwaite degrees of freedom.
pub fn effect_size(mean_a: f64, sd_a: f64, n_a: usize, mean_b: f64, sd_b: f64, n_b: usize) -> Result<EffectSize> {
    if !(sd_a > 0.0 && sd_b > 0.0) || n_a < 2 || n_b < 2 {
        return Err(Error::Invalid(format!("effect_size needs sd > 0 and n >= 2 (got {sd_a}/{n_a}, {sd_b}/{n_b})")));
    }
    if !mean_a.is_finite() || !mean_b.is_finite() || !sd_a.is_finite() || !sd_b.is_finite() {
        return Err(Error::NonFinite("effect_size inputs".into()));
    }
    let diff = mean_a - mean_b;
    let cohen_d = diff / ((sd_a * sd_a + sd_b * sd_b) / 2.0).sqrt();
    let va = sd_a * sd_a / n_a as f64;
    let vb = sd_b * sd_b / n_b as f64;
    let welch_t = diff / (va + vb).sqrt();
    let dof = (va + vb).powi(2) / (va * va / (n_a - 1) as f64 + vb * vb / (n_b - 1) as f64);
    let dist = StudentsT::new(0.0, 1.0, dof).map_err(|e| Error::Invalid(format!("t distribution: {e}")))?;
    let p = (2.0 * dist.sf(welch_t.abs())).min(1.0);
    Ok(EffectSize { cohen_d, welch_t, dof, p })
}
