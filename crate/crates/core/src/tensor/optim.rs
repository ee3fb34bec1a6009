use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// AdamW with decoupled weight decay and bias-corrected moments.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    pub step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// A gradient held NaN/inf; nothing was changed.
    SkippedNonFinite,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig, params: &ParamStore<T>) -> Self {
        let zeros: Vec<Tensor<T>> = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self { config, step: 0, m: zeros.clone(), v: zeros }
    }

    /// One update with learning rate `lr`. `grads` is aligned with the store;
    /// `None` means zero gradient.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Option<Tensor<T>>], lr: f64) -> Result<StepOutcome> {
        if grads.len() != params.len() {
            return Err(Error::Shape(format!("{} gradients for {} parameters", grads.len(), params.len())));
        }
        for (p, g) in params.iter().zip(grads) {
            if let Some(g) = g {
                if g.shape() != p.value.shape() {
                    return Err(Error::Shape(format!("grad for {}: {:?} vs {:?}", p.name, g.shape(), p.value.shape())));
                }
                if g.has_non_finite() {
                    return Ok(StepOutcome::SkippedNonFinite);
                }
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let decay = T::of(lr * c.weight_decay);
        let lr_t = T::of(lr);
        let (bc1, bc2, eps) = (T::of(bc1), T::of(bc2), T::of(c.eps));
        for (i, p) in params.params_mut().iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let pd = p.value.data_mut();
            let md = self.m[i].data_mut();
            let vd = self.v[i].data_mut();
            let gd = grads[i].as_ref().map(|g| g.data());
            for j in 0..pd.len() {
                let g = gd.map_or(T::zero(), |g| g[j]);
                pd[j] -= decay * pd[j];
                md[j] = b1 * md[j] + (T::one() - b1) * g;
                vd[j] = b2 * vd[j] + (T::one() - b2) * g * g;
                let mh = md[j] / bc1;
                let vh = vd[j] / bc2;
                pd[j] -= lr_t * mh / (vh.sqrt() + eps);
            }
        }
        Ok(StepOutcome::Applied)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Param;

    fn store(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::default();
        s.insert(Param { name: "p".into(), value: Tensor::scalar(v), trainable: true }).unwrap();
        s
    }

    #[test]
    fn zero_grad_zero_decay_is_identity() {
        let mut s = store(1.25);
        let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.0, ..Default::default() }, &s);
        opt.step(&mut s, &[Some(Tensor::scalar(0.0))], 0.1).unwrap();
        assert_eq!(s.get("p").unwrap().item(), 1.25);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = store(1.0);
        let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.0, ..Default::default() }, &s);
        opt.step(&mut s, &[Some(Tensor::scalar(1.0))], 0.1).unwrap();
        assert!((s.get("p").unwrap().item() - 0.9).abs() < 1e-6);
    }

    #[test]
    fn pure_decay_branch() {
        let mut s = store(1.0);
        let mut opt = AdamW::new(AdamWConfig::default(), &s);
        opt.step(&mut s, &[Some(Tensor::scalar(0.0))], 0.1).unwrap();
        assert!((s.get("p").unwrap().item() - 0.999).abs() < 1e-15);
    }

    #[test]
    fn nan_gradient_aborts_step() {
        let mut s = store(1.0);
        let mut opt = AdamW::new(AdamWConfig::default(), &s);
        let out = opt.step(&mut s, &[Some(Tensor::scalar(f64::NAN))], 0.1).unwrap();
        assert_eq!(out, StepOutcome::SkippedNonFinite);
        assert_eq!(s.get("p").unwrap().item(), 1.0);
        assert_eq!(opt.step, 0);
    }
}
