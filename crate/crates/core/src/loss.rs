//! VICReg and composite objectives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, Var};

/// Epsilon inside the per-dimension standard deviation.
pub const VAR_EPS: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VicregWeights {
    pub lambda_inv: f64,
    pub lambda_var: f64,
    pub lambda_cov: f64,
}

impl Default for VicregWeights {
    fn default() -> Self {
        Self { lambda_inv: 10.0, lambda_var: 10.0, lambda_cov: 1.0 }
    }
}

impl VicregWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_inv, self.lambda_var, self.lambda_cov];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!("VICReg weights must be finite and non-negative: {all:?}")));
        }
        Ok(())
    }
}

/// Loss components as plain numbers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub invariance: f64,
    pub variance: f64,
    pub covariance: f64,
    pub auxiliary: f64,
}

impl LossBreakdown {
    fn add_scaled(&mut self, o: &LossBreakdown, w: f64) {
        self.total += w * o.total;
        self.invariance += w * o.invariance;
        self.variance += w * o.variance;
        self.covariance += w * o.covariance;
        self.auxiliary += w * o.auxiliary;
    }
}

/// Recorded loss: the differentiable total plus its component nodes.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub invariance: Var,
    pub variance: Var,
    pub covariance: Var,
}

impl LossVars {
    pub fn breakdown<T: Scalar>(&self, g: &Graph<T>) -> LossBreakdown {
        let v = |x: Var| g.value(x).item().f64();
        LossBreakdown {
            total: v(self.total),
            invariance: v(self.invariance),
            variance: v(self.variance),
            covariance: v(self.covariance),
            auxiliary: 0.0,
        }
    }
}

/// Centered batch and unbiased per-dimension variance `[1, D]`.
fn centered<T: Scalar>(g: &mut Graph<T>, z: Var) -> Result<(Var, Var)> {
    let b = g.value(z).rows();
    let mean = g.mean_rows(z)?;
    let neg = g.scale(mean, -T::one());
    let zc = g.add_row(z, neg)?;
    let sq = g.square(zc);
    let var = g.mean_rows(sq)?;
    let var = g.scale(var, T::of(b as f64 / (b - 1) as f64));
    Ok((zc, var))
}

/// Mean hinge `max(0, 1 - sqrt(var + eps))` over dimensions.
fn variance_term<T: Scalar>(g: &mut Graph<T>, var: Var) -> Var {
    let v = g.add_scalar(var, T::of(VAR_EPS));
    let std = g.sqrt(v);
    let neg = g.scale(std, -T::one());
    let h = g.add_scalar(neg, T::one());
    let h = g.relu(h);
    g.mean(h)
}

/// Sum of squared off-diagonal sample-covariance entries divided by `D`.
fn covariance_term<T: Scalar>(g: &mut Graph<T>, zc: Var, var: Var) -> Result<Var> {
    let (b, d) = g.value(zc).dims2()?;
    let zt = g.transpose(zc)?;
    let c = g.matmul(zt, zc)?;
    let c = g.scale(c, T::one() / T::of((b - 1) as f64));
    let c2 = g.square(c);
    let all = g.sum(c2);
    let v2 = g.square(var);
    let diag = g.sum(v2);
    let off = g.sub(all, diag)?;
    Ok(g.scale(off, T::one() / T::of(d as f64)))
}

/// VICReg between matched rows of `za` and `zm`, recorded on `g`. Variance
/// hinges are averaged over the two branches; covariance terms are summed.
pub fn vicreg_graph<T: Scalar>(g: &mut Graph<T>, za: Var, zm: Var, w: &VicregWeights) -> Result<LossVars> {
    let (b, d) = g.value(za).dims2()?;
    if g.shape(zm) != [b, d] {
        return Err(Error::Shape(format!("vicreg: {:?} vs {:?}", g.shape(za), g.shape(zm))));
    }
    if b < 2 {
        return Err(Error::Invalid(format!("vicreg needs a batch of at least 2, got {b}")));
    }
    let diff = g.sub(za, zm)?;
    let sq = g.square(diff);
    let invariance = g.mean(sq);

    let (ca, va) = centered(g, za)?;
    let (cm, vm) = centered(g, zm)?;
    let ha = variance_term(g, va);
    let hm = variance_term(g, vm);
    let vs = g.add(ha, hm)?;
    let variance = g.scale(vs, T::of(0.5));
    let cov_a = covariance_term(g, ca, va)?;
    let cov_m = covariance_term(g, cm, vm)?;
    let covariance = g.add(cov_a, cov_m)?;

    let ti = g.scale(invariance, T::of(w.lambda_inv));
    let tv = g.scale(variance, T::of(w.lambda_var));
    let tc = g.scale(covariance, T::of(w.lambda_cov));
    let t = g.add(ti, tv)?;
    let total = g.add(t, tc)?;
    Ok(LossVars { total, invariance, variance, covariance })
}

/// `[B, D]` batch as a graph constant.
fn batch_const<T: Scalar>(g: &mut Graph<T>, z: &[Vec<f64>]) -> Result<Var> {
    let t: Tensor<T> = Tensor::from_rows(&z.iter().map(|r| r.iter().map(|&v| T::of(v)).collect()).collect::<Vec<_>>())?;
    Ok(g.constant(t))
}

/// VICReg on plain row batches.
pub fn vicreg(za: &[Vec<f64>], zm: &[Vec<f64>], w: &VicregWeights) -> Result<LossBreakdown> {
    let mut g = Graph::<f64>::new();
    let a = batch_const(&mut g, za)?;
    let m = batch_const(&mut g, zm)?;
    Ok(vicreg_graph(&mut g, a, m, w)?.breakdown(&g))
}

/// Weights of the descriptor-tower objective
/// `direct * V(a, m) + alpha * V(a, d) + beta * V(m, d)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TowerWeights {
    pub alpha: f64,
    pub beta: f64,
    pub direct: bool,
}

/// Tower objective recorded on `g`; returns the total and the component sums.
pub fn third_tower_graph<T: Scalar>(
    g: &mut Graph<T>,
    za: Var,
    zm: Var,
    zd: Var,
    tw: TowerWeights,
    w: &VicregWeights,
) -> Result<(Var, LossBreakdown)> {
    let mut parts: Vec<(LossVars, f64)> = Vec::new();
    if tw.direct {
        parts.push((vicreg_graph(g, za, zm, w)?, 1.0));
    }
    parts.push((vicreg_graph(g, za, zd, w)?, tw.alpha));
    parts.push((vicreg_graph(g, zm, zd, w)?, tw.beta));
    let mut total: Option<Var> = None;
    let mut summary = LossBreakdown::default();
    for (lv, wt) in &parts {
        summary.add_scaled(&lv.breakdown(g), *wt);
        let t = g.scale(lv.total, T::of(*wt));
        total = Some(match total {
            None => t,
            Some(acc) => g.add(acc, t)?,
        });
    }
    Ok((total.expect("at least two terms"), summary))
}

/// Tower objective on plain row batches.
pub fn third_tower_loss(
    za: &[Vec<f64>],
    zm: &[Vec<f64>],
    zd: &[Vec<f64>],
    alpha: f64,
    beta: f64,
    w: &VicregWeights,
) -> Result<LossBreakdown> {
    let mut g = Graph::<f64>::new();
    let a = batch_const(&mut g, za)?;
    let m = batch_const(&mut g, zm)?;
    let d = batch_const(&mut g, zd)?;
    let tw = TowerWeights { alpha, beta, direct: true };
    Ok(third_tower_graph(&mut g, a, m, d, tw, w)?.1)
}
