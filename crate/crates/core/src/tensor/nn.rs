//! Layer building blocks composed from graph primitives.

use crate::error::{Error, Result};
use crate::rng::{uniform, XRng};
use crate::scalar::Scalar;
use crate::tensor::{Graph, ParamStore, Tensor, Var};

pub const LN_EPS: f64 = 1e-5;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// One forward pass: the tape plus the parameters bound into it.
pub struct Ctx<'a, T> {
    pub g: Graph<T>,
    params: &'a ParamStore<T>,
    bound: Vec<Option<Var>>,
    pub train: bool,
    pub dropout: f64,
    dropout_rng: Option<XRng>,
    /// Pending batch-norm running statistics `(buffer name, new value)`.
    pub buffer_updates: Vec<(String, Tensor<T>)>,
}

impl<'a, T: Scalar> Ctx<'a, T> {
    pub fn new(params: &'a ParamStore<T>, train: bool) -> Self {
        Self {
            g: Graph::new(),
            params,
            bound: vec![None; params.len()],
            train,
            dropout: 0.0,
            dropout_rng: None,
            buffer_updates: Vec::new(),
        }
    }

    pub fn with_dropout(mut self, p: f64, rng: XRng) -> Self {
        self.dropout = p;
        self.dropout_rng = Some(rng);
        self
    }

    pub fn params(&self) -> &ParamStore<T> {
        self.params
    }

    /// Bind a named parameter into the graph (once per pass).
    pub fn p(&mut self, name: &str) -> Result<Var> {
        let i = self
            .params
            .position(name)
            .ok_or_else(|| Error::Invalid(format!("unknown parameter {name}")))?;
        if let Some(v) = self.bound[i] {
            return Ok(v);
        }
        let prm = &self.params.params()[i];
        let v = if prm.trainable { self.g.leaf(prm.value.clone()) } else { self.g.constant(prm.value.clone()) };
        self.bound[i] = Some(v);
        Ok(v)
    }

    pub fn has(&self, name: &str) -> bool {
        self.params.position(name).is_some()
    }

    /// Parameter-aligned gradients after a backward pass.
    pub fn param_vars(&self) -> &[Option<Var>] {
        &self.bound
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.g.constant(t)
    }

    pub fn dropout(&mut self, x: Var) -> Result<Var> {
        if !self.train || self.dropout <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - self.dropout;
        let rng = self.dropout_rng.as_mut().ok_or_else(|| Error::Invalid("dropout without rng".into()))?;
        let shape = self.g.shape(x).to_vec();
        let n: usize = shape.iter().product();
        let mask: Vec<T> = (0..n)
            .map(|_| if uniform(rng) < keep { T::of(1.0 / keep) } else { T::zero() })
            .collect();
        let m = self.g.constant(Tensor::new(mask, shape)?);
        self.g.mul(x, m)
    }
}

/// `x W + b` with `W [in, out]`.
pub fn linear<T: Scalar>(ctx: &mut Ctx<T>, x: Var, prefix: &str) -> Result<Var> {
    let w = ctx.p(&format!("{prefix}.weight"))?;
    let y = ctx.g.matmul(x, w)?;
    let bname = format!("{prefix}.bias");
    if ctx.has(&bname) {
        let b = ctx.p(&bname)?;
        ctx.g.add_row(y, b)
    } else {
        Ok(y)
    }
}

pub fn layer_norm<T: Scalar>(ctx: &mut Ctx<T>, x: Var, prefix: &str) -> Result<Var> {
    let n = ctx.g.normalize_rows(x, T::of(LN_EPS))?;
    let gain = ctx.p(&format!("{prefix}.weight"))?;
    let bias = ctx.p(&format!("{prefix}.bias"))?;
    let y = ctx.g.mul_row(n, gain)?;
    ctx.g.add_row(y, bias)
}

/// Group normalization over a `[time, channels]` activation.
pub fn group_norm<T: Scalar>(ctx: &mut Ctx<T>, x: Var, groups: usize, prefix: &str) -> Result<Var> {
    let n = ctx.g.group_normalize(x, groups, T::of(LN_EPS))?;
    let gain = ctx.p(&format!("{prefix}.weight"))?;
    let bias = ctx.p(&format!("{prefix}.bias"))?;
    let y = ctx.g.mul_row(n, gain)?;
    ctx.g.add_row(y, bias)
}

/// Batch normalization over the rows of `[batch, features]`. Training mode
/// normalizes with batch statistics and queues running-statistic updates;
/// eval mode uses the running statistics.
pub fn batch_norm<T: Scalar>(ctx: &mut Ctx<T>, x: Var, prefix: &str) -> Result<Var> {
    let gain = ctx.p(&format!("{prefix}.weight"))?;
    let bias = ctx.p(&format!("{prefix}.bias"))?;
    let rm_name = format!("{prefix}.running_mean");
    let rv_name = format!("{prefix}.running_var");
    let normed = if ctx.train {
        let (m, n) = ctx.g.value(x).dims2()?;
        if m < 2 {
            return Err(Error::Invalid("batch_norm in training mode needs at least 2 rows".into()));
        }
        let xv = ctx.g.value(x).data();
        let mut mean = vec![0.0f64; n];
        for i in 0..m {
            for j in 0..n {
                mean[j] += xv[i * n + j].f64();
            }
        }
        mean.iter_mut().for_each(|v| *v /= m as f64);
        let mut var = vec![0.0f64; n];
        for i in 0..m {
            for j in 0..n {
                let d = xv[i * n + j].f64() - mean[j];
                var[j] += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= (m - 1) as f64);
        let rm = ctx.params.get(&rm_name)?;
        let rv = ctx.params.get(&rv_name)?;
        let mom = BN_MOMENTUM;
        let new_rm: Vec<T> = rm.data().iter().zip(&mean).map(|(&r, &b)| T::of((1.0 - mom) * r.f64() + mom * b)).collect();
        let new_rv: Vec<T> = rv.data().iter().zip(&var).map(|(&r, &b)| T::of((1.0 - mom) * r.f64() + mom * b)).collect();
        ctx.buffer_updates.push((rm_name, Tensor::new(new_rm, vec![n])?));
        ctx.buffer_updates.push((rv_name, Tensor::new(new_rv, vec![n])?));
        ctx.g.normalize_cols(x, T::of(BN_EPS))?
    } else {
        let rm = ctx.params.get(&rm_name)?.clone();
        let rv = ctx.params.get(&rv_name)?;
        let inv = rv.map(|v| T::one() / (v + T::of(BN_EPS)).sqrt());
        let neg_mean = rm.map(|v| -v);
        let nm = ctx.g.constant(neg_mean);
        let iv = ctx.g.constant(inv);
        let c = ctx.g.add_row(x, nm)?;
        ctx.g.mul_row(c, iv)?
    };
    let y = ctx.g.mul_row(normed, gain)?;
    ctx.g.add_row(y, bias)
}

/// 1-D convolution of a `[time, channels]` signal with weight
/// `[c_in * kernel, c_out]` and bias `[c_out]`.
pub fn conv1d<T: Scalar>(ctx: &mut Ctx<T>, x: Var, prefix: &str, kernel: usize, stride: usize, pad: usize) -> Result<Var> {
    let cols = ctx.g.im2col(x, kernel, stride, pad)?;
    linear(ctx, cols, prefix)
}

/// Output length of a 1-D convolution.
pub fn conv_out_len(len: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    let padded = len + 2 * pad;
    if padded < kernel {
        0
    } else {
        (padded - kernel) / stride + 1
    }
}

/// Output of [`attention`]: the mixed values and the per-head weight matrices.
pub struct Attended {
    pub out: Var,
    pub weights: Vec<Var>,
}

/// Multi-head scaled dot-product attention with queries from `q_in` and
/// keys/values from `kv_in`. Parameters under `prefix`: `q`, `k`, `v`, `o`.
/// `key_mask` marks valid key rows.
pub fn attention<T: Scalar>(
    ctx: &mut Ctx<T>,
    q_in: Var,
    kv_in: Var,
    prefix: &str,
    heads: usize,
    key_mask: Option<&[bool]>,
) -> Result<Attended> {
    let q = linear(ctx, q_in, &format!("{prefix}.q"))?;
    let k = linear(ctx, kv_in, &format!("{prefix}.k"))?;
    let v = linear(ctx, kv_in, &format!("{prefix}.v"))?;
    let d = ctx.g.value(q).cols();
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::Shape(format!("{d} model dims not divisible into {heads} heads")));
    }
    let dk = d / heads;
    let scale = T::one() / T::of(dk as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let (a, b) = (h * dk, (h + 1) * dk);
        let qh = if heads == 1 { q } else { ctx.g.slice_cols(q, a, b)? };
        let kh = if heads == 1 { k } else { ctx.g.slice_cols(k, a, b)? };
        let vh = if heads == 1 { v } else { ctx.g.slice_cols(v, a, b)? };
        let kt = ctx.g.transpose(kh)?;
        let s = ctx.g.matmul(qh, kt)?;
        let s = ctx.g.scale(s, scale);
        let w = ctx.g.softmax(s, key_mask)?;
        let o = ctx.g.matmul(w, vh)?;
        weights.push(w);
        outs.push(o);
    }
    let merged = if heads == 1 { outs[0] } else { ctx.g.concat_cols(&outs)? };
    let out = linear(ctx, merged, &format!("{prefix}.o"))?;
    Ok(Attended { out, weights })
}

/// Position-wise feed-forward: linear, GELU, dropout, linear.
pub fn ffn<T: Scalar>(ctx: &mut Ctx<T>, x: Var, prefix: &str) -> Result<Var> {
    let h = linear(ctx, x, &format!("{prefix}.fc1"))?;
    let h = ctx.g.gelu(h);
    let h = ctx.dropout(h)?;
    linear(ctx, h, &format!("{prefix}.fc2"))
}

/// Sinusoidal position table `[len, d]`.
pub fn sinusoidal_positions<T: Scalar>(len: usize, d: usize) -> Tensor<T> {
    let mut data = vec![T::zero(); len * d];
    for pos in 0..len {
        for i in 0..d / 2 {
            let freq = (-(2.0 * i as f64) * (10_000f64).ln() / d as f64).exp();
            let a = pos as f64 * freq;
            data[pos * d + 2 * i] = T::of(a.sin());
            data[pos * d + 2 * i + 1] = T::of(a.cos());
        }
    }
    Tensor::new(data, vec![len, d]).expect("position table")
}

/// Linear resampling matrix `[out_len, in_len]` mapping a sequence of
/// `in_len` rows onto `out_len` rows with aligned endpoints.
pub fn interpolation_matrix<T: Scalar>(in_len: usize, out_len: usize) -> Tensor<T> {
    let mut m = vec![T::zero(); out_len * in_len];
    for i in 0..out_len {
        if in_len == 1 || out_len == 1 {
            m[i * in_len] = T::one();
            continue;
        }
        let pos = i as f64 * (in_len - 1) as f64 / (out_len - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(in_len - 1);
        let frac = pos - lo as f64;
        m[i * in_len + lo] += T::of(1.0 - frac);
        if hi != lo {
            m[i * in_len + hi] += T::of(frac);
        }
    }
    Tensor::new(m, vec![out_len, in_len]).expect("interpolation matrix")
}
