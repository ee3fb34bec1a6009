//! Reverse-mode automatic differentiation over a tape of 2-D tensor ops.
//!
//! A [`Graph`] is built fresh for every forward pass. Nodes are appended in
//! execution order, so the tape is already topologically sorted and
//! [`Graph::backward`] walks it once in reverse.

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::tensor::{matmul_nt, matmul_raw, matmul_tn, Tensor};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Gelu(Var),
    Relu(Var),
    Sqrt(Var),
    Square(Var),
    Ln(Var),
    Softmax(Var),
    NormRows { x: Var, inv_std: Vec<T> },
    NormCols { x: Var, inv_std: Vec<T> },
    GroupNorm { x: Var, groups: usize, inv_std: Vec<T> },
    MeanRows(Var),
    MaskedMeanRows { x: Var, mask: Vec<bool>, count: usize },
    Sum(Var),
    Gather { table: Var, indices: Vec<usize> },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { x: Var, start: usize },
    Im2Col { x: Var, kernel: usize, stride: usize, pad: usize },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Tape of recorded operations.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients indexed by node, produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss w.r.t. `v`; zeros when `v` does not reach the loss.
    pub fn get(&self, v: Var) -> Tensor<T> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn reached(&self, v: Var) -> bool {
        self.grads[v.0].is_some()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let a = T::of(GELU_A);
    let half = T::of(0.5);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::of(3.0) * a * x * x)
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Trainable (or otherwise differentiated) input.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn dims(&self, v: Var) -> Result<(usize, usize)> {
        self.nodes[v.0].value.dims2()
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err(op, sa, sb));
        }
        Ok(())
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(data, ta.shape().to_vec()).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip(a, b, |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip(a, b, |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip(a, b, |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddScalar(a), &[a])
    }

    fn row_operand(&self, op: &str, a: Var, b: Var) -> Result<(usize, usize)> {
        let (m, n) = self.dims(a)?;
        if self.value(b).len() != n {
            return Err(shape_err(op, self.shape(a), self.shape(b)));
        }
        Ok((m, n))
    }

    /// `a [m,n] + b [n]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.row_operand("add_row", a, b)?;
        let bd = self.value(b).data();
        let mut out = self.value(a).data().to_vec();
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] += bd[j];
            }
        }
        let v = Tensor::new(out, vec![m, n])?;
        Ok(self.push(v, Op::AddRow(a, b), &[a, b]))
    }

    /// `a [m,n] * b [n]` broadcast over rows.
    pub fn mul_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.row_operand("mul_row", a, b)?;
        let bd = self.value(b).data();
        let mut out = self.value(a).data().to_vec();
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] *= bd[j];
            }
        }
        let v = Tensor::new(out, vec![m, n])?;
        Ok(self.push(v, Op::MulRow(a, b), &[a, b]))
    }

    /// `a [m,n] * b [m]` broadcast over columns.
    pub fn mul_col(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.dims(a)?;
        if self.value(b).len() != m {
            return Err(shape_err("mul_col", self.shape(a), self.shape(b)));
        }
        let bd = self.value(b).data();
        let mut out = self.value(a).data().to_vec();
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] *= bd[i];
            }
        }
        let v = Tensor::new(out, vec![m, n])?;
        Ok(self.push(v, Op::MulCol(a, b), &[a, b]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a)?;
        let (k2, n) = self.dims(b)?;
        if k != k2 {
            return Err(shape_err("matmul", self.shape(a), self.shape(b)));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let v = Tensor::new(out, vec![m, n])?;
        Ok(self.push(v, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).transpose()?;
        Ok(self.push(v, Op::Transpose(a), &[a]))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(gelu);
        self.push(v, Op::Gelu(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(T::zero()));
        self.push(v, Op::Relu(a), &[a])
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.sqrt());
        self.push(v, Op::Sqrt(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a), &[a])
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.ln());
        self.push(v, Op::Ln(a), &[a])
    }

    /// Softmax over the last axis of a 2-D tensor. Masked columns (`false`)
    /// receive zero probability.
    pub fn softmax(&mut self, a: Var, col_mask: Option<&[bool]>) -> Result<Var> {
        let (m, n) = self.dims(a)?;
        if let Some(mask) = col_mask {
            if mask.len() != n {
                return Err(shape_err("softmax mask", &[m, n], &[mask.len()]));
            }
            if !mask.iter().any(|&b| b) {
                return Err(Error::Invalid("softmax: every column masked".into()));
            }
        }
        let x = self.value(a).data();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &x[i * n..(i + 1) * n];
            let keep = |j: usize| col_mask.is_none_or(|mk| mk[j]);
            let mx = (0..n).filter(|&j| keep(j)).map(|j| row[j]).fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for j in 0..n {
                if keep(j) {
                    let e = (row[j] - mx).exp();
                    out[i * n + j] = e;
                    s += e;
                }
            }
            for o in &mut out[i * n..(i + 1) * n] {
                *o /= s;
            }
        }
        let v = Tensor::new(out, vec![m, n])?;
        Ok(self.push(v, Op::Softmax(a), &[a]))
    }

    /// Zero-mean, unit-variance rows (population variance).
    pub fn normalize_rows(&mut self, a: Var, eps: T) -> Result<Var> {
        let (m, n) = self.dims(a)?;
        let x = self.value(a).data();
        let mut out = vec![T::zero(); m * n];
        let mut inv = Vec::with_capacity(m);
        let nf = T::of(n as f64);
        for i in 0..m {
            let row = &x[i * n..(i + 1) * n];
            let mu = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / nf;
            let r = T::one() / (var + eps).sqrt();
            for j in 0..n {
                out[i * n + j] = (row[j] - mu) * r;
            }
            inv.push(r);
        }
        let v = Tensor::new(out, vec![m, n])?;
        Ok(self.push(v, Op::NormRows { x: a, inv_std: inv }, &[a]))
    }

    /// Zero-mean, unit-variance columns (population variance); the
    /// batch-statistics half of batch normalization and per-dimension z-scoring.
    pub fn normalize_cols(&mut self, a: Var, eps: T) -> Result<Var> {
        let (m, n) = self.dims(a)?;
        let x = self.value(a).data();
        let mf = T::of(m as f64);
        let mut mu = vec![T::zero(); n];
        for i in 0..m {
            for j in 0..n {
                mu[j] += x[i * n + j];
            }
        }
        mu.iter_mut().for_each(|v| *v /= mf);
        let mut var = vec![T::zero(); n];
        for i in 0..m {
            for j in 0..n {
                let d = x[i * n + j] - mu[j];
                var[j] += d * d;
            }
        }
        let inv: Vec<T> = var.iter().map(|&v| T::one() / (v / mf + eps).sqrt()).collect();
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = (x[i * n + j] - mu[j]) * inv[j];
            }
        }
        let v = Tensor::new(out, vec![m, n])?;
        Ok(self.push(v, Op::NormCols { x: a, inv_std: inv }, &[a]))
    }

    /// Group normalization of a `[time, channels]` tensor: channels are split
    /// into `groups` contiguous blocks, each normalized over time and its channels.
    pub fn group_normalize(&mut self, a: Var, groups: usize, eps: T) -> Result<Var> {
        let (m, n) = self.dims(a)?;
        if groups == 0 || n % groups != 0 {
            return Err(Error::Shape(format!("group_norm: {n} channels not divisible into {groups} groups")));
        }
        let cg = n / groups;
        let x = self.value(a).data();
        let cnt = T::of((m * cg) as f64);
        let mut out = vec![T::zero(); m * n];
        let mut inv = Vec::with_capacity(groups);
        for g in 0..groups {
            let cols = g * cg..(g + 1) * cg;
            let mut s = T::zero();
            for i in 0..m {
                for j in cols.clone() {
                    s += x[i * n + j];
                }
            }
            let mu = s / cnt;
            let mut ss = T::zero();
            for i in 0..m {
                for j in cols.clone() {
                    let d = x[i * n + j] - mu;
                    ss += d * d;
                }
            }
            let r = T::one() / (ss / cnt + eps).sqrt();
            for i in 0..m {
                for j in cols.clone() {
                    out[i * n + j] = (x[i * n + j] - mu) * r;
                }
            }
            inv.push(r);
        }
        let v = Tensor::new(out, vec![m, n])?;
        Ok(self.push(v, Op::GroupNorm { x: a, groups, inv_std: inv }, &[a]))
    }

    /// Mean over rows: `[m,n] -> [1,n]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a)?;
        if m == 0 {
            return Err(Error::Shape("mean_rows on empty tensor".into()));
        }
        let x = self.value(a).data();
        let mut out = vec![T::zero(); n];
        for i in 0..m {
            for j in 0..n {
                out[j] += x[i * n + j];
            }
        }
        let mf = T::of(m as f64);
        out.iter_mut().for_each(|v| *v /= mf);
        let v = Tensor::new(out, vec![1, n])?;
        Ok(self.push(v, Op::MeanRows(a), &[a]))
    }

    /// Mean over rows whose mask entry is `true`.
    pub fn masked_mean_rows(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let (m, n) = self.dims(a)?;
        if mask.len() != m {
            return Err(shape_err("masked_mean_rows", &[m, n], &[mask.len()]));
        }
        let count = mask.iter().filter(|&&b| b).count();
        if count == 0 {
            return Err(Error::Invalid("masked_mean_rows: all positions masked".into()));
        }
        let x = self.value(a).data();
        let mut out = vec![T::zero(); n];
        for i in (0..m).filter(|&i| mask[i]) {
            for j in 0..n {
                out[j] += x[i * n + j];
            }
        }
        let cf = T::of(count as f64);
        out.iter_mut().for_each(|v| *v /= cf);
        let v = Tensor::new(out, vec![1, n])?;
        Ok(self.push(v, Op::MaskedMeanRows { x: a, mask: mask.to_vec(), count }, &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1);
        let s = self.sum(a);
        self.scale(s, T::one() / T::of(n as f64))
    }

    /// Embedding lookup: rows of `table [V,d]` selected by `indices`.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (vocab, d) = self.dims(table)?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= vocab) {
            return Err(Error::Invalid(format!("gather: index {bad} out of vocabulary {vocab}")));
        }
        let t = self.value(table).data();
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            out.extend_from_slice(&t[i * d..(i + 1) * d]);
        }
        let v = Tensor::new(out, vec![indices.len(), d])?;
        Ok(self.push(v, Op::Gather { table, indices: indices.to_vec() }, &[table]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let m = self.dims(parts[0])?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = self.dims(p)?;
            if pm != m {
                return Err(shape_err("concat_cols", self.shape(parts[0]), self.shape(p)));
            }
            widths.push(pn);
        }
        let n: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let v = Tensor::new(out, vec![m, n])?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let n = self.dims(parts[0])?.1;
        let mut m = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (pm, pn) = self.dims(p)?;
            if pn != n {
                return Err(shape_err("concat_rows", self.shape(parts[0]), self.shape(p)));
            }
            m += pm;
            out.extend_from_slice(self.value(p).data());
        }
        let v = Tensor::new(out, vec![m, n])?;
        Ok(self.push(v, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.dims(a)?;
        if start >= end || end > n {
            return Err(Error::Shape(format!("slice_cols {start}..{end} of width {n}")));
        }
        let x = self.value(a).data();
        let mut out = Vec::with_capacity(m * (end - start));
        for i in 0..m {
            out.extend_from_slice(&x[i * n + start..i * n + end]);
        }
        let v = Tensor::new(out, vec![m, end - start])?;
        Ok(self.push(v, Op::SliceCols { x: a, start }, &[a]))
    }

    /// Unfold a `[time, channels]` signal into strided windows
    /// `[out_len, channels * kernel]`, column `c * kernel + k`; with a
    /// `[c_in * kernel, c_out]` weight this is a 1-D convolution.
    pub fn im2col(&mut self, a: Var, kernel: usize, stride: usize, pad: usize) -> Result<Var> {
        let (len, ch) = self.dims(a)?;
        let padded = len + 2 * pad;
        if kernel == 0 || stride == 0 || padded < kernel {
            return Err(Error::Shape(format!(
                "conv window: length {len} (pad {pad}) shorter than kernel {kernel}"
            )));
        }
        let out_len = (padded - kernel) / stride + 1;
        let x = self.value(a).data();
        let w = ch * kernel;
        let mut out = vec![T::zero(); out_len * w];
        for t in 0..out_len {
            for k in 0..kernel {
                let src = (t * stride + k) as isize - pad as isize;
                if src < 0 || src as usize >= len {
                    continue;
                }
                let src = src as usize;
                for c in 0..ch {
                    out[t * w + c * kernel + k] = x[src * ch + c];
                }
            }
        }
        let v = Tensor::new(out, vec![out_len, w])?;
        Ok(self.push(v, Op::Im2Col { x: a, kernel, stride, pad }, &[a]))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Shape(format!("backward requires a scalar loss, got shape {:?}", lv.shape())));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = vec![None; n];
        grads[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            let Some(gy) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if node.needs_grad {
                self.propagate(id, &gy, &mut grads);
            }
            grads[id] = Some(gy);
        }
        let shapes = self.nodes.iter().map(|nd| nd.value.shape().to_vec()).collect();
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, nd)| g.map(|d| Tensor::new(d, nd.value.shape().to_vec()).expect("grad shape")))
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); self.nodes[v.0].value.len()]);
        f(slot);
    }

    fn propagate(&self, id: usize, gy: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[id];
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |g| add_into(g, gy));
                self.accumulate(grads, *b, |g| add_into(g, gy));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |g| add_into(g, gy));
                self.accumulate(grads, *b, |g| g.iter_mut().zip(gy).for_each(|(o, &d)| *o -= d));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |g| {
                    for i in 0..g.len() {
                        g[i] += gy[i] * bv[i];
                    }
                });
                self.accumulate(grads, *b, |g| {
                    for i in 0..g.len() {
                        g[i] += gy[i] * av[i];
                    }
                });
            }
            Op::Scale(a, c) => {
                let c = *c;
                self.accumulate(grads, *a, |g| g.iter_mut().zip(gy).for_each(|(o, &d)| *o += d * c));
            }
            Op::AddScalar(a) => self.accumulate(grads, *a, |g| add_into(g, gy)),
            Op::AddRow(a, b) => {
                let n = self.value(*b).len();
                self.accumulate(grads, *a, |g| add_into(g, gy));
                self.accumulate(grads, *b, |g| {
                    for (i, &d) in gy.iter().enumerate() {
                        g[i % n] += d;
                    }
                });
            }
            Op::MulRow(a, b) => {
                let n = self.value(*b).len();
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |g| {
                    for (i, &d) in gy.iter().enumerate() {
                        g[i] += d * bv[i % n];
                    }
                });
                self.accumulate(grads, *b, |g| {
                    for (i, &d) in gy.iter().enumerate() {
                        g[i % n] += d * av[i];
                    }
                });
            }
            Op::MulCol(a, b) => {
                let n = self.value(*a).cols();
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |g| {
                    for (i, &d) in gy.iter().enumerate() {
                        g[i] += d * bv[i / n];
                    }
                });
                self.accumulate(grads, *b, |g| {
                    for (i, &d) in gy.iter().enumerate() {
                        g[i / n] += d * av[i];
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2().expect("2-D");
                let n = self.value(*b).cols();
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |g| add_into(g, &matmul_nt(gy, bv, m, n, k)));
                self.accumulate(grads, *b, |g| add_into(g, &matmul_tn(av, gy, m, k, n)));
            }
            Op::Transpose(a) => {
                let (r, c) = self.value(*a).dims2().expect("2-D");
                self.accumulate(grads, *a, |g| {
                    for i in 0..r {
                        for j in 0..c {
                            g[i * c + j] += gy[j * r + i];
                        }
                    }
                });
            }
            Op::Gelu(a) => {
                let x = self.value(*a).data();
                self.accumulate(grads, *a, |g| {
                    for i in 0..g.len() {
                        g[i] += gy[i] * gelu_grad(x[i]);
                    }
                });
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                self.accumulate(grads, *a, |g| {
                    for i in 0..g.len() {
                        if x[i] > T::zero() {
                            g[i] += gy[i];
                        }
                    }
                });
            }
            Op::Sqrt(a) => {
                self.accumulate(grads, *a, |g| {
                    for i in 0..g.len() {
                        g[i] += gy[i] * T::of(0.5) / y[i];
                    }
                });
            }
            Op::Square(a) => {
                let x = self.value(*a).data();
                self.accumulate(grads, *a, |g| {
                    for i in 0..g.len() {
                        g[i] += gy[i] * T::of(2.0) * x[i];
                    }
                });
            }
            Op::Ln(a) => {
                let x = self.value(*a).data();
                self.accumulate(grads, *a, |g| {
                    for i in 0..g.len() {
                        g[i] += gy[i] / x[i];
                    }
                });
            }
            Op::Softmax(a) => {
                let n = node.value.cols();
                self.accumulate(grads, *a, |g| {
                    for (r, (yr, gr)) in y.chunks(n).zip(gy.chunks(n)).enumerate() {
                        let dot: T = yr.iter().zip(gr).map(|(&p, &d)| p * d).sum();
                        for j in 0..n {
                            g[r * n + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::NormRows { x, inv_std } => {
                let n = node.value.cols();
                let nf = T::of(n as f64);
                self.accumulate(grads, *x, |g| {
                    for (r, (yr, gr)) in y.chunks(n).zip(gy.chunks(n)).enumerate() {
                        let mg = gr.iter().copied().sum::<T>() / nf;
                        let mgy = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum::<T>() / nf;
                        for j in 0..n {
                            g[r * n + j] += inv_std[r] * (gr[j] - mg - yr[j] * mgy);
                        }
                    }
                });
            }
            Op::NormCols { x, inv_std } => {
                let (m, n) = node.value.dims2().expect("2-D");
                let mf = T::of(m as f64);
                let mut mg = vec![T::zero(); n];
                let mut mgy = vec![T::zero(); n];
                for i in 0..m {
                    for j in 0..n {
                        mg[j] += gy[i * n + j];
                        mgy[j] += gy[i * n + j] * y[i * n + j];
                    }
                }
                self.accumulate(grads, *x, |g| {
                    for i in 0..m {
                        for j in 0..n {
                            let k = i * n + j;
                            g[k] += inv_std[j] * (gy[k] - mg[j] / mf - y[k] * mgy[j] / mf);
                        }
                    }
                });
            }
            Op::GroupNorm { x, groups, inv_std } => {
                let (m, n) = node.value.dims2().expect("2-D");
                let cg = n / groups;
                let cnt = T::of((m * cg) as f64);
                self.accumulate(grads, *x, |g| {
                    for gi in 0..*groups {
                        let cols = gi * cg..(gi + 1) * cg;
                        let (mut mg, mut mgy) = (T::zero(), T::zero());
                        for i in 0..m {
                            for j in cols.clone() {
                                mg += gy[i * n + j];
                                mgy += gy[i * n + j] * y[i * n + j];
                            }
                        }
                        mg /= cnt;
                        mgy /= cnt;
                        for i in 0..m {
                            for j in cols.clone() {
                                let k = i * n + j;
                                g[k] += inv_std[gi] * (gy[k] - mg - y[k] * mgy);
                            }
                        }
                    }
                });
            }
            Op::MeanRows(a) => {
                let (m, n) = self.value(*a).dims2().expect("2-D");
                let mf = T::of(m as f64);
                self.accumulate(grads, *a, |g| {
                    for i in 0..m {
                        for j in 0..n {
                            g[i * n + j] += gy[j] / mf;
                        }
                    }
                });
            }
            Op::MaskedMeanRows { x, mask, count } => {
                let n = self.value(*x).cols();
                let cf = T::of(*count as f64);
                self.accumulate(grads, *x, |g| {
                    for (i, _) in mask.iter().enumerate().filter(|(_, &b)| b) {
                        for j in 0..n {
                            g[i * n + j] += gy[j] / cf;
                        }
                    }
                });
            }
            Op::Sum(a) => {
                let d = gy[0];
                self.accumulate(grads, *a, |g| g.iter_mut().for_each(|o| *o += d));
            }
            Op::Gather { table, indices } => {
                let d = self.value(*table).cols();
                self.accumulate(grads, *table, |g| {
                    for (r, &i) in indices.iter().enumerate() {
                        for j in 0..d {
                            g[i * d + j] += gy[r * d + j];
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let m = node.value.rows();
                let n = node.value.cols();
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    self.accumulate(grads, p, |g| {
                        for i in 0..m {
                            for j in 0..w {
                                g[i * w + j] += gy[i * n + off + j];
                            }
                        }
                    });
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    self.accumulate(grads, p, |g| add_into(g, &gy[off..off + len]));
                    off += len;
                }
            }
            Op::SliceCols { x, start } => {
                let n = self.value(*x).cols();
                let w = node.value.cols();
                let m = node.value.rows();
                self.accumulate(grads, *x, |g| {
                    for i in 0..m {
                        for j in 0..w {
                            g[i * n + start + j] += gy[i * w + j];
                        }
                    }
                });
            }
            Op::Im2Col { x, kernel, stride, pad } => {
                let (len, ch) = self.value(*x).dims2().expect("2-D");
                let out_len = node.value.rows();
                let w = ch * kernel;
                self.accumulate(grads, *x, |g| {
                    for t in 0..out_len {
                        for k in 0..*kernel {
                            let src = (t * stride + k) as isize - *pad as isize;
                            if src < 0 || src as usize >= len {
                                continue;
                            }
                            let src = src as usize;
                            for c in 0..ch {
                                g[src * ch + c] += gy[t * w + c * kernel + k];
                            }
                        }
                    }
                });
            }
        }
    }
}

fn add_into<T: Scalar>(g: &mut [T], d: &[T]) {
    g.iter_mut().zip(d).for_each(|(o, &v)| *o += v);
}
