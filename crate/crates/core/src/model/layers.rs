use crate::error::{Error, Result};
use crate::model::config::MoeSpec;
use crate::scalar::Scalar;
use crate::tensor::nn::{attention, batch_norm, ffn, layer_norm, linear, Ctx};
use crate::tensor::{Tensor, Var};

/// Output of a mixture-of-experts feed-forward.
pub struct MoeOut {
    pub out: Var,
    /// `[tokens, experts]` gate weights after top-k selection.
    pub gates: Var,
    pub aux: Var,
}

/// Row-wise top-k membership; ties go to the lower expert index.
pub fn top_k_mask(probs: &[f64], rows: usize, experts: usize, k: usize) -> Vec<bool> {
    let mut mask = vec![false; rows * experts];
    for r in 0..rows {
        let row = &probs[r * experts..(r + 1) * experts];
        let mut order: Vec<usize> = (0..experts).collect();
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        for &e in &order[..k] {
            mask[r * experts + e] = true;
        }
    }
    mask
}

/// Logit offset that removes an expert from the gate softmax.
const GATE_OFF: f64 = -1e9;

/// `TopK(softmax(x W_g), k)` gating over expert FFNs, with the kept gates
/// renormalized, plus the auxiliary load-balance and entropy terms computed
/// over the `valid` rows.
pub fn moe_ffn<T: Scalar>(ctx: &mut Ctx<T>, x: Var, prefix: &str, spec: &MoeSpec, valid: &[bool]) -> Result<MoeOut> {
    let (rows, _) = ctx.g.value(x).dims2()?;
    if valid.len() != rows {
        return Err(Error::Shape(format!("moe mask of {} for {rows} rows", valid.len())));
    }
    let e = spec.experts;
    let w = ctx.p(&format!("{prefix}.gate.weight"))?;
    let logits = ctx.g.matmul(x, w)?;
    let probs = ctx.g.softmax(logits, None)?;
    let pv: Vec<f64> = ctx.g.value(probs).data().iter().map(|v| v.f64()).collect();
    let mask = top_k_mask(&pv, rows, e, spec.top_k);
    let off = Tensor::new(mask.iter().map(|&b| if b { T::zero() } else { T::of(GATE_OFF) }).collect(), vec![rows, e])?;
    let off = ctx.constant(off);
    let kept = ctx.g.add(logits, off)?;
    let gates = ctx.g.softmax(kept, None)?;

    let mut out: Option<Var> = None;
    for i in 0..e {
        let y = ffn(ctx, x, &format!("{prefix}.expert{i}"))?;
        let g = ctx.g.slice_cols(gates, i, i + 1)?;
        let y = ctx.g.mul_col(y, g)?;
        out = Some(match out {
            None => y,
            Some(acc) => ctx.g.add(acc, y)?,
        });
    }

    let n_valid = valid.iter().filter(|&&b| b).count();
    let mut routed = vec![0.0; e];
    for r in (0..rows).filter(|&r| valid[r]) {
        for (j, f) in routed.iter_mut().enumerate() {
            if mask[r * e + j] {
                *f += 1.0;
            }
        }
    }
    let frac: Vec<T> = routed.iter().map(|&c| T::of(c / (n_valid * spec.top_k) as f64)).collect();
    let frac = ctx.constant(Tensor::new(frac, vec![1, e])?);
    let mean_p = ctx.g.masked_mean_rows(probs, valid)?;
    let fp = ctx.g.mul(frac, mean_p)?;
    let balance = ctx.g.sum(fp);
    let balance = ctx.g.scale(balance, T::of(e as f64 * spec.balance_coef));
    let log_p = ctx.g.ln(mean_p);
    let plogp = ctx.g.mul(mean_p, log_p)?;
    let neg_entropy = ctx.g.sum(plogp);
    let neg_entropy = ctx.g.scale(neg_entropy, T::of(spec.entropy_coef));
    let aux = ctx.g.add(balance, neg_entropy)?;
    Ok(MoeOut { out: out.expect("at least one expert"), gates, aux })
}

/// Per-layer FiLM `(gamma, beta)`, each `[1, d]`, from a time-pooled descriptor.
pub fn film_params<T: Scalar>(ctx: &mut Ctx<T>, pooled: Var, prefix: &str, d: usize) -> Result<(Var, Var)> {
    let h = linear(ctx, pooled, &format!("{prefix}.fc1"))?;
    let h = ctx.g.relu(h);
    let gb = linear(ctx, h, &format!("{prefix}.fc2"))?;
    let gamma = ctx.g.slice_cols(gb, 0, d)?;
    let beta = ctx.g.slice_cols(gb, d, 2 * d)?;
    Ok((gamma, beta))
}

/// `(1 + gamma) * x + beta`, broadcast over rows.
pub fn film_apply<T: Scalar>(ctx: &mut Ctx<T>, x: Var, gamma: Var, beta: Var) -> Result<Var> {
    let scale = ctx.g.add_scalar(gamma, T::one());
    let y = ctx.g.mul_row(x, scale)?;
    ctx.g.add_row(y, beta)
}

/// Result of one Transformer block.
pub struct BlockOut {
    pub out: Var,
    pub attn: Vec<Var>,
    pub gates: Option<Var>,
    pub aux: Option<Var>,
}

/// Pre-norm block: `x + Attn(LN(x))`, then `h + FFN(LN(h))`.
pub fn transformer_block<T: Scalar>(
    ctx: &mut Ctx<T>,
    x: Var,
    prefix: &str,
    heads: usize,
    mask: &[bool],
    moe: Option<&MoeSpec>,
) -> Result<BlockOut> {
    let key_mask = if mask.iter().all(|&b| b) { None } else { Some(mask) };
    let n = layer_norm(ctx, x, &format!("{prefix}.ln1"))?;
    let a = attention(ctx, n, n, &format!("{prefix}.attn"), heads, key_mask)?;
    let a_out = ctx.dropout(a.out)?;
    let h = ctx.g.add(x, a_out)?;
    let n = layer_norm(ctx, h, &format!("{prefix}.ln2"))?;
    let (f, gates, aux) = match moe {
        None => (ffn(ctx, n, &format!("{prefix}.ffn"))?, None, None),
        Some(spec) => {
            let m = moe_ffn(ctx, n, &format!("{prefix}.moe"), spec, mask)?;
            (m.out, Some(m.gates), Some(m.aux))
        }
    };
    let f = ctx.dropout(f)?;
    let out = ctx.g.add(h, f)?;
    Ok(BlockOut { out, attn: a.weights, gates, aux })
}

/// Three-layer projection MLP with batch norm and ReLU between layers.
pub fn projection_head<T: Scalar>(ctx: &mut Ctx<T>, x: Var, prefix: &str) -> Result<Var> {
    let mut h = x;
    for i in 0..2 {
        h = linear(ctx, h, &format!("{prefix}.fc{i}"))?;
        h = batch_norm(ctx, h, &format!("{prefix}.bn{i}"))?;
        h = ctx.g.relu(h);
    }
    linear(ctx, h, &format!("{prefix}.fc2"))
}
