use crate::error::{Error, Result};
use crate::model::config::{ArmConfig, Injection, Mechanism, TowerSpec, CNN_LAYERS};
use crate::model::input::{MidiTokens, Sample};
use crate::model::layers::{film_apply, film_params, transformer_block};
use crate::scalar::Scalar;
use crate::signal::DescriptorTensor;
use crate::tensor::nn::{
    attention, conv1d, group_norm, interpolation_matrix, layer_norm, linear, sinusoidal_positions, Ctx,
};
use crate::tensor::{Tensor, Var};

/// One encoder pass over one sample.
pub struct Encoded {
    /// `[1, d_model]` pooled representation.
    pub pooled: Var,
    /// Post-block outputs, one `[tokens, d_model]` per Transformer layer.
    pub taps: Vec<Var>,
    /// Validity of each token in the Transformer stream.
    pub mask: Vec<bool>,
    /// Every attention-weight matrix produced (injection first, then blocks).
    pub attn: Vec<Var>,
    /// MoE gates of the final block, when present.
    pub gates: Option<Var>,
    pub aux: Option<Var>,
}

impl Encoded {
    pub fn tokens(&self) -> usize {
        self.mask.len()
    }
}

/// Descriptor rows as a `[frames, dims]` constant, optionally zero-padded to `rows`.
fn desc_const<T: Scalar>(ctx: &mut Ctx<T>, d: &DescriptorTensor, rows: usize) -> Result<Var> {
    let k = d.dims();
    let mut data: Vec<T> = d.values.iter().map(|&v| T::of(v)).collect();
    data.resize(rows.max(d.frames) * k, T::zero());
    Ok(ctx.constant(Tensor::new(data, vec![rows.max(d.frames), k])?))
}

/// Descriptor linearly resampled onto `valid` rows, then zero-padded to `rows`.
fn resampled<T: Scalar>(ctx: &mut Ctx<T>, d: &DescriptorTensor, valid: usize, rows: usize) -> Result<Var> {
    let k = d.dims();
    let m: Tensor<f64> = interpolation_matrix(d.frames, valid);
    let mut data = vec![T::zero(); rows * k];
    for i in 0..valid {
        for (j, &w) in m.row(i).iter().enumerate() {
            if w != 0.0 {
                for c in 0..k {
                    data[i * k + c] += T::of(w * d.at(j, c));
                }
            }
        }
    }
    Ok(ctx.constant(Tensor::new(data, vec![rows, k])?))
}

/// `LN(W [h || d])`.
pub fn inject_concat<T: Scalar>(ctx: &mut Ctx<T>, h: Var, d: Var, prefix: &str) -> Result<Var> {
    let x = ctx.g.concat_cols(&[h, d])?;
    let y = linear(ctx, x, &format!("{prefix}.proj"))?;
    layer_norm(ctx, y, &format!("{prefix}.ln"))
}

/// Features query projected descriptor tokens; residual with pre-norm.
pub fn inject_xattn<T: Scalar>(
    ctx: &mut Ctx<T>,
    h: Var,
    d: Var,
    prefix: &str,
    heads: usize,
    key_mask: Option<&[bool]>,
) -> Result<(Var, Vec<Var>)> {
    let kv = linear(ctx, d, &format!("{prefix}.desc"))?;
    let q = layer_norm(ctx, h, &format!("{prefix}.ln"))?;
    let a = attention(ctx, q, kv, &format!("{prefix}.attn"), heads, key_mask)?;
    Ok((ctx.g.add(h, a.out)?, a.weights))
}

/// Projected descriptor tokens (plus their own position table) query the
/// features; the output stream has one token per descriptor row.
pub fn inject_reverse<T: Scalar>(
    ctx: &mut Ctx<T>,
    d: Var,
    features: Var,
    prefix: &str,
    heads: usize,
    key_mask: Option<&[bool]>,
) -> Result<(Var, Vec<Var>)> {
    let rows = ctx.g.value(d).rows();
    let q = linear(ctx, d, &format!("{prefix}.desc"))?;
    let table = ctx.p(&format!("{prefix}.pos"))?;
    let slots = ctx.g.value(table).rows();
    if rows > slots {
        return Err(Error::Shape(format!("{rows} descriptor tokens exceed {slots} query positions")));
    }
    let pos = ctx.g.gather(table, &(0..rows).collect::<Vec<_>>())?;
    let q = ctx.g.add(q, pos)?;
    let qn = layer_norm(ctx, q, &format!("{prefix}.ln_q"))?;
    let kv = layer_norm(ctx, features, &format!("{prefix}.ln_kv"))?;
    let a = attention(ctx, qn, kv, &format!("{prefix}.attn"), heads, key_mask)?;
    Ok((ctx.g.add(q, a.out)?, a.weights))
}

struct Stack<'a> {
    prefix: &'a str,
    film_prefix: &'a str,
    layers: usize,
    heads: usize,
    moe_last: Option<&'a crate::model::config::MoeSpec>,
}

fn run_stack<T: Scalar>(
    ctx: &mut Ctx<T>,
    mut h: Var,
    mask: &[bool],
    stack: Stack,
    film: Option<Var>,
    attn: &mut Vec<Var>,
) -> Result<(Var, Vec<Var>, Option<Var>, Option<Var>)> {
    let d = ctx.g.value(h).cols();
    let mut taps = Vec::with_capacity(stack.layers);
    let (mut gates, mut aux) = (None, None);
    for l in 0..stack.layers {
        let moe = if l + 1 == stack.layers { stack.moe_last } else { None };
        let b = transformer_block(ctx, h, &format!("{}.{l}", stack.prefix), stack.heads, mask, moe)?;
        h = b.out;
        attn.extend(b.attn);
        if b.gates.is_some() {
            gates = b.gates;
            aux = b.aux;
        }
        if let Some(pooled) = film {
            let (g, bt) = film_params(ctx, pooled, &format!("{}.{l}", stack.film_prefix), d)?;
            h = film_apply(ctx, h, g, bt)?;
        }
        taps.push(h);
    }
    Ok((h, taps, gates, aux))
}

/// Time-mean of a descriptor over its first `valid` rows, `[1, k]`.
fn pooled_descriptor<T: Scalar>(ctx: &mut Ctx<T>, d: &DescriptorTensor) -> Result<Var> {
    let k = d.dims();
    let mut m = vec![0.0; k];
    for t in 0..d.frames {
        for (c, v) in m.iter_mut().enumerate() {
            *v += d.at(t, c);
        }
    }
    let n = d.frames.max(1) as f64;
    let data = m.iter().map(|&v| T::of(v / n)).collect();
    Ok(ctx.constant(Tensor::new(data, vec![1, k])?))
}

fn film_input<T: Scalar>(ctx: &mut Ctx<T>, cfg: &ArmConfig, s: &Sample, audio: bool) -> Result<Option<Var>> {
    let kind = cfg.film.as_ref().and_then(|f| if audio { f.audio } else { f.midi });
    match kind {
        None => Ok(None),
        Some(k) => Ok(Some(pooled_descriptor(ctx, s.descriptor(k)?)?)),
    }
}

/// CNN -> injection -> learned positions -> Transformer -> mean pool.
pub fn audio_encode<T: Scalar>(ctx: &mut Ctx<T>, cfg: &ArmConfig, s: &Sample) -> Result<Encoded> {
    s.check(cfg)?;
    let a = &cfg.audio;
    let x: Vec<T> = s.audio.iter().map(|&v| T::of(v)).collect();
    let mut h = ctx.constant(Tensor::new(x, vec![s.audio.len(), 1])?);
    for (i, &(k, st, pad)) in CNN_LAYERS.iter().enumerate() {
        h = conv1d(ctx, h, &format!("audio.cnn.{i}.conv"), k, st, pad)?;
        h = group_norm(ctx, h, a.gn_groups, &format!("audio.cnn.{i}.gn"))?;
        h = ctx.g.gelu(h);
    }
    let t_f = ctx.g.value(h).rows();
    let mut attn = Vec::new();
    let inj = cfg.audio_injection;
    if let Some(Injection { descriptor, mechanism }) = inj {
        let d = s.descriptor(descriptor)?;
        match mechanism {
            Mechanism::Concat | Mechanism::CrossModal => {
                let dv = resampled(ctx, d, t_f, t_f)?;
                h = inject_concat(ctx, h, dv, "inject.audio")?;
            }
            Mechanism::CrossAttention => {
                let dv = desc_const(ctx, d, d.frames)?;
                let (out, w) = inject_xattn(ctx, h, dv, "inject.audio", a.heads, None)?;
                h = out;
                attn.extend(w);
            }
            Mechanism::Reverse => {}
        }
    }
    let table = ctx.p("audio.pos")?;
    let pos = ctx.g.gather(table, &(0..t_f).collect::<Vec<_>>())?;
    h = ctx.g.add(h, pos)?;
    if let Some(Injection { descriptor, mechanism: Mechanism::Reverse }) = inj {
        let d = s.descriptor(descriptor)?;
        let dv = desc_const(ctx, d, d.frames)?;
        let (out, w) = inject_reverse(ctx, dv, h, "inject.audio", a.heads, None)?;
        h = out;
        attn.extend(w);
    }
    let mask = vec![true; ctx.g.value(h).rows()];
    let film = film_input(ctx, cfg, s, true)?;
    let stack = Stack {
        prefix: "audio.tf",
        film_prefix: "film.audio",
        layers: a.layers,
        heads: a.heads,
        moe_last: cfg.moe.as_ref().filter(|m| m.audio),
    };
    let (h, taps, gates, aux) = run_stack(ctx, h, &mask, stack, film, &mut attn)?;
    let pooled = ctx.g.mean_rows(h)?;
    Ok(Encoded { pooled, taps, mask, attn, gates, aux })
}

/// Event embeddings -> linear + LN -> injection -> sinusoidal positions ->
/// pre-norm Transformer -> masked mean -> LN. `padding` supplies the tokens
/// of masked slots appended after the valid events.
pub fn midi_encode<T: Scalar>(ctx: &mut Ctx<T>, cfg: &ArmConfig, s: &Sample, padding: Option<&MidiTokens>) -> Result<Encoded> {
    s.check(cfg)?;
    let m = &cfg.midi;
    let n = s.midi.len();
    let rows = n + padding.map_or(0, |p| p.len());
    if rows > m.max_notes {
        return Err(Error::Shape(format!("{rows} slots exceed max_notes {}", m.max_notes)));
    }
    let mask: Vec<bool> = (0..rows).map(|i| i < n).collect();
    let mut h = embed_events(ctx, &s.midi, padding)?;
    let mut attn = Vec::new();
    let key_mask = if rows > n { Some(mask.as_slice()) } else { None };
    let inj = cfg.midi_injection;
    if let Some(Injection { descriptor, mechanism }) = inj {
        let d = s.descriptor(descriptor)?;
        match mechanism {
            Mechanism::Concat => {
                let dv = desc_const(ctx, d, rows)?;
                h = inject_concat(ctx, h, dv, "inject.midi")?;
            }
            Mechanism::CrossModal => {
                let dv = resampled(ctx, d, n, rows)?;
                h = inject_concat(ctx, h, dv, "inject.midi")?;
            }
            Mechanism::CrossAttention => {
                let dv = desc_const(ctx, d, rows)?;
                let (out, w) = inject_xattn(ctx, h, dv, "inject.midi", m.heads, key_mask)?;
                h = out;
                attn.extend(w);
            }
            Mechanism::Reverse => {}
        }
    }
    let pos = ctx.constant(sinusoidal_positions(rows, m.d_model));
    h = ctx.g.add(h, pos)?;
    if let Some(Injection { descriptor, mechanism: Mechanism::Reverse }) = inj {
        let d = s.descriptor(descriptor)?;
        let dv = desc_const(ctx, d, rows)?;
        let (out, w) = inject_reverse(ctx, dv, h, "inject.midi", m.heads, key_mask)?;
        h = out;
        attn.extend(w);
    }
    let film = film_input(ctx, cfg, s, false)?;
    let stack = Stack {
        prefix: "midi.tf",
        film_prefix: "film.midi",
        layers: m.layers,
        heads: m.heads,
        moe_last: cfg.moe.as_ref().filter(|x| x.midi),
    };
    let (h, taps, gates, aux) = run_stack(ctx, h, &mask, stack, film, &mut attn)?;
    let pooled = ctx.g.masked_mean_rows(h, &mask)?;
    let pooled = layer_norm(ctx, pooled, "midi.out_ln")?;
    Ok(Encoded { pooled, taps, mask, attn, gates, aux })
}

fn embed_events<T: Scalar>(ctx: &mut Ctx<T>, tokens: &MidiTokens, padding: Option<&MidiTokens>) -> Result<Var> {
    let pad = |v: &[usize], tail: Option<&Vec<usize>>| {
        let mut v = v.to_vec();
        v.extend(tail.into_iter().flatten());
        v
    };
    let tp = ctx.p("midi.emb.pitch")?;
    let tv = ctx.p("midi.emb.velocity")?;
    let td = ctx.p("midi.emb.duration")?;
    let p = ctx.g.gather(tp, &pad(&tokens.pitch, padding.map(|t| &t.pitch)))?;
    let v = ctx.g.gather(tv, &pad(&tokens.velocity, padding.map(|t| &t.velocity)))?;
    let d = ctx.g.gather(td, &pad(&tokens.duration, padding.map(|t| &t.duration)))?;
    let e = ctx.g.concat_cols(&[p, v, d])?;
    let e = linear(ctx, e, "midi.emb.proj")?;
    layer_norm(ctx, e, "midi.emb.ln")
}

/// Separate descriptor encoder: input projection, learned positions,
/// Transformer, final LN, mean pool, projection into the shared space.
pub fn tower_encode<T: Scalar>(ctx: &mut Ctx<T>, spec: &TowerSpec, d: &DescriptorTensor) -> Result<Var> {
    let dv = desc_const(ctx, d, d.frames)?;
    let mut h = linear(ctx, dv, "tower.in")?;
    let table = ctx.p("tower.pos")?;
    if d.frames > ctx.g.value(table).rows() {
        return Err(Error::Shape(format!("{} descriptor frames exceed the tower position table", d.frames)));
    }
    let pos = ctx.g.gather(table, &(0..d.frames).collect::<Vec<_>>())?;
    h = ctx.g.add(h, pos)?;
    let mask = vec![true; d.frames];
    for l in 0..spec.layers {
        h = transformer_block(ctx, h, &format!("tower.tf.{l}"), spec.heads, &mask, None)?.out;
    }
    let h = layer_norm(ctx, h, "tower.ln")?;
    let pooled = ctx.g.mean_rows(h)?;
    linear(ctx, pooled, "tower.out")
}
