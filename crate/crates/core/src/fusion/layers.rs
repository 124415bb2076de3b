//! Building blocks recorded on a [`Tape`]: linear maps, layer norm,
//! multi-head attention with key masking, encoder layers, gates, and the
//! classifier head.

use rand::Rng;

use super::params::{fan_in_uniform, Binder, ParamId, ParamStore};
use crate::numcore::{Matrix, Real, Tape, Var, LAYER_NORM_EPS};

/// Dropout randomness for one forward pass. Absent at inference.
pub struct DropoutCtx<'r, R: Rng + ?Sized> {
    pub rng: &'r mut R,
    pub attn: f64,
    pub residual: f64,
}

pub(crate) fn dropout<T: Real, R: Rng + ?Sized>(tape: &mut Tape<T>, x: Var, rate: f64, rng: &mut R) -> Var {
    if rate <= 0.0 {
        return x;
    }
    let (rows, cols) = tape.value(x).shape();
    let keep = T::lit(1.0 / (1.0 - rate));
    let data = (0..rows * cols)
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect();
    let mask = tape.constant(Matrix::from_vec(rows, cols, data).expect("sized"));
    tape.mul(x, mask)
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub(crate) fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
    ) -> Self {
        let weight = store.register(format!("{name}.weight"), fan_in_uniform(rng, d_in, d_out));
        let bias = bias.then(|| store.register(format!("{name}.bias"), Matrix::zeros(1, d_out)));
        Self { weight, bias }
    }

    pub fn apply<T: Real>(&self, tape: &mut Tape<T>, b: &mut Binder<T>, x: Var) -> Var {
        let w = b.var(tape, self.weight);
        let y = tape.matmul(x, w);
        match self.bias {
            Some(id) => {
                let bias = b.var(tape, id);
                tape.add_row(y, bias)
            }
            None => y,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Norm {
    pub gain: ParamId,
    pub shift: ParamId,
}

impl Norm {
    pub(crate) fn new<T: Real>(store: &mut ParamStore<T>, name: &str, d: usize) -> Self {
        Self {
            gain: store.register(format!("{name}.gain"), Matrix::filled(1, d, T::one())),
            shift: store.register(format!("{name}.shift"), Matrix::zeros(1, d)),
        }
    }

    pub fn apply<T: Real>(&self, tape: &mut Tape<T>, b: &mut Binder<T>, x: Var) -> Var {
        let g = b.var(tape, self.gain);
        let s = b.var(tape, self.shift);
        tape.layer_norm(x, g, s, T::lit(LAYER_NORM_EPS))
    }
}

/// Multi-head attention. The key projection has no bias: a key bias shifts
/// every score of a query equally and cannot change the softmax.
#[derive(Clone, Debug)]
pub struct Attention {
    pub heads: usize,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

impl Attention {
    pub(crate) fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, rng: &mut R, name: &str, d: usize, heads: usize) -> Self {
        Self {
            heads,
            query: Linear::new(store, rng, &format!("{name}.query"), d, d, true),
            key: Linear::new(store, rng, &format!("{name}.key"), d, d, false),
            value: Linear::new(store, rng, &format!("{name}.value"), d, d, true),
            output: Linear::new(store, rng, &format!("{name}.output"), d, d, true),
        }
    }

    /// Returns `None` when every key is masked; the caller substitutes a
    /// zero attention output.
    pub fn apply<T: Real, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        b: &mut Binder<T>,
        queries: Var,
        keys: Var,
        key_valid: &[bool],
        drop: &mut Option<DropoutCtx<'_, R>>,
    ) -> Option<Var> {
        if !key_valid.iter().any(|&k| k) {
            return None;
        }
        let d = tape.value(queries).cols();
        let head_dim = d / self.heads;
        let scale = T::lit(1.0 / (head_dim as f64).sqrt());

        let q = self.query.apply(tape, b, queries);
        let k = self.key.apply(tape, b, keys);
        let v = self.value.apply(tape, b, keys);

        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (
                    tape.slice_cols(q, h * head_dim, head_dim),
                    tape.slice_cols(k, h * head_dim, head_dim),
                    tape.slice_cols(v, h * head_dim, head_dim),
                )
            };
            let scores = tape.matmul_nt(qh, kh);
            let scores = tape.scale(scores, scale);
            let mut probs = tape.masked_softmax(scores, key_valid);
            if let Some(ctx) = drop.as_mut() {
                probs = dropout(tape, probs, ctx.attn, ctx.rng);
            }
            outs.push(tape.matmul(probs, vh));
        }
        let joined = if outs.len() == 1 { outs[0] } else { tape.concat_cols(&outs) };
        Some(self.output.apply(tape, b, joined))
    }
}

/// Pre-norm self-attention encoder layer.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub norm_attn: Norm,
    pub attn: Attention,
    pub norm_ff: Norm,
    pub ff_in: Linear,
    pub ff_out: Linear,
}

impl EncoderLayer {
    pub(crate) fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        d: usize,
        heads: usize,
        ff_dim: usize,
    ) -> Self {
        Self {
            norm_attn: Norm::new(store, &format!("{name}.norm_attn"), d),
            attn: Attention::new(store, rng, &format!("{name}.attn"), d, heads),
            norm_ff: Norm::new(store, &format!("{name}.norm_ff"), d),
            ff_in: Linear::new(store, rng, &format!("{name}.ff_in"), d, ff_dim, true),
            ff_out: Linear::new(store, rng, &format!("{name}.ff_out"), ff_dim, d, true),
        }
    }

    pub fn apply<T: Real, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        b: &mut Binder<T>,
        x: Var,
        key_valid: &[bool],
        drop: &mut Option<DropoutCtx<'_, R>>,
    ) -> Var {
        let normed = self.norm_attn.apply(tape, b, x);
        let mut x = x;
        if let Some(mut attn) = self.attn.apply(tape, b, normed, normed, key_valid, drop) {
            if let Some(ctx) = drop.as_mut() {
                attn = dropout(tape, attn, ctx.residual, ctx.rng);
            }
            x = tape.add(x, attn);
        }
        let normed = self.norm_ff.apply(tape, b, x);
        let hidden = self.ff_in.apply(tape, b, normed);
        let hidden = tape.gelu(hidden);
        let mut ff = self.ff_out.apply(tape, b, hidden);
        if let Some(ctx) = drop.as_mut() {
            ff = dropout(tape, ff, ctx.residual, ctx.rng);
        }
        tape.add(x, ff)
    }
}

/// Cross-attention with post-norm residual: `LN(Q + Dropout(Attn))`, or
/// `LN(Q)` when no key is valid.
#[derive(Clone, Debug)]
pub struct CrossBlock {
    pub attn: Attention,
    pub norm: Norm,
}

impl CrossBlock {
    pub(crate) fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, rng: &mut R, name: &str, d: usize, heads: usize) -> Self {
        Self {
            attn: Attention::new(store, rng, &format!("{name}.attn"), d, heads),
            norm: Norm::new(store, &format!("{name}.norm"), d),
        }
    }

    pub fn apply<T: Real, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        b: &mut Binder<T>,
        queries: Var,
        keys: Var,
        kv_valid: &[bool],
        drop: &mut Option<DropoutCtx<'_, R>>,
    ) -> Var {
        match self.attn.apply(tape, b, queries, keys, kv_valid, drop) {
            Some(mut attn) => {
                if let Some(ctx) = drop.as_mut() {
                    attn = dropout(tape, attn, ctx.residual, ctx.rng);
                }
                let sum = tape.add(queries, attn);
                self.norm.apply(tape, b, sum)
            }
            None => self.norm.apply(tape, b, queries),
        }
    }
}

/// `G = σ([H; H_cross]·W + b)`, `F = G ⊙ H + (1 − G) ⊙ H_cross`.
#[derive(Clone, Debug)]
pub struct Gate {
    pub linear: Linear,
}

impl Gate {
    pub(crate) fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, rng: &mut R, name: &str, d: usize) -> Self {
        Self {
            linear: Linear::new(store, rng, name, 2 * d, d, true),
        }
    }

    /// Returns `(F, G)`.
    pub fn apply<T: Real>(&self, tape: &mut Tape<T>, b: &mut Binder<T>, own: Var, cross: Var) -> (Var, Var) {
        let joined = tape.concat_cols(&[own, cross]);
        let pre = self.linear.apply(tape, b, joined);
        let gate = tape.sigmoid(pre);
        let diff = tape.sub(own, cross);
        let scaled = tape.mul(gate, diff);
        (tape.add(cross, scaled), gate)
    }
}

/// Per-frame MLP over `[F_v; F_a]`.
#[derive(Clone, Debug)]
pub struct Head {
    pub hidden: Linear,
    pub output: Linear,
}

impl Head {
    pub(crate) fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, rng: &mut R, d: usize, n_classes: usize) -> Self {
        Self {
            hidden: Linear::new(store, rng, "head.hidden", 2 * d, d, true),
            output: Linear::new(store, rng, "head.output", d, n_classes, true),
        }
    }

    pub fn apply<T: Real>(&self, tape: &mut Tape<T>, b: &mut Binder<T>, fused_v: Var, fused_a: Var) -> Var {
        let joined = tape.concat_cols(&[fused_v, fused_a]);
        let h = self.hidden.apply(tape, b, joined);
        let h = tape.gelu(h);
        self.output.apply(tape, b, h)
    }
}
