//! Dual-branch audio-visual Transformer.
//!
//! Each modality is projected to `d_model`, offset by a shared sinusoidal
//! positional encoding, and encoded by its own stack of pre-norm
//! self-attention layers. Cross-attention runs in both directions; when the
//! visual stream of a window is missing, the audio-queries-visual direction
//! has no valid keys and reduces to `LayerNorm(Q)`. Gates blend each
//! branch with its cross-modal counterpart and a per-frame MLP classifies
//! the concatenation.

mod checkpoint;
pub mod layers;
mod params;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use layers::DropoutCtx;
pub use params::{Binder, ParamId, ParamStore};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::numcore::{Matrix, NumError, Real, Tape, Var};
use crate::windowing::WindowSample;
use crate::{Error, Result, NUM_CLASSES};
use layers::{CrossBlock, EncoderLayer, Gate, Head, Linear};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    pub d_v: usize,
    pub d_a: usize,
    pub d_model: usize,
    /// Self-attention layers per branch.
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub attn_dropout: f64,
    pub residual_dropout: f64,
    /// Probability of dropping a training window's visual stream.
    pub modality_dropout: f64,
    pub n_classes: usize,
}

impl FusionConfig {
    /// Defaults for the given input dims: `d_model = 256`, three layers,
    /// four heads, `p = 0.10`.
    pub fn new(d_v: usize, d_a: usize) -> Self {
        Self {
            d_v,
            d_a,
            d_model: 256,
            layers: 3,
            heads: 4,
            ff_dim: 1024,
            attn_dropout: 0.1,
            residual_dropout: 0.1,
            modality_dropout: 0.10,
            n_classes: NUM_CLASSES,
        }
    }

    /// Sets `d_model` and keeps `ff_dim = 4·d_model`.
    pub fn with_d_model(mut self, d_model: usize) -> Self {
        self.d_model = d_model;
        self.ff_dim = 4 * d_model;
        self
    }

    pub fn with_layers(mut self, layers: usize) -> Self {
        self.layers = layers;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.d_v == 0 || self.d_a == 0 {
            return fail(format!("input dims must be positive (d_v={}, d_a={})", self.d_v, self.d_a));
        }
        if self.d_model == 0 || !self.d_model.is_multiple_of(2) {
            return fail(format!("d_model must be positive and even, got {}", self.d_model));
        }
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return fail(format!("d_model {} not divisible by heads {}", self.d_model, self.heads));
        }
        if self.ff_dim == 0 {
            return fail("ff_dim must be positive".into());
        }
        for (name, rate) in [
            ("attn_dropout", self.attn_dropout),
            ("residual_dropout", self.residual_dropout),
            ("modality_dropout", self.modality_dropout),
        ] {
            if !(0.0..1.0).contains(&rate) {
                return fail(format!("{name} must be in [0, 1), got {rate}"));
            }
        }
        if self.n_classes != NUM_CLASSES {
            return fail(format!("n_classes must be {NUM_CLASSES}, got {}", self.n_classes));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Visual,
    Audio,
}

/// Cross-attention direction, named by which branch supplies the queries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// Visual queries, audio keys/values (`H_{v→a}`).
    VisualToAudio,
    /// Audio queries, visual keys/values (`H_{a→v}`).
    AudioToVisual,
}

#[derive(Clone, Debug)]
struct Layout {
    proj_v: Linear,
    proj_a: Linear,
    enc_v: Vec<EncoderLayer>,
    enc_a: Vec<EncoderLayer>,
    cross_va: CrossBlock,
    cross_av: CrossBlock,
    gate_v: Gate,
    gate_a: Gate,
    head: Head,
}

impl Layout {
    fn build<T: Real, R: Rng + ?Sized>(cfg: &FusionConfig, store: &mut ParamStore<T>, rng: &mut R) -> Self {
        let d = cfg.d_model;
        let proj_v = Linear::new(store, rng, "proj_v", cfg.d_v, d, true);
        let proj_a = Linear::new(store, rng, "proj_a", cfg.d_a, d, true);
        let enc_v = (0..cfg.layers)
            .map(|i| EncoderLayer::new(store, rng, &format!("enc_v.{i}"), d, cfg.heads, cfg.ff_dim))
            .collect();
        let enc_a = (0..cfg.layers)
            .map(|i| EncoderLayer::new(store, rng, &format!("enc_a.{i}"), d, cfg.heads, cfg.ff_dim))
            .collect();
        let cross_va = CrossBlock::new(store, rng, "cross_va", d, cfg.heads);
        let cross_av = CrossBlock::new(store, rng, "cross_av", d, cfg.heads);
        let gate_v = Gate::new(store, rng, "gate_v", d);
        let gate_a = Gate::new(store, rng, "gate_a", d);
        let head = Head::new(store, rng, d, cfg.n_classes);
        Self {
            proj_v,
            proj_a,
            enc_v,
            enc_a,
            cross_va,
            cross_av,
            gate_v,
            gate_a,
            head,
        }
    }
}

/// Intermediate tape variables of one window's forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub h_v0: Var,
    pub h_a0: Var,
    pub h_v: Var,
    pub h_a: Var,
    pub h_va: Var,
    pub h_av: Var,
    pub f_v: Var,
    pub f_a: Var,
    pub g_v: Var,
    pub g_a: Var,
    pub logits: Var,
}

#[derive(Clone, Debug)]
pub struct FusionModel<T: Real = f32> {
    config: FusionConfig,
    params: ParamStore<T>,
    layout: Layout,
}

impl<T: Real> FusionModel<T> {
    /// Randomly initialized model. Gate biases start at zero so both gates
    /// open at 0.5.
    pub fn new(config: FusionConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let layout = Layout::build(&config, &mut params, &mut rng);
        Ok(Self { config, params, layout })
    }

    pub fn config(&self) -> &FusionConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn cast<U: Real>(&self) -> FusionModel<U> {
        FusionModel {
            config: self.config.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    pub fn gate(&self, branch: Branch) -> &Gate {
        match branch {
            Branch::Visual => &self.layout.gate_v,
            Branch::Audio => &self.layout.gate_a,
        }
    }

    fn encoder(&self, branch: Branch) -> &[EncoderLayer] {
        match branch {
            Branch::Visual => &self.layout.enc_v,
            Branch::Audio => &self.layout.enc_a,
        }
    }

    fn cross(&self, dir: Direction) -> &CrossBlock {
        match dir {
            Direction::VisualToAudio => &self.layout.cross_va,
            Direction::AudioToVisual => &self.layout.cross_av,
        }
    }

    fn check_window(&self, s: &WindowSample) -> Result<()> {
        let w = s.window_len();
        if s.v_in.shape() != (w, self.config.d_v) {
            return Err(NumError::Dimension {
                op: "visual input",
                left: s.v_in.shape(),
                right: (w, self.config.d_v),
            }
            .into());
        }
        if s.a_in.shape() != (w, self.config.d_a) {
            return Err(NumError::Dimension {
                op: "audio input",
                left: s.a_in.shape(),
                right: (w, self.config.d_a),
            }
            .into());
        }
        if w == 0 || s.pad_len >= w {
            return Err(Error::Config(format!("window of length {w} with {} padded rows", s.pad_len)));
        }
        Ok(())
    }

    /// Records the projection step, `X·W + b + PE`, for both modalities.
    pub fn project_on_tape(&self, tape: &mut Tape<T>, b: &mut Binder<T>, visual: Var, audio: Var) -> (Var, Var) {
        let w = tape.value(visual).rows();
        let pe = tape.constant(positional_encoding::<T>(w, self.config.d_model).expect("d_model validated even"));
        let pv = self.layout.proj_v.apply(tape, b, visual);
        let pa = self.layout.proj_a.apply(tape, b, audio);
        (tape.add(pv, pe), tape.add(pa, pe))
    }

    pub fn encode_on_tape<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        b: &mut Binder<T>,
        h0: Var,
        key_valid: &[bool],
        branch: Branch,
        drop: &mut Option<DropoutCtx<'_, R>>,
    ) -> Var {
        let mut h = h0;
        for layer in self.encoder(branch) {
            h = layer.apply(tape, b, h, key_valid, drop);
        }
        h
    }

    pub fn cross_on_tape<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        b: &mut Binder<T>,
        queries: Var,
        keys: Var,
        kv_valid: &[bool],
        dir: Direction,
        drop: &mut Option<DropoutCtx<'_, R>>,
    ) -> Var {
        self.cross(dir).apply(tape, b, queries, keys, kv_valid, drop)
    }

    pub fn classify_on_tape(&self, tape: &mut Tape<T>, b: &mut Binder<T>, f_v: Var, f_a: Var) -> Var {
        self.layout.head.apply(tape, b, f_v, f_a)
    }

    /// Records the full forward pass of one window.
    pub fn forward_on_tape<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        b: &mut Binder<T>,
        sample: &WindowSample,
        drop: &mut Option<DropoutCtx<'_, R>>,
    ) -> Result<ForwardVars> {
        self.check_window(sample)?;
        let key_valid = sample.key_valid();
        let visual_valid = sample.visual_key_valid();

        let v = tape.constant(sample.v_in.cast());
        let a = tape.constant(sample.a_in.cast());
        let (h_v0, h_a0) = self.project_on_tape(tape, b, v, a);
        let h_v = self.encode_on_tape(tape, b, h_v0, &key_valid, Branch::Visual, drop);
        let h_a = self.encode_on_tape(tape, b, h_a0, &key_valid, Branch::Audio, drop);
        let h_va = self.cross_on_tape(tape, b, h_v, h_a, &key_valid, Direction::VisualToAudio, drop);
        let h_av = self.cross_on_tape(tape, b, h_a, h_v, &visual_valid, Direction::AudioToVisual, drop);
        let (f_v, g_v) = self.layout.gate_v.apply(tape, b, h_v, h_va);
        let (f_a, g_a) = self.layout.gate_a.apply(tape, b, h_a, h_av);
        let logits = self.classify_on_tape(tape, b, f_v, f_a);
        Ok(ForwardVars {
            h_v0,
            h_a0,
            h_v,
            h_a,
            h_va,
            h_av,
            f_v,
            f_a,
            g_v,
            g_a,
            logits,
        })
    }

    /// Per-window logits (`W × 8` each). Dropout is active only when
    /// `train_mode` is set; inference is a deterministic function of the
    /// inputs and parameters.
    pub fn forward<R: Rng + ?Sized>(&self, batch: &[WindowSample], train_mode: bool, rng: &mut R) -> Result<Vec<Matrix<T>>> {
        let mut out = Vec::with_capacity(batch.len());
        for sample in batch {
            let mut tape = Tape::new();
            let mut b = Binder::new(&self.params, false);
            let mut drop = train_mode.then_some(DropoutCtx {
                rng: &mut *rng,
                attn: self.config.attn_dropout,
                residual: self.config.residual_dropout,
            });
            let vars = self.forward_on_tape(&mut tape, &mut b, sample, &mut drop)?;
            out.push(tape.value(vars.logits).clone());
        }
        Ok(out)
    }

    /// Inference-mode logits for one window.
    pub fn predict_window(&self, sample: &WindowSample) -> Result<Matrix<T>> {
        let mut tape = Tape::new();
        let mut b = Binder::new(&self.params, false);
        let vars = self.forward_on_tape::<ChaCha8Rng>(&mut tape, &mut b, sample, &mut None)?;
        Ok(tape.value(vars.logits).clone())
    }

    /// `(H_v0, H_a0)` for raw `W × d_v` and `W × d_a` inputs.
    pub fn project_inputs(&self, visual: &Matrix<T>, audio: &Matrix<T>) -> Result<(Matrix<T>, Matrix<T>)> {
        if visual.cols() != self.config.d_v || audio.cols() != self.config.d_a || visual.rows() != audio.rows() {
            return Err(NumError::Dimension {
                op: "project_inputs",
                left: visual.shape(),
                right: audio.shape(),
            }
            .into());
        }
        let mut tape = Tape::new();
        let mut b = Binder::new(&self.params, false);
        let v = tape.constant(visual.clone());
        let a = tape.constant(audio.clone());
        let (hv, ha) = self.project_on_tape(&mut tape, &mut b, v, a);
        Ok((tape.value(hv).clone(), tape.value(ha).clone()))
    }

    /// Runs one branch's encoder stack in inference mode.
    pub fn encode_unimodal(&self, h0: &Matrix<T>, key_valid: &[bool], branch: Branch) -> Result<Matrix<T>> {
        self.check_hidden(h0, key_valid.len())?;
        let mut tape = Tape::new();
        let mut b = Binder::new(&self.params, false);
        let x = tape.constant(h0.clone());
        let h = self.encode_on_tape::<ChaCha8Rng>(&mut tape, &mut b, x, key_valid, branch, &mut None);
        Ok(tape.value(h).clone())
    }

    /// Cross-attention in inference mode. With no valid key the result is
    /// exactly `layer_norm(queries)`.
    pub fn safe_cross_attention(&self, queries: &Matrix<T>, keys: &Matrix<T>, kv_valid: &[bool], dir: Direction) -> Result<Matrix<T>> {
        self.check_hidden(queries, queries.rows())?;
        self.check_hidden(keys, kv_valid.len())?;
        let mut tape = Tape::new();
        let mut b = Binder::new(&self.params, false);
        let q = tape.constant(queries.clone());
        let k = tape.constant(keys.clone());
        let out = self.cross_on_tape::<ChaCha8Rng>(&mut tape, &mut b, q, k, kv_valid, dir, &mut None);
        Ok(tape.value(out).clone())
    }

    /// `(F, G)` for one branch's gate.
    pub fn gate_fuse(&self, own: &Matrix<T>, cross: &Matrix<T>, branch: Branch) -> Result<(Matrix<T>, Matrix<T>)> {
        if own.shape() != cross.shape() {
            return Err(NumError::Dimension {
                op: "gate_fuse",
                left: own.shape(),
                right: cross.shape(),
            }
            .into());
        }
        self.check_hidden(own, own.rows())?;
        let mut tape = Tape::new();
        let mut b = Binder::new(&self.params, false);
        let h = tape.constant(own.clone());
        let c = tape.constant(cross.clone());
        let (f, g) = self.gate(branch).apply(&mut tape, &mut b, h, c);
        Ok((tape.value(f).clone(), tape.value(g).clone()))
    }

    pub fn classify(&self, f_v: &Matrix<T>, f_a: &Matrix<T>) -> Result<Matrix<T>> {
        if f_v.shape() != f_a.shape() {
            return Err(NumError::Dimension {
                op: "classify",
                left: f_v.shape(),
                right: f_a.shape(),
            }
            .into());
        }
        self.check_hidden(f_v, f_v.rows())?;
        let mut tape = Tape::new();
        let mut b = Binder::new(&self.params, false);
        let v = tape.constant(f_v.clone());
        let a = tape.constant(f_a.clone());
        let out = self.classify_on_tape(&mut tape, &mut b, v, a);
        Ok(tape.value(out).clone())
    }

    fn check_hidden(&self, m: &Matrix<T>, rows: usize) -> Result<()> {
        if m.cols() != self.config.d_model || m.rows() != rows {
            return Err(NumError::Dimension {
                op: "hidden state",
                left: m.shape(),
                right: (rows, self.config.d_model),
            }
            .into());
        }
        Ok(())
    }
}

/// Sinusoidal position table: `PE[pos, 2i] = sin(pos / 10000^(2i/d))`,
/// `PE[pos, 2i+1] = cos(pos / 10000^(2i/d))`.
pub fn positional_encoding<T: Real>(len: usize, d_model: usize) -> Result<Matrix<T>> {
    if d_model == 0 || !d_model.is_multiple_of(2) {
        return Err(Error::Config(format!("positional encoding needs an even d_model, got {d_model}")));
    }
    let mut pe = Matrix::zeros(len, d_model);
    for pos in 0..len {
        for i in 0..d_model / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            pe.set(pos, 2 * i, T::lit(angle.sin()));
            pe.set(pos, 2 * i + 1, T::lit(angle.cos()));
        }
    }
    Ok(pe)
}

/// Zeroes the visual stream of each window independently with probability
/// `p`. A no-op outside training.
pub fn modality_dropout<R: Rng + ?Sized>(batch: &mut [WindowSample], p: f64, rng: &mut R, train_mode: bool) {
    if !train_mode || p <= 0.0 {
        return;
    }
    for sample in batch {
        if rng.random::<f64>() < p {
            sample.drop_visual();
        }
    }
}
