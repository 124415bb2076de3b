//! Frame-level two-stream MLP baseline with decision-level fusion:
//! `logits = λ·MLP_v(v) + (1 − λ)·MLP_a(a_ctx)`.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{context_pool_all, FeatureSequence};
use crate::fusion::layers::Linear;
use crate::fusion::{Binder, ParamId, ParamStore};
use crate::metrics::{evaluate, AbsentClassPolicy, MetricReport};
use crate::numcore::{Matrix, NumError, Real, Tape, Var};
use crate::objective::focal_on_tape;
use crate::trainer::{clip_global_norm, AdamW};
use crate::{Error, Result, NUM_CLASSES};

pub const BASELINE_HIDDEN: usize = 128;
/// Audio context radius in frames on either side.
pub const CONTEXT_RADIUS: usize = 18;
pub const DEFAULT_LAMBDAS: [f64; 4] = [0.0, 0.5, 0.7, 1.0];

#[derive(Clone, Debug)]
struct Mlp {
    hidden: Linear,
    output: Linear,
}

impl Mlp {
    fn apply<T: Real>(&self, tape: &mut Tape<T>, b: &mut Binder<T>, x: Var) -> Var {
        let h = self.hidden.apply(tape, b, x);
        let h = tape.gelu(h);
        self.output.apply(tape, b, h)
    }
}

#[derive(Clone, Debug)]
pub struct BaselineModel<T: Real = f32> {
    params: ParamStore<T>,
    visual: Mlp,
    audio: Mlp,
    lambda: f64,
    d_v: usize,
    d_a: usize,
}

impl<T: Real> BaselineModel<T> {
    pub fn new(d_v: usize, d_a: usize, hidden: usize, lambda: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::Config(format!("lambda must be in [0, 1], got {lambda}")));
        }
        if d_v == 0 || d_a == 0 || hidden == 0 {
            return Err(Error::Config("baseline dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut mlp = |name: &str, d_in: usize| Mlp {
            hidden: Linear::new(&mut params, &mut rng, &format!("{name}.hidden"), d_in, hidden, true),
            output: Linear::new(&mut params, &mut rng, &format!("{name}.output"), hidden, NUM_CLASSES, true),
        };
        let visual = mlp("mlp_v", d_v);
        let audio = mlp("mlp_a", d_a);
        Ok(Self {
            params,
            visual,
            audio,
            lambda,
            d_v,
            d_a,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Records `λ·MLP_v(visual) + (1 − λ)·MLP_a(audio)` for a batch of
    /// frames (one per row). Also returns the two stream outputs.
    pub fn forward_on_tape(&self, tape: &mut Tape<T>, b: &mut Binder<T>, visual: Var, audio: Var) -> (Var, Var, Var) {
        let v_out = self.visual.apply(tape, b, visual);
        let a_out = self.audio.apply(tape, b, audio);
        let lv = tape.scale(v_out, T::lit(self.lambda));
        let la = tape.scale(a_out, T::lit(1.0 - self.lambda));
        (tape.add(lv, la), v_out, a_out)
    }

    /// Fused logits plus `(V_out, A_out)` for frames stacked in rows.
    pub fn forward_streams(&self, visual: &Matrix<T>, audio_ctx: &Matrix<T>) -> Result<(Matrix<T>, Matrix<T>, Matrix<T>)> {
        if visual.cols() != self.d_v || audio_ctx.cols() != self.d_a || visual.rows() != audio_ctx.rows() {
            return Err(NumError::Dimension {
                op: "baseline_forward",
                left: visual.shape(),
                right: audio_ctx.shape(),
            }
            .into());
        }
        let mut tape = Tape::new();
        let mut b = Binder::new(&self.params, false);
        let v = tape.constant(visual.clone());
        let a = tape.constant(audio_ctx.clone());
        let (z, vo, ao) = self.forward_on_tape(&mut tape, &mut b, v, a);
        Ok((tape.value(z).clone(), tape.value(vo).clone(), tape.value(ao).clone()))
    }

    /// Logits for frames stacked in rows.
    pub fn forward(&self, visual: &Matrix<T>, audio_ctx: &Matrix<T>) -> Result<Matrix<T>> {
        Ok(self.forward_streams(visual, audio_ctx)?.0)
    }
}

/// Logits for a single frame.
pub fn baseline_forward(v_feat: &[f32], a_ctx: &[f32], model: &BaselineModel<f32>) -> Result<Vec<f32>> {
    let z = model.forward(&Matrix::row_vector(v_feat), &Matrix::row_vector(a_ctx))?;
    Ok(z.into_vec())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub epochs: usize,
    /// Frames per mini-batch.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub hidden: usize,
    pub context_radius: usize,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 128,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            hidden: BASELINE_HIDDEN,
            context_radius: CONTEXT_RADIUS,
            seed: 0,
        }
    }
}

/// Frames of a set of videos, stacked row-wise, with pooled audio context.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSet {
    pub visual: Matrix<f32>,
    pub audio_ctx: Matrix<f32>,
    pub labels: Vec<i8>,
}

impl FrameSet {
    /// Every frame of `videos`; frames labelled `-1` are kept so callers can
    /// decide what to skip.
    pub fn from_videos(videos: &[FeatureSequence], radius: usize) -> Result<Self> {
        let first = videos.first().ok_or(Error::EmptyTrainingSet)?;
        let (d_v, d_a) = (first.visual.cols(), first.audio.cols());
        let mut visual = Vec::new();
        let mut audio = Vec::new();
        let mut labels = Vec::new();
        for seq in videos {
            if seq.visual.cols() != d_v || seq.audio.cols() != d_a {
                return Err(NumError::Dimension {
                    op: "frame set",
                    left: (seq.visual.cols(), seq.audio.cols()),
                    right: (d_v, d_a),
                }
                .into());
            }
            let ctx = context_pool_all(&seq.audio, radius);
            visual.extend_from_slice(seq.visual.data());
            audio.extend_from_slice(ctx.data());
            labels.extend_from_slice(&seq.labels);
        }
        let n = labels.len();
        Ok(Self {
            visual: Matrix::from_vec(n, d_v, visual)?,
            audio_ctx: Matrix::from_vec(n, d_a, audio)?,
            labels,
        })
    }

    fn gather(&self, rows: &[usize]) -> (Matrix<f32>, Matrix<f32>, Vec<i8>) {
        let pick = |m: &Matrix<f32>| {
            let data = rows.iter().flat_map(|&r| m.row(r).iter().copied()).collect();
            Matrix::from_vec(rows.len(), m.cols(), data).expect("sized")
        };
        (
            pick(&self.visual),
            pick(&self.audio_ctx),
            rows.iter().map(|&r| self.labels[r]).collect(),
        )
    }
}

/// Loss and gradients of frame-level cross-entropy over one batch.
pub fn baseline_gradients(model: &BaselineModel<f32>, visual: &Matrix<f32>, audio_ctx: &Matrix<f32>, labels: &[i8]) -> Result<(f32, Vec<Matrix<f32>>)> {
    let valid = labels.iter().filter(|&&l| l >= 0).count();
    if valid == 0 {
        return Err(Error::AllInvalid);
    }
    let mut tape = Tape::new();
    let mut b = Binder::new(model.params(), true);
    let v = tape.constant(visual.clone());
    let a = tape.constant(audio_ctx.clone());
    let (z, _, _) = model.forward_on_tape(&mut tape, &mut b, v, a);
    let weights = [1.0f32; NUM_CLASSES];
    let loss = focal_on_tape(&mut tape, z, labels, &weights, 0.0, 1.0 / valid as f32)?;
    let g = tape.backward(loss);
    let grads = (0..model.params().len())
        .map(|i| {
            let id = ParamId(i);
            b.bound(id)
                .and_then(|var| g.get(var).cloned())
                .unwrap_or_else(|| {
                    let p = model.params().get(id);
                    Matrix::zeros(p.rows(), p.cols())
                })
        })
        .collect();
    Ok((tape.value(loss).get(0, 0), grads))
}

/// Trains both streams jointly under a fixed `λ`.
pub fn train_baseline(cfg: &BaselineConfig, lambda: f64, train: &FrameSet) -> Result<BaselineModel<f32>> {
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::Config("epochs and batch_size must be positive".into()));
    }
    let mut model = BaselineModel::<f32>::new(train.visual.cols(), train.audio_ctx.cols(), cfg.hidden, lambda, cfg.seed)?;
    let mut rows: Vec<usize> = (0..train.labels.len()).filter(|&i| train.labels[i] >= 0).collect();
    if rows.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let mut opt = AdamW::new(model.params().values(), 0.9, 0.999, 1e-8, cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for epoch in 1..=cfg.epochs {
        rows.shuffle(&mut rng);
        for (step, chunk) in rows.chunks(cfg.batch_size).enumerate() {
            let (v, a, y) = train.gather(chunk);
            let (loss, mut grads) = baseline_gradients(&model, &v, &a, &y)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step: step + 1,
                    loss: loss as f64,
                });
            }
            clip_global_norm(&mut grads, 1.0);
            opt.step(model.params_mut().values_mut(), &grads, cfg.learning_rate);
        }
    }
    Ok(model)
}

/// Frame-level metrics over the valid frames of `frames`.
pub fn evaluate_baseline(model: &BaselineModel<f32>, frames: &FrameSet) -> Result<MetricReport> {
    let z = model.forward(&frames.visual, &frames.audio_ctx)?;
    let pred: Vec<u8> = (0..z.rows()).map(|r| z.row_argmax(r) as u8).collect();
    evaluate(&pred, &frames.labels, AbsentClassPolicy::Exclude)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub accuracy: f64,
    pub f1: f64,
}

/// Trains and scores one model per `λ`, all from the same seed.
pub fn lambda_sweep(cfg: &BaselineConfig, lambdas: &[f64], train: &[FeatureSequence], val: &[FeatureSequence]) -> Result<Vec<SweepRow>> {
    if lambdas.is_empty() {
        return Err(Error::Config("no lambda values to sweep".into()));
    }
    let train_frames = FrameSet::from_videos(train, cfg.context_radius)?;
    let val_frames = FrameSet::from_videos(val, cfg.context_radius)?;
    lambdas
        .iter()
        .map(|&lambda| {
            let model = train_baseline(cfg, lambda, &train_frames)?;
            let r = evaluate_baseline(&model, &val_frames)?;
            Ok(SweepRow {
                lambda,
                accuracy: r.accuracy,
                f1: r.macro_f1,
            })
        })
        .collect()
}

/// `lambda,accuracy,f1`.
pub fn write_sweep_csv<W: Write>(out: &mut W, rows: &[SweepRow]) -> std::io::Result<()> {
    writeln!(out, "lambda,accuracy,f1")?;
    for r in rows {
        writeln!(out, "{},{:.6},{:.6}", r.lambda, r.accuracy, r.f1)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame() -> (Vec<f32>, Vec<f32>) {
        ((0..6).map(|i| i as f32 * 0.3 - 0.7).collect(), (0..4).map(|i| 0.5 - i as f32 * 0.2).collect())
    }

    #[test]
    fn endpoints_select_one_stream() {
        let (v, a) = frame();
        for (lambda, pick_visual) in [(1.0, true), (0.0, false)] {
            let m = BaselineModel::<f32>::new(6, 4, 16, lambda, 9).unwrap();
            let (z, vo, ao) = m
                .forward_streams(&Matrix::row_vector(&v), &Matrix::row_vector(&a))
                .unwrap();
            assert_eq!(z, if pick_visual { vo } else { ao });
        }
    }

    #[test]
    fn fused_logits_lie_between_streams() {
        let (v, a) = frame();
        let m = BaselineModel::<f32>::new(6, 4, 16, 0.7, 2).unwrap();
        let (z, vo, ao) = m.forward_streams(&Matrix::row_vector(&v), &Matrix::row_vector(&a)).unwrap();
        for i in 0..NUM_CLASSES {
            let (lo, hi) = (vo.data()[i].min(ao.data()[i]), vo.data()[i].max(ao.data()[i]));
            assert!(z.data()[i] >= lo - 1e-6 && z.data()[i] <= hi + 1e-6);
        }
    }

    #[test]
    fn audio_stream_gets_no_gradient_at_lambda_one() {
        let (v, a) = frame();
        let m = BaselineModel::<f32>::new(6, 4, 16, 1.0, 2).unwrap();
        let (_, grads) = baseline_gradients(&m, &Matrix::row_vector(&v), &Matrix::row_vector(&a), &[3]).unwrap();
        for (name, g) in m.params().names().iter().zip(&grads) {
            if name.starts_with("mlp_a") {
                assert!(g.data().iter().all(|&x| x == 0.0), "{name}");
            }
        }
    }

    #[test]
    fn lambda_out_of_range() {
        assert!(BaselineModel::<f32>::new(2, 2, 4, 1.5, 0).is_err());
    }
}
