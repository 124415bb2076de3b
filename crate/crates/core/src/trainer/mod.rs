//! Seeded mini-batch training of the fusion model.

mod ablation;
mod check;
mod optim;

pub use ablation::{ablation_grid, ablation_grid_with, write_ablation_csv, AblationAxes, AblationRow};
pub use check::{model_grad_check, random_window, GradFault, ModelGradReport, ParamCheck};
pub use optim::{clip_global_norm, AdamW};

use std::fs;
use std::io::Write;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::FeatureSequence;
use crate::fusion::{modality_dropout, save_checkpoint, Binder, DropoutCtx, FusionConfig, FusionModel};
use crate::inference::{predict_video, InferenceConfig, Smoother, DEFAULT_MEDIAN_K};
use crate::metrics::{AbsentClassPolicy, ConfusionMatrix, MetricReport};
use crate::numcore::{Matrix, Real, Tape};
use crate::objective::{effective_number_weights, focal_on_tape, ClassWeights, DEFAULT_BETA, DEFAULT_GAMMA};
use crate::windowing::{training_windows, WindowSample, DEFAULT_INVALID_THRESHOLD, DEFAULT_STRIDE, DEFAULT_WINDOW};
use crate::{Error, Result, NUM_CLASSES};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Cosine decay from the base rate to zero over all steps.
    Cosine,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeighting {
    /// Effective-number weights from the training windows' frame counts.
    #[default]
    EffectiveNumber,
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm cap; 0 disables clipping.
    pub grad_clip: f64,
    pub lr_schedule: LrSchedule,
    pub seed: u64,
    /// Focal-loss focusing exponent.
    pub gamma: f64,
    /// Effective-number decay.
    pub beta: f64,
    pub class_weighting: ClassWeighting,
    pub window: usize,
    pub stride: usize,
    pub invalid_threshold: f64,
    /// Validate every this many epochs (the last epoch is always validated).
    pub eval_every: usize,
    pub median_k: usize,
    pub smoother: Smoother,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 16,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 1e-4,
            grad_clip: 1.0,
            lr_schedule: LrSchedule::Constant,
            seed: 0,
            gamma: DEFAULT_GAMMA,
            beta: DEFAULT_BETA,
            class_weighting: ClassWeighting::EffectiveNumber,
            window: DEFAULT_WINDOW,
            stride: DEFAULT_STRIDE,
            invalid_threshold: DEFAULT_INVALID_THRESHOLD,
            eval_every: 1,
            median_k: DEFAULT_MEDIAN_K,
            smoother: Smoother::Median,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.epochs == 0 || self.batch_size == 0 || self.window == 0 || self.stride == 0 || self.eval_every == 0 {
            return fail("epochs, batch_size, window, stride and eval_every must be positive".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return fail("adam moment decays must be in [0, 1)".into());
        }
        if self.adam_eps <= 0.0 || self.weight_decay < 0.0 || self.grad_clip < 0.0 {
            return fail("adam_eps must be positive; weight_decay and grad_clip non-negative".into());
        }
        if self.gamma < 0.0 {
            return fail(format!("gamma must be >= 0, got {}", self.gamma));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return fail(format!("beta must be in [0, 1), got {}", self.beta));
        }
        if !(0.0..=1.0).contains(&self.invalid_threshold) {
            return fail(format!("invalid_threshold must be in [0, 1], got {}", self.invalid_threshold));
        }
        if self.median_k == 0 || self.median_k.is_multiple_of(2) {
            return fail(format!("median_k must be odd, got {}", self.median_k));
        }
        Ok(())
    }

    pub fn inference(&self) -> InferenceConfig {
        InferenceConfig {
            window: self.window,
            stride: self.stride,
            median_k: self.median_k,
            smoother: self.smoother,
        }
    }

    fn lr_at(&self, step: usize, total: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Cosine => {
                let frac = step as f64 / total.max(1) as f64;
                self.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }
}

/// One line of the metric log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: Option<f64>,
    pub val_f1: Option<f64>,
}

/// Loss and parameter gradients of one batch.
#[derive(Clone, Debug)]
pub struct BatchGrad<T> {
    pub loss: T,
    pub grads: Vec<Matrix<T>>,
    pub valid_frames: usize,
}

/// Labels with padded or otherwise invalid frames set to `-1`.
pub fn effective_labels(sample: &WindowSample) -> Vec<i8> {
    sample
        .labels
        .iter()
        .zip(&sample.frame_valid)
        .map(|(&l, &v)| if v { l } else { -1 })
        .collect()
}

/// Focal loss of a batch, normalized by its total number of valid frames,
/// and the gradient for every parameter. Dropout is applied only when
/// `dropout_rng` is supplied.
pub fn batch_gradients<T: Real, R: Rng + ?Sized>(
    model: &FusionModel<T>,
    batch: &[WindowSample],
    weights: &[T],
    gamma: T,
    mut dropout_rng: Option<&mut R>,
) -> Result<BatchGrad<T>> {
    let valid: usize = batch.iter().map(|s| s.frame_valid.iter().filter(|&&v| v).count()).sum();
    if valid == 0 {
        return Err(Error::AllInvalid);
    }
    let scale = T::one() / T::lit(valid as f64);
    let params = model.params();
    let mut grads = params.zeros_like();
    let mut loss = T::zero();
    for sample in batch {
        let mut tape = Tape::new();
        let mut binder = Binder::new(params, true);
        let mut drop = dropout_rng.as_deref_mut().map(|rng| DropoutCtx {
            rng,
            attn: model.config().attn_dropout,
            residual: model.config().residual_dropout,
        });
        let vars = model.forward_on_tape(&mut tape, &mut binder, sample, &mut drop)?;
        let labels = effective_labels(sample);
        if labels.iter().all(|&l| l < 0) {
            continue;
        }
        let loss_var = focal_on_tape(&mut tape, vars.logits, &labels, weights, gamma, scale)?;
        loss += tape.value(loss_var).get(0, 0);
        let g = tape.backward(loss_var);
        for (i, acc) in grads.iter_mut().enumerate() {
            if let Some(gv) = binder.bound(crate::fusion::ParamId(i)).and_then(|v| g.get(v)) {
                acc.add_assign(gv);
            }
        }
    }
    Ok(BatchGrad {
        loss,
        grads,
        valid_frames: valid,
    })
}

/// Per-class valid-frame counts over a set of windows.
pub fn class_counts(windows: &[WindowSample]) -> [u64; NUM_CLASSES] {
    let mut counts = [0u64; NUM_CLASSES];
    for w in windows {
        for (&l, &v) in w.labels.iter().zip(&w.frame_valid) {
            if v && l >= 0 {
                counts[l as usize] += 1;
            }
        }
    }
    counts
}

/// Inference-mode frame metrics over individual windows (no voting or
/// smoothing).
pub fn evaluate_windows(model: &FusionModel<f32>, windows: &[WindowSample]) -> Result<MetricReport> {
    let mut cm = ConfusionMatrix::default();
    for w in windows {
        let logits = model.predict_window(w)?;
        for (r, (&l, &v)) in w.labels.iter().zip(&w.frame_valid).enumerate() {
            if v && l >= 0 {
                cm.counts[l as usize][logits.row_argmax(r)] += 1;
            }
        }
    }
    if cm.total() == 0 {
        return Err(Error::NoValidFrames);
    }
    Ok(MetricReport::from_confusion(&cm, AbsentClassPolicy::Exclude))
}

/// Full-pipeline metrics over whole videos (windows, soft voting,
/// smoothing).
pub fn evaluate_videos(model: &FusionModel<f32>, videos: &[FeatureSequence], cfg: &InferenceConfig) -> Result<MetricReport> {
    let mut cm = ConfusionMatrix::default();
    for seq in videos {
        let pred = predict_video(model, seq, cfg)?;
        for (&p, &g) in pred.labels.iter().zip(&seq.labels) {
            if g >= 0 {
                cm.counts[g as usize][p as usize] += 1;
            }
        }
    }
    if cm.total() == 0 {
        return Err(Error::NoValidFrames);
    }
    Ok(MetricReport::from_confusion(&cm, AbsentClassPolicy::Exclude))
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    /// Parameters of the epoch with the best validation macro-F1 (the final
    /// epoch when there is no validation data).
    pub best: FusionModel<f32>,
    pub best_epoch: usize,
    pub last: FusionModel<f32>,
    pub log: Vec<EpochLog>,
    pub class_weights: ClassWeights,
    pub train_windows: usize,
}

/// Where [`fit`] writes its artifacts.
#[derive(Clone, Debug)]
pub struct FitOutputs {
    pub dir: PathBuf,
}

impl FitOutputs {
    pub fn best_checkpoint(&self) -> PathBuf {
        self.dir.join("best.ckpt")
    }

    pub fn last_good_checkpoint(&self) -> PathBuf {
        self.dir.join("last_good.ckpt")
    }

    pub fn metric_log(&self) -> PathBuf {
        self.dir.join("metrics.jsonl")
    }
}

/// Trains a fresh model.
pub fn fit(
    cfg: &TrainConfig,
    model_cfg: &FusionConfig,
    train: &[FeatureSequence],
    val: &[FeatureSequence],
    outputs: Option<&FitOutputs>,
) -> Result<FitOutcome> {
    cfg.validate()?;
    let model = FusionModel::<f32>::new(model_cfg.clone(), cfg.seed)?;
    fit_from(cfg, model, train, val, outputs)
}

/// Trains starting from `model`.
pub fn fit_from(
    cfg: &TrainConfig,
    model: FusionModel<f32>,
    train: &[FeatureSequence],
    val: &[FeatureSequence],
    outputs: Option<&FitOutputs>,
) -> Result<FitOutcome> {
    fit_observed(cfg, model, train, val, outputs, |_, _| ControlFlow::Continue(()))
}

/// [`fit_from`] with a hook called after every epoch; returning
/// `ControlFlow::Break` ends training early.
pub fn fit_observed<F>(
    cfg: &TrainConfig,
    mut model: FusionModel<f32>,
    train: &[FeatureSequence],
    val: &[FeatureSequence],
    outputs: Option<&FitOutputs>,
    mut after_epoch: F,
) -> Result<FitOutcome>
where
    F: FnMut(&EpochLog, &FusionModel<f32>) -> ControlFlow<()>,
{
    cfg.validate()?;
    let windows = training_windows(train, cfg.window, cfg.stride, cfg.invalid_threshold)?;
    if windows.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let class_weights = match cfg.class_weighting {
        ClassWeighting::EffectiveNumber => effective_number_weights(&class_counts(&windows), cfg.beta)?,
        ClassWeighting::Uniform => ClassWeights::uniform(NUM_CLASSES),
    };
    let weights: Vec<f32> = class_weights.as_vec();
    let gamma = cfg.gamma as f32;

    let mut log_file = match outputs {
        Some(o) => {
            fs::create_dir_all(&o.dir)?;
            Some(fs::File::create(o.metric_log())?)
        }
        None => None,
    };

    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_d20b);
    let mut opt = AdamW::new(
        model.params().values(),
        cfg.adam_beta1,
        cfg.adam_beta2,
        cfg.adam_eps,
        cfg.weight_decay,
    );
    let steps_per_epoch = windows.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let p_drop = model.config().modality_dropout;
    let inference = cfg.inference();

    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, FusionModel<f32>)> = None;
    let mut step = 0usize;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let mut batch: Vec<WindowSample> = chunk.iter().map(|&i| windows[i].clone()).collect();
            modality_dropout(&mut batch, p_drop, &mut order_rng, true);
            let mut bg = batch_gradients(&model, &batch, &weights, gamma, Some(&mut dropout_rng))?;
            let loss = bg.loss as f64;
            if !loss.is_finite() || bg.grads.iter().any(|g| !g.is_finite()) {
                if let Some(o) = outputs {
                    save_checkpoint(&o.last_good_checkpoint(), &model)?;
                }
                return Err(Error::Diverged {
                    epoch,
                    step: step + 1,
                    loss,
                });
            }
            clip_global_norm(&mut bg.grads, cfg.grad_clip);
            opt.step(model.params_mut().values_mut(), &bg.grads, cfg.lr_at(step, total_steps));
            step += 1;
            loss_sum += loss;
            batches += 1;
        }
        let train_loss = loss_sum / batches as f64;

        let mut entry = EpochLog {
            epoch,
            train_loss,
            val_acc: None,
            val_f1: None,
        };
        if !val.is_empty() && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) {
            let report = evaluate_videos(&model, val, &inference)?;
            entry.val_acc = Some(report.accuracy);
            entry.val_f1 = Some(report.macro_f1);
            if best.as_ref().is_none_or(|(f1, _, _)| report.macro_f1 > *f1) {
                best = Some((report.macro_f1, epoch, model.clone()));
                if let Some(o) = outputs {
                    save_checkpoint(&o.best_checkpoint(), &model)?;
                }
            }
        }
        if let Some(f) = log_file.as_mut() {
            serde_json::to_writer(&mut *f, &entry).map_err(std::io::Error::other)?;
            f.write_all(b"\n")?;
        }
        let flow = after_epoch(&entry, &model);
        log.push(entry);
        if flow.is_break() {
            break;
        }
    }

    let (best_epoch, best_model) = match best {
        Some((_, e, m)) => (e, m),
        None => {
            if let Some(o) = outputs {
                save_checkpoint(&o.best_checkpoint(), &model)?;
            }
            (log.len(), model.clone())
        }
    };
    Ok(FitOutcome {
        best: best_model,
        best_epoch,
        last: model,
        log,
        class_weights,
        train_windows: windows.len(),
    })
}

/// Reads a metric log written by [`fit`].
pub fn read_metric_log(path: &Path) -> Result<Vec<EpochLog>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Config(format!("{}: {e}", path.display()))))
        .collect()
}
