//! Finite-difference verification of full-model focal-loss gradients.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::{batch_gradients, effective_labels};
use crate::fusion::{Binder, FusionConfig, FusionModel, ParamId};
use crate::numcore::{grad_check_at, GradCheckReport, Matrix, Tape};
use crate::objective::focal_sum;
use crate::windowing::WindowSample;
use crate::{Result, NUM_CLASSES};

/// Deliberate corruption of the analytic gradient, for negative controls.
#[derive(Clone, Debug, PartialEq)]
pub struct GradFault {
    /// Parameter whose analytic gradient is corrupted.
    pub param: String,
    /// Multiplier applied to that gradient.
    pub factor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelGradReport {
    pub seed: u64,
    pub max_rel_error: f64,
    /// Parameter holding the worst coordinate.
    pub worst_param: String,
    pub checked: usize,
    pub params: Vec<ParamCheck>,
}

impl ModelGradReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

/// A random window with Gaussian features and labels drawn uniformly from
/// all classes (some frames `-1`).
pub fn random_window(rng: &mut impl Rng, w: usize, d_v: usize, d_a: usize) -> WindowSample {
    let mut gauss = |rows: usize, cols: usize| {
        let data = (0..rows * cols).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
        Matrix::from_vec(rows, cols, data).expect("sized")
    };
    let v_in = gauss(w, d_v);
    let a_in = gauss(w, d_a);
    let mut labels: Vec<i8> = (0..w).map(|_| rng.random_range(0..NUM_CLASSES) as i8).collect();
    if w > 2 {
        labels[rng.random_range(0..w)] = -1;
    }
    let frame_valid = labels.iter().map(|&l| l >= 0).collect();
    WindowSample {
        start: 0,
        v_in,
        a_in,
        labels,
        frame_valid,
        pad_len: 0,
        v_missing: false,
    }
}

/// Compares the analytic focal-loss gradient of every parameter tensor with
/// central differences at double precision. At most `coords_per_param`
/// coordinates are sampled per tensor (all of them when the tensor is
/// smaller). Dropout is disabled so the loss is a deterministic function of
/// the parameters.
pub fn model_grad_check(
    config: &FusionConfig,
    window: &WindowSample,
    seed: u64,
    coords_per_param: usize,
    step: f64,
    fault: Option<&GradFault>,
) -> Result<ModelGradReport> {
    let mut model = FusionModel::<f64>::new(config.clone(), seed)?;
    let weights = vec![1.0f64; config.n_classes];
    let gamma = 2.0;
    let mut bg = batch_gradients::<f64, ChaCha8Rng>(&model, std::slice::from_ref(window), &weights, gamma, None)?;
    if let Some(f) = fault {
        let id = model
            .params()
            .find(&f.param)
            .ok_or_else(|| crate::Error::Config(format!("no parameter named {}", f.param)))?;
        bg.grads[id.index()].scale_in_place(f.factor);
    }

    let labels = effective_labels(window);
    let scale = 1.0 / bg.valid_frames as f64;
    let loss_of = |m: &FusionModel<f64>| -> f64 {
        let mut tape = Tape::new();
        let mut b = Binder::new(m.params(), false);
        let vars = m
            .forward_on_tape::<ChaCha8Rng>(&mut tape, &mut b, window, &mut None)
            .expect("window validated by the analytic pass");
        focal_sum(tape.value(vars.logits), &labels, &weights, gamma, scale)
            .expect("labels validated by the analytic pass")
            .loss
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9));
    let mut params = Vec::with_capacity(model.params().len());
    let mut worst = (0.0f64, String::new());
    let mut checked = 0;
    for i in 0..model.params().len() {
        let id = ParamId(i);
        let name = model.params().name(id).to_string();
        let n = model.params().get(id).len();
        let mut coords: Vec<usize> = if n <= coords_per_param {
            (0..n).collect()
        } else {
            sample(&mut rng, n, coords_per_param).into_vec()
        };
        coords.sort_unstable();
        let analytic = bg.grads[i].clone();
        let original = model.params().get(id).clone();
        let report: GradCheckReport = grad_check_at(
            |x| {
                *model.params_mut().get_mut(id) = x.clone();
                (loss_of(&model), analytic.clone())
            },
            &original,
            step,
            &coords,
        )?;
        *model.params_mut().get_mut(id) = original;
        checked += report.checked;
        if report.max_rel_error > worst.0 || worst.1.is_empty() {
            worst = (report.max_rel_error, name.clone());
        }
        params.push(ParamCheck {
            name,
            max_rel_error: report.max_rel_error,
            checked: report.checked,
            analytic_at_worst: report.analytic_at_worst,
            numeric_at_worst: report.numeric_at_worst,
        });
    }
    Ok(ModelGradReport {
        seed,
        max_rel_error: worst.0,
        worst_param: worst.1,
        checked,
        params,
    })
}
