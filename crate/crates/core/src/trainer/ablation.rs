use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{evaluate_videos, fit, TrainConfig};
use crate::dataio::FeatureSequence;
use crate::fusion::{FusionConfig, FusionModel};
use crate::metrics::MetricReport;
use crate::{Error, Result};

/// Values swept along each axis; every combination is trained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationAxes {
    pub p: Vec<f64>,
    pub d_model: Vec<usize>,
    pub layers: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub p: f64,
    pub d_model: usize,
    pub layers: usize,
    pub accuracy: Option<f64>,
    pub f1: Option<f64>,
    /// Why the cell produced no metrics.
    pub error: Option<String>,
}

/// Trains every `(p, d, l)` cell with the same seed and scores the best
/// checkpoint on `val` with the full inference pipeline. Cell failures are
/// recorded in the row instead of aborting the grid.
pub fn ablation_grid(
    train_cfg: &TrainConfig,
    base: &FusionConfig,
    axes: &AblationAxes,
    train: &[FeatureSequence],
    val: &[FeatureSequence],
) -> Result<Vec<AblationRow>> {
    let inference = train_cfg.inference();
    ablation_grid_with(train_cfg, base, axes, train, val, |m| evaluate_videos(m, val, &inference))
}

/// [`ablation_grid`] with a caller-chosen evaluation of each trained model.
pub fn ablation_grid_with<E>(
    train_cfg: &TrainConfig,
    base: &FusionConfig,
    axes: &AblationAxes,
    train: &[FeatureSequence],
    val: &[FeatureSequence],
    mut evaluate: E,
) -> Result<Vec<AblationRow>>
where
    E: FnMut(&FusionModel<f32>) -> Result<MetricReport>,
{
    if axes.p.is_empty() || axes.d_model.is_empty() || axes.layers.is_empty() {
        return Err(Error::Config("every ablation axis needs at least one value".into()));
    }
    let mut rows = Vec::new();
    for &p in &axes.p {
        for &d in &axes.d_model {
            for &l in &axes.layers {
                let cfg = FusionConfig {
                    modality_dropout: p,
                    ..base.clone().with_d_model(d).with_layers(l)
                };
                let result = fit(train_cfg, &cfg, train, val, None).and_then(|out| evaluate(&out.best));
                let (accuracy, f1, error) = match result {
                    Ok(r) => (Some(r.accuracy), Some(r.macro_f1), None),
                    Err(e) => (None, None, Some(e.to_string())),
                };
                rows.push(AblationRow {
                    p,
                    d_model: d,
                    layers: l,
                    accuracy,
                    f1,
                    error,
                });
            }
        }
    }
    Ok(rows)
}

/// `p,d,l,accuracy,f1`; failed cells leave the metric fields empty.
pub fn write_ablation_csv<W: Write>(out: &mut W, rows: &[AblationRow]) -> std::io::Result<()> {
    writeln!(out, "p,d,l,accuracy,f1")?;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.p, r.d_model, r.layers, fmt(r.accuracy), fmt(r.f1))?;
    }
    Ok(())
}
