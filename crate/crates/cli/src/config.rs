//! Run configuration: a JSON file whose keys mirror the command-line flags.
//! Flags override file values; unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use avfer::baseline::{BaselineConfig, DEFAULT_LAMBDAS};
use avfer::dataio::SynthSpec;
use avfer::trainer::{AblationAxes, TrainConfig};
use avfer::FusionConfig;
use serde::{Deserialize, Serialize};

/// Model hyperparameters that do not depend on the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    /// Feed-forward width; four times `d_model` when absent.
    pub ff_dim: Option<usize>,
    pub attn_dropout: f64,
    pub residual_dropout: f64,
    /// Modality dropout probability.
    pub p: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let base = FusionConfig::new(1, 1);
        Self {
            d_model: base.d_model,
            layers: base.layers,
            heads: base.heads,
            ff_dim: None,
            attn_dropout: base.attn_dropout,
            residual_dropout: base.residual_dropout,
            p: base.modality_dropout,
        }
    }
}

impl ModelConfig {
    pub fn fusion(&self, d_v: usize, d_a: usize) -> FusionConfig {
        FusionConfig {
            heads: self.heads,
            ff_dim: self.ff_dim.unwrap_or(4 * self.d_model),
            attn_dropout: self.attn_dropout,
            residual_dropout: self.residual_dropout,
            modality_dropout: self.p,
            ..FusionConfig::new(d_v, d_a).with_d_model(self.d_model).with_layers(self.layers)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub train_manifest: Option<PathBuf>,
    pub val_manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub baseline: BaselineConfig,
    pub synth: SynthSpec,
    pub ablation: AblationAxes,
    pub lambdas: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        Self {
            train_manifest: None,
            val_manifest: None,
            out: None,
            ablation: AblationAxes {
                p: vec![model.p],
                d_model: vec![model.d_model],
                layers: vec![model.layers],
            },
            model,
            train: TrainConfig::default(),
            baseline: BaselineConfig::default(),
            synth: SynthSpec::default(),
            lambdas: DEFAULT_LAMBDAS.to_vec(),
        }
    }
}

impl RunConfig {
    /// Reads a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.train_manifest, &mut cfg.val_manifest, &mut cfg.out].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}
