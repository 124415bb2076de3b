use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use avfer::baseline::{lambda_sweep, write_sweep_csv};
use avfer::dataio::format::read_labels;
use avfer::dataio::{generate_synthetic, DatasetManifest, FeatureSequence};
use avfer::fusion::load_checkpoint;
use avfer::inference::{predict_video, read_prediction_labels, write_predictions_csv, Smoother};
use avfer::metrics::{AbsentClassPolicy, ConfusionMatrix, MetricReport};
use avfer::trainer::{ablation_grid, fit, model_grad_check, random_window, write_ablation_csv, FitOutputs, GradFault};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{ModelConfig, RunConfig};
use crate::{AblateArgs, BaselineArgs, Common, Data, EvalArgs, GenSynthArgs, GradCheckArgs, Hyper, InferArgs, TrainArgs, Window};

/// A command failure and the exit code it maps to.
pub enum Failure {
    /// Bad flags or configuration values (exit 2).
    Usage(anyhow::Error),
    /// Anything that went wrong while doing the work (exit 1).
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            Failure::Usage(_) => ExitCode::from(2),
            Failure::Runtime(_) => ExitCode::from(1),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(e) | Failure::Runtime(e) => {
                if f.alternate() {
                    write!(f, "{e:#}")
                } else {
                    write!(f, "{e}")
                }
            }
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

type Outcome = Result<(), Failure>;

fn usage(msg: impl fmt::Display) -> Failure {
    Failure::Usage(anyhow!("{msg}"))
}

fn base_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path).map_err(Failure::Usage)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.out = Some(out.clone());
    }
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
        cfg.baseline.seed = seed;
    }
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf, Failure> {
    let dir = cfg.out.clone().ok_or_else(|| usage("an output directory is required (--out or \"out\" in the config)"))?;
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn apply_data(cfg: &mut RunConfig, data: &Data) {
    if let Some(p) = &data.train {
        cfg.train_manifest = Some(p.clone());
    }
    if let Some(p) = &data.val {
        cfg.val_manifest = Some(p.clone());
    }
}

fn apply_window(cfg: &mut RunConfig, w: &Window) {
    if let Some(v) = w.window {
        cfg.train.window = v;
    }
    if let Some(v) = w.stride {
        cfg.train.stride = v;
    }
    if let Some(v) = w.median_k {
        cfg.train.median_k = v;
    }
}

fn apply_hyper(cfg: &mut RunConfig, h: &Hyper) {
    if let Some(v) = h.gamma {
        cfg.train.gamma = v;
    }
    if let Some(v) = h.beta {
        cfg.train.beta = v;
    }
    if let Some(v) = h.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = h.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = h.lr {
        cfg.train.learning_rate = v;
    }
}

fn load_manifest(path: Option<&Path>, what: &str) -> Result<(DatasetManifest, Vec<FeatureSequence>), Failure> {
    let path = path.ok_or_else(|| usage(format!("a {what} manifest is required")))?;
    let manifest = DatasetManifest::load(path).with_context(|| format!("loading {what} manifest"))?;
    let (d_v, d_a) = manifest.probe_dims().with_context(|| format!("reading {what} feature dims"))?;
    let videos = manifest.load_all(d_v, d_a).with_context(|| format!("loading {what} videos"))?;
    Ok((manifest, videos))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn gen_synth(a: GenSynthArgs) -> Outcome {
    let mut cfg = base_config(&a.common)?;
    let s = &mut cfg.synth;
    if let Some(p) = a.priors {
        s.class_priors = p
            .try_into()
            .map_err(|p: Vec<f64>| usage(format!("class_priors: expected 8 values, got {}", p.len())))?;
    }
    macro_rules! set {
        ($($flag:ident => $field:ident),*) => {$(
            if let Some(v) = a.$flag {
                s.$field = v;
            }
        )*};
    }
    set!(n_videos => n_videos, t_min => t_min, t_max => t_max, d_v => d_v, d_a => d_a,
        visual_noise => visual_noise, audio_noise => audio_noise, missing_rate => missing_rate,
        blackout_rate => visual_blackout_rate, val_fraction => val_fraction);
    cfg.synth.validate().map_err(usage)?;
    let dir = out_dir(&cfg)?;
    let seed = cfg.train.seed;
    let (train, val) = generate_synthetic(&cfg.synth, seed, &dir).context("generating dataset")?;
    println!(
        "wrote {} train and {} val videos to {}",
        train.entries.len(),
        val.entries.len(),
        dir.display()
    );
    Ok(())
}

fn model_overrides(model: &mut ModelConfig, p: Option<f64>, d_model: Option<usize>, layers: Option<usize>) {
    if let Some(v) = p {
        model.p = v;
    }
    if let Some(v) = d_model {
        model.d_model = v;
    }
    if let Some(v) = layers {
        model.layers = v;
    }
}

#[derive(Serialize)]
struct TrainRecord<'a> {
    model: &'a ModelConfig,
    train: &'a avfer::trainer::TrainConfig,
}

pub fn train(a: TrainArgs) -> Outcome {
    let mut cfg = base_config(&a.common)?;
    apply_data(&mut cfg, &a.data);
    apply_window(&mut cfg, &a.window);
    apply_hyper(&mut cfg, &a.hyper);
    model_overrides(&mut cfg.model, a.p, a.d_model, a.layers);
    cfg.train.validate().map_err(usage)?;
    let (train_m, train) = load_manifest(cfg.train_manifest.as_deref(), "train")?;
    let val = match cfg.val_manifest.as_deref() {
        Some(p) => load_manifest(Some(p), "val")?.1,
        None => Vec::new(),
    };
    let (d_v, d_a) = train_m.probe_dims().context("reading feature dims")?;
    let fusion = cfg.model.fusion(d_v, d_a);
    fusion.validate().map_err(usage)?;
    let dir = out_dir(&cfg)?;
    write_json(
        &dir.join("run.json"),
        &TrainRecord {
            model: &cfg.model,
            train: &cfg.train,
        },
    )?;
    let outputs = FitOutputs { dir: dir.clone() };
    let outcome = fit(&cfg.train, &fusion, &train, &val, Some(&outputs)).context("training")?;
    let last = outcome.log.last().expect("at least one epoch");
    println!(
        "trained {} epochs on {} windows; best epoch {}; final train loss {:.6}; checkpoint {}",
        outcome.log.len(),
        outcome.train_windows,
        outcome.best_epoch,
        last.train_loss,
        outputs.best_checkpoint().display()
    );
    Ok(())
}

pub fn ablate(a: AblateArgs) -> Outcome {
    let mut cfg = base_config(&a.common)?;
    apply_data(&mut cfg, &a.data);
    apply_window(&mut cfg, &a.window);
    apply_hyper(&mut cfg, &a.hyper);
    if let Some(v) = a.p {
        cfg.ablation.p = v;
    }
    if let Some(v) = a.d_model {
        cfg.ablation.d_model = v;
    }
    if let Some(v) = a.layers {
        cfg.ablation.layers = v;
    }
    cfg.train.validate().map_err(usage)?;
    let (train_m, train) = load_manifest(cfg.train_manifest.as_deref(), "train")?;
    let (_, val) = load_manifest(cfg.val_manifest.as_deref(), "val")?;
    let (d_v, d_a) = train_m.probe_dims().context("reading feature dims")?;
    let base = cfg.model.fusion(d_v, d_a);
    let dir = out_dir(&cfg)?;
    let rows = ablation_grid(&cfg.train, &base, &cfg.ablation, &train, &val).map_err(usage)?;
    let path = dir.join("ablation.csv");
    let mut out = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    write_ablation_csv(&mut out, &rows).context("writing ablation table")?;
    out.flush().context("writing ablation table")?;
    for r in &rows {
        if let Some(e) = &r.error {
            eprintln!("cell p={} d={} l={} failed: {e}", r.p, r.d_model, r.layers);
        }
    }
    println!("wrote {} rows to {}", rows.len(), path.display());
    Ok(())
}

fn parse_smoother(s: &str) -> Result<Smoother, Failure> {
    match s {
        "median" => Ok(Smoother::Median),
        "majority" => Ok(Smoother::Majority),
        other => Err(usage(format!("unknown smoother {other:?}; expected median or majority"))),
    }
}

pub fn infer(a: InferArgs) -> Outcome {
    let mut cfg = base_config(&a.common)?;
    apply_window(&mut cfg, &a.window);
    if let Some(s) = &a.smoother {
        cfg.train.smoother = parse_smoother(s)?;
    }
    cfg.train.validate().map_err(usage)?;
    let manifest = a.manifest.clone().or_else(|| cfg.val_manifest.clone());
    let (_, videos) = load_manifest(manifest.as_deref(), "inference")?;
    let model = load_checkpoint(&a.checkpoint).context("loading checkpoint")?;
    let dir = out_dir(&cfg)?;
    let inference = cfg.train.inference();
    for seq in &videos {
        let pred = predict_video(&model, seq, &inference).with_context(|| format!("predicting {}", seq.video_id))?;
        let path = dir.join(format!("{}.csv", seq.video_id));
        let mut out = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        write_predictions_csv(&mut out, &pred, a.with_logits)
            .and_then(|_| out.flush())
            .with_context(|| format!("writing {}", path.display()))?;
    }
    println!("wrote predictions for {} videos to {}", videos.len(), dir.display());
    Ok(())
}

pub fn eval(a: EvalArgs) -> Outcome {
    let cfg = base_config(&a.common)?;
    let path = a
        .manifest
        .clone()
        .or_else(|| cfg.val_manifest.clone())
        .ok_or_else(|| usage("a manifest with gold labels is required"))?;
    let manifest = DatasetManifest::load(&path).context("loading manifest")?;
    let mut cm = ConfusionMatrix::default();
    for entry in &manifest.entries {
        let gold = read_labels(&manifest.base_dir.join(&entry.labels_path)).context("reading gold labels")?;
        let pred_path = a.predictions.join(format!("{}.csv", entry.video_id));
        let file = File::open(&pred_path).with_context(|| format!("opening {}", pred_path.display()))?;
        let pred = read_prediction_labels(BufReader::new(file)).with_context(|| format!("reading {}", pred_path.display()))?;
        let video = avfer::metrics::confusion(&pred, &gold).with_context(|| format!("scoring {}", entry.video_id));
        match video {
            Ok(v) => {
                for (row, add) in cm.counts.iter_mut().zip(v.counts) {
                    for (c, n) in row.iter_mut().zip(add) {
                        *c += n;
                    }
                }
            }
            // A video with no labelled frames adds nothing.
            Err(e) if matches!(e.downcast_ref(), Some(avfer::Error::NoValidFrames)) => {}
            Err(e) => return Err(e.into()),
        }
    }
    if cm.total() == 0 {
        return Err(Failure::Runtime(anyhow!("no frame has a valid gold label")));
    }
    let policy = if a.include_absent {
        AbsentClassPolicy::Include
    } else {
        AbsentClassPolicy::Exclude
    };
    let report = MetricReport::from_confusion(&cm, policy);
    let json = serde_json::to_string_pretty(&report).context("encoding report")?;
    println!("{json}");
    if let Some(dir) = &cfg.out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_json(&dir.join("metrics.json"), &report)?;
    }
    Ok(())
}

pub fn baseline(a: BaselineArgs) -> Outcome {
    let mut cfg = base_config(&a.common)?;
    apply_data(&mut cfg, &a.data);
    if let Some(l) = a.lambda {
        cfg.lambdas = l;
    }
    if let Some(v) = a.epochs {
        cfg.baseline.epochs = v;
    }
    if let Some(v) = a.lr {
        cfg.baseline.learning_rate = v;
    }
    if let Some(bad) = cfg.lambdas.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(usage(format!("lambda must be in [0, 1], got {bad}")));
    }
    let (_, train) = load_manifest(cfg.train_manifest.as_deref(), "train")?;
    let (_, val) = load_manifest(cfg.val_manifest.as_deref(), "val")?;
    let dir = out_dir(&cfg)?;
    let rows = lambda_sweep(&cfg.baseline, &cfg.lambdas, &train, &val).context("baseline sweep")?;
    let path = dir.join("sweep.csv");
    let mut out = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    write_sweep_csv(&mut out, &rows)
        .and_then(|_| out.flush())
        .context("writing sweep table")?;
    for r in &rows {
        println!("lambda={} accuracy={:.4} f1={:.4}", r.lambda, r.accuracy, r.f1);
    }
    Ok(())
}

pub fn grad_check(a: GradCheckArgs) -> Outcome {
    let mut cfg = base_config(&a.common)?;
    model_overrides(&mut cfg.model, None, a.d_model, a.layers);
    let fusion = cfg.model.fusion(a.d_v, a.d_a);
    fusion.validate().map_err(usage)?;
    if a.window == 0 || a.coords == 0 {
        return Err(usage("window and coords must be positive"));
    }
    let fault = match &a.inject_fault {
        Some(spec) => {
            let (param, factor) = match spec.split_once(':') {
                Some((p, f)) => (p, f.parse::<f64>().map_err(|e| usage(format!("fault factor: {e}")))?),
                None => (spec.as_str(), 2.0),
            };
            Some(GradFault {
                param: param.to_string(),
                factor,
            })
        }
        None => None,
    };
    let seed = cfg.train.seed;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let window = random_window(&mut rng, a.window, a.d_v, a.d_a);
    let report = model_grad_check(&fusion, &window, seed, a.coords, a.step, fault.as_ref()).map_err(usage)?;
    if let Some(dir) = &cfg.out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_json(&dir.join("grad_check.json"), &report)?;
    }
    println!(
        "{}",
        serde_json::json!({
            "seed": report.seed,
            "max_rel_error": report.max_rel_error,
            "worst_param": report.worst_param,
            "checked": report.checked,
        })
    );
    if report.passes(a.tolerance) {
        println!(
            "PASS: max relative error {:.3e} over {} coordinates (tolerance {:.0e})",
            report.max_rel_error, report.checked, a.tolerance
        );
        Ok(())
    } else {
        Err(Failure::Runtime(anyhow!(
            "gradient mismatch in {}: max relative error {:.3e} exceeds {:.0e}",
            report.worst_param,
            report.max_rel_error,
            a.tolerance
        )))
    }
}
