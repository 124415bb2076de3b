//! End-to-end acceptance criteria A1–A8.
//!
//! Runs as a plain binary (no libtest harness) and prints one PASS/FAIL line
//! per criterion. Pass criterion ids (`A3 A4`) as arguments to run a subset.
//! A8 drives the `avfer` binary and fails unless that binary has been
//! built (`cargo build -p avfer-cli`) or `AVFER_BIN` points at it.

use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use avfer::baseline::{lambda_sweep, BaselineConfig};
use avfer::dataio::{synthesize, LabelRule, Split, SynthSpec};
use avfer::fusion::{Direction, FusionConfig, FusionModel};
use avfer::inference::{median_filter, soft_vote, WindowLogits};
use avfer::metrics::MetricReport;
use avfer::numcore::{layer_norm, Matrix, LAYER_NORM_EPS};
use avfer::objective::{cross_entropy, focal_loss, focal_sum};
use avfer::trainer::{batch_gradients, evaluate_windows, fit, fit_observed, model_grad_check, random_window, TrainConfig};
use avfer::windowing::{coverage_counts, filter_window, make_windows, slice_sequence, training_windows, WindowDecision, WindowSample};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn main() -> ExitCode {
    let wanted: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, &str, Duration, fn() -> Verdict); 8] = [
        ("A1", "gradient fidelity", Duration::from_secs(120), a1_gradient_fidelity),
        ("A2", "safe-attention degradation", Duration::from_secs(60), a2_safe_attention),
        ("A3", "fusion benefit", Duration::from_secs(600), a3_fusion_benefit),
        ("A4", "modality-dropout robustness", Duration::from_secs(900), a4_modality_dropout),
        ("A5", "focal-loss behavior", Duration::from_secs(60), a5_focal_loss),
        ("A6", "windowing/voting/smoothing oracles", Duration::from_secs(60), a6_window_oracles),
        ("A7", "overfit sanity", Duration::from_secs(180), a7_overfit),
        ("A8", "determinism", Duration::from_secs(600), a8_determinism),
    ];
    let mut failed = 0;
    for (id, name, budget, run) in criteria {
        if !wanted.is_empty() && !wanted.iter().any(|w| w == id) {
            continue;
        }
        let start = Instant::now();
        let v = run();
        let took = start.elapsed();
        let pass = v.pass && took <= budget;
        if !pass {
            failed += 1;
        }
        let budget_note = if took > budget {
            format!("; over time budget {}s", budget.as_secs())
        } else {
            String::new()
        };
        println!(
            "{id} {} {name}: {} [{:.1}s{budget_note}]",
            if pass { "PASS" } else { "FAIL" },
            v.detail,
            took.as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}

// A1: full-model focal-loss gradients against central differences, f64.
fn a1_gradient_fidelity() -> Verdict {
    const TOL: f64 = 1e-4;
    let config = FusionConfig::new(12, 10).with_d_model(32);
    let mut worst = (0.0f64, String::new(), 0u64);
    let mut checked = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let window = random_window(&mut rng, 8, config.d_v, config.d_a);
        let report = match model_grad_check(&config, &window, seed, 8, 1e-5, None) {
            Ok(r) => r,
            Err(e) => return verdict(false, format!("seed {seed}: {e}")),
        };
        checked += report.checked;
        if report.max_rel_error >= worst.0 {
            worst = (report.max_rel_error, report.worst_param.clone(), seed);
        }
    }
    verdict(
        worst.0 <= TOL,
        format!(
            "max relative error {:.3e} (limit {TOL:.0e}) at {} seed {} over {checked} coordinates, 20 seeds",
            worst.0, worst.1, worst.2
        ),
    )
}

fn all_finite(ms: &[Matrix<f32>]) -> bool {
    ms.iter().all(|m| m.is_finite())
}

fn fuzz_window(rng: &mut ChaCha8Rng, cfg: &FusionConfig, case: usize) -> WindowSample {
    let w = match case {
        0..=99 => 1,
        _ => rng.random_range(1..=12),
    };
    let mut s = random_window(rng, w, cfg.d_v, cfg.d_a);
    let scale = [1.0f32, 1e-3, 30.0][rng.random_range(0..3)];
    s.v_in.scale_in_place(scale);
    s.a_in.scale_in_place(scale);
    s.pad_len = rng.random_range(0..w);
    let real = w - s.pad_len;
    for i in real..w {
        s.v_in.row_mut(i).fill(0.0);
        s.a_in.row_mut(i).fill(0.0);
        s.labels[i] = -1;
    }
    for l in s.labels.iter_mut().take(real) {
        if rng.random_bool(0.2) {
            *l = -1;
        }
    }
    s.frame_valid = s.labels.iter().map(|&l| l >= 0).collect();
    // every tenth case is fully masked on the visual side
    if case.is_multiple_of(10) || rng.random_bool(0.3) {
        s.drop_visual();
    }
    s
}

// A2: the all-masked attention path is exactly LayerNorm(Q), and nothing
// produces NaN/Inf under random masks.
fn a2_safe_attention() -> Verdict {
    let cfg = FusionConfig {
        attn_dropout: 0.3,
        residual_dropout: 0.3,
        ..FusionConfig::new(6, 5).with_d_model(16).with_layers(2)
    };
    let model = FusionModel::<f32>::new(cfg.clone(), 11).expect("valid config");
    let mut rng = ChaCha8Rng::seed_from_u64(2);

    let mut bit_checks = 0;
    for (dir, prefix) in [(Direction::VisualToAudio, "cross_va"), (Direction::AudioToVisual, "cross_av")] {
        let p = model.params();
        let gain = p.get(p.find(&format!("{prefix}.norm.gain")).expect("gain")).data().to_vec();
        let shift = p.get(p.find(&format!("{prefix}.norm.shift")).expect("shift")).data().to_vec();
        for rows in [1usize, 3, 8] {
            let q = random_window(&mut rng, rows, 16, 16).v_in;
            let k = random_window(&mut rng, rows, 16, 16).a_in;
            let got = model.safe_cross_attention(&q, &k, &vec![false; rows], dir).expect("shapes");
            let want = layer_norm(&q, &gain, &shift, LAYER_NORM_EPS as f32).expect("shapes");
            let same = got.data().iter().zip(want.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            if !same {
                return verdict(false, format!("{prefix}: all-masked output differs from layer_norm(Q) for {rows} rows"));
            }
            bit_checks += 1;
        }
    }

    let weights = [1.0f32; 8];
    let mut masked = 0;
    let mut single = 0;
    for case in 0..1000 {
        let s = fuzz_window(&mut rng, &cfg, case);
        masked += s.v_missing as usize;
        single += (s.window_len() == 1) as usize;
        let train = case % 2 == 0;
        let logits = match model.forward(std::slice::from_ref(&s), train, &mut rng) {
            Ok(l) => l,
            Err(e) => return verdict(false, format!("case {case}: forward failed: {e}")),
        };
        if !all_finite(&logits) {
            return verdict(false, format!("case {case}: non-finite logits"));
        }
        if s.frame_valid.iter().any(|&v| v) {
            let dropout = if train { Some(&mut rng) } else { None };
            match batch_gradients(&model, std::slice::from_ref(&s), &weights, 2.0, dropout) {
                Ok(g) if g.loss.is_finite() && all_finite(&g.grads) => {}
                Ok(_) => return verdict(false, format!("case {case}: non-finite loss or gradient")),
                Err(e) => return verdict(false, format!("case {case}: backward failed: {e}")),
            }
        }
    }
    verdict(
        true,
        format!("{bit_checks} bit-exact layer_norm checks; 1000 fuzzed windows finite ({masked} visual-masked, {single} single-frame)"),
    )
}

fn confusable_spec() -> SynthSpec {
    SynthSpec {
        n_videos: 20,
        t_min: 300,
        t_max: 400,
        d_v: 16,
        d_a: 16,
        class_priors: [0.125; 8],
        missing_rate: 0.05,
        label_rule: LabelRule::Segments { mean_len: 60 },
        visual_noise: 1.5,
        audio_noise: 6.0,
        confusable_pair: Some([0, 1]),
        val_fraction: 0.25,
        ..SynthSpec::default()
    }
}

// A3: decision-level fusion beats both single streams on data where audio
// cannot separate one class pair.
fn a3_fusion_benefit() -> Verdict {
    let lambdas = [0.0, 0.5, 0.7, 1.0];
    let mut mean = [0.0f64; 4];
    let seeds = [1u64, 2, 3];
    for &seed in &seeds {
        let data = match synthesize(&confusable_spec(), seed) {
            Ok(d) => d,
            Err(e) => return verdict(false, format!("seed {seed}: {e}")),
        };
        let cfg = BaselineConfig {
            epochs: 8,
            seed,
            ..BaselineConfig::default()
        };
        let rows = match lambda_sweep(&cfg, &lambdas, &data.split(Split::Train), &data.split(Split::Val)) {
            Ok(r) => r,
            Err(e) => return verdict(false, format!("seed {seed}: {e}")),
        };
        for (m, r) in mean.iter_mut().zip(&rows) {
            *m += r.f1 / seeds.len() as f64;
        }
    }
    let (f0, f1) = (mean[0], mean[3]);
    let best_mid = mean[1].max(mean[2]);
    let pass = best_mid - f0 >= 0.02 && best_mid - f1 >= 0.02;
    verdict(
        pass,
        format!(
            "mean macro-F1 over 3 seeds: λ=0.0 {:.4}, 0.5 {:.4}, 0.7 {:.4}, 1.0 {:.4}; best intermediate margin over audio {:+.4}, over visual {:+.4} (need ≥ 0.02)",
            mean[0],
            mean[1],
            mean[2],
            mean[3],
            best_mid - f0,
            best_mid - f1
        ),
    )
}

fn occlusion_spec() -> SynthSpec {
    SynthSpec {
        n_videos: 16,
        t_min: 220,
        t_max: 320,
        d_v: 16,
        d_a: 16,
        class_priors: [0.125; 8],
        missing_rate: 0.05,
        label_rule: LabelRule::Segments { mean_len: 40 },
        visual_noise: 1.0,
        audio_noise: 1.5,
        confusable_pair: None,
        val_fraction: 0.25,
        ..SynthSpec::default()
    }
}

fn score(model: &FusionModel<f32>, windows: &[WindowSample]) -> Result<MetricReport, String> {
    evaluate_windows(model, windows).map_err(|e| e.to_string())
}

// A4: training with visual modality dropout keeps the model useful when the
// visual stream disappears at test time.
fn a4_modality_dropout() -> Verdict {
    const WINDOW: usize = 32;
    let mut stress_gap = 0.0;
    let mut clean_gap = 0.0;
    let mut lines = Vec::new();
    let seeds = [1u64, 2, 3];
    for &seed in &seeds {
        let data = match synthesize(&occlusion_spec(), 100 + seed) {
            Ok(d) => d,
            Err(e) => return verdict(false, format!("seed {seed}: {e}")),
        };
        let train = data.split(Split::Train);
        let val = data.split(Split::Val);
        let clean: Vec<WindowSample> = val
            .iter()
            .flat_map(|v| slice_sequence(v, WINDOW, WINDOW).expect("non-empty video"))
            .collect();
        let mut stress = clean.clone();
        let mut order: Vec<usize> = (0..stress.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_drop = (0.3 * stress.len() as f64).round() as usize;
        for &i in &order[..n_drop] {
            stress[i].drop_visual();
        }

        let tc = TrainConfig {
            epochs: 10,
            batch_size: 16,
            learning_rate: 2e-3,
            window: WINDOW,
            stride: 16,
            seed,
            ..TrainConfig::default()
        };
        let mut f1 = [[0.0f64; 2]; 2];
        for (row, p) in [0.0, 0.1].into_iter().enumerate() {
            let fc = FusionConfig {
                modality_dropout: p,
                ..FusionConfig::new(16, 16).with_d_model(32).with_layers(1)
            };
            let model = match fit(&tc, &fc, &train, &val, None) {
                Ok(o) => o.best,
                Err(e) => return verdict(false, format!("seed {seed} p={p}: {e}")),
            };
            for (col, set) in [&stress, &clean].into_iter().enumerate() {
                match score(&model, set) {
                    Ok(r) => f1[row][col] = r.macro_f1,
                    Err(e) => return verdict(false, format!("seed {seed} p={p}: {e}")),
                }
            }
        }
        stress_gap += (f1[1][0] - f1[0][0]) / seeds.len() as f64;
        clean_gap += (f1[1][1] - f1[0][1]) / seeds.len() as f64;
        lines.push(format!(
            "seed {seed}: stress {:.3}/{:.3}, clean {:.3}/{:.3}",
            f1[0][0], f1[1][0], f1[0][1], f1[1][1]
        ));
    }
    verdict(
        stress_gap >= 0.03 && clean_gap >= -0.02,
        format!(
            "p=0.1 minus p=0.0 macro-F1: stress {stress_gap:+.4} (need ≥ 0.03), clean {clean_gap:+.4} (need ≥ -0.02); {}",
            lines.join("; ")
        ),
    )
}

fn softmax_row(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

// A5: focal-loss identities against an independent softmax.
fn a5_focal_loss() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let uniform = [1.0f64; 8];
    let mut worst_ratio = 0.0f64;
    let mut worst_ce = 0.0f64;
    for _ in 0..2000 {
        let z: Vec<f64> = (0..8).map(|_| rng.random_range(-4.0..4.0)).collect();
        let y = rng.random_range(0..8usize);
        let gamma = [0.5, 1.0, 2.0, 3.0][rng.random_range(0..4)];
        let logits = Matrix::from_vec(1, 8, z.clone()).expect("sized");
        let labels = [y as i8];
        let focal = focal_loss(&logits, &labels, &uniform, gamma).expect("valid").loss;
        let ce = cross_entropy(&logits, &labels, &uniform).expect("valid").loss;
        let p = softmax_row(&z)[y];
        worst_ratio = worst_ratio.max((focal / ce - (1.0 - p).powf(gamma)).abs());
        let oracle_ce = -p.ln();
        let g0 = focal_loss(&logits, &labels, &uniform, 0.0).expect("valid").loss;
        worst_ce = worst_ce.max((g0 - oracle_ce).abs());
    }

    // Ignored frames: gradients on shared rows are bit-identical and the
    // ignored rows get exactly zero.
    let mut invisible = true;
    for _ in 0..200 {
        let n = rng.random_range(1..10);
        let z = Matrix::from_vec(n, 8, (0..n * 8).map(|_| rng.random_range(-5.0..5.0)).collect()).expect("sized");
        let labels: Vec<i8> = (0..n).map(|_| rng.random_range(0..8)).collect();
        let extra = rng.random_range(1..6);
        let mut rows = z.data().to_vec();
        rows.extend((0..extra * 8).map(|_| rng.random_range(-50.0..50.0)));
        let z_ext = Matrix::from_vec(n + extra, 8, rows).expect("sized");
        let mut labels_ext = labels.clone();
        labels_ext.extend(std::iter::repeat_n(-1, extra));
        let w: Vec<f64> = (0..8).map(|_| rng.random_range(0.2..3.0)).collect();
        let a = focal_sum(&z, &labels, &w, 2.0, 1.0 / n as f64).expect("valid");
        let b = focal_sum(&z_ext, &labels_ext, &w, 2.0, 1.0 / n as f64).expect("valid");
        let head_same = a.grad.data().iter().zip(b.grad.data()).all(|(x, y)| x.to_bits() == y.to_bits());
        let tail_zero = b.grad.data()[n * 8..].iter().all(|&g| g == 0.0);
        invisible &= head_same && tail_zero && a.loss.to_bits() == b.loss.to_bits();
    }
    verdict(
        worst_ratio <= 1e-6 && worst_ce <= 1e-6 && invisible,
        format!(
            "max |focal/CE − (1−p)^γ| {worst_ratio:.2e}, max |γ=0 − CE| {worst_ce:.2e} (limit 1e-6); -1 frames gradient-invisible: {invisible}"
        ),
    )
}

fn brute_starts(t: usize, w: usize, s: usize) -> Vec<usize> {
    if t <= w {
        return vec![0];
    }
    let mut starts = Vec::new();
    let mut st = 0;
    while st + w <= t {
        starts.push(st);
        st += s;
    }
    let covered_last = starts.iter().any(|&st| st < t && t - 1 < st + w);
    if !covered_last {
        starts.push(t - w);
    }
    starts
}

fn brute_median(x: &[u8], k: usize) -> Vec<u8> {
    let n = x.len() as i64;
    let h = (k / 2) as i64;
    (0..n)
        .map(|t| {
            let mut v: Vec<u8> = (t - h..=t + h).map(|j| x[j.clamp(0, n - 1) as usize]).collect();
            v.sort();
            v[k / 2]
        })
        .collect()
}

// A6: windowing, coverage, voting and smoothing against brute force.
fn a6_window_oracles() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut mismatches = Vec::new();
    let mut worst_vote = 0.0f64;
    for case in 0..500 {
        let w = rng.random_range(1..=80usize);
        let t = match case % 5 {
            0 => rng.random_range(1..=w),
            1 => w,
            _ => rng.random_range(1..=300),
        };
        let s = rng.random_range(1..=w);
        let k = 2 * rng.random_range(0..8usize) + 1;

        let starts = make_windows(t, w, s).expect("valid sizes");
        if starts != brute_starts(t, w, s) {
            mismatches.push(format!("make_windows({t},{w},{s})"));
            continue;
        }
        let cov = coverage_counts(t, &starts, w);
        let brute_cov: Vec<u32> = (0..t)
            .map(|f| starts.iter().filter(|&&st| st <= f && f < st + w).count() as u32)
            .collect();
        if cov != brute_cov || cov.contains(&0) {
            mismatches.push(format!("coverage_counts({t},{w},{s})"));
        }

        let windows: Vec<WindowLogits> = starts
            .iter()
            .map(|&st| {
                let real = (t - st).min(w);
                WindowLogits {
                    start: st,
                    logits: Matrix::from_vec(w, 8, (0..w * 8).map(|_| rng.random_range(-10.0f32..10.0)).collect()).expect("sized"),
                    pad_len: w - real,
                }
            })
            .collect();
        let voted = soft_vote(&windows, t).expect("covered");
        for f in 0..t {
            let covering: Vec<&WindowLogits> = windows.iter().filter(|x| x.start <= f && f < x.start + w - x.pad_len).collect();
            for c in 0..8 {
                let mean = covering.iter().map(|x| x.logits.get(f - x.start, c) as f64).sum::<f64>() / covering.len() as f64;
                worst_vote = worst_vote.max((voted.get(f, c) as f64 - mean).abs());
            }
        }

        let labels: Vec<u8> = (0..t).map(|_| rng.random_range(0..8)).collect();
        if median_filter(&labels, k).expect("odd k") != brute_median(&labels, k) {
            mismatches.push(format!("median_filter(T={t}, k={k})"));
        }
    }

    let boundary = |invalid: usize| {
        let labels: Vec<i8> = (0..64).map(|i| if i < invalid { -1 } else { 3 }).collect();
        let valid: Vec<bool> = labels.iter().map(|&l| l >= 0).collect();
        filter_window(&labels, &valid, 0.25)
    };
    let keep16 = boundary(16) == WindowDecision::Keep;
    let drop17 = boundary(17) == WindowDecision::Drop;

    verdict(
        mismatches.is_empty() && worst_vote <= 1e-6 && keep16 && drop17,
        format!(
            "500 configs: {} mismatches{}, max vote error {worst_vote:.2e}; 16/64 kept: {keep16}, 17/64 dropped: {drop17}",
            mismatches.len(),
            mismatches.first().map(|m| format!(" (first {m})")).unwrap_or_default()
        ),
    )
}

// A7: a noise-free separable set is fit almost perfectly.
fn a7_overfit() -> Verdict {
    const WINDOW: usize = 64;
    let spec = SynthSpec {
        n_videos: 5,
        t_min: 640,
        t_max: 640,
        class_priors: [0.125; 8],
        missing_rate: 0.0,
        visual_noise: 0.0,
        audio_noise: 0.0,
        confusable_pair: None,
        val_fraction: 0.0,
        label_rule: LabelRule::Segments { mean_len: 24 },
        ..SynthSpec::default()
    };
    let data = synthesize(&spec, 7).expect("valid spec");
    let train = data.split(Split::Train);
    let windows = training_windows(&train, WINDOW, WINDOW, 0.25).expect("windows");
    let fc = FusionConfig::new(spec.d_v, spec.d_a).with_d_model(64).with_layers(2);
    let tc = TrainConfig {
        epochs: 30,
        window: WINDOW,
        stride: WINDOW,
        seed: 7,
        ..TrainConfig::default()
    };
    let mut best = 0.0;
    let mut epochs = 0;
    let mut failure = None;
    let model = FusionModel::<f32>::new(fc, 7).expect("valid config");
    let run = fit_observed(&tc, model, &train, &[], None, |log, m| {
        epochs = log.epoch;
        match score(m, &windows) {
            Ok(r) => best = r.accuracy,
            Err(e) => {
                failure = Some(e);
                return ControlFlow::Break(());
            }
        }
        if best >= 0.99 {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    });
    if let Err(e) = run {
        return verdict(false, e.to_string());
    }
    if let Some(e) = failure {
        return verdict(false, e);
    }
    verdict(
        best >= 0.99,
        format!("{} windows, training accuracy {best:.4} after {epochs} epochs (need ≥ 0.99 within 30)", windows.len()),
    )
}

fn avfer_bin() -> Option<PathBuf> {
    if let Ok(p) = std::env::var("AVFER_BIN") {
        return Some(PathBuf::from(p));
    }
    // target/<profile>/deps/acceptance-… → target/<profile>/avfer
    let exe = std::env::current_exe().ok()?;
    let candidate = exe.parent()?.parent()?.join(format!("avfer{}", std::env::consts::EXE_SUFFIX));
    candidate.exists().then_some(candidate)
}

fn run(bin: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(bin).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn tree_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).expect("readable dir") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).expect("inside dir").to_path_buf();
                out.push((rel, std::fs::read(&path).expect("readable file")));
            }
        }
    }
    out.sort();
    out
}

// A8: every pipeline stage is byte-reproducible for a fixed seed.
fn a8_determinism() -> Verdict {
    let Some(bin) = avfer_bin() else {
        return verdict(false, "avfer binary not found; build it with `cargo build -p avfer-cli` or set AVFER_BIN");
    };
    let tmp = tempfile::tempdir().expect("temp dir");
    let pipeline = |root: &Path| -> Result<(), String> {
        let s = |p: &str| root.join(p).to_string_lossy().into_owned();
        run(&bin, &["gen-synth", "--seed", "3", "--out", &s("data"), "--n-videos", "12", "--t-min", "120", "--t-max", "160"])?;
        run(
            &bin,
            &[
                "train", "--seed", "3", "--train", &s("data/train.json"), "--val", &s("data/val.json"), "--out", &s("run"),
                "--d-model", "16", "--layers", "1", "--epochs", "2", "--window", "32", "--stride", "16",
            ],
        )?;
        run(
            &bin,
            &[
                "infer", "--checkpoint", &s("run/best.ckpt"), "--manifest", &s("data/val.json"), "--out", &s("pred"),
                "--window", "32", "--stride", "16", "--with-logits",
            ],
        )?;
        run(&bin, &["eval", "--predictions", &s("pred"), "--manifest", &s("data/val.json"), "--out", &s("eval")])
    };
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    if let Err(e) = pipeline(&a).and_then(|_| pipeline(&b)) {
        return verdict(false, e);
    }
    let mut files = 0;
    for stage in ["data", "run", "pred", "eval"] {
        let (ta, tb) = (tree_bytes(&a.join(stage)), tree_bytes(&b.join(stage)));
        if ta != tb {
            return verdict(false, format!("{stage} artifacts differ between identical runs"));
        }
        files += ta.len();
    }
    verdict(true, format!("{files} artifacts byte-identical across two gen-synth/train/infer/eval runs"))
}
