//! Seeded synthetic audio-visual datasets.
//!
//! Each class owns a mean vector per modality; frames are the class mean
//! plus isotropic Gaussian noise. Visual means are distinct for all eight
//! classes. Audio means can be made identical for one class pair, so audio
//! alone cannot separate that pair while the visual stream can.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::format::{write_labels, write_matrix};
use super::manifest::{DatasetManifest, ManifestEntry, Split};
use super::sequence::{align_audio, FeatureSequence};
use super::DataError;
use crate::numcore::Matrix;
use crate::NUM_CLASSES;

/// How frame labels are laid out in time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LabelRule {
    /// Every frame draws its class independently from the priors.
    Iid,
    /// Piecewise-constant runs; run lengths are uniform on
    /// `1..=2·mean_len−1` and each run draws its class from the priors.
    Segments { mean_len: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub n_videos: usize,
    pub t_min: usize,
    pub t_max: usize,
    pub d_v: usize,
    pub d_a: usize,
    pub class_priors: [f64; NUM_CLASSES],
    /// Fraction of frames whose label is replaced by `-1`.
    pub missing_rate: f64,
    pub label_rule: LabelRule,
    /// Noise standard deviation per visual feature.
    pub visual_noise: f64,
    /// Noise standard deviation per audio feature.
    pub audio_noise: f64,
    /// Two classes sharing one audio mean.
    pub confusable_pair: Option<[u8; 2]>,
    /// Trailing fraction of videos assigned to the validation split.
    pub val_fraction: f64,
    /// Probability that each 64-frame block of a video has its visual
    /// features zeroed (simulated occlusion).
    pub visual_blackout_rate: f64,
    /// Raw audio rows per video frame before alignment.
    pub audio_rate: f64,
    pub frame_rate: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_videos: 12,
            t_min: 200,
            t_max: 400,
            d_v: 16,
            d_a: 16,
            class_priors: [0.4, 0.3, 0.1, 0.06, 0.05, 0.04, 0.03, 0.02],
            missing_rate: 0.05,
            label_rule: LabelRule::Segments { mean_len: 24 },
            visual_noise: 1.0,
            audio_noise: 1.0,
            confusable_pair: Some([0, 1]),
            val_fraction: 0.25,
            visual_blackout_rate: 0.0,
            audio_rate: 1.0,
            frame_rate: 30.0,
        }
    }
}

pub const BLACKOUT_BLOCK: usize = 64;

impl SynthSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |field: &str, msg: String| Err(DataError::Validation(format!("{field}: {msg}")));
        if self.n_videos == 0 {
            return bad("n_videos", "must be at least 1".into());
        }
        if self.t_min == 0 || self.t_min > self.t_max {
            return bad("t_min", format!("need 1 <= t_min <= t_max, got {}..{}", self.t_min, self.t_max));
        }
        if self.d_v < 2 {
            return bad("d_v", format!("must be at least 2, got {}", self.d_v));
        }
        if self.d_a < 2 {
            return bad("d_a", format!("must be at least 2, got {}", self.d_a));
        }
        let total: f64 = self.class_priors.iter().sum();
        if (total - 1.0).abs() > 1e-6 || self.class_priors.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return bad("class_priors", format!("must be probabilities summing to 1, sum is {total}"));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return bad("missing_rate", format!("must be in [0, 1), got {}", self.missing_rate));
        }
        if let LabelRule::Segments { mean_len } = self.label_rule {
            if mean_len == 0 {
                return bad("label_rule.mean_len", "must be at least 1".into());
            }
        }
        if !(self.visual_noise >= 0.0 && self.visual_noise.is_finite()) {
            return bad("visual_noise", format!("must be finite and >= 0, got {}", self.visual_noise));
        }
        if !(self.audio_noise >= 0.0 && self.audio_noise.is_finite()) {
            return bad("audio_noise", format!("must be finite and >= 0, got {}", self.audio_noise));
        }
        if let Some([a, b]) = self.confusable_pair {
            if a == b || a as usize >= NUM_CLASSES || b as usize >= NUM_CLASSES {
                return bad("confusable_pair", format!("need two distinct classes in 0..8, got [{a}, {b}]"));
            }
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("val_fraction", format!("must be in [0, 1), got {}", self.val_fraction));
        }
        if !(0.0..=1.0).contains(&self.visual_blackout_rate) {
            return bad("visual_blackout_rate", format!("must be in [0, 1], got {}", self.visual_blackout_rate));
        }
        if !(self.audio_rate > 0.0 && self.audio_rate.is_finite()) {
            return bad("audio_rate", format!("must be positive, got {}", self.audio_rate));
        }
        Ok(())
    }

    fn n_val(&self) -> usize {
        (self.n_videos as f64 * self.val_fraction).round() as usize
    }
}

/// The generative parameters behind a synthetic dataset; enough to build
/// the Bayes-optimal classifier for each modality.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthModel {
    /// `8 × d_v`
    pub visual_means: Matrix<f64>,
    /// `8 × d_a`
    pub audio_means: Matrix<f64>,
    pub priors: [f64; NUM_CLASSES],
    pub visual_noise: f64,
    pub audio_noise: f64,
}

impl SynthModel {
    /// Maximum-a-posteriori class for one frame given whichever modalities
    /// are supplied. Ties go to the lowest class.
    pub fn bayes_predict(&self, visual: Option<&[f32]>, audio: Option<&[f32]>) -> u8 {
        let mut best = (f64::NEG_INFINITY, 0u8);
        for c in 0..NUM_CLASSES {
            if self.priors[c] <= 0.0 {
                continue;
            }
            let mut score = self.priors[c].ln();
            if let Some(v) = visual {
                score += gaussian_log_lik(v, self.visual_means.row(c), self.visual_noise);
            }
            if let Some(a) = audio {
                score += gaussian_log_lik(a, self.audio_means.row(c), self.audio_noise);
            }
            if score > best.0 {
                best = (score, c as u8);
            }
        }
        best.1
    }
}

fn gaussian_log_lik(x: &[f32], mean: &[f64], sigma: f64) -> f64 {
    let var = sigma.max(1e-6).powi(2);
    let sq: f64 = x.iter().zip(mean).map(|(&v, &m)| (v as f64 - m).powi(2)).sum();
    -sq / (2.0 * var)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedVideo {
    pub sequence: FeatureSequence,
    /// Audio at its raw rate, before alignment.
    pub raw_audio: Matrix<f32>,
    /// Ground-truth class of every frame, including frames labelled `-1`.
    pub true_classes: Vec<u8>,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub model: SynthModel,
    pub videos: Vec<GeneratedVideo>,
}

impl SynthDataset {
    pub fn split(&self, split: Split) -> Vec<FeatureSequence> {
        self.videos
            .iter()
            .filter(|v| v.split == split)
            .map(|v| v.sequence.clone())
            .collect()
    }

    /// Writes feature and label files under `dir/features/` plus
    /// `dir/train.json` and `dir/val.json`.
    pub fn write(&self, dir: &Path) -> Result<(DatasetManifest, DatasetManifest), DataError> {
        let mut train = Vec::new();
        let mut val = Vec::new();
        for v in &self.videos {
            let id = &v.sequence.video_id;
            let rel = |suffix: &str| PathBuf::from("features").join(format!("{id}.{suffix}"));
            let entry = ManifestEntry {
                video_id: id.clone(),
                visual_path: rel("visual.fwf"),
                audio_path: rel("audio.fwf"),
                labels_path: rel("labels.fwl"),
                raw_audio_len: v.raw_audio.rows(),
                split: v.split,
                frame_rate: v.sequence.frame_rate,
            };
            write_matrix(&dir.join(&entry.visual_path), &v.sequence.visual)?;
            write_matrix(&dir.join(&entry.audio_path), &v.raw_audio)?;
            write_labels(&dir.join(&entry.labels_path), &v.sequence.labels)?;
            match v.split {
                Split::Train => train.push(entry),
                Split::Val => val.push(entry),
            }
        }
        let train = DatasetManifest {
            entries: train,
            base_dir: dir.to_path_buf(),
        };
        let val = DatasetManifest {
            entries: val,
            base_dir: dir.to_path_buf(),
        };
        train.save(&dir.join("train.json"))?;
        val.save(&dir.join("val.json"))?;
        Ok((train, val))
    }
}

/// Generates a dataset in memory. Identical `(spec, seed)` pairs give
/// identical datasets.
pub fn synthesize(spec: &SynthSpec, seed: u64) -> Result<SynthDataset, DataError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let visual_means = gaussian_matrix(&mut rng, NUM_CLASSES, spec.d_v, 1.0);
    let mut audio_means = gaussian_matrix(&mut rng, NUM_CLASSES, spec.d_a, 1.0);
    if let Some([a, b]) = spec.confusable_pair {
        let shared = audio_means.row(a as usize).to_vec();
        audio_means.row_mut(b as usize).copy_from_slice(&shared);
    }
    let model = SynthModel {
        visual_means,
        audio_means,
        priors: spec.class_priors,
        visual_noise: spec.visual_noise,
        audio_noise: spec.audio_noise,
    };

    let class_dist = WeightedIndex::new(spec.class_priors).map_err(|e| DataError::Validation(format!("class_priors: {e}")))?;
    let first_val = spec.n_videos - spec.n_val();
    let mut videos = Vec::with_capacity(spec.n_videos);
    for i in 0..spec.n_videos {
        let t = rng.random_range(spec.t_min..=spec.t_max);
        let true_classes = draw_classes(&mut rng, &class_dist, spec.label_rule, t);
        let labels: Vec<i8> = true_classes
            .iter()
            .map(|&c| if rng.random::<f64>() < spec.missing_rate { -1 } else { c as i8 })
            .collect();

        let mut visual = Matrix::zeros(t, spec.d_v);
        for f in 0..t {
            fill_frame(&mut rng, visual.row_mut(f), model.visual_means.row(true_classes[f] as usize), spec.visual_noise);
        }

        let t_a = ((t as f64 * spec.audio_rate).round() as usize).max(1);
        let mut raw_audio = Matrix::zeros(t_a, spec.d_a);
        for j in 0..t_a {
            let pos = if t_a == 1 { 0.0 } else { j as f64 * (t - 1) as f64 / (t_a - 1) as f64 };
            let frame = (pos.round() as usize).min(t - 1);
            fill_frame(&mut rng, raw_audio.row_mut(j), model.audio_means.row(true_classes[frame] as usize), spec.audio_noise);
        }

        if spec.visual_blackout_rate > 0.0 {
            for block in (0..t).step_by(BLACKOUT_BLOCK) {
                if rng.random::<f64>() < spec.visual_blackout_rate {
                    for f in block..(block + BLACKOUT_BLOCK).min(t) {
                        visual.row_mut(f).fill(0.0);
                    }
                }
            }
        }

        let audio = align_audio(&raw_audio, t);
        let sequence = FeatureSequence::new(format!("vid{i:04}"), visual, audio, labels, spec.frame_rate)?;
        videos.push(GeneratedVideo {
            sequence,
            raw_audio,
            true_classes,
            split: if i >= first_val { Split::Val } else { Split::Train },
        });
    }
    Ok(SynthDataset { model, videos })
}

/// Generates a dataset and writes it under `out_dir`.
pub fn generate_synthetic(spec: &SynthSpec, seed: u64, out_dir: &Path) -> Result<(DatasetManifest, DatasetManifest), DataError> {
    synthesize(spec, seed)?.write(out_dir)
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix<f64> {
    let data = (0..rows * cols)
        .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, rng))
        .collect::<Vec<f64>>();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

fn fill_frame(rng: &mut ChaCha8Rng, out: &mut [f32], mean: &[f64], noise: f64) {
    for (o, &m) in out.iter_mut().zip(mean) {
        let z: f64 = StandardNormal.sample(rng);
        *o = (m + noise * z) as f32;
    }
}

fn draw_classes(rng: &mut ChaCha8Rng, dist: &WeightedIndex<f64>, rule: LabelRule, t: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(t);
    match rule {
        LabelRule::Iid => {
            for _ in 0..t {
                out.push(dist.sample(rng) as u8);
            }
        }
        LabelRule::Segments { mean_len } => {
            while out.len() < t {
                let len = rng.random_range(1..=2 * mean_len - 1);
                let c = dist.sample(rng) as u8;
                let n = len.min(t - out.len());
                out.extend(std::iter::repeat_n(c, n));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_missing_labels_when_rate_is_zero() {
        let spec = SynthSpec {
            missing_rate: 0.0,
            ..Default::default()
        };
        let ds = synthesize(&spec, 3).unwrap();
        assert!(ds.videos.iter().all(|v| v.sequence.labels.iter().all(|&l| l >= 0)));
    }

    #[test]
    fn validation_names_the_field() {
        let spec = SynthSpec {
            class_priors: [0.5; 8],
            ..Default::default()
        };
        let msg = synthesize(&spec, 0).unwrap_err().to_string();
        assert!(msg.contains("class_priors"), "{msg}");
        let spec = SynthSpec {
            d_a: 1,
            ..Default::default()
        };
        assert!(synthesize(&spec, 0).unwrap_err().to_string().contains("d_a"));
    }

    #[test]
    fn confusable_pair_shares_audio_mean() {
        let ds = synthesize(&SynthSpec::default(), 11).unwrap();
        assert_eq!(ds.model.audio_means.row(0), ds.model.audio_means.row(1));
        assert_ne!(ds.model.visual_means.row(0), ds.model.visual_means.row(1));
    }

    #[test]
    fn audio_rate_changes_raw_length_only() {
        let spec = SynthSpec {
            n_videos: 2,
            audio_rate: 2.5,
            ..Default::default()
        };
        let ds = synthesize(&spec, 5).unwrap();
        for v in &ds.videos {
            let t = v.sequence.len();
            assert_eq!(v.raw_audio.rows(), (t as f64 * 2.5).round() as usize);
            assert_eq!(v.sequence.audio.rows(), t);
        }
    }

    #[test]
    fn blackout_zeroes_whole_blocks() {
        let spec = SynthSpec {
            n_videos: 4,
            visual_blackout_rate: 0.5,
            ..Default::default()
        };
        let ds = synthesize(&spec, 9).unwrap();
        let zero_rows: usize = ds
            .videos
            .iter()
            .map(|v| v.sequence.visual.row_iter().filter(|r| r.iter().all(|&x| x == 0.0)).count())
            .sum();
        assert!(zero_rows >= BLACKOUT_BLOCK);
    }
}
