use std::path::Path;

use super::format::{read_labels, read_matrix, MAX_LABEL};
use super::manifest::ManifestEntry;
use super::DataError;
use crate::numcore::Matrix;

/// One video's frame-aligned features and labels.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub video_id: String,
    /// `T × d_v`
    pub visual: Matrix<f32>,
    /// `T × d_a`, already aligned to the video frames.
    pub audio: Matrix<f32>,
    /// One label per frame, `0..=7` or `-1` for unannotated frames.
    pub labels: Vec<i8>,
    /// Metadata only.
    pub frame_rate: f64,
}

impl FeatureSequence {
    pub fn new(
        video_id: impl Into<String>,
        visual: Matrix<f32>,
        audio: Matrix<f32>,
        labels: Vec<i8>,
        frame_rate: f64,
    ) -> Result<Self, DataError> {
        let video_id = video_id.into();
        let t = visual.rows();
        if t == 0 {
            return Err(DataError::Validation(format!("{video_id}: sequence has no frames")));
        }
        if audio.rows() != t || labels.len() != t {
            return Err(DataError::Validation(format!(
                "{video_id}: visual has {t} rows, audio {} rows, labels {}",
                audio.rows(),
                labels.len()
            )));
        }
        if let Some(i) = labels.iter().position(|l| !(-1..=MAX_LABEL).contains(l)) {
            return Err(DataError::Validation(format!(
                "{video_id}: label {} at frame {i} outside -1..=7",
                labels[i]
            )));
        }
        Ok(Self {
            video_id,
            visual,
            audio,
            labels,
            frame_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Loads one manifest entry, resolving relative paths against `base_dir`,
/// and resamples the audio onto the video frame grid.
pub fn load_sequence(entry: &ManifestEntry, base_dir: &Path, d_v: usize, d_a: usize) -> Result<FeatureSequence, DataError> {
    let visual_path = base_dir.join(&entry.visual_path);
    let audio_path = base_dir.join(&entry.audio_path);
    let labels_path = base_dir.join(&entry.labels_path);

    let visual = read_matrix(&visual_path)?;
    if visual.cols() != d_v {
        return Err(DataError::format(
            &visual_path,
            8,
            format!("declared {} visual columns, expected d_v = {d_v}", visual.cols()),
        ));
    }
    let audio = read_matrix(&audio_path)?;
    if audio.cols() != d_a {
        return Err(DataError::format(
            &audio_path,
            8,
            format!("declared {} audio columns, expected d_a = {d_a}", audio.cols()),
        ));
    }
    if audio.rows() != entry.raw_audio_len {
        return Err(DataError::format(
            &audio_path,
            4,
            format!("declared {} audio rows, manifest says {}", audio.rows(), entry.raw_audio_len),
        ));
    }
    let labels = read_labels(&labels_path)?;
    if labels.len() != visual.rows() {
        return Err(DataError::format(
            &labels_path,
            4,
            format!("{} labels for {} visual frames", labels.len(), visual.rows()),
        ));
    }
    if audio.rows() == 0 {
        return Err(DataError::format(&audio_path, 4, "audio has no rows"));
    }
    let t = visual.rows();
    let audio = if audio.rows() == t { audio } else { align_audio(&audio, t) };
    FeatureSequence::new(entry.video_id.clone(), visual, audio, labels, entry.frame_rate)
}

/// Resamples `audio` to `target_len` rows by per-dimension linear
/// interpolation. Endpoints map to endpoints: output row `i` reads source
/// position `i·(T_a−1)/(T−1)`.
pub fn align_audio(audio: &Matrix<f32>, target_len: usize) -> Matrix<f32> {
    let src_len = audio.rows();
    assert!(src_len >= 1 && target_len >= 1, "align_audio needs non-empty input and output");
    if src_len == target_len {
        return audio.clone();
    }
    let d = audio.cols();
    let mut out = Matrix::zeros(target_len, d);
    for i in 0..target_len {
        let pos = if target_len == 1 || src_len == 1 {
            0.0
        } else {
            i as f64 * (src_len - 1) as f64 / (target_len - 1) as f64
        };
        let lo = (pos.floor() as usize).min(src_len - 1);
        let hi = (lo + 1).min(src_len - 1);
        let frac = pos - lo as f64;
        let (a, b) = (audio.row(lo), audio.row(hi));
        let row = out.row_mut(i);
        for j in 0..d {
            row[j] = if frac == 0.0 {
                a[j]
            } else {
                (a[j] as f64 + frac * (b[j] as f64 - a[j] as f64)) as f32
            };
        }
    }
    out
}

/// Mean of the audio rows within `radius` frames of `frame`, clipped at the
/// sequence boundaries.
pub fn context_pool(audio: &Matrix<f32>, frame: usize, radius: usize) -> Result<Vec<f32>, DataError> {
    let t = audio.rows();
    if frame >= t {
        return Err(DataError::FrameOutOfRange { frame, len: t });
    }
    let lo = frame.saturating_sub(radius);
    let hi = (frame + radius).min(t - 1);
    let mut acc = vec![0.0f64; audio.cols()];
    for r in lo..=hi {
        for (a, &v) in acc.iter_mut().zip(audio.row(r)) {
            *a += v as f64;
        }
    }
    let n = (hi - lo + 1) as f64;
    Ok(acc.into_iter().map(|v| (v / n) as f32).collect())
}

/// [`context_pool`] for every frame, as a `T × d_a` matrix.
pub fn context_pool_all(audio: &Matrix<f32>, radius: usize) -> Matrix<f32> {
    let t = audio.rows();
    let d = audio.cols();
    let mut out = Matrix::zeros(t, d);
    for f in 0..t {
        let pooled = context_pool(audio, f, radius).expect("frame in range");
        out.row_mut(f).copy_from_slice(&pooled);
    }
    out
}
