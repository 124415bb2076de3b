//! Long-video prediction: overlapping windows, logit averaging, and
//! temporal smoothing of the per-frame argmax.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::dataio::FeatureSequence;
use crate::fusion::FusionModel;
use crate::numcore::{Matrix, NumError};
use crate::windowing::{make_windows, slice_sequence, DEFAULT_STRIDE, DEFAULT_WINDOW};
use crate::{Error, Result, NUM_CLASSES};

pub const DEFAULT_MEDIAN_K: usize = 11;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoother {
    /// Median of label ids.
    #[default]
    Median,
    /// Most frequent label in the window, ties to the lowest id.
    Majority,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    pub window: usize,
    pub stride: usize,
    pub median_k: usize,
    pub smoother: Smoother,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            stride: DEFAULT_STRIDE,
            median_k: DEFAULT_MEDIAN_K,
            smoother: Smoother::Median,
        }
    }
}

/// Logits of one window, positioned in its video.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowLogits {
    pub start: usize,
    /// `W × 8`, padded rows included.
    pub logits: Matrix<f32>,
    pub pad_len: usize,
}

/// Running per-frame logit sums and window counts.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitTrack {
    pub sum_logits: Matrix<f64>,
    pub coverage: Vec<u32>,
}

impl LogitTrack {
    pub fn new(t: usize, n_classes: usize) -> Self {
        Self {
            sum_logits: Matrix::zeros(t, n_classes),
            coverage: vec![0; t],
        }
    }

    pub fn add(&mut self, w: &WindowLogits) -> Result<()> {
        if w.logits.cols() != self.sum_logits.cols() {
            return Err(NumError::Dimension {
                op: "soft_vote",
                left: w.logits.shape(),
                right: self.sum_logits.shape(),
            }
            .into());
        }
        let real = w.logits.rows().saturating_sub(w.pad_len);
        let t = self.coverage.len();
        for i in 0..real {
            let frame = w.start + i;
            if frame >= t {
                break;
            }
            for (acc, &z) in self.sum_logits.row_mut(frame).iter_mut().zip(w.logits.row(i)) {
                *acc += z as f64;
            }
            self.coverage[frame] += 1;
        }
        Ok(())
    }

    /// Mean logits per frame. Fails if some frame was never covered.
    pub fn average(&self) -> Result<Matrix<f32>> {
        let mut out = Matrix::zeros(self.sum_logits.rows(), self.sum_logits.cols());
        for (f, &c) in self.coverage.iter().enumerate() {
            if c == 0 {
                return Err(Error::Uncovered { frame: f });
            }
            let inv = 1.0 / c as f64;
            for (o, &s) in out.row_mut(f).iter_mut().zip(self.sum_logits.row(f)) {
                *o = (s * inv) as f32;
            }
        }
        Ok(out)
    }
}

/// Averages raw (pre-softmax) window logits over every window covering each
/// frame.
pub fn soft_vote(windows: &[WindowLogits], t: usize) -> Result<Matrix<f32>> {
    let cols = windows.first().map_or(NUM_CLASSES, |w| w.logits.cols());
    let mut track = LogitTrack::new(t, cols);
    for w in windows {
        track.add(w)?;
    }
    track.average()
}

/// Per-frame argmax, ties to the lowest class.
pub fn argmax_rows(logits: &Matrix<f32>) -> Vec<u8> {
    (0..logits.rows()).map(|r| logits.row_argmax(r) as u8).collect()
}

fn check_kernel(k: usize) -> Result<()> {
    if k == 0 || k.is_multiple_of(2) {
        return Err(Error::Config(format!("smoothing kernel must be odd and positive, got {k}")));
    }
    Ok(())
}

/// Centered median over `k` labels with edge replication.
pub fn median_filter(labels: &[u8], k: usize) -> Result<Vec<u8>> {
    check_kernel(k)?;
    let half = k / 2;
    let n = labels.len();
    let mut buf = Vec::with_capacity(k);
    Ok((0..n)
        .map(|t| {
            buf.clear();
            buf.extend((0..k).map(|j| labels[(t + j).saturating_sub(half).min(n - 1)]));
            buf.sort_unstable();
            buf[half]
        })
        .collect())
}

/// Centered majority vote over `k` labels with edge replication.
pub fn majority_filter(labels: &[u8], k: usize) -> Result<Vec<u8>> {
    check_kernel(k)?;
    let half = k / 2;
    let n = labels.len();
    Ok((0..n)
        .map(|t| {
            let mut counts = [0usize; 256];
            for j in 0..k {
                counts[labels[(t + j).saturating_sub(half).min(n - 1)] as usize] += 1;
            }
            let mut best = 0;
            for c in 1..256 {
                if counts[c] > counts[best] {
                    best = c;
                }
            }
            best as u8
        })
        .collect())
}

pub fn smooth(labels: &[u8], k: usize, smoother: Smoother) -> Result<Vec<u8>> {
    match smoother {
        Smoother::Median => median_filter(labels, k),
        Smoother::Majority => majority_filter(labels, k),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoPrediction {
    /// Smoothed labels, one per frame.
    pub labels: Vec<u8>,
    /// Voted logits, `T × 8`.
    pub logits: Matrix<f32>,
}

/// Windows the whole video (no label filtering), runs the model in
/// inference mode, votes, takes the argmax, and smooths.
pub fn predict_video(model: &FusionModel<f32>, seq: &FeatureSequence, cfg: &InferenceConfig) -> Result<VideoPrediction> {
    check_kernel(cfg.median_k)?;
    let c = model.config();
    if seq.visual.cols() != c.d_v || seq.audio.cols() != c.d_a {
        return Err(NumError::Dimension {
            op: "predict_video features",
            left: (seq.visual.cols(), seq.audio.cols()),
            right: (c.d_v, c.d_a),
        }
        .into());
    }
    let windows = slice_sequence(seq, cfg.window, cfg.stride)?;
    let mut voted = Vec::with_capacity(windows.len());
    for w in &windows {
        voted.push(WindowLogits {
            start: w.start,
            logits: model.predict_window(w)?,
            pad_len: w.pad_len,
        });
    }
    let logits = soft_vote(&voted, seq.len())?;
    let labels = smooth(&argmax_rows(&logits), cfg.median_k, cfg.smoother)?;
    Ok(VideoPrediction { labels, logits })
}

/// Window starts `predict_video` would use; exposed for callers that need
/// coverage diagnostics.
pub fn inference_starts(t: usize, cfg: &InferenceConfig) -> Result<Vec<usize>> {
    make_windows(t, cfg.window, cfg.stride)
}

/// `frame,label[,logit_0..logit_7]` CSV.
pub fn write_predictions_csv<W: Write>(out: &mut W, pred: &VideoPrediction, with_logits: bool) -> std::io::Result<()> {
    write!(out, "frame,label")?;
    if with_logits {
        for c in 0..pred.logits.cols() {
            write!(out, ",logit_{c}")?;
        }
    }
    writeln!(out)?;
    for (f, &l) in pred.labels.iter().enumerate() {
        write!(out, "{f},{l}")?;
        if with_logits {
            for z in pred.logits.row(f) {
                write!(out, ",{z}")?;
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Reads the label column of a predictions CSV.
pub fn read_prediction_labels<R: BufRead>(input: R) -> Result<Vec<u8>> {
    let mut labels = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if !line.starts_with("frame,label") {
                return Err(Error::Config(format!("predictions header must start with frame,label, got {line:?}")));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let frame: usize = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| Error::Config(format!("line {}: bad frame index", i + 1)))?;
        if frame != labels.len() {
            return Err(Error::Config(format!("line {}: expected frame {}, got {frame}", i + 1, labels.len())));
        }
        let label: u8 = fields
            .next()
            .and_then(|f| f.parse().ok())
            .filter(|&l: &u8| (l as usize) < NUM_CLASSES)
            .ok_or_else(|| Error::Config(format!("line {}: bad label", i + 1)))?;
        labels.push(label);
    }
    Ok(labels)
}
