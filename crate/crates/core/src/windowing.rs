//! Overlapping windows over long sequences.

use crate::dataio::FeatureSequence;
use crate::numcore::Matrix;
use crate::{Error, Result};

pub const DEFAULT_WINDOW: usize = 64;
pub const DEFAULT_STRIDE: usize = 8;
/// Windows whose invalid-or-padded fraction exceeds this are not trained on.
pub const DEFAULT_INVALID_THRESHOLD: f64 = 0.25;

/// One fixed-length slice of a video.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSample {
    pub start: usize,
    /// `W × d_v`, zero on padded rows.
    pub v_in: Matrix<f32>,
    /// `W × d_a`, zero on padded rows.
    pub a_in: Matrix<f32>,
    /// `-1` on padded rows.
    pub labels: Vec<i8>,
    /// Label present and row not padding.
    pub frame_valid: Vec<bool>,
    /// Trailing padded rows.
    pub pad_len: usize,
    /// Visual stream absent for the whole window.
    pub v_missing: bool,
}

impl WindowSample {
    pub fn window_len(&self) -> usize {
        self.labels.len()
    }

    /// True on real (unpadded) rows.
    pub fn key_valid(&self) -> Vec<bool> {
        let w = self.window_len();
        (0..w).map(|i| i < w - self.pad_len).collect()
    }

    /// Visual keys usable by attention: unpadded rows, none when the visual
    /// stream is missing.
    pub fn visual_key_valid(&self) -> Vec<bool> {
        if self.v_missing {
            vec![false; self.window_len()]
        } else {
            self.key_valid()
        }
    }

    /// Zeroes the visual features and marks the stream missing.
    pub fn drop_visual(&mut self) {
        self.v_in.data_mut().fill(0.0);
        self.v_missing = true;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WindowDecision {
    Keep,
    Drop,
}

/// Start indices of windows of length `w` with stride `s` covering `0..t`.
///
/// Regular starts `0, s, 2s, …` are used while the window fits; a final
/// window at `t − w` is appended if the tail would otherwise be uncovered.
/// Sequences shorter than `w` get the single start `0` (padded). A stride
/// longer than the window is rejected since it would leave gaps.
pub fn make_windows(t: usize, w: usize, s: usize) -> Result<Vec<usize>> {
    if t == 0 {
        return Err(Error::EmptySequence);
    }
    if w == 0 || s == 0 {
        return Err(Error::Config(format!("window ({w}) and stride ({s}) must be at least 1")));
    }
    if s > w {
        return Err(Error::Config(format!("stride {s} exceeds window {w}; frames between windows would be skipped")));
    }
    if t <= w {
        return Ok(vec![0]);
    }
    let mut starts: Vec<usize> = (0..).map(|k| k * s).take_while(|&st| st + w <= t).collect();
    let last = *starts.last().expect("t > w so start 0 fits");
    if last + w < t {
        starts.push(t - w);
    }
    Ok(starts)
}

/// Drops a window when the fraction of frames that are unlabelled or padded
/// strictly exceeds `threshold`.
pub fn filter_window(labels: &[i8], frame_valid: &[bool], threshold: f64) -> WindowDecision {
    let w = labels.len().max(frame_valid.len());
    if w == 0 {
        return WindowDecision::Drop;
    }
    let invalid = (0..w)
        .filter(|&i| labels.get(i).is_none_or(|&l| l < 0) || !frame_valid.get(i).copied().unwrap_or(false))
        .count();
    if invalid as f64 / w as f64 > threshold {
        WindowDecision::Drop
    } else {
        WindowDecision::Keep
    }
}

/// Number of windows covering each frame, counting only unpadded positions.
pub fn coverage_counts(t: usize, starts: &[usize], w: usize) -> Vec<u32> {
    let mut counts = vec![0u32; t];
    for &s in starts {
        for c in counts.iter_mut().take((s + w).min(t)).skip(s) {
            *c += 1;
        }
    }
    counts
}

/// Cuts the window starting at `start`, zero-padding past the end of the
/// sequence. The window is marked visual-missing when every unpadded
/// visual entry is exactly zero.
pub fn extract_window(seq: &FeatureSequence, start: usize, w: usize) -> WindowSample {
    let t = seq.len();
    assert!(start < t, "window start {start} beyond sequence length {t}");
    let real = (t - start).min(w);
    let mut v_in = Matrix::zeros(w, seq.visual.cols());
    let mut a_in = Matrix::zeros(w, seq.audio.cols());
    let mut labels = vec![-1i8; w];
    for i in 0..real {
        v_in.row_mut(i).copy_from_slice(seq.visual.row(start + i));
        a_in.row_mut(i).copy_from_slice(seq.audio.row(start + i));
        labels[i] = seq.labels[start + i];
    }
    let frame_valid = (0..w).map(|i| i < real && labels[i] >= 0).collect();
    let v_missing = v_in.data()[..real * seq.visual.cols()].iter().all(|&x| x == 0.0);
    WindowSample {
        start,
        v_in,
        a_in,
        labels,
        frame_valid,
        pad_len: w - real,
        v_missing,
    }
}

/// All windows of a sequence, unfiltered (inference path).
pub fn slice_sequence(seq: &FeatureSequence, w: usize, s: usize) -> Result<Vec<WindowSample>> {
    Ok(make_windows(seq.len(), w, s)?
        .into_iter()
        .map(|st| extract_window(seq, st, w))
        .collect())
}

/// Windows of every sequence that pass [`filter_window`] (training path).
pub fn training_windows(seqs: &[FeatureSequence], w: usize, s: usize, threshold: f64) -> Result<Vec<WindowSample>> {
    let mut out = Vec::new();
    for seq in seqs {
        for win in slice_sequence(seq, w, s)? {
            if filter_window(&win.labels, &win.frame_valid, threshold) == WindowDecision::Keep {
                out.push(win);
            }
        }
    }
    Ok(out)
}
