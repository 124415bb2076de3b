//! Fixtures shared by the criterion benchmarks.

use avfer::dataio::FeatureSequence;
use avfer::numcore::Matrix;

/// A deterministic pseudo-random video of `t` frames.
pub fn synthetic_video(t: usize, d_v: usize, d_a: usize) -> FeatureSequence {
    let wave = |rows: usize, cols: usize, phase: f32| {
        let data = (0..rows * cols).map(|i| ((i as f32) * 0.37 + phase).sin()).collect();
        Matrix::from_vec(rows, cols, data).expect("sized")
    };
    let labels = (0..t).map(|i| ((i / 24) % 8) as i8).collect();
    FeatureSequence::new("bench", wave(t, d_v, 0.0), wave(t, d_a, 1.3), labels, 30.0).expect("consistent lengths")
}
