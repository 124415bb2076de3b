use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use avfer::dataio::format::{read_labels, read_matrix, write_labels, write_matrix};
use avfer::dataio::{
    align_audio, context_pool, load_sequence, synthesize, DataError, DatasetManifest, LabelRule, ManifestEntry, Split, SynthSpec,
};
use avfer::metrics::macro_f1;
use avfer::{Matrix, NUM_CLASSES};
use proptest::prelude::*;

fn finite_f32() -> impl Strategy<Value = f32> {
    use prop::num::f32::{NEGATIVE, NORMAL, POSITIVE, SUBNORMAL, ZERO};
    POSITIVE | NEGATIVE | NORMAL | SUBNORMAL | ZERO
}

fn matrix_strategy() -> impl Strategy<Value = Matrix<f32>> {
    (1usize..20, 1usize..10).prop_flat_map(|(r, c)| {
        prop::collection::vec(finite_f32(), r * c).prop_map(move |d| Matrix::from_vec(r, c, d).unwrap())
    })
}

fn files_in(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matrix_file_round_trip_is_bit_exact(m in matrix_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.fwf");
        write_matrix(&path, &m).unwrap();
        let back = read_matrix(&path).unwrap();
        prop_assert_eq!(back.shape(), m.shape());
        let same = back.data().iter().zip(m.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        prop_assert!(same);
    }

    #[test]
    fn label_file_round_trip(labels in prop::collection::vec(-1i8..8, 0..300)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.fwl");
        write_labels(&path, &labels).unwrap();
        prop_assert_eq!(read_labels(&path).unwrap(), labels);
    }

    #[test]
    fn aligned_audio_stays_within_bracketing_rows(src in matrix_strategy(), t in 1usize..60) {
        let out = align_audio(&src, t);
        prop_assert_eq!(out.shape(), (t, src.cols()));
        let n = src.rows();
        for i in 0..t {
            let pos = if t == 1 || n == 1 { 0.0 } else { i as f64 * (n - 1) as f64 / (t - 1) as f64 };
            let lo = (pos.floor() as usize).min(n - 1);
            let hi = (lo + 1).min(n - 1);
            for j in 0..src.cols() {
                let (a, b) = (src.get(lo, j), src.get(hi, j));
                let v = out.get(i, j);
                prop_assert!(v >= a.min(b) && v <= a.max(b), "row {} col {}: {} not in [{}, {}]", i, j, v, a, b);
            }
        }
    }

    #[test]
    fn context_pool_radius_zero_is_the_row(src in matrix_strategy(), pick in any::<prop::sample::Index>()) {
        let f = pick.index(src.rows());
        let pooled = context_pool(&src, f, 0).unwrap();
        prop_assert_eq!(pooled.as_slice(), src.row(f));
    }
}

#[test]
fn corrupt_magic_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.fwf");
    fs::write(&path, b"XXXX\x01\0\0\0\x01\0\0\0\0\0\0\0").unwrap();
    assert!(matches!(read_matrix(&path), Err(DataError::Format { .. })));
}

#[test]
fn truncated_matrix_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("short.fwf");
    write_matrix(&path, &Matrix::<f32>::zeros(3, 3)).unwrap();
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() - 2]).unwrap();
    assert!(matches!(read_matrix(&path), Err(DataError::Format { .. })));
}

#[test]
fn out_of_range_label_names_frame() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("l.fwl");
    let mut bytes = b"FWL1".to_vec();
    bytes.extend_from_slice(&3u32.to_le_bytes());
    bytes.extend_from_slice(&[0u8, 9, 1]);
    fs::write(&path, bytes).unwrap();
    match read_labels(&path) {
        Err(DataError::Label { frame, value, .. }) => assert_eq!((frame, value), (1, 9)),
        other => panic!("expected label error, got {other:?}"),
    }
}

#[test]
fn context_pool_matches_brute_force_means() {
    let audio = Matrix::from_vec(100, 2, (0..200).map(|i| (i as f32).sin()).collect()).unwrap();
    for (frame, radius) in [(0usize, 18usize), (50, 18), (99, 18), (10, 3)] {
        let lo = frame.saturating_sub(radius);
        let hi = (frame + radius).min(99);
        let pooled = context_pool(&audio, frame, radius).unwrap();
        for j in 0..2 {
            let mean = (lo..=hi).map(|r| audio.get(r, j) as f64).sum::<f64>() / (hi - lo + 1) as f64;
            assert!((pooled[j] as f64 - mean).abs() < 1e-6);
        }
    }
    assert!(matches!(context_pool(&audio, 100, 1), Err(DataError::FrameOutOfRange { .. })));
}

#[test]
fn manifest_round_trip_and_load() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        n_videos: 4,
        t_min: 20,
        t_max: 30,
        audio_rate: 0.5,
        ..SynthSpec::default()
    };
    let data = synthesize(&spec, 11).unwrap();
    let (train, val) = data.write(dir.path()).unwrap();
    let loaded = DatasetManifest::load(&dir.path().join("train.json")).unwrap();
    assert_eq!(loaded.entries, train.entries);
    assert_eq!(val.entries.len(), 1);
    assert!(loaded.entries.iter().all(|e| e.split == Split::Train));

    let seqs = loaded.load_all(spec.d_v, spec.d_a).unwrap();
    for (seq, v) in seqs.iter().zip(&data.videos) {
        assert_eq!(seq, &v.sequence);
        assert!(v.raw_audio.rows() < seq.len());
    }
    assert_eq!(loaded.probe_dims().unwrap(), (spec.d_v, spec.d_a));
}

#[test]
fn duplicate_video_ids_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let entry = ManifestEntry {
        video_id: "a".into(),
        visual_path: "v.fwf".into(),
        audio_path: "a.fwf".into(),
        labels_path: "l.fwl".into(),
        raw_audio_len: 1,
        split: Split::Train,
        frame_rate: 30.0,
    };
    let m = DatasetManifest {
        entries: vec![entry.clone(), entry],
        base_dir: dir.path().to_path_buf(),
    };
    let path = dir.path().join("m.json");
    m.save(&path).unwrap();
    assert!(matches!(DatasetManifest::load(&path), Err(DataError::Manifest { .. })));
}

#[test]
fn dimension_mismatch_is_reported_on_load() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        n_videos: 1,
        t_min: 10,
        t_max: 10,
        val_fraction: 0.0,
        ..SynthSpec::default()
    };
    let (train, _) = synthesize(&spec, 1).unwrap().write(dir.path()).unwrap();
    assert!(load_sequence(&train.entries[0], dir.path(), spec.d_v + 1, spec.d_a).is_err());
}

#[test]
fn generation_is_byte_reproducible() {
    let spec = SynthSpec {
        n_videos: 3,
        t_min: 30,
        t_max: 60,
        ..SynthSpec::default()
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    avfer::dataio::generate_synthetic(&spec, 42, a.path()).unwrap();
    avfer::dataio::generate_synthetic(&spec, 42, b.path()).unwrap();
    let (fa, fb) = (files_in(a.path()), files_in(b.path()));
    assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
    for (k, v) in &fa {
        assert_eq!(v, &fb[k], "{k} differs");
    }
    let c = tempfile::tempdir().unwrap();
    avfer::dataio::generate_synthetic(&spec, 43, c.path()).unwrap();
    assert_ne!(files_in(c.path()), fa);
}

#[test]
fn no_missing_rate_means_no_unlabelled_frames() {
    let spec = SynthSpec {
        missing_rate: 0.0,
        ..SynthSpec::default()
    };
    let data = synthesize(&spec, 2).unwrap();
    assert!(data.videos.iter().all(|v| v.sequence.labels.iter().all(|&l| l >= 0)));
}

#[test]
fn label_frequencies_follow_priors() {
    let spec = SynthSpec {
        n_videos: 200,
        t_min: 300,
        t_max: 300,
        d_v: 2,
        d_a: 2,
        missing_rate: 0.0,
        label_rule: LabelRule::Iid,
        ..SynthSpec::default()
    };
    let data = synthesize(&spec, 7).unwrap();
    let mut counts = [0u64; NUM_CLASSES];
    for v in &data.videos {
        for &c in &v.true_classes {
            counts[c as usize] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    assert!(total >= 50_000);
    for (c, (&n, &p)) in counts.iter().zip(&spec.class_priors).enumerate() {
        let freq = n as f64 / total as f64;
        assert!((freq - p).abs() <= 0.02, "class {c}: {freq:.4} vs prior {p}");
    }
}

#[test]
fn priors_not_summing_to_one_rejected() {
    let spec = SynthSpec {
        class_priors: [0.5, 0.3, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0],
        ..SynthSpec::default()
    };
    let err = synthesize(&spec, 1).unwrap_err();
    assert!(err.to_string().contains("class_priors"), "{err}");
}

#[test]
fn bayes_audio_only_trails_fused() {
    let spec = SynthSpec {
        n_videos: 20,
        missing_rate: 0.0,
        ..SynthSpec::default()
    };
    let data = synthesize(&spec, 3).unwrap();
    let mut gold = Vec::new();
    let mut audio_only = Vec::new();
    let mut fused = Vec::new();
    for v in &data.videos {
        let seq = &v.sequence;
        for f in 0..seq.len() {
            gold.push(v.true_classes[f] as i8);
            audio_only.push(data.model.bayes_predict(None, Some(seq.audio.row(f))));
            fused.push(data.model.bayes_predict(Some(seq.visual.row(f)), Some(seq.audio.row(f))));
        }
    }
    let f_audio = macro_f1(&audio_only, &gold).unwrap();
    let f_fused = macro_f1(&fused, &gold).unwrap();
    assert!(f_audio < f_fused, "audio-only {f_audio:.4} vs fused {f_fused:.4}");
}

#[test]
fn confusable_pair_shares_audio_mean() {
    let data = synthesize(&SynthSpec::default(), 5).unwrap();
    assert_eq!(data.model.audio_means.row(0), data.model.audio_means.row(1));
    assert_ne!(data.model.visual_means.row(0), data.model.visual_means.row(1));
}
