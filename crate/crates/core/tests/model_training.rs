use std::path::Path;

use evssm_autodiff::Tensor;
use evssm_core::aggregation::{build_stack, SamplingConfig};
use evssm_core::events::DatasetManifest;
use evssm_core::peas::{apply_selection, make_mask, MaskMode};
use evssm_core::pipeline::Variant;
use evssm_core::ssm::{selective_scan, selective_scan_blocked, SsmParams};
use evssm_core::synth::{generate_dataset, DatasetSpec};
use evssm_core::train::{self, evaluate, evaluate_streams, max_drop, SweepConfig, TrainConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn blocked_scan_matches_sequential(
        len in 1usize..160,
        block in 1usize..40,
        d_inner in 1usize..6,
        n_state in 1usize..5,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = SsmParams::<f64>::random(d_inner, n_state, 2, &mut rng);
        let x: Vec<f64> = (0..len * d_inner).map(|i| (i as f64 * 0.37 + seed as f64 * 1e-9).sin()).collect();
        let a = selective_scan(&x, len, &params).unwrap();
        let b = selective_scan_blocked(&x, len, &params, block).unwrap();
        let scale = a.iter().fold(1e-12f64, |m, v| m.max(v.abs()));
        for (u, v) in a.iter().zip(&b) {
            prop_assert!((u - v).abs() <= 1e-10 * scale, "{} vs {}", u, v);
        }
    }

    #[test]
    fn eval_selection_gathers_argmax_frames(k in 1usize..6, extra in 0usize..8, seed in any::<u64>()) {
        let p = k + extra;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores = Tensor::from_fn(vec![k, p], |_| rand::Rng::gen_range(&mut rng, -2.0..2.0));
        let mask = make_mask(&scores, MaskMode::Eval, None).unwrap();
        prop_assert!(mask.is_row_one_hot());
        prop_assert!(mask.is_temporally_sorted());
        let mut expected: Vec<usize> = (0..k)
            .map(|r| {
                let row = scores.row(r);
                (0..p).fold(0, |best, j| if row[j] > row[best] { j } else { best })
            })
            .collect();
        expected.sort_unstable();
        prop_assert_eq!(&mask.selected, &expected);
    }
}

fn tiny_dataset(dir: &Path, seed: u64) -> std::path::PathBuf {
    let spec = DatasetSpec {
        classes: 2,
        per_class: 3,
        duration_range_s: (0.4, 0.6),
        seed,
        ..DatasetSpec::default()
    };
    generate_dataset(&spec, dir).unwrap();
    dir.join("manifest.json")
}

fn tiny_config(manifest: &Path, out: &Path) -> TrainConfig {
    TrainConfig {
        manifest: manifest.to_path_buf(),
        k: 4,
        layers: Some(1),
        dim: Some(16),
        epochs: 2,
        batch_size: 4,
        warmup_epochs: 1,
        sampling: SamplingConfig {
            frequency_hz: 20.0,
            ..SamplingConfig::default()
        },
        out_dir: out.to_path_buf(),
        ..TrainConfig::default()
    }
}

#[test]
fn training_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = tiny_dataset(&dir.path().join("data"), 5);
    let a = train::train(&tiny_config(&manifest, &dir.path().join("a")), |_| {}).unwrap();
    let b = train::train(&tiny_config(&manifest, &dir.path().join("b")), |_| {}).unwrap();
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.metrics.len(), 2);
    for (x, y) in a.store.entries().iter().zip(b.store.entries()) {
        assert_eq!(x.value.data(), y.value.data(), "{}", x.name);
    }
    let metrics = std::fs::read_to_string(dir.path().join("a").join(train::METRICS_FILE)).unwrap();
    assert_eq!(metrics.lines().count(), 3);
}

#[test]
fn checkpoint_evaluation_matches_in_memory_model() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = tiny_dataset(&dir.path().join("data"), 6);
    let outcome = train::train(&tiny_config(&manifest, &dir.path().join("run")), |_| {}).unwrap();
    let m = DatasetManifest::load(&manifest).unwrap();
    let streams: Vec<_> = (0..m.samples.len())
        .map(|i| m.load_sample(i).unwrap())
        .collect();
    let direct = evaluate_streams(&outcome.pipeline, &outcome.store, &streams, 20.0).unwrap();
    let first = evaluate(&outcome.checkpoint, &manifest, 20.0).unwrap();
    let second = evaluate(&outcome.checkpoint, &manifest, 20.0).unwrap();
    assert_eq!(first, second);
    assert_eq!(first.predictions, direct.predictions);
    assert_eq!(
        first.labels,
        m.samples.iter().map(|s| s.label).collect::<Vec<_>>()
    );

    // selection of the eval pipeline is a plain gather of stack frames
    let stack = build_stack(&streams[0].0, &outcome.pipeline.sampling_at(40.0), None).unwrap();
    let out = outcome
        .pipeline
        .infer(&outcome.store, &stack, streams[0].1)
        .unwrap();
    let mask = out.mask.unwrap();
    let gathered = apply_selection(&mask, &stack).unwrap();
    let n = stack.frame_len();
    for (r, &p) in mask.selected.iter().enumerate() {
        assert_eq!(&gathered[r * n..(r + 1) * n], stack.frame(p));
    }
}

#[test]
fn sweep_fills_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = tiny_dataset(&dir.path().join("data"), 7);
    let mut template = tiny_config(&manifest, &dir.path().join("unused"));
    template.epochs = 1;
    let sweep = SweepConfig {
        train_frequencies: vec![20.0, 30.0],
        eval_frequencies: vec![10.0, 20.0, 30.0],
        variants: Variant::ALL.to_vec(),
        template,
        eval_manifest: None,
    };
    let rows = train::sweep_frequency(&sweep, &dir.path().join("runs"), |_| {}).unwrap();
    assert_eq!(rows.len(), 3 * 2 * 3);
    for r in &rows {
        let top1 = r.top1.expect("every cell trains");
        assert!((0.0..=1.0).contains(&top1));
        if r.eval_f == r.train_f {
            assert_eq!(r.drop, Some(0.0));
            let ckpt = dir
                .path()
                .join("runs")
                .join(format!("{}_{}hz", r.variant.name(), r.train_f))
                .join(train::CHECKPOINT_FILE);
            assert_eq!(evaluate(&ckpt, &manifest, r.eval_f).unwrap().top1, top1);
        }
    }
    for v in Variant::ALL {
        assert!(max_drop(&rows, v).unwrap() >= 0.0);
    }
    let csv = dir.path().join("sweep.csv");
    train::write_sweep(&csv, &rows).unwrap();
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(
        text.lines().next(),
        Some("variant,train_f,eval_f,top1,drop")
    );
    assert_eq!(text.lines().count(), rows.len() + 1);
}
