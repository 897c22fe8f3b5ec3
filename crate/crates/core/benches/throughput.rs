use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use evssm_autodiff::optim::ParamStore;
use evssm_core::aggregation::{build_stack, SamplingConfig};
use evssm_core::events::{EventStream, SensorGeometry};
use evssm_core::msg_loss::HistogramConfig;
use evssm_core::par::PARALLEL;
use evssm_core::pipeline::{Pipeline, PipelineSpec, Variant};
use evssm_core::ssm::{selective_scan, selective_scan_blocked, ModelConfig, SsmParams};
use evssm_core::synth::{generate_synthetic, MotionClass, SyntheticSceneSpec};
use evssm_core::train::evaluate_streams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Run once as is and once with `--no-default-features`; the backend name in
// every id keeps the two result sets apart.
fn backend() -> &'static str {
    if PARALLEL {
        "rayon"
    } else {
        "sequential"
    }
}

fn pools() -> Vec<(usize, rayon::ThreadPool)> {
    let default = rayon::current_num_threads();
    let mut sizes = vec![1];
    if default > 1 {
        sizes.push(default);
    }
    sizes
        .into_iter()
        .map(|n| {
            (
                n,
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .unwrap(),
            )
        })
        .collect()
}

fn scan(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (len, d_inner) = (2048, 64);
    let params = SsmParams::<f32>::random(d_inner, 16, 4, &mut rng);
    let x: Vec<f32> = (0..len * d_inner)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let mut g = c.benchmark_group(format!("scan/{}", backend()));
    g.bench_function("sequential", |b| {
        b.iter(|| selective_scan(&x, len, &params).unwrap())
    });
    for (threads, pool) in pools() {
        g.bench_with_input(BenchmarkId::new("blocked64", threads), &threads, |b, _| {
            b.iter(|| pool.install(|| selective_scan_blocked(&x, len, &params, 64).unwrap()))
        });
    }
    g.finish();
}

fn streams(n: usize) -> Vec<(EventStream, usize)> {
    (0..n)
        .map(|i| {
            let spec = SyntheticSceneSpec {
                motion_class: MotionClass::ALL[i % 4],
                duration_us: 1_000_000,
                event_rate: 20_000.0,
                noise_fraction: 0.05,
                geometry: SensorGeometry::new(64, 64),
                seed: i as u64,
            };
            (generate_synthetic(&spec).unwrap().0, i % 4)
        })
        .collect()
}

fn aggregation(c: &mut Criterion) {
    let data = streams(1);
    let cfg = SamplingConfig {
        frequency_hz: 60.0,
        ..SamplingConfig::default()
    };
    let mut g = c.benchmark_group(format!("aggregate/{}", backend()));
    for (threads, pool) in pools() {
        g.bench_with_input(
            BenchmarkId::new("build_stack_60hz", threads),
            &threads,
            |b, _| b.iter(|| pool.install(|| build_stack(&data[0].0, &cfg, None).unwrap())),
        );
    }
    g.finish();
}

fn batch_inference(c: &mut Criterion) {
    let data = streams(8);
    let spec = PipelineSpec {
        variant: Variant::EventCountsPeas,
        model: ModelConfig::custom(2, 64, 8, 4, 32, 32),
        sampling: SamplingConfig::default(),
        histogram: HistogramConfig::default(),
        tau: 1.0,
        classes: vec![],
        sensor: None,
    };
    let mut store = ParamStore::<f32>::new();
    let pipeline = Pipeline::init(&spec, &mut store, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let mut g = c.benchmark_group(format!("inference/{}", backend()));
    g.sample_size(10);
    for (threads, pool) in pools() {
        g.bench_with_input(BenchmarkId::new("batch8", threads), &threads, |b, _| {
            b.iter(|| pool.install(|| evaluate_streams(&pipeline, &store, &data, 20.0).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, scan, aggregation, batch_inference);
criterion_main!(benches);
