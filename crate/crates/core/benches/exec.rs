//! Sequential vs data-parallel execution of the parallelized paths:
//! batch prediction, synthetic generation (per-annotator calibration), and
//! a small multi-seed ablation matrix.

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use coagree::exec::Exec;
use coagree::experiment::{run_matrix, ExperimentConfig};
use coagree::synth::{generate_with, AnnotatorSpec, SynthSpec};
use coagree::trainer::{init_model, TrainConfig};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn spec(n: usize) -> SynthSpec {
    SynthSpec {
        n_samples: n,
        feature_dim: 8,
        class_balance: 0.3,
        boundary_noise: 0.75,
        annotators: [(0.9, 0.5), (0.85, 0.8), (0.8, 0.2), (0.75, 0.7)]
            .iter()
            .map(|&(k, b)| AnnotatorSpec {
                target_kappa: k,
                flip_bias: b,
            })
            .collect(),
        missing_rate: 0.2,
        seed: Some(1),
    }
}

fn predict(c: &mut Criterion) {
    let data = generate_with(&spec(4000), Exec::Parallel).unwrap().data;
    let model = init_model(data.dim(), &TrainConfig::default()).unwrap();
    let inputs: Vec<&[f64]> = (0..data.len()).map(|i| data.features(i)).collect();
    let mut g = c.benchmark_group("predict_4000");
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| black_box(model.predict(&inputs, exec).unwrap()))
        });
    }
    g.finish();
}

fn synth(c: &mut Criterion) {
    let s = spec(4000);
    let mut g = c.benchmark_group("synth_generate_4000");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| black_box(generate_with(&s, exec).unwrap()))
        });
    }
    g.finish();
}

fn matrix(c: &mut Criterion) {
    let cfg = ExperimentConfig::from_json(
        r#"{
          "synth": {"n_samples": 400, "feature_dim": 8, "class_balance": 0.3,
                    "annotators": [{"target_kappa": 0.9}, {"target_kappa": 0.8, "flip_bias": 0.7},
                                   {"target_kappa": 0.75, "flip_bias": 0.3}]},
          "train": {"epochs": 3, "learning_rate": 0.001, "model": {"hidden": [16]}},
          "repeat_seeds": [0, 1, 2, 3],
          "axes": {"paradigm": ["learn_from_all", "learn2agree"]}
        }"#,
    )
    .unwrap();
    let mut g = c.benchmark_group("matrix_2cells_4seeds");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| black_box(run_matrix(&cfg, exec).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, predict, synth, matrix);
criterion_main!(benches);
