use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mortonnet::datagen::{generate_shape, ShapeKind, ShapeSpec};
use mortonnet::features::extract_features_with;
use mortonnet::model::{ModelConfig, MortonNet};
use mortonnet::morton::QuantSpec;
use mortonnet::neighborhood::build_default_index;
use mortonnet::sequence::{generate_for_centers, SequenceGenConfig};
use mortonnet::Execution;

fn cloud(n: usize) -> mortonnet::PointCloud {
    generate_shape(&ShapeSpec {
        kind: ShapeKind::Torus,
        n_points: n,
        noise_sigma: 0.005,
        seed: 1,
    })
    .unwrap()
    .cloud
}

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn sequences(c: &mut Criterion) {
    let cloud = cloud(20_000);
    let idx = build_default_index(&cloud).unwrap();
    let spec = QuantSpec::for_cloud(&cloud, 16).unwrap();
    let cfg = SequenceGenConfig {
        k: 32,
        m: 5,
        ..Default::default()
    };
    let centers: Vec<usize> = (0..cloud.len()).collect();
    let mut g = c.benchmark_group("sequence_generation");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| generate_for_centers(&cloud, &cfg, &idx, &spec, &centers, exec).unwrap())
        });
    }
    g.finish();
}

fn features(c: &mut Criterion) {
    let cloud = cloud(2_000);
    let idx = build_default_index(&cloud).unwrap();
    let spec = QuantSpec::for_cloud(&cloud, 16).unwrap();
    let model = MortonNet::new(ModelConfig {
        k: 16,
        hidden: 64,
        enc_width: 32,
        ..Default::default()
    })
    .unwrap();
    let cfg = SequenceGenConfig {
        k: 16,
        m: 5,
        ..Default::default()
    };
    let mut g = c.benchmark_group("feature_extraction");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| extract_features_with(&model, &cloud, &cfg, &idx, &spec, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, sequences, features);
criterion_main!(benches);
