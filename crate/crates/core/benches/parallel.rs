use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use embverify::dataset::{BinaryLabel, Label, LabelFilter, Split};
use embverify::geometry::{cluster_hypercubes, containment_report, kmeans, RegionSet};
use embverify::network::{classifier_spec, MlpNetwork};
use embverify::synth::{generate, SynthSpec};
use embverify::verify::{epsilon_search_many, verify_region_set, VerifyOptions};
use embverify::Exec;

const STRATEGIES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn fixture() -> (embverify::dataset::EmbeddingDataset, RegionSet, MlpNetwork) {
    let ds = generate(&SynthSpec { dim: 64, n_positive: 2000, n_negative: 2000, n_ambiguous: 1000, ..Default::default() }).unwrap();
    let pos = ds.partition(Split::Train, LabelFilter::Exact(Label::Positive));
    let neg = ds.partition(Split::Train, LabelFilter::Exact(Label::Negative));
    let regions = cluster_hypercubes(&pos, &neg, 32, 0, None, Exec::Parallel).unwrap().regions;
    let net = MlpNetwork::init(&classifier_spec(64, 3, 2).unwrap(), 0).unwrap();
    (ds, regions, net)
}

fn bench(c: &mut Criterion) {
    let (ds, regions, net) = fixture();
    let pos = ds.partition(Split::Train, LabelFilter::Exact(Label::Positive));
    let test_pos = ds.partition(Split::Test, LabelFilter::Exact(Label::Positive));
    let sets = vec![("clusters".to_string(), regions.clone())];
    let opts = VerifyOptions { falsify: false, ..Default::default() };

    let mut g = c.benchmark_group("containment");
    for (name, exec) in STRATEGIES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| containment_report(black_box(&sets), &ds, exec))
        });
    }
    g.finish();

    let mut g = c.benchmark_group("kmeans");
    g.sample_size(10);
    for (name, exec) in STRATEGIES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| kmeans(black_box(&pos), 32, 0, exec).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("verify_region_set");
    for (name, exec) in STRATEGIES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| verify_region_set(&net, black_box(&regions), BinaryLabel::Positive, &opts, exec).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("epsilon_search");
    g.sample_size(10);
    for (name, exec) in STRATEGIES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| epsilon_search_many(&net, black_box(&test_pos), BinaryLabel::Positive, 1.0, 1e-7, false, exec))
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
