use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lpnd_core::aoi::{build_family, build_s};
use lpnd_core::lattice::build_lattice_with;
use lpnd_core::lp::build_decomposition;
use lpnd_core::measure::{generate_example, growth_constant, ExampleKind};
use lpnd_core::pipeline::{measure_inputs, tune, TuningConfig};
use lpnd_core::DiscreteMeasure;

fn measure(name: &str, atoms: usize) -> DiscreteMeasure {
    generate_example(&ExampleKind::from_name(name, atoms, 7).unwrap())
        .unwrap()
        .measure
}

fn bench_growth(c: &mut Criterion) {
    let mut g = c.benchmark_group("growth_constant");
    for atoms in [64, 256] {
        let mu = measure("uniform_interval", atoms);
        g.bench_with_input(BenchmarkId::from_parameter(atoms), &mu, |b, mu| {
            b.iter(|| growth_constant(mu).unwrap())
        });
    }
    g.finish();
}

fn bench_construction(c: &mut Criterion) {
    let mut g = c.benchmark_group("construction");
    g.sample_size(10);
    for name in ["uniform_interval", "comb"] {
        let mu = measure(name, 128);
        let cfg = TuningConfig::default();
        let inputs = measure_inputs(&mu, &cfg).unwrap();
        let tuned = tune(&mu, &inputs, &cfg).unwrap();
        g.bench_function(BenchmarkId::new("lattice", name), |b| {
            b.iter(|| build_lattice_with(&mu, &tuned.config, &inputs.scans).unwrap())
        });
        let k = tuned.family.first_nonzero().unwrap_or(tuned.lattice.k_min);
        g.bench_function(BenchmarkId::new("s_k", name), |b| {
            b.iter(|| build_s(&mu, &tuned.lattice, k).unwrap())
        });
        g.bench_function(BenchmarkId::new("family", name), |b| {
            b.iter(|| build_family(&mu, &tuned.lattice).unwrap())
        });
        g.bench_function(BenchmarkId::new("decomposition", name), |b| {
            b.iter(|| build_decomposition(&tuned.family, 10, 0).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench_growth, bench_construction);
criterion_main!(benches);
