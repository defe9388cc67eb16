use criterion::{black_box, criterion_group, criterion_main, Criterion};
use mscale::analyze;
use mscale::builtin::NAMES;
use mscale_bench::{analysis, spec};

fn full_pipeline(c: &mut Criterion) {
    let mut g = c.benchmark_group("analyze");
    for name in NAMES {
        let s = spec(name);
        g.bench_function(name, |b| b.iter(|| analyze(black_box(&s)).unwrap()));
    }
    g.finish();
}

fn coefficient_grid(c: &mut Criterion) {
    let mut g = c.benchmark_group("coefficient grid (21 points)");
    for name in NAMES {
        let a = analysis(name);
        let points = a.axis_points(0, 0.05, 2.0, 21);
        g.bench_function(name, |b| b.iter(|| a.coefficient_grid(black_box(&points)).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, full_pipeline, coefficient_grid);
criterion_main!(benches);
