use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use walsh::noise::{gen_driver, Purpose, SeedSpec};
use walsh::parallel::{is_parallel, map_indexed};
use walsh::sde_sim::{simulate_wbm_exact, simulate_wiener_coupling};
use walsh::star_graph::{GraphPoint, StarGraph};

const DT: f64 = 1e-2;
const STEPS: usize = 100;

fn wiener_pair(g: &StarGraph, i: usize) -> f64 {
    let seed = |p| SeedSpec::derive(9, 4, p, i as u32);
    let w = gen_driver(g.n_rays(), DT, STEPS, seed(Purpose::Driver)).unwrap();
    let run = simulate_wiener_coupling(g, &w, seed(Purpose::RaysX), seed(Purpose::RaysY)).unwrap();
    run.x_path.radius(STEPS) + run.y_path.radius(STEPS)
}

fn exact_path(g: &StarGraph, i: usize) -> f64 {
    let seed = SeedSpec::derive(9, 1, Purpose::Exact, i as u32);
    simulate_wbm_exact(g, 1.0, DT / 10.0, seed, GraphPoint::Origin)
        .unwrap()
        .radius(10 * STEPS)
}

fn batches(c: &mut Criterion) {
    let g = StarGraph::uniform(3).unwrap();
    let backend = if is_parallel() { "rayon" } else { "sequential build" };
    for (name, n, f) in [
        ("wiener_pairs", 64, wiener_pair as fn(&StarGraph, usize) -> f64),
        ("exact_paths", 256, exact_path),
    ] {
        let mut group = c.benchmark_group(format!("{name} ({backend})"));
        group.sample_size(10);
        for (label, workers) in [("sequential", 1), ("parallel", 0)] {
            group.bench_with_input(BenchmarkId::new(label, n), &n, |b, &n| {
                b.iter(|| map_indexed(n, workers, |i| f(&g, i)).iter().sum::<f64>())
            });
        }
        group.finish();
    }
}

criterion_group!(benches, batches);
criterion_main!(benches);
