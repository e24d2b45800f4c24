use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use paretosr::brute::{self, BruteConfig, SearchData};
use paretosr::par::Exec;
use paretosr::surrogate::{exact_oracle, gradient_batch};
use paretosr::{BasisSet, DataTable, Expression};

fn table() -> (DataTable, BasisSet) {
    let basis = BasisSet::with_variables(["x", "y"]).unwrap();
    let e = Expression::parse_infix("x*sin(y)+x*x", &basis).unwrap();
    let rows = (0..2000).map(|i| {
        let x = vec![0.5 + (i % 37) as f64 * 0.04, 0.3 + (i % 53) as f64 * 0.03];
        let y = e.evaluate(&x).unwrap().unwrap();
        (x, y)
    });
    (DataTable::new(vec!["x".into(), "y".into()], rows).unwrap().0, basis)
}

fn executors(c: &mut Criterion) {
    let (t, basis) = table();
    let data = SearchData::values(&t, 0);
    let truth = Expression::parse_infix("x*sin(y)+x*x", &basis).unwrap();
    let oracle = exact_oracle(truth, &t);

    let mut g = c.benchmark_group("brute_search");
    g.sample_size(10).measurement_time(Duration::from_secs(20));
    for (label, exec) in [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)] {
        let cfg = BruteConfig { max_complexity_bits: 16.0, exec, ..BruteConfig::default() };
        g.bench_with_input(BenchmarkId::from_parameter(label), &cfg, |b, cfg| {
            b.iter(|| brute::search(&data, &basis, cfg).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("gradient_batch");
    for (label, exec) in [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)] {
        g.bench_function(label, |b| b.iter(|| gradient_batch(&*oracle, &t, exec)));
    }
    g.finish();
}

criterion_group!(benches, executors);
criterion_main!(benches);
