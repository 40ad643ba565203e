use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use zslcraft::backbone::{crafted_loss_and_grad, FeatureExtractor};
use zslcraft::crafting::{RuleKind, RuleSet};
use zslcraft::inference::softmax_rows;
use zslcraft::linalg::{rand_normal, SeededRng};
use zslcraft::par;

// Built without the `parallel` feature, both variants run the sequential fallback.
fn bench(c: &mut Criterion) {
    let mut rng = SeededRng::new(7);
    let classes: Vec<usize> = (0..15).collect();
    let rules = RuleSet::new(
        rand_normal(&mut rng, 15, 16, 0.0, 1.0).unwrap(),
        classes.clone(),
        RuleKind::Visual,
        false,
    )
    .unwrap();
    let net = FeatureExtractor::init(&[32, 64, 16], &mut rng).unwrap();
    let x = rand_normal(&mut rng, 4096, 32, 0.0, 1.0).unwrap();
    let labels: Vec<usize> = (0..4096).map(|i| classes[i % 15]).collect();
    let logits = rand_normal(&mut rng, 20_000, 20, 0.0, 3.0).unwrap();

    let mut group = c.benchmark_group("gradient");
    for (name, threads) in [("serial", 1), ("parallel", 0)] {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            par::with_threads(threads, || {
                b.iter(|| crafted_loss_and_grad(&net, &rules, &x, &labels, 1.0).unwrap())
            })
        });
    }
    group.finish();

    let mut group = c.benchmark_group("softmax");
    for (name, threads) in [("serial", 1), ("parallel", 0)] {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            par::with_threads(threads, || b.iter(|| softmax_rows(&logits, 1.0).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
