use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use contourforge::coarse::refine_coarse;
use contourforge::levelset::{compute_g, evolve, EvolutionParams};
use contourforge::losses::{total_loss, LossWeights};
use contourforge::metrics::match_boundaries;
use contourforge::raster::{dilate, distance_transform, erode, StructuringElement};
use contourforge_bench::{blob_inputs, loss_inputs};

fn edt(c: &mut Criterion) {
    let mut group = c.benchmark_group("distance_transform");
    for size in [64, 256, 512] {
        let (_, boundary, _) = blob_inputs(size);
        group.bench_with_input(BenchmarkId::from_parameter(size), &boundary, |b, m| {
            b.iter(|| distance_transform(black_box(m)).unwrap())
        });
    }
    group.finish();
}

fn evolution(c: &mut Criterion) {
    let mut group = c.benchmark_group("evolve");
    group.sample_size(20);
    for size in [64, 160] {
        let (fine, _, pred) = blob_inputs(size);
        let init = erode(&fine, StructuringElement::disc(8).unwrap());
        let params = EvolutionParams {
            max_steps: 50,
            snapshot_every: 50,
            ..EvolutionParams::coarse_to_fine()
        };
        let g = compute_g(&pred, None, 0.0).unwrap();
        group.bench_with_input(BenchmarkId::new("50_steps", size), &size, |b, _| {
            b.iter(|| evolve(black_box(&init), &g, &params).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("refine_coarse", size), &size, |b, _| {
            b.iter(|| refine_coarse(black_box(&init), &pred, 50).unwrap())
        });
    }
    group.finish();
}

fn matching(c: &mut Criterion) {
    let mut group = c.benchmark_group("match_boundaries");
    for size in [64, 256] {
        let (fine, gt, _) = blob_inputs(size);
        let shifted = contourforge::raster::mask_to_boundary(&dilate(&fine, StructuringElement::Cross3));
        let d_max = 0.0075 * (2.0f64).sqrt() * size as f64;
        group.bench_with_input(BenchmarkId::from_parameter(size), &size, |b, _| {
            b.iter(|| match_boundaries(black_box(&shifted), &gt, d_max.max(1.5)).unwrap())
        });
    }
    group.finish();
}

fn losses(c: &mut Criterion) {
    let (logits, gt) = loss_inputs();
    let mut group = c.benchmark_group("total_loss");
    for (name, weights) in [
        ("bce_only", LossWeights::with_alphas(1.0, 0.0, 0.0)),
        ("full", LossWeights::default()),
    ] {
        group.bench_function(name, |b| {
            b.iter(|| total_loss(black_box(&logits), &gt, &weights).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, edt, evolution, matching, losses);
criterion_main!(benches);
