use std::hint::black_box;

use arapgs_core::arap::arap_solve;
use arapgs_core::fixtures::{dumbbell, toy_cameras, toy_drag, toy_dumbbell};
use arapgs_core::knn::KdTree;
use arapgs_core::pipeline::{deform, DeformPlan};
use arapgs_core::render::{project, rasterize, render};
use arapgs_core::PipelineConfig;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn knn(c: &mut Criterion) {
    let mut group = c.benchmark_group("knn");
    for blob in [1_000, 10_000] {
        let scene = dumbbell(blob, blob / 5, 1);
        let points: Vec<[f64; 3]> = (0..scene.len())
            .map(|i| {
                let p = scene.center(i);
                [p.x, p.y, p.z]
            })
            .collect();
        group.bench_with_input(BenchmarkId::new("build", scene.len()), &points, |b, pts| {
            b.iter(|| KdTree::new(black_box(pts.clone())))
        });
        let tree = KdTree::new(points.clone());
        group.bench_with_input(BenchmarkId::new("query_k8", scene.len()), &tree, |b, tree| {
            b.iter(|| (0..tree.len()).map(|i| tree.nearest(&tree.point(i), 8, Some(i)).len()).sum::<usize>())
        });
    }
    group.finish();
}

fn graph_and_solve(c: &mut Criterion) {
    let scene = dumbbell(6_000, 1_200, 2);
    let drag = toy_drag();
    let mut group = c.benchmark_group("arap");
    group.sample_size(10);
    for n_sub in [1_000, 4_000] {
        let mut config = PipelineConfig::default();
        config.sampling.n_sub = n_sub;
        group.bench_function(BenchmarkId::new("prepare", n_sub), |b| {
            b.iter(|| DeformPlan::prepare(&scene, &drag, &config).unwrap())
        });
        let plan = DeformPlan::prepare(&scene, &drag, &config).unwrap();
        group.bench_function(BenchmarkId::new("solve", n_sub), |b| {
            b.iter(|| arap_solve(&plan.graph, &config.arap).unwrap())
        });
    }
    let config = PipelineConfig::default();
    group.bench_function("deform_toy", |b| b.iter(|| deform(&toy_dumbbell(), &drag, &config).unwrap()));
    group.finish();
}

fn rasterizer(c: &mut Criterion) {
    let scene = toy_dumbbell();
    let cam = &toy_cameras()[0];
    let mut group = c.benchmark_group("render");
    group.bench_function("project", |b| b.iter(|| project(&scene, cam)));
    let splats = project(&scene, cam).splats;
    group.bench_function("rasterize", |b| b.iter(|| rasterize(&splats, cam, [0.0; 3])));
    group.bench_function("render", |b| b.iter(|| render(&scene, cam, [0.0; 3])));
    group.finish();
}

criterion_group!(benches, knn, graph_and_solve, rasterizer);
criterion_main!(benches);
