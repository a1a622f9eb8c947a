//! Re-posing and rendering throughput on scattered body Gaussians.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gsanim_core::body_model::{make_synthetic_body, Shape, SyntheticConfig};
use gsanim_core::fixtures::{bounds, demo_pose, scattered_gaussians};
use gsanim_core::gaussian::{animate, bind_gaussians};
use gsanim_core::render::{four_view_rig, rasterize};

fn stages(c: &mut Criterion) {
    let (model, _) = make_synthetic_body(7, &SyntheticConfig::default());
    let shape = Shape::zeros(model.shape_dim);
    let pose = demo_pose(&model);

    let mut group = c.benchmark_group("repose");
    group.sample_size(20);
    for n in [10_000, 100_000] {
        let mut set = scattered_gaussians(&model, n, 7);
        bind_gaussians(&mut set, &model, &shape).unwrap();
        group.bench_with_input(BenchmarkId::new("skin", n), &set, |b, set| {
            b.iter(|| animate(black_box(set), &model, &shape, &pose, false).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("animate", n), &set, |b, set| {
            b.iter(|| animate(black_box(set), &model, &shape, &pose, true).unwrap())
        });
    }
    group.finish();

    let mut set = scattered_gaussians(&model, 10_000, 7);
    bind_gaussians(&mut set, &model, &shape).unwrap();
    let posed = animate(&set, &model, &shape, &pose, true).unwrap();
    let (center, radius) = bounds(&posed.centers);
    let mut group = c.benchmark_group("render");
    group.sample_size(10);
    for res in [128, 256] {
        let rig = four_view_rig(radius * 1.1, res, center).unwrap();
        group.bench_function(BenchmarkId::new("four_views_10k", res), |b| {
            b.iter(|| {
                for cam in &rig {
                    black_box(rasterize::<f32>(&posed, cam, [0.0; 3]).without_workspace());
                }
            })
        });
    }
    group.finish();
}

criterion_group!(benches, stages);
criterion_main!(benches);
