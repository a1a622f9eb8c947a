//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Pass a substring (e.g. `A3`) to run a subset.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use gsanim_core::assets::{
    decode_checkpoint, decode_png, decode_raw, encode_checkpoint, parse_mesh_ply, parse_obj, parse_pose,
    parse_splat_ply, write_splat_ply,
};
use gsanim_core::body_model::{make_synthetic_body, pose_transforms, SyntheticConfig};
use gsanim_core::fixtures::{avatar_fixture, demo_pose, dominated_by, refine_input, LEFT_ELBOW};
use gsanim_core::gaussian::{animate, canonicalize_scan, repose_scan_bound, repose_with_weights, Gaussian};
use gsanim_core::math::{Mat4, Vec3};
use gsanim_core::metrics::{chamfer, fscore, psnr, ssim};
use gsanim_core::nnet::{multiview_loss, NetConfig, NetworkParams, ShareMode};
use gsanim_core::refine::{refine, refine_loss, train_refiner, RefineConfig, RefineInput, TrainConfig};
use gsanim_core::render::{
    four_view_rig, rasterize, rasterize_backward, rasterize_with, Camera, ImageBuf, RasterConfig, RenderOutput,
};
use gsanim_core::skinning::{bind_scan_to_model, compose_repose_transform, lbs_deform};
use gsanim_core::spatial::{brute_force_knn, UniformGrid};
use gsanim_core::{GaussianSet, Pose, Shape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn random_pose(rng: &mut ChaCha8Rng, joints: usize, amplitude: f64) -> Pose {
    let aa: Vec<[f64; 3]> = (0..joints)
        .map(|_| std::array::from_fn(|_| rng.gen_range(-amplitude..amplitude)))
        .collect();
    let t = Vec3::new(
        rng.gen_range(-0.3..0.3),
        rng.gen_range(-0.3..0.3),
        rng.gen_range(-0.3..0.3),
    );
    Pose::from_axis_angle(&aa, t)
}

fn a1_skinning() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (model, _) = make_synthetic_body(1, &SyntheticConfig::default());
    let shape = Shape::zeros(model.shape_dim);
    let rest = pose_transforms(&model, &shape, &model.rest_pose()).map_err(|e| e.to_string())?;
    let deformed = lbs_deform(&model.template, &model.weights, &rest).map_err(|e| e.to_string())?;
    let identity_err = deformed
        .vertices
        .iter()
        .zip(&model.template.vertices)
        .map(|(a, b)| (a - b).amax())
        .fold(0.0, f64::max);
    ensure(identity_err <= 1e-12, || {
        format!("identity pose moved vertices by {identity_err:e}")
    })?;

    let mut same_err: f64 = 0.0;
    for _ in 0..20 {
        let pose = random_pose(&mut rng, model.joint_count(), 1.0);
        let g = pose_transforms(&model, &shape, &pose).map_err(|e| e.to_string())?;
        let t = compose_repose_transform(&model.weights, &g, &g).map_err(|e| e.to_string())?;
        for m in &t.transforms {
            same_err = same_err.max((m - Mat4::identity()).amax());
        }
    }
    ensure(same_err <= 1e-12, || {
        format!("equal poses gave non-identity transforms ({same_err:e})")
    })?;

    let one_hot = SyntheticConfig {
        one_hot: true,
        ..SyntheticConfig::default()
    };
    let (hard, _) = make_synthetic_body(2, &one_hot);
    let hard_shape = Shape::zeros(hard.shape_dim);
    let mut trip_err: f64 = 0.0;
    for _ in 0..10 {
        let pose = random_pose(&mut rng, hard.joint_count(), 0.6);
        let g = pose_transforms(&hard, &hard_shape, &pose).map_err(|e| e.to_string())?;
        let scan = lbs_deform(&hard.template, &hard.weights, &g).map_err(|e| e.to_string())?;
        let (canon, weights) =
            repose_scan_bound(&scan, &hard, &pose, hard.canonical_pose(), &hard_shape).map_err(|e| e.to_string())?;
        let direct = canonicalize_scan(&scan, &hard, &pose, &hard_shape).map_err(|e| e.to_string())?;
        ensure(direct == canon, || {
            "canonicalize_scan disagrees with the bound variant".into()
        })?;
        let back = repose_with_weights(&canon, &weights, &hard, hard.canonical_pose(), &pose, &hard_shape)
            .map_err(|e| e.to_string())?;
        for (a, b) in back.vertices.iter().zip(&scan.vertices) {
            trip_err = trip_err.max((a - b).norm());
        }
    }
    ensure(trip_err <= 1e-6, || format!("one-hot round trip error {trip_err:e}"))?;

    let mut pou_err: f64 = 0.0;
    let points: Vec<Vec3> = (0..5000)
        .map(|_| {
            Vec3::new(
                rng.gen_range(-0.8..0.8),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-0.3..0.3),
            )
        })
        .collect();
    let binding = bind_scan_to_model(&points, &model, &model.template, 4).map_err(|e| e.to_string())?;
    for r in 0..binding.weights.rows() {
        let s: f64 = binding.weights.row(r).map(|(_, w)| w).sum();
        pou_err = pou_err.max((s - 1.0).abs());
    }
    ensure(pou_err <= 1e-6, || {
        format!("bound rows deviate from unit sum by {pou_err:e}")
    })?;
    Ok(format!(
        "identity {identity_err:.1e}, equal-pose {same_err:.1e}, round trip {trip_err:.1e}, unit sum {pou_err:.1e}"
    ))
}

fn axis_camera(f: f64, size: usize) -> Camera {
    Camera {
        fx: f,
        fy: f,
        cx: size as f64 / 2.0,
        cy: size as f64 / 2.0,
        world_to_camera: Mat4::identity(),
        width: size,
        height: size,
        near: 0.01,
        far: 100.0,
    }
}

fn iso(center: Vec3, sigma: f64, opacity: f64, color: [f64; 3]) -> Gaussian {
    Gaussian {
        center,
        raw_opacity: logit(opacity),
        raw_scale: [sigma.ln(); 3],
        rotation: [1.0, 0.0, 0.0, 0.0],
        color,
    }
}

fn random_scene(rng: &mut ChaCha8Rng, n: usize, depth: f64, spread: f64) -> GaussianSet {
    GaussianSet::from_gaussians((0..n).map(|_| {
        let q: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        Gaussian {
            center: Vec3::new(
                rng.gen_range(-spread..spread),
                rng.gen_range(-spread..spread),
                depth + rng.gen_range(-spread..spread),
            ),
            raw_opacity: rng.gen_range(-1.0..2.0),
            raw_scale: std::array::from_fn(|_| rng.gen_range(-3.5..-2.0)),
            rotation: q.map(|v| v / norm),
            color: std::array::from_fn(|_| rng.gen()),
        }
    }))
}

fn bits_equal(a: &RenderOutput<f32>, b: &RenderOutput<f32>) -> bool {
    a.color
        .pixels
        .iter()
        .zip(&b.color.pixels)
        .all(|(x, y)| x.to_bits() == y.to_bits())
        && a.mask
            .pixels
            .iter()
            .zip(&b.mask.pixels)
            .all(|(x, y)| x.to_bits() == y.to_bits())
}

fn a2_rasterizer() -> Outcome {
    let cam = axis_camera(100.0, 32);
    let z = 2.0;
    let on_pixel =
        |px: f64, py: f64, z: f64| Vec3::new((px + 0.5 - 16.0) * z / 100.0, (py + 0.5 - 16.0) * z / 100.0, z);
    let o = 0.7;
    let single = GaussianSet::from_gaussians([iso(on_pixel(10.0, 7.0, z), 0.05, o, [0.9, 0.2, 0.4])]);
    let out = rasterize::<f32>(&single, &cam, [0.0; 3]);
    let e1 = (out.mask.at(10, 7, 0) as f64 - o).abs();
    ensure(e1 <= 1e-6, || format!("single-Gaussian mask off by {e1:e}"))?;

    let (o1, o2) = (0.6, 0.5);
    let (c1, c2) = ([0.2, 0.9, 0.1], [0.7, 0.3, 0.8]);
    let bg = [0.1, 0.2, 0.3];
    let pair = GaussianSet::from_gaussians([
        iso(on_pixel(16.0, 16.0, 2.0), 0.05, o2, c2),
        iso(on_pixel(16.0, 16.0, 1.0), 0.025, o1, c1),
    ]);
    let out = rasterize::<f32>(&pair, &cam, bg);
    let mut e2 = (out.mask.at(16, 16, 0) as f64 - (1.0 - (1.0 - o1) * (1.0 - o2))).abs();
    for ch in 0..3 {
        let expect = o1 * c1[ch] + (1.0 - o1) * o2 * c2[ch] + (1.0 - o1) * (1.0 - o2) * bg[ch];
        e2 = e2.max((out.color.at(16, 16, ch) as f64 - expect).abs());
    }
    ensure(e2 <= 1e-6, || format!("two-Gaussian compositing off by {e2:e}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let rig = four_view_rig(0.6, 96, Vec3::new(0.0, 0.0, 0.0)).map_err(|e| e.to_string())?;
    let pool4 = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    for trial in 0..10 {
        let g = random_scene(&mut rng, 300, 0.0, 0.4);
        let mut perm: Vec<usize> = (0..g.len()).collect();
        for i in (1..perm.len()).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let shuffled = g.select(&perm);
        for cam in &rig {
            let a = pool4.install(|| rasterize::<f32>(&g, cam, bg));
            let b = pool1.install(|| rasterize::<f32>(&shuffled, cam, bg));
            ensure(bits_equal(&a, &b), || {
                format!("trial {trial}: permuted or single-thread render differs")
            })?;
        }
    }
    Ok(format!(
        "mask {e1:.1e}, two-term {e2:.1e}, 10 permutation/thread trials bit-exact"
    ))
}

fn smooth() -> RasterConfig {
    RasterConfig {
        extent_sigma: 10.0,
        min_transmittance: 0.0,
        ..RasterConfig::default()
    }
}

fn render_all(g: &GaussianSet, rig: &[Camera], cfg: &RasterConfig) -> Vec<RenderOutput<f64>> {
    rig.iter().map(|c| rasterize_with::<f64>(g, c, [0.0; 3], cfg)).collect()
}

fn multiview(g: &GaussianSet, rig: &[Camera], truth: &[RenderOutput<f64>], cfg: &RasterConfig) -> f64 {
    multiview_loss(&render_all(g, rig, cfg), truth).unwrap().total
}

fn perturb(g: &mut GaussianSet, k: usize, h: f64) {
    let (i, f) = (k / 14, k % 14);
    match f {
        0..=2 => g.centers[i][f] += h,
        3..=5 => g.raw_scale[i][f - 3] += h,
        6..=9 => g.rotations[i][f - 6] += h,
        10 => g.raw_opacity[i] += h,
        _ => g.colors[i][f - 11] += h,
    }
}

fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = numeric.iter().map(|v| v * v).sum::<f64>().sqrt();
    diff / norm.max(1e-300)
}

fn a3_gradients() -> Outcome {
    let cfg = smooth();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_gauss: f64 = 0.0;
    let gauss_trials = 80;
    for trial in 0..gauss_trials {
        let n = rng.gen_range(5..=50);
        let g = random_scene(&mut rng, n, 0.0, 0.3);
        let mut target = g.clone();
        for c in target.centers.iter_mut() {
            *c += Vec3::new(rng.gen_range(-0.02..0.02), rng.gen_range(-0.02..0.02), 0.0);
        }
        for c in target.colors.iter_mut() {
            *c = std::array::from_fn(|_| rng.gen());
        }
        let rig = four_view_rig(0.5, 32, Vec3::zeros()).map_err(|e| e.to_string())?;
        let truth = render_all(&target, &rig, &cfg);
        let pred = render_all(&g, &rig, &cfg);
        let loss = multiview_loss(&pred, &truth).map_err(|e| e.to_string())?;
        let mut flat = vec![0.0; 14 * n];
        for (v, cam) in rig.iter().enumerate() {
            let gr = rasterize_backward(&g, cam, &pred[v], &loss.grad_color[v], &loss.grad_mask[v])
                .map_err(|e| e.to_string())?;
            for (a, b) in flat.iter_mut().zip(gr.flatten()) {
                *a += b;
            }
        }
        let coords: Vec<usize> = (0..24).map(|_| rng.gen_range(0..14 * n)).collect();
        let h = 1e-6;
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for &k in &coords {
            let mut p = g.clone();
            perturb(&mut p, k, h);
            let lp = multiview(&p, &rig, &truth, &cfg);
            let mut m = g.clone();
            perturb(&mut m, k, -h);
            let lm = multiview(&m, &rig, &truth, &cfg);
            numeric.push((lp - lm) / (2.0 * h));
            analytic.push(flat[k]);
        }
        let err = relative_error(&analytic, &numeric);
        ensure(err < 1e-3, || {
            format!("Gaussian trial {trial} (n={n}): relative error {err:e}")
        })?;
        worst_gauss = worst_gauss.max(err);
    }

    // refinement heads through the full refine stage
    let fx = avatar_fixture(3, 16).map_err(|e| e.to_string())?;
    let base = refine_input(&fx, &demo_pose(&fx.model), 64).map_err(|e| e.to_string())?;
    let heads_trials = 100 - gauss_trials;
    let rcfg = RefineConfig {
        opacity_threshold: 0.0,
        raster: cfg,
        ..RefineConfig::default()
    };
    let mut worst_heads: f64 = 0.0;
    for trial in 0..heads_trials {
        let n = base.coarse.gaussians.len();
        let keep: Vec<usize> = (0..20).map(|_| rng.gen_range(0..n)).collect();
        let mut input: RefineInput = base.clone();
        input.coarse.gaussians = base.coarse.gaussians.select(&keep);
        let mut shifted = input.coarse.gaussians.clone();
        for c in shifted.centers.iter_mut() {
            c.y += 0.01;
        }
        let truth = render_all(&shifted, &input.rig, &cfg);
        let mut params = NetworkParams::<f64>::new(
            NetConfig {
                seed: trial as u64,
                ..NetConfig::default()
            },
            ShareMode::Shared,
        );
        for name in ["refine_heads.fc1.w", "refine_heads.fc1.b"] {
            for v in params.get_mut(name).unwrap().data.iter_mut() {
                *v = rng.gen_range(-0.3..0.3);
            }
        }
        let eval = refine_loss(&input, &truth, &params, &rcfg).map_err(|e| e.to_string())?;
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for name in [
            "refine_heads.fc0.w",
            "refine_heads.fc0.b",
            "refine_heads.fc1.w",
            "refine_heads.fc1.b",
        ] {
            let slot = params.slot(name).unwrap();
            let len = params.tensor(slot).len();
            for _ in 0..3 {
                let k = rng.gen_range(0..len);
                let h = 1e-6;
                let mut p = params.clone();
                p.tensor_mut(slot).data[k] += h;
                let lp = refine_loss(&input, &truth, &p, &rcfg).map_err(|e| e.to_string())?.total;
                p.tensor_mut(slot).data[k] -= 2.0 * h;
                let lm = refine_loss(&input, &truth, &p, &rcfg).map_err(|e| e.to_string())?.total;
                numeric.push((lp - lm) / (2.0 * h));
                analytic.push(eval.gradients.param(slot).map_or(0.0, |g| g.data[k]));
            }
        }
        let err = relative_error(&analytic, &numeric);
        ensure(err < 1e-3, || format!("heads trial {trial}: relative error {err:e}"))?;
        worst_heads = worst_heads.max(err);
    }
    Ok(format!(
        "{gauss_trials} Gaussian trials (worst {worst_gauss:.1e}), {heads_trials} head trials (worst {worst_heads:.1e})"
    ))
}

fn a4_metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..200 {
        let n = rng.gen_range(1..400);
        let spread = rng.gen_range(0.01..2.0);
        let pts: Vec<Vec3> = (0..n)
            .map(|_| {
                Vec3::new(
                    rng.gen_range(-spread..spread),
                    rng.gen_range(-spread..spread),
                    rng.gen_range(-spread..spread),
                )
            })
            .collect();
        let grid = UniformGrid::new(&pts);
        for _ in 0..50 {
            let q = Vec3::new(
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
            );
            let a = grid.nearest(&q).unwrap();
            let b = brute_force_knn(&pts, &q, 1)[0];
            ensure(a == b, || format!("instance {trial}: grid {a:?} vs brute force {b:?}"))?;
        }
    }
    let mut img = ImageBuf::<f64>::new(32, 24, 3);
    img.pixels.iter_mut().for_each(|p| *p = rng.gen());
    let s = ssim(&img, &img).map_err(|e| e.to_string())?;
    ensure(s == 1.0, || format!("SSIM(a, a) = {s}"))?;
    let a = ImageBuf::<f64>::filled(16, 16, &[0.0; 3]);
    let b = ImageBuf::<f64>::filled(16, 16, &[0.1; 3]);
    let p = psnr(&a, &b).map_err(|e| e.to_string())?;
    ensure((p - 20.0).abs() < 1e-9, || format!("PSNR closed form gave {p}"))?;
    let truth = [Vec3::zeros()];
    let f = fscore(&[Vec3::zeros(), Vec3::new(0.1, 0.0, 0.0)], &truth, 1.0).map_err(|e| e.to_string())?;
    ensure((f - 200.0 / 3.0).abs() <= 1e-9, || format!("f-score fixture gave {f}"))?;
    let n = [Vec3::z()];
    let c = chamfer(&truth, &n, &truth, &n).map_err(|e| e.to_string())?;
    ensure(c.cd_p2s == 0.0 && c.cd_s2p == 0.0 && c.nc == 1.0, || {
        format!("identical clouds gave {c:?}")
    })?;
    Ok(format!(
        "200 nearest-neighbour instances exact, SSIM 1, PSNR {p:.12}, F {f:.12}"
    ))
}

fn a5_identity() -> Outcome {
    let fx = avatar_fixture(5, 32).map_err(|e| e.to_string())?;
    let mesh = &fx.canonical_mesh;
    let anchored = fx.canonical.centers.iter().all(|c| {
        mesh.faces.iter().any(|f| {
            let [a, b, d] = f.map(|i| mesh.vertices[i as usize]);
            let n = (b - a).cross(&(d - a));
            n.norm() > 0.0 && ((c - a).dot(&n) / n.norm()).abs() < 1e-9
        })
    });
    ensure(anchored, || {
        "zero-head template moved a center off the body surface".into()
    })?;
    let input = refine_input(&fx, &demo_pose(&fx.model), 64).map_err(|e| e.to_string())?;
    let params = NetworkParams::<f32>::new(NetConfig::default(), ShareMode::Shared);
    let cfg = RefineConfig {
        opacity_threshold: 0.0,
        top_k: 0,
        ..RefineConfig::default()
    };
    let out = refine(&input, &params, &cfg).map_err(|e| e.to_string())?;
    let (a, b) = (&input.coarse.gaussians, &out.refined.gaussians);
    ensure(a == b, || "zero heads changed the Gaussian set".into())?;
    ensure(out.corrections.offset.iter().all(|o| *o == Vec3::zeros()), || {
        "nonzero offsets".into()
    })?;
    Ok(format!("{} Gaussians unchanged", a.len()))
}

fn a6_training() -> Outcome {
    let fx = avatar_fixture(6, 32).map_err(|e| e.to_string())?;
    let pose = demo_pose(&fx.model);
    let correct = refine_input(&fx, &pose, 64).map_err(|e| e.to_string())?;
    let truth: Vec<RenderOutput<f32>> = correct
        .rig
        .iter()
        .map(|c| rasterize::<f32>(&correct.coarse.gaussians, c, [0.0; 3]).without_workspace())
        .collect();
    let mut displaced = correct.clone();
    let limb = dominated_by(&displaced.coarse.gaussians, LEFT_ELBOW as u32);
    ensure(!limb.is_empty(), || "no Gaussians follow the elbow".into())?;
    for &i in &limb {
        displaced.coarse.gaussians.centers[i].y += 0.01;
    }
    let params = NetworkParams::<f32>::new(
        NetConfig {
            seed: 6,
            ..NetConfig::default()
        },
        ShareMode::Shared,
    );
    let cfg = TrainConfig {
        lr: 1e-3,
        epochs: 200,
        seed: 6,
        refine: RefineConfig {
            opacity_threshold: 0.0,
            ..RefineConfig::default()
        },
    };
    let data = [(displaced.clone(), truth.clone())];
    let (trained, curve) = train_refiner(&data, &params, &cfg).map_err(|e| e.to_string())?;
    let initial = curve[0].total;
    let last = refine_loss(&displaced, &truth, &trained, &cfg.refine)
        .map_err(|e| e.to_string())?
        .total;
    ensure(last <= 0.7 * initial, || {
        format!(
            "loss {last:e} after 200 steps vs initial {initial:e} (ratio {:.3})",
            last / initial
        )
    })?;
    let (_, again) = train_refiner(&data, &params, &cfg).map_err(|e| e.to_string())?;
    ensure(again == curve, || {
        "second run with the same seed produced a different loss curve".into()
    })?;
    Ok(format!(
        "{} limb Gaussians, loss {initial:.3e} -> {last:.3e} (ratio {:.3}), rerun identical",
        limb.len(),
        last / initial
    ))
}

fn median_ms(iters: usize, mut f: impl FnMut()) -> f64 {
    f();
    let mut t: Vec<f64> = (0..iters)
        .map(|_| {
            let s = Instant::now();
            f();
            s.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    t.sort_by(f64::total_cmp);
    t[iters / 2]
}

fn a7_performance() -> Outcome {
    let (model, _) = make_synthetic_body(7, &SyntheticConfig::default());
    let shape = Shape::zeros(model.shape_dim);
    let mut g = gsanim_core::fixtures::scattered_gaussians(&model, 100_000, 7);
    gsanim_core::gaussian::bind_gaussians(&mut g, &model, &shape).map_err(|e| e.to_string())?;
    let pose = demo_pose(&model);
    let lbs = median_ms(7, || {
        std::hint::black_box(animate(&g, &model, &shape, &pose, false).unwrap());
    });
    let small = g.select(&(0..10_000).map(|i| i * 10).collect::<Vec<_>>());
    let posed = animate(&small, &model, &shape, &pose, false).unwrap();
    let (c, r) = gsanim_core::fixtures::bounds(&posed.centers);
    let rig = four_view_rig(r * 1.1, 256, c).map_err(|e| e.to_string())?;
    let render = median_ms(5, || {
        for cam in &rig {
            std::hint::black_box(rasterize::<f32>(&posed, cam, [0.0; 3]).without_workspace());
        }
    });
    let threads = rayon::current_num_threads();
    let profile = if cfg!(debug_assertions) { "debug" } else { "optimized" };
    let detail = format!(
        "LBS 100k: {lbs:.1} ms (< 50), 4x256² render 10k: {render:.1} ms (< 250), {threads} threads, {profile}"
    );
    ensure(lbs < 50.0 && render < 250.0, || detail.clone())?;
    Ok(detail)
}

fn a8_formats() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let fx = avatar_fixture(8, 16).map_err(|e| e.to_string())?;
    let splat = write_splat_ply(&fx.canonical);
    let again = write_splat_ply(&parse_splat_ply(&splat).map_err(|e| e.to_string())?);
    ensure(again == splat, || "splat PLY save-load-save differs".into())?;
    let small = NetConfig {
        base_channels: 4,
        feature_channels: 4,
        decoder_channels: 4,
        texture_channels: 2,
        pose_channels: 2,
        head_hidden: 4,
        seed: 1,
    };
    let mut ckpts = Vec::new();
    for mode in [ShareMode::Shared, ShareMode::FinetuneBackward] {
        let p = NetworkParams::<f32>::new(small, ShareMode::Shared)
            .transfer_weights(mode)
            .map_err(|e| e.to_string())?;
        let bytes = encode_checkpoint(&p);
        let back = encode_checkpoint(&decode_checkpoint(&bytes).map_err(|e| e.to_string())?);
        ensure(back == bytes, || format!("{mode:?} checkpoint save-load-save differs"))?;
        ckpts.push(bytes);
    }
    let seeds: Vec<Vec<u8>> = vec![
        write_splat_ply(&fx.canonical.select(&[0, 1, 2])),
        ckpts[0].clone(),
        b"v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nf 1/1 2/1 3/1\n".to_vec(),
        b"{\"axis_angle\": [[0.1, 0, 0]], \"root_translation\": [0, 0, 0]}".to_vec(),
        b"{\"width\":2,\"height\":1,\"channels\":1}\n\0\0\0\0\0\0\0\0".to_vec(),
    ];
    let inputs = 100_000;
    let panics = std::sync::atomic::AtomicUsize::new(0);
    for i in 0..inputs {
        let mut b = if i % 6 == 5 {
            (0..rng.gen_range(0..256)).map(|_| rng.gen()).collect()
        } else {
            seeds[i % 6 % seeds.len()].clone()
        };
        if !b.is_empty() {
            for _ in 0..rng.gen_range(1..6) {
                let k = rng.gen_range(0..b.len());
                b[k] = rng.gen();
            }
            b.truncate(rng.gen_range(0..=b.len()));
        }
        let r = catch_unwind(AssertUnwindSafe(|| {
            let _ = parse_splat_ply(&b);
            let _ = parse_mesh_ply(&b);
            let _ = decode_checkpoint(&b);
            let _ = decode_raw(&b);
            if i % 10 == 0 {
                let _ = decode_png(&b);
            }
            let text = String::from_utf8_lossy(&b);
            let _ = parse_obj(&text);
            let _ = parse_pose(&text);
        }));
        if r.is_err() {
            panics.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        }
    }
    let panics = panics.into_inner();
    ensure(panics == 0, || format!("{panics} of {inputs} fuzz inputs panicked"))?;
    Ok(format!(
        "PLY and both checkpoint modes byte-stable, {inputs} fuzz inputs without panic"
    ))
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, &str, u64, fn() -> Outcome); 8] = [
        ("A1", "skinning oracles", 10, a1_skinning),
        ("A2", "rasterizer closed forms", 30, a2_rasterizer),
        ("A3", "gradient oracle", 300, a3_gradients),
        ("A4", "metric oracles", 60, a4_metrics),
        ("A5", "identity anchor", 10, a5_identity),
        ("A6", "toy end-to-end training", 600, a6_training),
        ("A7", "performance targets", 120, a7_performance),
        ("A8", "format round trips and fuzzing", 300, a8_formats),
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (id, name, budget, run) in criteria {
        if !filter.is_empty()
            && !filter
                .iter()
                .any(|f| id.contains(f.as_str()) || name.contains(f.as_str()))
        {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let took = start.elapsed();
        let result = match result {
            Ok(d) if took > Duration::from_secs(budget) => Err(format!("{d}; over the {budget} s budget")),
            other => other,
        };
        match result {
            Ok(detail) => println!("{id} {name}: PASS ({detail}; {:.1} s)", took.as_secs_f64()),
            Err(detail) => {
                failed += 1;
                println!("{id} {name}: FAIL ({detail}; {:.1} s)", took.as_secs_f64());
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
