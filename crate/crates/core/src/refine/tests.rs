use std::sync::OnceLock;

use nalgebra::UnitQuaternion;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::fixtures::{avatar_fixture, demo_pose, refine_input, AvatarFixture};
use crate::math::{rigid, transform_point, Mat3};
use crate::nnet::{NetConfig, ShareMode};
use crate::render::rasterize;

fn fixture() -> &'static AvatarFixture {
    static F: OnceLock<AvatarFixture> = OnceLock::new();
    F.get_or_init(|| avatar_fixture(3, 32).unwrap())
}

fn input(res: usize) -> RefineInput {
    let f = fixture();
    refine_input(f, &demo_pose(&f.model), res).unwrap()
}

fn identity_cfg() -> RefineConfig {
    RefineConfig {
        opacity_threshold: 0.0,
        top_k: 0,
        ..RefineConfig::default()
    }
}

fn randomize(params: &mut NetworkParams<f64>, prefix: &str, scale: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = params
        .names()
        .filter(|(n, _)| n.starts_with(prefix))
        .map(|(n, _)| n.to_string())
        .collect();
    for n in names {
        for v in params.get_mut(&n).unwrap().data.iter_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }
}

#[test]
fn zero_heads_are_the_identity() {
    let inp = input(64);
    let params = NetworkParams::<f32>::new(NetConfig::default(), ShareMode::Shared);
    let out = refine(&inp, &params, &identity_cfg()).unwrap();
    assert_eq!(out.refined.gaussians, inp.coarse.gaussians);
    assert_eq!(out.refined.stage, Stage::RefinedTarget);
    assert!(out.densify_scores.iter().all(|s| *s == 0.0));
}

#[test]
fn center_and_scale_corrections_are_bounded() {
    let inp = input(64);
    let mut params = NetworkParams::<f64>::new(NetConfig::default(), ShareMode::Shared);
    randomize(&mut params, "refine_heads", 3.0, 1);
    let cfg = identity_cfg();
    let out = refine(&inp, &params, &cfg).unwrap();
    let (a, b) = (&inp.coarse.gaussians, &out.refined.gaussians);
    let mut moved = 0;
    for i in 0..a.len() {
        let d = b.centers[i] - a.centers[i];
        assert!(d.norm() <= cfg.max_offset * (1.0 + 1e-12));
        moved += usize::from(d.amax() > 0.0);
        for k in 0..3 {
            let f = (b.raw_scale[i][k] - a.raw_scale[i][k]).exp();
            assert!((0.5 - 1e-12..=2.0 + 1e-12).contains(&f));
        }
        let n: f64 = b.rotations[i].iter().map(|v| v * v).sum();
        assert!((n - 1.0).abs() < 1e-12);
    }
    assert!(moved > 0);
}

#[test]
fn offset_squash_is_bounded_and_its_gradient_matches_differences() {
    let g = Vec3::new(0.3, -1.1, 0.7);
    for v in [
        Vec3::zeros(),
        Vec3::new(2e-5, -1e-5, 3e-5),
        Vec3::new(0.2, -0.4, 0.1),
        Vec3::new(1.5, 2.0, -0.5),
        Vec3::new(30.0, -40.0, 50.0),
    ] {
        assert!(bounded_offset(&v, 0.02).norm() <= 0.02);
        let analytic = bounded_offset_grad(&v, &g, 0.02);
        let h = 1e-6;
        for k in 0..3 {
            let mut e = Vec3::zeros();
            e[k] = h;
            let fd = (bounded_offset(&(v + e), 0.02) - bounded_offset(&(v - e), 0.02)).dot(&g) / (2.0 * h);
            assert!(
                (fd - analytic[k]).abs() <= 1e-9 + 1e-6 * fd.abs(),
                "{v} {k}: {fd} vs {}",
                analytic[k]
            );
        }
    }
}

#[test]
fn gaussian_outside_every_view_gets_the_zero_feature_output() {
    let mut inp = input(64);
    let far = Vec3::new(0.0, 500.0, 0.0);
    inp.coarse.gaussians.centers[0] = far;
    let mut params = NetworkParams::<f64>::new(NetConfig::default(), ShareMode::Shared);
    randomize(&mut params, "refine_heads", 0.5, 2);
    let out = refine(&inp, &params, &identity_cfg()).unwrap();

    let mut g = Graph::with_params(&params);
    let z = g.input(Tensor::zeros(&[1, params.config.decoder_channels]));
    let h = heads_graph(&mut g, z).unwrap();
    let raw = g.value(h).data.clone();
    let expect = bounded_offset(&Vec3::new(raw[0], raw[1], raw[2]), 0.02);
    assert_eq!(out.corrections.offset[0], expect);
    assert_eq!(out.densify_scores[0], raw[11]);
}

#[test]
fn refined_count_is_survivors_plus_top_k() {
    let inp = input(64);
    let mut params = NetworkParams::<f64>::new(NetConfig::default(), ShareMode::Shared);
    randomize(&mut params, "refine_heads", 2.0, 5);
    let probe = refine(&inp, &params, &identity_cfg()).unwrap();
    let mut alphas: Vec<f64> = probe
        .corrections
        .raw_opacity
        .iter()
        .map(|a| crate::real::sigmoid(*a))
        .collect();
    alphas.sort_by(f64::total_cmp);
    let threshold = alphas[alphas.len() / 2];
    let cfg = RefineConfig {
        opacity_threshold: threshold,
        top_k: 7,
        ..RefineConfig::default()
    };
    let out = refine(&inp, &params, &cfg).unwrap();
    let pruned = alphas.iter().filter(|a| **a < threshold).count();
    let n = inp.coarse.gaussians.len();
    assert!(pruned > 0 && n - pruned >= 7, "pruned {pruned} of {n}");
    assert_eq!(out.refined.gaussians.len(), n - pruned + 7);
}

#[test]
fn invalid_inputs_are_rejected() {
    let params = NetworkParams::<f32>::new(NetConfig::default(), ShareMode::Shared);
    assert!(refine(&input(48), &params, &identity_cfg()).is_err());
    let mut wrong_stage = input(64);
    wrong_stage.coarse.stage = Stage::Canonical;
    assert!(refine(&wrong_stage, &params, &identity_cfg()).is_err());
    let mut unposed = input(64);
    unposed.target_pose = fixture().model.canonical_pose().clone();
    assert!(refine(&unposed, &params, &identity_cfg()).is_err());
}

#[test]
fn rest_pose_leaves_template_unchanged() {
    let f = fixture();
    let m = pose_target_body(&f.model, &f.shape, &f.model.rest_pose()).unwrap();
    for (a, b) in m.vertices.iter().zip(&f.model.template.vertices) {
        assert!((a - b).norm() <= 1e-12);
    }
}

#[test]
fn root_motion_moves_body_rigidly() {
    let f = fixture();
    let r = UnitQuaternion::from_scaled_axis(Vec3::new(0.2, -0.7, 0.1));
    let mut pose = f.model.rest_pose().with_joint(0, r);
    pose.root_translation = Vec3::new(0.3, 0.1, -0.2);
    let m = pose_target_body(&f.model, &f.shape, &pose).unwrap();
    let pelvis = crate::body_model::regress_joints(&f.model, &f.shape).unwrap().positions[0];
    let rot: Mat3 = r.to_rotation_matrix().into_inner();
    let motion = rigid(&rot, &(pelvis + pose.root_translation - rot * pelvis));
    for (a, b) in m.vertices.iter().zip(&f.model.template.vertices) {
        assert!((a - transform_point(&motion, b)).norm() < 1e-12);
    }
}

#[test]
fn elbow_bend_matches_rigid_forearm() {
    // one-hot body: forearm and hand capsules turn rigidly about the elbow
    let cfg = crate::body_model::SyntheticConfig {
        one_hot: true,
        ..Default::default()
    };
    let (model, _) = crate::body_model::make_synthetic_body(4, &cfg);
    let shape = Shape::zeros(model.shape_dim);
    let r = UnitQuaternion::from_scaled_axis(Vec3::new(0.0, std::f64::consts::FRAC_PI_2, 0.0));
    let pose = model.rest_pose().with_joint(crate::fixtures::LEFT_ELBOW, r);
    let posed = pose_target_body(&model, &shape, &pose).unwrap();
    let joints = crate::body_model::regress_joints(&model, &shape).unwrap().positions;
    let elbow = joints[crate::fixtures::LEFT_ELBOW];
    let mut subtree = vec![crate::fixtures::LEFT_ELBOW];
    for j in 0..model.skeleton.parents.len() {
        if model.skeleton.parents[j].is_some_and(|p| subtree.contains(&p)) {
            subtree.push(j);
        }
    }
    for v in 0..posed.vertices.len() {
        let (j, w) = model.weights.row(v).next().unwrap();
        assert_eq!(w, 1.0);
        let rest = model.template.vertices[v];
        let expect = if subtree.contains(&(j as usize)) {
            elbow + r * (rest - elbow)
        } else {
            rest
        };
        assert!((posed.vertices[v] - expect).norm() < 1e-6);
    }
}

fn coarse_truth<T: Real>(inp: &RefineInput) -> Vec<RenderOutput<T>> {
    inp.rig
        .iter()
        .map(|c| rasterize::<T>(&inp.coarse.gaussians, c, [0.0; 3]).without_workspace())
        .collect()
}

#[test]
fn training_on_own_renders_is_a_no_op() {
    let inp = input(64);
    let truth = coarse_truth::<f32>(&inp);
    let params = NetworkParams::<f32>::new(NetConfig::default(), ShareMode::Shared);
    let cfg = TrainConfig {
        epochs: 2,
        refine: identity_cfg(),
        ..TrainConfig::default()
    };
    let (trained, curve) = train_refiner(&[(inp.clone(), truth)], &params, &cfg).unwrap();
    assert_eq!(curve[0].total, 0.0);
    assert!(curve.iter().all(|r| r.total < 1e-10));
    let out = refine(&inp, &trained, &identity_cfg()).unwrap();
    let (a, b) = (&inp.coarse.gaussians, &out.refined.gaussians);
    for i in 0..a.len() {
        assert!((a.centers[i] - b.centers[i]).norm() < 1e-6);
    }
}

#[test]
fn training_is_deterministic() {
    let inp = input(64);
    let mut shifted = inp.clone();
    for c in shifted.coarse.gaussians.centers.iter_mut() {
        c.y += 0.005;
    }
    let truth = coarse_truth::<f32>(&inp);
    let params = NetworkParams::<f32>::new(NetConfig::default(), ShareMode::Shared);
    let cfg = TrainConfig {
        epochs: 3,
        lr: 1e-3,
        refine: identity_cfg(),
        ..TrainConfig::default()
    };
    let data = [(shifted, truth)];
    let (_, a) = train_refiner(&data, &params, &cfg).unwrap();
    let (_, b) = train_refiner(&data, &params, &cfg).unwrap();
    assert_eq!(a, b);
    assert!(a[0].total > 0.0);
}

#[test]
fn head_gradients_match_finite_differences() {
    let inp = input(64);
    // small scene keeps the check fast
    let keep: Vec<usize> = (0..inp.coarse.gaussians.len())
        .step_by(inp.coarse.gaussians.len() / 12)
        .collect();
    let mut small = inp.clone();
    small.coarse.gaussians = inp.coarse.gaussians.select(&keep);
    let mut truth_set = small.coarse.gaussians.clone();
    for c in truth_set.centers.iter_mut() {
        c.x += 0.01;
    }
    let cfg = RefineConfig {
        raster: RasterConfig {
            extent_sigma: 10.0,
            min_transmittance: 0.0,
            ..RasterConfig::default()
        },
        ..identity_cfg()
    };
    let truth: Vec<RenderOutput<f64>> = small
        .rig
        .iter()
        .map(|c| rasterize_with::<f64>(&truth_set, c, [0.0; 3], &cfg.raster).without_workspace())
        .collect();
    let mut params = NetworkParams::<f64>::new(NetConfig::default(), ShareMode::Shared);
    randomize(&mut params, "refine_heads.fc1", 0.3, 9);
    let eval = refine_loss(&small, &truth, &params, &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
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
        for _ in 0..6 {
            let k = rng.gen_range(0..len);
            let h = 1e-6;
            let mut p = params.clone();
            p.tensor_mut(slot).data[k] += h;
            let lp = refine_loss(&small, &truth, &p, &cfg).unwrap().total;
            p.tensor_mut(slot).data[k] -= 2.0 * h;
            let lm = refine_loss(&small, &truth, &p, &cfg).unwrap().total;
            numeric.push((lp - lm) / (2.0 * h));
            analytic.push(eval.gradients.param(slot).map_or(0.0, |g| g.data[k]));
        }
    }
    let diff: f64 = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = numeric.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm > 0.0);
    assert!(diff / norm < 1e-3, "relative error {}", diff / norm);
}
