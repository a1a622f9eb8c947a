use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::real::Real;
use crate::render::{ImageBuf, RenderOutput};

fn random<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<T> {
    let n = shape.iter().product();
    Tensor::from_vec(
        shape,
        (0..n).map(|_| T::from_f64(rng.gen_range(-scale..scale))).collect(),
    )
    .unwrap()
}

/// Small network touching every op. Returns (loss, leaf vars).
fn all_ops_net<T: Real>(g: &mut Graph<'_, T>, leaves: &[Tensor<T>]) -> (Var, Vec<Var>) {
    let v: Vec<Var> = leaves.iter().map(|t| g.input_with_grad(t.clone())).collect();
    let (x, w0, b0, w1, b1, wt, bt, lw, lb, target) = (v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8], v[9]);
    let h = g.conv2d(x, w0, b0, 1, 1).unwrap();
    let h = g.tanh(h);
    let h2 = g.conv2d(h, w1, b1, 2, 1).unwrap();
    let h2 = g.relu(h2);
    let up = g.conv_transpose2x(h2, wt, bt).unwrap();
    let up = g.sigmoid(up);
    let cat = g.concat(&[up, h]).unwrap();
    let win = g.window(cat, -1, 1, 7, 5).unwrap();
    let sl = g.slice(win, 1, 3).unwrap();
    let prod = g.mul(sl, sl).unwrap();
    let sum = g.add(prod, sl).unwrap();
    let diff = g.sub(sum, sl).unwrap();
    let scaled = g.scale(diff, T::from_f64(0.7));
    let samples = g
        .bilinear_sample(
            scaled,
            &[[1.3, 2.2], [4.9, 0.1], [-0.2, 3.0], [2.5, 6.6]].map(|p| p.map(T::from_f64)),
        )
        .unwrap();
    let flat = g.reshape(samples, &[4, 3]).unwrap();
    let lin = g.linear(flat, lw, lb).unwrap();
    let loss = g.mse(lin, target).unwrap();
    (loss, v)
}

fn all_ops_leaves<T: Real>(seed: u64) -> Vec<Tensor<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    vec![
        random(&mut rng, &[2, 6, 6], 1.0),
        random(&mut rng, &[3, 2, 3, 3], 0.5),
        random(&mut rng, &[3], 0.2),
        random(&mut rng, &[2, 3, 3, 3], 0.5),
        random(&mut rng, &[2], 0.2),
        random(&mut rng, &[2, 3, 2, 2], 0.5),
        random(&mut rng, &[3], 0.2),
        random(&mut rng, &[2, 3], 0.8),
        random(&mut rng, &[2], 0.2),
        random(&mut rng, &[4, 2], 1.0),
    ]
}

fn eval_loss<T: Real>(leaves: &[Tensor<T>]) -> T {
    let mut g = Graph::new();
    let (loss, _) = all_ops_net(&mut g, leaves);
    g.value(loss).data[0]
}

fn check_all_ops<T: Real>(seed: u64, h: f64, tol: f64) {
    let leaves = all_ops_leaves::<T>(seed);
    let mut g = Graph::new();
    let (loss, vars) = all_ops_net(&mut g, &leaves);
    let grads = g.backward(loss).unwrap();
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for (li, leaf) in leaves.iter().enumerate() {
        let ga = grads.of(vars[li]).unwrap();
        for k in 0..leaf.len() {
            let mut p = leaves.clone();
            p[li].data[k] += T::from_f64(h);
            let mut m = leaves.clone();
            m[li].data[k] -= T::from_f64(h);
            let fd = (Real::to_f64(eval_loss(&p)) - Real::to_f64(eval_loss(&m))) / (2.0 * h);
            analytic.push(Real::to_f64(ga.data[k]));
            numeric.push(fd);
        }
    }
    let diff: f64 = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = numeric.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(diff / norm < tol, "seed {seed}: relative error {}", diff / norm);
}

#[test]
fn all_ops_match_finite_differences_f64() {
    for seed in 0..5 {
        check_all_ops::<f64>(seed, 1e-6, 1e-6);
    }
}

#[test]
fn all_ops_match_finite_differences_f32() {
    for seed in 0..5 {
        check_all_ops::<f32>(seed, 1e-2, 1e-3);
    }
}

#[test]
fn mse_of_self_has_zero_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = Graph::<f64>::new();
    let x = g.input_with_grad(random(&mut rng, &[3, 4], 1.0));
    let l = g.mse(x, x).unwrap();
    let grads = g.backward(l).unwrap();
    assert!(grads.of(x).unwrap().data.iter().all(|v| *v == 0.0));
}

#[test]
fn relu_of_negative_has_zero_gradient() {
    let mut g = Graph::<f64>::new();
    let x = g.input_with_grad(Tensor::from_vec(&[4], vec![-1.0, -0.5, -2.0, -1e-3]).unwrap());
    let r = g.relu(x);
    let l = g.sum(r);
    assert!(g.backward(l).unwrap().of(x).unwrap().data.iter().all(|v| *v == 0.0));
}

#[test]
fn shape_errors_at_build_time() {
    let mut g = Graph::<f64>::new();
    let a = g.input(Tensor::zeros(&[2, 3]));
    let b = g.input(Tensor::zeros(&[3, 2]));
    assert!(g.add(a, b).is_err());
    assert!(g.mse(a, b).is_err());
    let x = g.input(Tensor::zeros(&[2, 5, 5]));
    let w = g.input(Tensor::zeros(&[4, 3, 3, 3]));
    let bias = g.input(Tensor::zeros(&[4]));
    assert!(g.conv2d(x, w, bias, 1, 1).is_err());
}

#[test]
fn sample_outside_map_is_zero() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::from_vec(&[1, 2, 2], vec![1.0; 4]).unwrap());
    let s = g
        .bilinear_sample(x, &[[-5.0, 1.0], [1.0, 1.0], [1.0, 40.0], [f64::NAN, 0.0]])
        .unwrap();
    assert_eq!(g.value(s).data, vec![0.0, 1.0, 0.0, 0.0]);
}

fn params() -> NetworkParams<f64> {
    NetworkParams::new(NetConfig::default(), ShareMode::Shared)
}

#[test]
fn zero_input_gives_zero_template_output() {
    let p = params();
    let fm = FeatureMap {
        tensor: Tensor::zeros(&[16, 8, 8]),
        provenance: Provenance::Paired,
    };
    let out = unet_forward(&p, "template_unet", &fm).unwrap();
    assert_eq!(out.tensor.shape, vec![TEMPLATE_OUTPUT, 8, 8]);
    assert!(out.tensor.data.iter().all(|v| *v == 0.0));
}

#[test]
fn unet_preserves_spatial_size() {
    let p = params();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for h in 30..=34 {
        let fm = FeatureMap {
            tensor: random(&mut rng, &[128, h, 12], 1.0),
            provenance: Provenance::Paired,
        };
        let out = unet_forward(&p, "refine_unet", &fm).unwrap();
        assert_eq!(out.tensor.shape, vec![64, h, 12]);
    }
    let bad = FeatureMap {
        tensor: Tensor::zeros(&[5, 8, 8]),
        provenance: Provenance::Paired,
    };
    assert!(unet_forward(&p, "refine_unet", &bad).is_err());
    assert!(unet_forward(&p, "no_such_net", &bad).is_err());
}

#[test]
fn geo_encoder_is_pure_and_quarter_resolution() {
    let p = params();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (w, h) in [(64, 64), (30, 33)] {
        let normals =
            ImageBuf::from_pixels(w, h, 3, (0..w * h * 3).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        let sil = ImageBuf::from_pixels(w, h, 1, (0..w * h).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        let a = geo_encode(&p, &normals, &sil, Provenance::CoarseGeometry).unwrap();
        let b = geo_encode(&p, &normals, &sil, Provenance::TargetGeometry).unwrap();
        assert_eq!(a.tensor, b.tensor);
        assert_eq!(a.tensor.shape, vec![16, h.div_ceil(4), w.div_ceil(4)]);
    }
    let small = ImageBuf::<f64>::new(8, 8, 1);
    assert!(geo_encode(&p, &ImageBuf::new(16, 16, 3), &small, Provenance::CoarseGeometry).is_err());
}

#[test]
fn shared_mode_aliases_backward_names() {
    let mut p = params();
    for (fwd, bwd) in p.share_map().to_vec() {
        assert_eq!(p.slot(&fwd).unwrap(), p.slot(&bwd).unwrap());
    }
    let name = "template_unet.core.mid.w";
    p.get_mut(name).unwrap().data[0] = 42.0;
    assert_eq!(p.get("refine_unet.core.mid.w").unwrap().data[0], 42.0);
}

#[test]
fn finetune_copies_and_freezes_forward() {
    let shared = params();
    let mut ft = shared.transfer_weights(ShareMode::FinetuneBackward).unwrap();
    for (fwd, bwd) in ft.share_map().to_vec() {
        assert_ne!(ft.slot(&fwd).unwrap(), ft.slot(&bwd).unwrap());
        assert_eq!(ft.get(&fwd).unwrap(), ft.get(&bwd).unwrap());
    }
    assert!(shared.parameter_count() < ft.parameter_count());

    // gradient on everything, one step: forward tensors must not move
    let before = ft.clone();
    let grads = Gradients::from_params(
        (0..ft.slot_count())
            .map(|s| Some(Tensor::from_vec(&ft.tensor(s).shape, vec![1.0; ft.tensor(s).len()]).unwrap()))
            .collect(),
    );
    Adam::new(0.1).step(&mut ft, &grads).unwrap();
    assert_eq!(
        ft.get("template_unet.core.mid.w").unwrap(),
        before.get("template_unet.core.mid.w").unwrap()
    );
    assert_eq!(
        ft.get("uv_encoder.conv0.w").unwrap(),
        before.get("uv_encoder.conv0.w").unwrap()
    );
    assert_ne!(
        ft.get("refine_unet.core.mid.w").unwrap(),
        before.get("refine_unet.core.mid.w").unwrap()
    );
}

#[test]
fn shared_gradients_accumulate_into_one_slot() {
    let p = params();
    let mut g = Graph::with_params(&p);
    let a = g.param("template_unet.core.mid.b").unwrap();
    let b = g.param("refine_unet.core.mid.b").unwrap();
    let s = g.add(a, b).unwrap();
    let l = g.sum(s);
    let grads = g.backward(l).unwrap();
    let slot = p.slot("refine_unet.core.mid.b").unwrap();
    assert!(grads.param(slot).unwrap().data.iter().all(|v| *v == 2.0));
}

#[test]
fn parameters_are_seeded() {
    let a = NetworkParams::<f32>::new(NetConfig::default(), ShareMode::Shared);
    let b = NetworkParams::<f32>::new(NetConfig::default(), ShareMode::Shared);
    assert_eq!(a, b);
    let c = NetworkParams::<f32>::new(
        NetConfig {
            seed: 1,
            ..NetConfig::default()
        },
        ShareMode::Shared,
    );
    assert_ne!(a, c);
    assert!(a.get("refine_heads.fc1.w").unwrap().data.iter().all(|v| *v == 0.0));
}

fn render(color: f64, mask: f64, size: usize) -> RenderOutput<f64> {
    RenderOutput {
        color: ImageBuf::filled(size, size, &[color; 3]),
        mask: ImageBuf::filled(size, size, &[mask]),
        depth: ImageBuf::new(size, size, 1),
        workspace: None,
    }
}

#[test]
fn multiview_loss_closed_forms() {
    let truth: Vec<_> = (0..4).map(|v| render(0.1 * v as f64, 0.5, 8)).collect();
    let same = multiview_loss(&truth, &truth).unwrap();
    assert_eq!(same.total, 0.0);
    assert!(same
        .grad_color
        .iter()
        .chain(&same.grad_mask)
        .all(|g| g.pixels.iter().all(|v| *v == 0.0)));

    let pred: Vec<_> = (0..4).map(|v| render(0.1 * v as f64, 0.6, 8)).collect();
    let l = multiview_loss(&pred, &truth).unwrap();
    assert!((l.total - 4.0 * 0.01).abs() < 1e-12);
    assert!(multiview_loss::<f64>(&[], &[]).is_err());

    let rev_p: Vec<_> = pred.iter().rev().cloned().collect();
    let rev_t: Vec<_> = truth.iter().rev().cloned().collect();
    assert_eq!(multiview_loss(&rev_p, &rev_t).unwrap().total, l.total);
}

#[test]
fn adam_zero_gradient_keeps_parameters() {
    let mut p = params();
    let before = p.clone();
    let grads = Gradients::from_params(
        (0..p.slot_count())
            .map(|s| Some(Tensor::zeros(&p.tensor(s).shape)))
            .collect(),
    );
    Adam::new(0.01).step(&mut p, &grads).unwrap();
    assert_eq!(p, before);
}

#[test]
fn adam_minimizes_quadratic() {
    let mut x = [1.0f64];
    let mut opt = Adam::new(0.1);
    for _ in 0..200 {
        let g = [2.0 * x[0]];
        opt.step_slice(&mut x, &g).unwrap();
    }
    assert!(x[0].abs() < 1e-2, "{}", x[0]);
}

#[test]
fn adam_rejects_nan_without_touching_parameters() {
    let mut p = params();
    let before = p.clone();
    let slot = p.slot("refine_heads.fc0.b").unwrap();
    let mut params_grads: Vec<Option<Tensor<f64>>> = vec![None; p.slot_count()];
    let mut bad = Tensor::zeros(&p.tensor(slot).shape);
    bad.data[0] = f64::NAN;
    params_grads[slot] = Some(bad);
    let err = Adam::new(0.1)
        .step(&mut p, &Gradients::from_params(params_grads))
        .unwrap_err();
    assert!(err.to_string().contains("refine_heads.fc0.b"));
    assert_eq!(p, before);
}

#[test]
fn train_only_freezes_other_networks() {
    let mut p = params();
    p.train_only(&["refine_heads".to_string()]).unwrap();
    for (name, slot) in p.names() {
        assert_eq!(p.is_trainable(slot), name.starts_with("refine_heads."), "{name}");
    }

    // a shared core slot stays trainable through either of its names
    let mut p = params();
    p.train_only(&["refine_unet".to_string()]).unwrap();
    assert!(p.is_trainable(p.slot("template_unet.core.mid.w").unwrap()));
    assert!(!p.is_trainable(p.slot("template_unet.out.w").unwrap()));

    // frozen slots are never re-enabled; "refine" alone is not a network
    let mut ft = params().transfer_weights(ShareMode::FinetuneBackward).unwrap();
    ft.train_only(&["template_unet".to_string(), "refine_unet".to_string()])
        .unwrap();
    assert!(!ft.is_trainable(ft.slot("template_unet.core.mid.w").unwrap()));
    assert!(ft.is_trainable(ft.slot("refine_unet.core.mid.w").unwrap()));
    assert!(matches!(
        p.train_only(&["refine".to_string()]),
        Err(crate::error::Error::InvalidArgument(_))
    ));
}
