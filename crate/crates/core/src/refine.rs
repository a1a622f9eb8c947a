//! Learned refinement of coarse LBS Gaussians.
//!
//! The coarse set and the posed body are rendered from the four-view rig,
//! both geometry renders pass through one shared encoder, the paired maps of
//! all views go through the refinement U-Net, and every Gaussian reads the
//! decoder features at its projection in each view. A small MLP turns the
//! averaged features into bounded corrections.

use serde::{Deserialize, Serialize};

use crate::body_model::{pose_transforms, BodyModel, Pose, Shape};
use crate::error::{Error, Result};
use crate::gaussian::{densify, prune, AvatarState, GaussianSet, Stage, DEFAULT_OPACITY_THRESHOLD, RAW_OPACITY_LIMIT};
use crate::math::Vec3;
use crate::mesh::Mesh;
use crate::nnet::{
    geo_encode_graph, geometry_input, heads_graph, multiview_loss, unet_graph, Adam, Graph, NetworkParams, Tensor, Var,
    HEAD_OUTPUT, VIEWS,
};
use crate::real::Real;
use crate::render::{
    rasterize_backward, rasterize_mesh_geometry, rasterize_with, Camera, GaussianGrads, ImageBuf, RasterConfig,
    RenderOutput,
};
use crate::skinning::lbs_deform;

/// Smallest rig resolution accepted by [`refine`].
pub const MIN_RESOLUTION: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    /// Bound on the center correction, meters.
    pub max_offset: f64,
    pub opacity_threshold: f64,
    pub top_k: usize,
    pub background: [f64; 3],
    #[serde(skip)]
    pub raster: RasterConfig,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            max_offset: 0.02,
            opacity_threshold: DEFAULT_OPACITY_THRESHOLD,
            top_k: 0,
            background: [0.0; 3],
            raster: RasterConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RefineInput {
    /// Must be in the coarse-target stage.
    pub coarse: AvatarState,
    /// Model template posed at `coarse.pose`.
    pub target_body: Mesh,
    /// Pose the target body was deformed to.
    pub target_pose: Pose,
    pub rig: [Camera; 4],
}

impl RefineInput {
    pub fn validate(&self) -> Result<()> {
        if self.coarse.stage != Stage::CoarseTarget {
            return Err(Error::Invariant(format!(
                "refinement needs coarse-target Gaussians, got stage {:?}",
                self.coarse.stage
            )));
        }
        self.coarse.gaussians.require_binding()?;
        if self.target_body.vertices.is_empty() {
            return Err(Error::InvalidArgument("target body is empty".into()));
        }
        if !poses_match(&self.target_pose, &self.coarse.pose) {
            return Err(Error::InvalidArgument(
                "target body is not posed at the coarse set's pose".into(),
            ));
        }
        let first = &self.rig[0];
        for cam in &self.rig {
            cam.validate()?;
            if (cam.width, cam.height) != (first.width, first.height) {
                return Err(Error::InvalidArgument("rig cameras differ in resolution".into()));
            }
        }
        Ok(())
    }
}

fn poses_match(a: &Pose, b: &Pose) -> bool {
    a.joint_rotations.len() == b.joint_rotations.len()
        && a.joint_rotations
            .iter()
            .zip(&b.joint_rotations)
            .all(|(x, y)| x.angle_to(y) < 1e-9)
        && (a.root_translation - b.root_translation).norm() < 1e-9
}

/// Per-Gaussian corrections as applied.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corrections {
    /// Center displacement after the radial `tanh` bound.
    pub offset: Vec<Vec3>,
    /// Log-scale change after clamping.
    pub raw_scale: Vec<[f64; 3]>,
    /// Quaternion increment added before renormalization.
    pub rotation: Vec<[f64; 4]>,
    /// New raw opacity.
    pub raw_opacity: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RefineOutput {
    pub refined: AvatarState,
    pub corrections: Corrections,
    pub densify_scores: Vec<f64>,
}

/// Model template posed by LBS with the model's own weights, normals recomputed.
pub fn pose_target_body(model: &BodyModel, shape: &Shape, pose: &Pose) -> Result<Mesh> {
    let g = pose_transforms(model, shape, pose)?;
    let mut m = lbs_deform(&model.template, &model.weights, &g)?;
    m.recompute_normals();
    Ok(m)
}

/// Camera-space normals from an expected-depth render, encoded like
/// [`rasterize_mesh_geometry`] output. Pixels with no coverage stay zero.
pub fn normals_from_depth<T: Real>(out: &RenderOutput<T>, cam: &Camera) -> ImageBuf<T> {
    let (w, h) = (out.depth.width, out.depth.height);
    let mut normals = ImageBuf::<T>::new(w, h, 3);
    let covered = |x: usize, y: usize| Real::to_f64(out.mask.at(x, y, 0)) > 1e-3;
    let point = |x: usize, y: usize| {
        let d = Real::to_f64(out.depth.at(x, y, 0));
        Vec3::new(
            d * (x as f64 + 0.5 - cam.cx) / cam.fx,
            d * (y as f64 + 0.5 - cam.cy) / cam.fy,
            d,
        )
    };
    // central difference where both neighbors are covered, one-sided otherwise
    let diff = |x: usize, y: usize, dx: isize, dy: isize| -> Option<Vec3> {
        let step = |s: isize| {
            let (nx, ny) = (x as isize + s * dx, y as isize + s * dy);
            (nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h && covered(nx as usize, ny as usize))
                .then(|| point(nx as usize, ny as usize))
        };
        match (step(1), step(-1)) {
            (Some(a), Some(b)) => Some((a - b) * 0.5),
            (Some(a), None) => Some(a - point(x, y)),
            (None, Some(b)) => Some(point(x, y) - b),
            (None, None) => None,
        }
    };
    for y in 0..h {
        for x in 0..w {
            if !covered(x, y) {
                continue;
            }
            let p = point(x, y);
            let n = match (diff(x, y, 1, 0), diff(x, y, 0, 1)) {
                (Some(a), Some(b)) => a.cross(&b).try_normalize(1e-18),
                _ => None,
            };
            let mut n = n.unwrap_or_else(|| Vec3::new(0.0, 0.0, -1.0));
            if n.dot(&p) > 0.0 {
                n = -n;
            }
            let view = [n.x, -n.y, -n.z];
            for c in 0..3 {
                normals.set(x, y, c, T::from_f64((view[c] + 1.0) * 0.5));
            }
        }
    }
    normals
}

/// Head outputs `[N, 12]` on the tape, plus the coarse renders.
fn head_outputs<'p, T: Real>(g: &mut Graph<'p, T>, input: &RefineInput, cfg: &RefineConfig) -> Result<Var> {
    let gs = &input.coarse.gaussians;
    let mut paired = Vec::with_capacity(VIEWS);
    for cam in &input.rig {
        let coarse = rasterize_with::<T>(gs, cam, cfg.background, &cfg.raster).without_workspace();
        let coarse_normals = normals_from_depth(&coarse, cam);
        let target = rasterize_mesh_geometry(&input.target_body, cam);
        let ci = g.input(geometry_input(&coarse_normals, &coarse.mask)?);
        let ti = g.input(geometry_input(
            &target.normals.cast::<T>(),
            &target.silhouette.cast::<T>(),
        )?);
        // one encoder for both branches
        let fc = geo_encode_graph(g, ci)?;
        let ft = geo_encode_graph(g, ti)?;
        paired.push(g.concat(&[fc, ft])?);
    }
    let stacked = g.concat(&paired)?;
    let decoded = unet_graph(g, "refine_unet", stacked)?;
    let per_view = g.shape(decoded)[0] / VIEWS;
    let mut sampled: Option<Var> = None;
    for (k, cam) in input.rig.iter().enumerate() {
        let coords: Vec<[T; 2]> = gs
            .centers
            .iter()
            .map(|mu| {
                let t = cam.to_camera(mu);
                if !(t.z >= cam.near && t.z <= cam.far) {
                    return [T::nan(); 2];
                }
                let [u, v] = cam.project_camera_point(&t);
                [T::from_f64(u / 4.0), T::from_f64(v / 4.0)]
            })
            .collect();
        let view = g.slice(decoded, k * per_view, per_view)?;
        let s = g.bilinear_sample(view, &coords)?;
        sampled = Some(match sampled {
            None => s,
            Some(acc) => g.add(acc, s)?,
        });
    }
    let mean = g.scale(sampled.expect("four views"), T::from_f64(1.0 / VIEWS as f64));
    heads_graph(g, mean)
}

/// `max · tanh(|v|) · v / |v|`: a radial squash, so the offset length stays
/// below `max` while the map is `max · v` to first order at zero.
fn bounded_offset(v: &Vec3, max: f64) -> Vec3 {
    let r = v.norm();
    if r < 1e-4 {
        return v * (max * (1.0 - r * r / 3.0));
    }
    v * (max * r.tanh() / r)
}

/// Vector-Jacobian product of [`bounded_offset`] with upstream gradient `g`.
fn bounded_offset_grad(v: &Vec3, g: &Vec3, max: f64) -> Vec3 {
    let r = v.norm();
    // f(r) = tanh(r) / r; the radial term carries f'(r) / r
    let (f, df_r) = if r < 1e-4 {
        (1.0 - r * r / 3.0, -2.0 / 3.0)
    } else {
        let t = r.tanh();
        (t / r, ((1.0 - t * t) * r - t) / (r * r * r))
    };
    (g * f + v * (df_r * v.dot(g))) * max
}

/// Applies raw head outputs to a Gaussian set (no pruning or densification).
fn apply_corrections<T: Real>(
    gs: &GaussianSet,
    raw: &Tensor<T>,
    cfg: &RefineConfig,
) -> (GaussianSet, Corrections, Vec<f64>) {
    let n = gs.len();
    let o = |i: usize, k: usize| Real::to_f64(raw.data[i * HEAD_OUTPUT + k]);
    let ln2 = std::f64::consts::LN_2;
    let mut out = gs.clone();
    let mut corr = Corrections::default();
    let mut scores = Vec::with_capacity(n);
    for i in 0..n {
        let off = bounded_offset(&Vec3::new(o(i, 0), o(i, 1), o(i, 2)), cfg.max_offset);
        out.centers[i] = gs.centers[i] + off;
        let ds: [f64; 3] = std::array::from_fn(|k| o(i, 3 + k).clamp(-ln2, ln2));
        for k in 0..3 {
            out.raw_scale[i][k] = gs.raw_scale[i][k] + ds[k];
        }
        let dr: [f64; 4] = std::array::from_fn(|k| o(i, 6 + k));
        if dr.iter().any(|v| *v != 0.0) {
            let q: [f64; 4] = std::array::from_fn(|k| gs.rotations[i][k] + dr[k]);
            let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-12 {
                out.rotations[i] = q.map(|v| v / norm);
            }
        }
        out.raw_opacity[i] = (gs.raw_opacity[i] + o(i, 10)).clamp(-RAW_OPACITY_LIMIT, RAW_OPACITY_LIMIT);
        scores.push(o(i, 11));
        corr.offset.push(off);
        corr.raw_scale.push(ds);
        corr.rotation.push(dr);
        corr.raw_opacity.push(out.raw_opacity[i]);
    }
    (out, corr, scores)
}

/// Runs the refinement stage: corrections, then pruning at
/// `cfg.opacity_threshold`, then splitting of the `cfg.top_k` best-scoring
/// survivors.
pub fn refine<T: Real>(input: &RefineInput, params: &NetworkParams<T>, cfg: &RefineConfig) -> Result<RefineOutput> {
    input.validate()?;
    let cam = &input.rig[0];
    if cam.width < MIN_RESOLUTION || cam.height < MIN_RESOLUTION {
        return Err(Error::InvalidArgument(format!(
            "rig resolution {}x{} is below the minimum of {MIN_RESOLUTION}",
            cam.width, cam.height
        )));
    }
    let mut g = Graph::with_params(params);
    let heads = head_outputs(&mut g, input, cfg)?;
    let (corrected, corrections, scores) = apply_corrections(&input.coarse.gaussians, g.value(heads), cfg);
    let pruned = prune(&corrected, cfg.opacity_threshold)?;
    let kept: Vec<f64> = (0..corrected.len())
        .filter(|&i| corrected.opacity(i) >= cfg.opacity_threshold)
        .map(|i| scores[i])
        .collect();
    let top_k = cfg.top_k.min(pruned.len());
    let refined = densify(&pruned, &kept, top_k)?;
    refined.validate()?;
    let state = input
        .coarse
        .clone()
        .advance(refined, input.coarse.pose.clone(), Stage::RefinedTarget)?;
    Ok(RefineOutput {
        refined: state,
        corrections,
        densify_scores: scores,
    })
}

/// Chain rule from rendered-parameter gradients to raw head outputs.
fn head_output_grads<T: Real>(
    coarse: &GaussianSet,
    raw: &Tensor<T>,
    grads: &GaussianGrads<T>,
    refined: &GaussianSet,
    cfg: &RefineConfig,
) -> Tensor<T> {
    let n = coarse.len();
    let ln2 = std::f64::consts::LN_2;
    let mut out = vec![T::zero(); n * HEAD_OUTPUT];
    for i in 0..n {
        let o = |k: usize| Real::to_f64(raw.data[i * HEAD_OUTPUT + k]);
        let row = &mut out[i * HEAD_OUTPUT..(i + 1) * HEAD_OUTPUT];
        let gc = Vec3::from_fn(|k, _| Real::to_f64(grads.center[i][k]));
        let gv = bounded_offset_grad(&Vec3::new(o(0), o(1), o(2)), &gc, cfg.max_offset);
        for k in 0..3 {
            row[k] = T::from_f64(gv[k]);
            let v = o(3 + k);
            row[3 + k] = if v > -ln2 && v < ln2 {
                grads.raw_scale[i][k]
            } else {
                T::zero()
            };
        }
        // r' = q / |q| with q = r + Δr
        let q: [f64; 4] = std::array::from_fn(|k| coarse.rotations[i][k] + o(6 + k));
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        let r2 = refined.rotations[i];
        let gr: [f64; 4] = std::array::from_fn(|k| Real::to_f64(grads.rotation[i][k]));
        let dot: f64 = (0..4).map(|k| gr[k] * r2[k]).sum();
        for k in 0..4 {
            row[6 + k] = T::from_f64((gr[k] - r2[k] * dot) / norm);
        }
        let a = coarse.raw_opacity[i] + o(10);
        row[10] = if a > -RAW_OPACITY_LIMIT && a < RAW_OPACITY_LIMIT {
            grads.raw_opacity[i]
        } else {
            T::zero()
        };
    }
    Tensor {
        shape: vec![n, HEAD_OUTPUT],
        data: out,
    }
}

/// Value and parameter gradients of the multi-view loss of the corrected
/// (unpruned) set against `truth`.
pub struct LossEvaluation<T> {
    pub mask: f64,
    pub color: f64,
    pub total: f64,
    pub gradients: crate::nnet::Gradients<T>,
}

/// Forward and reverse pass of one training example.
pub fn refine_loss<T: Real>(
    input: &RefineInput,
    truth: &[RenderOutput<T>],
    params: &NetworkParams<T>,
    cfg: &RefineConfig,
) -> Result<LossEvaluation<T>> {
    input.validate()?;
    if truth.len() != VIEWS {
        return Err(Error::DimensionMismatch {
            what: "truth views",
            expected: VIEWS,
            got: truth.len(),
        });
    }
    for (t, cam) in truth.iter().zip(&input.rig) {
        if (t.color.width, t.color.height) != (cam.width, cam.height) {
            return Err(Error::InvalidArgument(
                "truth render does not match the rig resolution".into(),
            ));
        }
    }
    let mut g = Graph::with_params(params);
    let heads = head_outputs(&mut g, input, cfg)?;
    let raw = g.value(heads).clone();
    let (corrected, _, _) = apply_corrections(&input.coarse.gaussians, &raw, cfg);
    let renders: Vec<RenderOutput<T>> = input
        .rig
        .iter()
        .map(|cam| rasterize_with::<T>(&corrected, cam, cfg.background, &cfg.raster))
        .collect();
    let loss = multiview_loss(&renders, truth)?;
    let mut grads = GaussianGrads::<T>::zeros(corrected.len());
    for (k, cam) in input.rig.iter().enumerate() {
        let gk = rasterize_backward(&corrected, cam, &renders[k], &loss.grad_color[k], &loss.grad_mask[k])?;
        grads.add_assign(&gk);
    }
    let seed = head_output_grads(&input.coarse.gaussians, &raw, &grads, &corrected, cfg);
    let gradients = g.backward_seeded(&[(heads, seed)])?;
    Ok(LossEvaluation {
        mask: Real::to_f64(loss.mask),
        color: Real::to_f64(loss.color),
        total: Real::to_f64(loss.total),
        gradients,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub refine: RefineConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            epochs: 10,
            seed: 0,
            refine: RefineConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub mask_loss: f64,
    pub color_loss: f64,
    pub total: f64,
}

/// One training example: refinement input and the four truth views.
pub type TrainItem<T> = (RefineInput, Vec<RenderOutput<T>>);

/// Adam on the multi-view loss of refined renders. One step per item, items
/// visited in a seeded order each epoch. Records the loss before each update.
pub fn train_refiner<T: Real>(
    dataset: &[TrainItem<T>],
    params: &NetworkParams<T>,
    cfg: &TrainConfig,
) -> Result<(NetworkParams<T>, Vec<LossRecord>)> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    if dataset.is_empty() {
        return Err(Error::InvalidArgument("training needs at least one example".into()));
    }
    let mut params = params.clone();
    let mut opt = Adam::new(cfg.lr);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut curve = Vec::with_capacity(cfg.epochs * dataset.len());
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let (input, truth) = &dataset[i];
            let eval = refine_loss(input, truth, &params, &cfg.refine)?;
            let step = curve.len();
            if !eval.total.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss became non-finite at step {step} (mask {}, color {})",
                    eval.mask, eval.color
                )));
            }
            curve.push(LossRecord {
                step,
                mask_loss: eval.mask,
                color_loss: eval.color,
                total: eval.total,
            });
            opt.step(&mut params, &eval.gradients)
                .map_err(|e| Error::Numeric(format!("step {step}: {e}")))?;
        }
    }
    Ok((params, curve))
}

#[cfg(test)]
mod tests;
