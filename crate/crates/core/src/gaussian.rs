//! Gaussian avatar representation: parameter storage, covariance assembly,
//! re-posing, pruning and densification.

use nalgebra::{Rotation3, UnitQuaternion};
use rayon::prelude::*;

use crate::body_model::{pose_transforms, BodyModel, Pose, Shape};
use crate::error::{check_len, Error, Result};
use crate::math::{polar_rotation, quat_matrix, quat_mul, transform_point, Mat3, Mat4, Vec3};
use crate::mesh::Mesh;
use crate::real::sigmoid;
use crate::skinning::{
    apply_to_points, bind_scan_to_model, compose_repose_transform, lbs_deform, relative_joint_transforms,
    SkinningWeights, DEFAULT_BIND_K,
};

/// Default opacity below which Gaussians are pruned.
pub const DEFAULT_OPACITY_THRESHOLD: f64 = 0.005;
/// Bound on predicted raw opacities; beyond it the sigmoid rounds to 0 or 1.
pub const RAW_OPACITY_LIMIT: f64 = 30.0;
/// Scale shrink factor applied to both children of a split.
pub const SPLIT_SCALE_FACTOR: f64 = 1.6;

/// Structure-of-arrays Gaussian set. Colors are RGB in `[0, 1]`, rotations
/// are unit quaternions `[w, x, y, z]`, opacity is pre-sigmoid and scale is
/// log-space.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GaussianSet {
    pub centers: Vec<Vec3>,
    pub raw_opacity: Vec<f64>,
    pub raw_scale: Vec<[f64; 3]>,
    pub rotations: Vec<[f64; 4]>,
    pub colors: Vec<[f64; 3]>,
    /// Skinning weights of each center, required for animation.
    pub binding: Option<SkinningWeights>,
}

/// One Gaussian's parameters, used when building sets element by element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian {
    pub center: Vec3,
    pub raw_opacity: f64,
    pub raw_scale: [f64; 3],
    pub rotation: [f64; 4],
    pub color: [f64; 3],
}

impl GaussianSet {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn push(&mut self, g: Gaussian) {
        self.centers.push(g.center);
        self.raw_opacity.push(g.raw_opacity);
        self.raw_scale.push(g.raw_scale);
        self.rotations.push(g.rotation);
        self.colors.push(g.color);
    }

    pub fn get(&self, i: usize) -> Gaussian {
        Gaussian {
            center: self.centers[i],
            raw_opacity: self.raw_opacity[i],
            raw_scale: self.raw_scale[i],
            rotation: self.rotations[i],
            color: self.colors[i],
        }
    }

    pub fn from_gaussians(items: impl IntoIterator<Item = Gaussian>) -> Self {
        let mut s = GaussianSet::default();
        for g in items {
            s.push(g);
        }
        s
    }

    pub fn opacity(&self, i: usize) -> f64 {
        sigmoid(self.raw_opacity[i])
    }

    pub fn scale(&self, i: usize) -> Vec3 {
        Vec3::from(self.raw_scale[i]).map(f64::exp)
    }

    pub fn rotation_matrix(&self, i: usize) -> Mat3 {
        quat_matrix(self.rotations[i])
    }

    /// `Σ = R · diag(exp(s))² · Rᵀ`.
    pub fn covariance(&self, i: usize) -> Mat3 {
        let r = self.rotation_matrix(i);
        let s = self.scale(i);
        r * Mat3::from_diagonal(&s.component_mul(&s)) * r.transpose()
    }

    /// Subset in the given order, carrying the binding rows along.
    pub fn select(&self, indices: &[usize]) -> GaussianSet {
        GaussianSet {
            centers: indices.iter().map(|&i| self.centers[i]).collect(),
            raw_opacity: indices.iter().map(|&i| self.raw_opacity[i]).collect(),
            raw_scale: indices.iter().map(|&i| self.raw_scale[i]).collect(),
            rotations: indices.iter().map(|&i| self.rotations[i]).collect(),
            colors: indices.iter().map(|&i| self.colors[i]).collect(),
            binding: self.binding.as_ref().map(|b| b.select(indices)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        check_len("raw_opacity", n, self.raw_opacity.len())?;
        check_len("raw_scale", n, self.raw_scale.len())?;
        check_len("rotations", n, self.rotations.len())?;
        check_len("colors", n, self.colors.len())?;
        if let Some(b) = &self.binding {
            check_len("binding rows", n, b.rows())?;
        }
        for i in 0..n {
            let q = self.rotations[i];
            let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !((norm - 1.0).abs() <= 1e-6) {
                return Err(Error::Invariant(format!("gaussian {i}: rotation norm {norm}")));
            }
            if !self.centers[i].iter().all(|v| v.is_finite()) {
                return Err(Error::Invariant(format!("gaussian {i}: non-finite center")));
            }
            let a = self.opacity(i);
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::Invariant(format!("gaussian {i}: opacity {a} outside (0, 1)")));
            }
            let s = self.scale(i);
            if !s.iter().all(|v| v.is_finite() && *v > 0.0) {
                return Err(Error::Invariant(format!("gaussian {i}: scale not finite and positive")));
            }
            if self.colors[i].iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(Error::Invariant(format!("gaussian {i}: color outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn require_binding(&self) -> Result<&SkinningWeights> {
        let b = self
            .binding
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("gaussians carry no skinning binding".into()))?;
        check_len("binding rows", self.len(), b.rows())?;
        Ok(b)
    }
}

/// Pipeline stage of an avatar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Source,
    Canonical,
    CoarseTarget,
    RefinedTarget,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AvatarState {
    pub gaussians: GaussianSet,
    pub pose: Pose,
    pub shape: Shape,
    pub stage: Stage,
}

impl AvatarState {
    /// Moves to the next stage; only the single forward step is allowed.
    pub fn advance(self, gaussians: GaussianSet, pose: Pose, stage: Stage) -> Result<Self> {
        let ok = matches!(
            (self.stage, stage),
            (Stage::Source, Stage::Canonical)
                | (Stage::Canonical, Stage::CoarseTarget)
                | (Stage::CoarseTarget, Stage::RefinedTarget)
        );
        if !ok {
            return Err(Error::Invariant(format!(
                "illegal stage transition {:?} -> {:?}",
                self.stage, stage
            )));
        }
        Ok(AvatarState {
            gaussians,
            pose,
            shape: self.shape,
            stage,
        })
    }
}

/// Maps a posed scan to the model's canonical A-pose.
///
/// The scan is bound to the model template deformed to `source_pose`, then
/// every vertex is moved by the blended `G(θ_c) · G(θ_s)⁻¹`.
pub fn canonicalize_scan(scan: &Mesh, model: &BodyModel, source_pose: &Pose, shape: &Shape) -> Result<Mesh> {
    repose_scan(scan, model, source_pose, model.canonical_pose(), shape)
}

/// Moves a scan posed at `from` to the pose `to`.
pub fn repose_scan(scan: &Mesh, model: &BodyModel, from: &Pose, to: &Pose, shape: &Shape) -> Result<Mesh> {
    Ok(repose_scan_bound(scan, model, from, to, shape)?.0)
}

/// [`repose_scan`] that also returns the scan's weights, which are pose
/// independent: reusing them for the way back inverts the move exactly on
/// one-hot rows, while rebinding in the new pose can pick up a different
/// neighbour where template parts touch.
pub fn repose_scan_bound(
    scan: &Mesh,
    model: &BodyModel,
    from: &Pose,
    to: &Pose,
    shape: &Shape,
) -> Result<(Mesh, SkinningWeights)> {
    let g_from = pose_transforms(model, shape, from)?;
    let posed_template = lbs_deform(&model.template, &model.weights, &g_from)?;
    let binding = bind_scan_to_model(&scan.vertices, model, &posed_template, DEFAULT_BIND_K)?;
    let moved = repose_with_weights(scan, &binding.weights, model, from, to, shape)?;
    Ok((moved, binding.weights))
}

/// Moves a scan from `from` to `to` with the given per-vertex weights.
pub fn repose_with_weights(
    scan: &Mesh,
    weights: &SkinningWeights,
    model: &BodyModel,
    from: &Pose,
    to: &Pose,
    shape: &Shape,
) -> Result<Mesh> {
    let g_from = pose_transforms(model, shape, from)?;
    let g_to = pose_transforms(model, shape, to)?;
    let t = compose_repose_transform(weights, &g_to, &g_from)?;
    Ok(scan.with_vertices(apply_to_points(&scan.vertices, &t)?))
}

/// Binds Gaussian centers to the model template posed at the canonical pose.
pub fn bind_gaussians(
    g: &mut GaussianSet,
    model: &BodyModel,
    shape: &Shape,
) -> Result<crate::skinning::BindDiagnostics> {
    let gc = pose_transforms(model, shape, model.canonical_pose())?;
    let posed = lbs_deform(&model.template, &model.weights, &gc)?;
    let b = bind_scan_to_model(&g.centers, model, &posed, DEFAULT_BIND_K)?;
    g.binding = Some(b.weights);
    Ok(b.diagnostics)
}

/// Re-poses canonical Gaussians to `target_pose` with forward LBS on the
/// centers. Scale, opacity and color are untouched; rotations are too unless
/// `rotate_frames` is set, in which case they are pre-multiplied by the polar
/// rotation of each blended transform.
pub fn animate(
    canonical: &GaussianSet,
    model: &BodyModel,
    shape: &Shape,
    target_pose: &Pose,
    rotate_frames: bool,
) -> Result<GaussianSet> {
    let binding = canonical.require_binding()?;
    let g_c = pose_transforms(model, shape, model.canonical_pose())?;
    let g_t = pose_transforms(model, shape, target_pose)?;
    if binding.max_joint().is_some_and(|m| m >= g_t.len()) {
        return Err(Error::InvalidArgument(
            "binding references joints beyond the model".into(),
        ));
    }
    let rel = relative_joint_transforms(&g_t, &g_c)?;
    // rows touching only unmoved joints stay bit-identical; blending would
    // scale them by a weight sum that is one only to rounding
    let unmoved: Vec<bool> = rel.iter().map(|m| *m == Mat4::identity()).collect();
    let moved: Vec<(Vec3, [f64; 4])> = canonical
        .centers
        .par_iter()
        .zip(&canonical.rotations)
        .enumerate()
        .map(|(i, (mu, r))| {
            if binding.row(i).all(|(j, _)| unmoved[j as usize]) {
                return (*mu, *r);
            }
            let m = binding.blend(i, &rel);
            let mu2 = transform_point(&m, mu);
            let r2 = if rotate_frames {
                let rot = polar_rotation(&m.fixed_view::<3, 3>(0, 0).into_owned());
                let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(rot));
                crate::math::quat_normalize(quat_mul([q.w, q.i, q.j, q.k], *r))
            } else {
                *r
            };
            (mu2, r2)
        })
        .collect();
    let mut out = canonical.clone();
    for (i, (mu, r)) in moved.into_iter().enumerate() {
        out.centers[i] = mu;
        out.rotations[i] = r;
    }
    Ok(out)
}

/// Drops Gaussians whose opacity is below `threshold`, keeping order.
pub fn prune(g: &GaussianSet, opacity_threshold: f64) -> Result<GaussianSet> {
    if !(0.0..1.0).contains(&opacity_threshold) {
        return Err(Error::InvalidArgument(format!(
            "opacity threshold {opacity_threshold} outside [0, 1)"
        )));
    }
    let keep: Vec<usize> = (0..g.len()).filter(|&i| g.opacity(i) >= opacity_threshold).collect();
    Ok(g.select(&keep))
}

/// Splits the `top_k` highest-scoring Gaussians into two children offset by
/// `±0.5·exp(s_major)` along the rotated major axis, each with scale shrunk by
/// `SPLIT_SCALE_FACTOR`. Children take the parent's slot, in order (+, −).
pub fn densify(g: &GaussianSet, scores: &[f64], top_k: usize) -> Result<GaussianSet> {
    check_len("densify scores", g.len(), scores.len())?;
    if top_k > g.len() {
        return Err(Error::InvalidArgument(format!(
            "top_k {top_k} exceeds {} gaussians",
            g.len()
        )));
    }
    if top_k == 0 {
        return Ok(g.clone());
    }
    let mut order: Vec<usize> = (0..g.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut split = vec![false; g.len()];
    for &i in &order[..top_k] {
        split[i] = true;
    }
    let shrink = SPLIT_SCALE_FACTOR.ln();
    let mut out = GaussianSet::default();
    let mut rows = Vec::with_capacity(g.len() + top_k);
    for i in 0..g.len() {
        let p = g.get(i);
        if !split[i] {
            out.push(p);
            rows.push(i);
            continue;
        }
        let major = (0..3)
            .max_by(|&a, &b| p.raw_scale[a].total_cmp(&p.raw_scale[b]).then(b.cmp(&a)))
            .unwrap();
        let axis = g.rotation_matrix(i).column(major).into_owned();
        let offset = axis * (0.5 * p.raw_scale[major].exp());
        let scale = p.raw_scale.map(|s| s - shrink);
        for sign in [1.0, -1.0] {
            out.push(Gaussian {
                center: p.center + offset * sign,
                raw_scale: scale,
                ..p
            });
            rows.push(i);
        }
    }
    out.binding = g.binding.as_ref().map(|b| b.select(&rows));
    Ok(out)
}
