//! Deterministic synthetic scenes shared by tests, benchmarks and the CLI.

use nalgebra::UnitQuaternion;

use crate::body_model::{make_synthetic_body, BodyModel, Pose, Shape, SyntheticConfig};
use crate::error::Result;
use crate::gaussian::{animate, AvatarState, Gaussian, GaussianSet, Stage};
use crate::math::Vec3;
use crate::mesh::Mesh;
use crate::nnet::{NetConfig, NetworkParams, ShareMode};
use crate::refine::{pose_target_body, RefineInput};
use crate::render::{four_view_rig, Image, ImageBuf};
use crate::template::{build_template, TemplateConfig};

/// Left elbow in the synthetic skeleton.
pub const LEFT_ELBOW: usize = 18;

#[derive(Debug, Clone)]
pub struct AvatarFixture {
    pub model: BodyModel,
    pub shape: Shape,
    /// Body surface in the canonical A-pose, with UVs.
    pub canonical_mesh: Mesh,
    pub texture: Image,
    /// Template built with untrained (zero-head) parameters.
    pub canonical: GaussianSet,
}

/// Procedural UV texture: red follows `u`, green follows `v`, blue is a checker.
pub fn procedural_texture(size: usize) -> Image {
    let mut img = ImageBuf::new(size, size, 3);
    for y in 0..size {
        for x in 0..size {
            let u = (x as f32 + 0.5) / size as f32;
            let v = 1.0 - (y as f32 + 0.5) / size as f32;
            let checker = if (x * 8 / size + y * 8 / size) % 2 == 0 {
                0.85
            } else {
                0.15
            };
            img.set(x, y, 0, 0.2 + 0.6 * u);
            img.set(x, y, 1, 0.2 + 0.6 * v);
            img.set(x, y, 2, checker);
        }
    }
    img
}

pub fn avatar_fixture(seed: u64, uv_resolution: usize) -> Result<AvatarFixture> {
    let (model, _) = make_synthetic_body(seed, &SyntheticConfig::default());
    let shape = Shape::zeros(model.shape_dim);
    let canonical_mesh = pose_target_body(&model, &shape, model.canonical_pose())?;
    let texture = procedural_texture(64);
    let params = NetworkParams::<f32>::new(NetConfig::default(), ShareMode::Shared);
    let cfg = TemplateConfig {
        uv_resolution,
        ..TemplateConfig::default()
    };
    let canonical = build_template(&canonical_mesh, &texture, &model, &shape, &params, &cfg)?;
    Ok(AvatarFixture {
        model,
        shape,
        canonical_mesh,
        texture,
        canonical,
    })
}

/// A non-trivial target pose: bent left elbow, raised right shoulder, turned root.
pub fn demo_pose(model: &BodyModel) -> Pose {
    model
        .canonical_pose()
        .clone()
        .with_joint(LEFT_ELBOW, UnitQuaternion::from_scaled_axis(Vec3::new(0.0, 0.9, 0.0)))
        .with_joint(17, UnitQuaternion::from_scaled_axis(Vec3::new(0.0, 0.0, 0.4)))
        .with_joint(0, UnitQuaternion::from_scaled_axis(Vec3::new(0.05, 0.3, 0.0)))
}

/// Centroid and bounding radius of a point set.
pub fn bounds(points: &[Vec3]) -> (Vec3, f64) {
    let n = points.len().max(1) as f64;
    let c = points.iter().fold(Vec3::zeros(), |a, p| a + p) / n;
    let r = points.iter().map(|p| (p - c).norm()).fold(0.0, f64::max);
    (c, r)
}

/// Animates the fixture to `pose` and packages it for refinement with a rig
/// framing the posed body.
pub fn refine_input(fixture: &AvatarFixture, pose: &Pose, resolution: usize) -> Result<RefineInput> {
    let coarse = animate(&fixture.canonical, &fixture.model, &fixture.shape, pose, false)?;
    let target_body = pose_target_body(&fixture.model, &fixture.shape, pose)?;
    let (c, r) = bounds(&target_body.vertices);
    let rig = four_view_rig(r * 1.1, resolution, c)?;
    Ok(RefineInput {
        coarse: AvatarState {
            gaussians: coarse,
            pose: pose.clone(),
            shape: fixture.shape.clone(),
            stage: Stage::CoarseTarget,
        },
        target_body,
        target_pose: pose.clone(),
        rig,
    })
}

/// Indices of Gaussians whose strongest skinning weight belongs to `joint`.
pub fn dominated_by(g: &GaussianSet, joint: u32) -> Vec<usize> {
    let Some(b) = &g.binding else { return Vec::new() };
    (0..g.len())
        .filter(|&i| {
            b.row(i)
                .max_by(|a, c| a.1.total_cmp(&c.1).then(c.0.cmp(&a.0)))
                .is_some_and(|(j, _)| j == joint)
        })
        .collect()
}

/// `n` small opaque Gaussians scattered within 1 cm of random template
/// vertices of `model`, unbound. Deterministic in `seed`.
pub fn scattered_gaussians(model: &BodyModel, n: usize, seed: u64) -> GaussianSet {
    use rand::{Rng, SeedableRng};

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let template = &model.template.vertices;
    GaussianSet::from_gaussians((0..n).map(|_| {
        let v = template[rng.gen_range(0..template.len())];
        let jitter = Vec3::new(
            rng.gen_range(-0.01..0.01),
            rng.gen_range(-0.01..0.01),
            rng.gen_range(-0.01..0.01),
        );
        Gaussian {
            center: v + jitter,
            raw_opacity: 1.0,
            raw_scale: [-5.0; 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            color: [0.5; 3],
        }
    }))
}
