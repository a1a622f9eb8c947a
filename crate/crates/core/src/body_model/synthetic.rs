//! Procedural capsule-limb humanoid used as a test and demo fixture.

use std::f64::consts::{FRAC_PI_4, PI};

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{BodyModel, Pose, Skeleton};
use crate::math::Vec3;
use crate::mesh::Mesh;
use crate::skinning::SkinningWeights;

/// Exponent of the inverse-distance proximity rule `w_j ∝ 1 / (d_j^p + ε)`.
pub const PROXIMITY_POWER: i32 = 4;
pub const PROXIMITY_EPS: f64 = 1e-8;

const JOINTS: usize = 24;
const EXPRESSION_DIM: usize = 20;
const HAND_DIM: usize = 20;

#[rustfmt::skip]
const PARENTS: [i32; JOINTS] = [
    -1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21,
];

#[rustfmt::skip]
const OFFSETS: [[f64; 3]; JOINTS] = [
    [0.0, 0.95, 0.0],   // pelvis
    [0.09, -0.08, 0.0], // l_hip
    [-0.09, -0.08, 0.0],
    [0.0, 0.12, 0.0],   // spine1
    [0.0, -0.40, 0.0],  // l_knee
    [0.0, -0.40, 0.0],
    [0.0, 0.13, 0.0],   // spine2
    [0.0, -0.40, 0.0],  // l_ankle
    [0.0, -0.40, 0.0],
    [0.0, 0.05, 0.0],   // spine3
    [0.0, -0.05, 0.12], // l_foot
    [0.0, -0.05, 0.12],
    [0.0, 0.22, 0.0],   // neck
    [0.07, 0.15, 0.0],  // l_collar
    [-0.07, 0.15, 0.0],
    [0.0, 0.10, 0.0],   // head
    [0.10, 0.02, 0.0],  // l_shoulder
    [-0.10, 0.02, 0.0],
    [0.26, 0.0, 0.0],   // l_elbow
    [-0.26, 0.0, 0.0],
    [0.25, 0.0, 0.0],   // l_wrist
    [-0.25, 0.0, 0.0],
    [0.08, 0.0, 0.0],   // l_hand
    [-0.08, 0.0, 0.0],
];

/// Radius of the capsule ending at each joint (the bone parent→joint).
#[rustfmt::skip]
const BONE_RADIUS: [f64; JOINTS] = [
    0.0, 0.08, 0.08, 0.11, 0.065, 0.065, 0.12, 0.05, 0.05, 0.12, 0.04, 0.04,
    0.06, 0.05, 0.05, 0.05, 0.05, 0.05, 0.045, 0.045, 0.035, 0.035, 0.03, 0.03,
];

/// Leaf joints that additionally get an end sphere.
const LEAF_SPHERES: [(usize, f64); 5] = [(15, 0.10), (10, 0.045), (11, 0.045), (22, 0.04), (23, 0.04)];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    /// Tessellation level; 8·resolution segments around each capsule.
    pub resolution: usize,
    /// Bind each capsule rigidly to one joint instead of proximity weights.
    pub one_hot: bool,
    pub shape_dim: usize,
    /// Random jitter applied to bone lengths, as a fraction.
    pub length_jitter: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            resolution: 1,
            one_hot: false,
            shape_dim: 10,
            length_jitter: 0.03,
        }
    }
}

/// Proximity skinning row for a point given rest joint centers:
/// `w_j ∝ 1 / (|x - J_j|^4 + 1e-8)`, truncated to the largest `K_MAX` and renormalized.
pub fn proximity_weights(point: &Vec3, joints: &[Vec3]) -> Vec<(u32, f64)> {
    let row: Vec<(u32, f64)> = joints
        .iter()
        .enumerate()
        .map(|(j, c)| {
            (
                j as u32,
                1.0 / ((point - c).norm().powi(PROXIMITY_POWER) + PROXIMITY_EPS),
            )
        })
        .collect();
    crate::skinning::normalize_row(row)
}

/// Canonical A-pose: arms lowered 45° from the T-pose rest configuration.
fn a_pose() -> Pose {
    let mut pose = Pose::identity(JOINTS, EXPRESSION_DIM, HAND_DIM);
    pose.joint_rotations[16] = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), -FRAC_PI_4);
    pose.joint_rotations[17] = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), FRAC_PI_4);
    pose
}

/// Builds the model and its rest-pose surface mesh. Deterministic in `seed`.
///
/// One capsule per bone (parent → child, bound to the parent joint) plus
/// spheres on the head, hands and feet. Every capsule owns one UV atlas cell.
pub fn make_synthetic_body(seed: u64, config: &SyntheticConfig) -> (BodyModel, Mesh) {
    let resolution = config.resolution.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 + rng.gen_range(-0.05..0.05);
    let offsets: Vec<Vec3> = OFFSETS
        .iter()
        .enumerate()
        .map(|(j, o)| {
            let jitter = if j == 0 {
                1.0
            } else {
                1.0 + rng.gen_range(-config.length_jitter..=config.length_jitter)
            };
            Vec3::from(*o) * scale * jitter
        })
        .collect();
    let parents: Vec<Option<usize>> = PARENTS.iter().map(|&p| (p >= 0).then_some(p as usize)).collect();
    let skeleton = Skeleton::new(parents, offsets, a_pose()).expect("static skeleton is valid");
    let rest = skeleton.rest_joints();

    // Shape coefficient 0 scales the body about the pelvis; the rest are small random deltas.
    let mut regressor = Vec::with_capacity(config.shape_dim * JOINTS * 3);
    for b in 0..config.shape_dim {
        for p in &rest.positions {
            let col = if b == 0 {
                (p - rest.positions[0]) * 0.05
            } else {
                Vec3::new(
                    rng.gen_range(-0.01..0.01),
                    rng.gen_range(-0.01..0.01),
                    rng.gen_range(-0.01..0.01),
                )
            };
            regressor.extend_from_slice(col.as_slice());
        }
    }

    let mut parts: Vec<(Vec3, Vec3, f64, usize)> = Vec::new();
    for j in 1..JOINTS {
        let p = skeleton.parents[j].unwrap();
        parts.push((rest.positions[p], rest.positions[j], BONE_RADIUS[j], p));
    }
    for &(j, r) in &LEAF_SPHERES {
        let c = rest.positions[j];
        parts.push((c, c, r, j));
    }

    let cells = (parts.len() as f64).sqrt().ceil() as usize;
    let mut builder = MeshBuilder::default();
    for (k, &(a, b, r, owner)) in parts.iter().enumerate() {
        let cell = [(k % cells) as f64 / cells as f64, (k / cells) as f64 / cells as f64];
        builder.capsule(a, b, r, resolution, cell, 1.0 / cells as f64, owner);
    }

    let weights = if config.one_hot {
        SkinningWeights::from_rows(builder.owner.iter().map(|&j| vec![(j as u32, 1.0)]).collect())
    } else {
        SkinningWeights::from_rows(
            builder
                .vertices
                .iter()
                .map(|v| proximity_weights(v, &rest.positions))
                .collect(),
        )
    }
    .expect("synthetic weights are valid");

    let mesh = Mesh::new(builder.vertices, builder.faces, Some(builder.uv)).expect("synthetic mesh is valid");
    let model = BodyModel {
        skeleton,
        regressor,
        shape_dim: config.shape_dim,
        template: mesh.clone(),
        weights,
        expression_dim: EXPRESSION_DIM,
        hand_dim: HAND_DIM,
    };
    (model, mesh)
}

#[derive(Default)]
struct MeshBuilder {
    vertices: Vec<Vec3>,
    faces: Vec<[u32; 3]>,
    uv: Vec<[f64; 2]>,
    owner: Vec<usize>,
}

impl MeshBuilder {
    /// Closed capsule from `a` to `b` (a sphere when they coincide). The seam
    /// column is duplicated so UVs stay continuous inside the cell.
    #[allow(clippy::too_many_arguments)]
    fn capsule(&mut self, a: Vec3, b: Vec3, radius: f64, res: usize, cell: [f64; 2], cell_size: f64, owner: usize) {
        let axis_vec = b - a;
        let len = axis_vec.norm();
        let axis = if len > 1e-12 { axis_vec / len } else { Vec3::y() };
        let helper = if axis.x.abs() < 0.9 { Vec3::x() } else { Vec3::z() };
        let e1 = axis.cross(&helper).normalize();
        let e2 = axis.cross(&e1);

        let cap_rings = 2 * res;
        let body_rings = if len > 1e-12 { 2 * res } else { 0 };
        let segments = 8 * res;
        // (axial position, ring radius) from pole a to pole b
        let mut profile: Vec<(f64, f64)> = Vec::new();
        for i in 0..=cap_rings {
            let t = -PI / 2.0 + (i as f64 / cap_rings as f64) * (PI / 2.0);
            profile.push((radius * t.sin(), radius * t.cos()));
        }
        for i in 1..body_rings {
            profile.push((len * i as f64 / body_rings as f64, radius));
        }
        for i in 0..=cap_rings {
            let t = (i as f64 / cap_rings as f64) * (PI / 2.0);
            profile.push((len + radius * t.sin(), radius * t.cos()));
        }
        if len <= 1e-12 {
            // the equator ring would be emitted twice for a sphere
            profile.remove(cap_rings + 1);
        }

        let margin = 0.04 * cell_size;
        let span = cell_size - 2.0 * margin;
        let rings = profile.len();
        let v_of = |i: usize| cell[1] + margin + span * i as f64 / (rings - 1) as f64;
        let u_mid = cell[0] + 0.5 * cell_size;

        // poles are single vertices; interior rings duplicate the seam column
        let pole_a = self.push_vertex(a + axis * profile[0].0, [u_mid, v_of(0)], owner);
        let ring_base = self.vertices.len() as u32;
        for (i, &(z, rho)) in profile.iter().enumerate().take(rings - 1).skip(1) {
            for s in 0..=segments {
                let phi = 2.0 * PI * s as f64 / segments as f64;
                let p = a + axis * z + (e1 * phi.cos() + e2 * phi.sin()) * rho;
                self.push_vertex(
                    p,
                    [cell[0] + margin + span * s as f64 / segments as f64, v_of(i)],
                    owner,
                );
            }
        }
        let pole_b = self.push_vertex(a + axis * profile[rings - 1].0, [u_mid, v_of(rings - 1)], owner);

        let stride = (segments + 1) as u32;
        let ring = |i: usize, s: u32| ring_base + (i as u32 - 1) * stride + s;
        for s in 0..segments as u32 {
            // outward orientation: (around × along) points away from the axis
            self.faces.push([pole_a, ring(1, s + 1), ring(1, s)]);
            self.faces.push([pole_b, ring(rings - 2, s), ring(rings - 2, s + 1)]);
        }
        for i in 1..rings - 2 {
            for s in 0..segments as u32 {
                let (v00, v01, v10, v11) = (ring(i, s), ring(i, s + 1), ring(i + 1, s), ring(i + 1, s + 1));
                self.faces.push([v00, v11, v10]);
                self.faces.push([v00, v01, v11]);
            }
        }
    }

    fn push_vertex(&mut self, p: Vec3, uv: [f64; 2], owner: usize) -> u32 {
        self.vertices.push(p);
        self.uv.push(uv);
        self.owner.push(owner);
        self.vertices.len() as u32 - 1
    }
}
