//! Skeletal body model: kinematic tree, shape-dependent joints and forward
//! kinematics.

mod synthetic;

pub use synthetic::{make_synthetic_body, proximity_weights, SyntheticConfig, PROXIMITY_EPS, PROXIMITY_POWER};

use nalgebra::UnitQuaternion;

use crate::error::{check_len, Error, Result};
use crate::math::{rigid, translation, Mat4, Vec3};
use crate::mesh::Mesh;
use crate::skinning::SkinningWeights;

/// Quaternion norm tolerance accepted by [`forward_kinematics`].
pub const UNIT_QUAT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub joint_rotations: Vec<UnitQuaternion<f64>>,
    pub root_translation: Vec3,
    /// Carried for round-tripping; drives no deformation.
    pub expression: Vec<f64>,
    /// Carried for round-tripping; drives no deformation.
    pub hand_pose: Vec<f64>,
}

impl Pose {
    pub fn identity(joints: usize, expression_dim: usize, hand_dim: usize) -> Self {
        Pose {
            joint_rotations: vec![UnitQuaternion::identity(); joints],
            root_translation: Vec3::zeros(),
            expression: vec![0.0; expression_dim],
            hand_pose: vec![0.0; hand_dim],
        }
    }

    pub fn from_axis_angle(axis_angle: &[[f64; 3]], root_translation: Vec3) -> Self {
        Pose {
            joint_rotations: axis_angle
                .iter()
                .map(|a| UnitQuaternion::from_scaled_axis(Vec3::from(*a)))
                .collect(),
            root_translation,
            expression: Vec::new(),
            hand_pose: Vec::new(),
        }
    }

    pub fn axis_angle(&self) -> Vec<[f64; 3]> {
        self.joint_rotations.iter().map(|q| q.scaled_axis().into()).collect()
    }

    pub fn validate(&self, joints: usize) -> Result<()> {
        check_len("pose joint count", joints, self.joint_rotations.len())?;
        for (index, q) in self.joint_rotations.iter().enumerate() {
            let norm = q.quaternion().norm();
            if !((norm - 1.0).abs() <= UNIT_QUAT_TOL) {
                return Err(Error::NonUnitQuaternion { index, norm });
            }
        }
        if !self.root_translation.iter().all(|v| v.is_finite()) {
            return Err(Error::Invariant("non-finite root translation".into()));
        }
        Ok(())
    }

    /// Same pose with `r` applied to joint `j` on top of its current rotation.
    pub fn with_joint(mut self, j: usize, r: UnitQuaternion<f64>) -> Self {
        self.joint_rotations[j] = r * self.joint_rotations[j];
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Shape {
    pub coefficients: Vec<f64>,
}

impl Shape {
    pub fn zeros(dim: usize) -> Self {
        Shape {
            coefficients: vec![0.0; dim],
        }
    }
}

/// Joint positions in the rest configuration, world frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Joints {
    pub positions: Vec<Vec3>,
}

/// Per-joint global transforms relative to the rest configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTransforms {
    pub globals: Vec<Mat4>,
}

impl JointTransforms {
    pub fn identity(joints: usize) -> Self {
        JointTransforms {
            globals: vec![Mat4::identity(); joints],
        }
    }

    pub fn len(&self) -> usize {
        self.globals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.globals.is_empty()
    }

    /// Left-multiplies every transform by `m`.
    pub fn premultiplied(&self, m: &Mat4) -> Self {
        JointTransforms {
            globals: self.globals.iter().map(|g| m * g).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    /// `None` for the root; otherwise a strictly smaller joint index.
    pub parents: Vec<Option<usize>>,
    /// Offset of each joint from its parent (root: from the origin), meters.
    pub rest_offsets: Vec<Vec3>,
    /// The A-pose all scans are normalized to.
    pub canonical_pose: Pose,
}

impl Skeleton {
    pub fn new(parents: Vec<Option<usize>>, rest_offsets: Vec<Vec3>, canonical_pose: Pose) -> Result<Self> {
        let s = Skeleton {
            parents,
            rest_offsets,
            canonical_pose,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn joint_count(&self) -> usize {
        self.parents.len()
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.parents.len();
        if j == 0 {
            return Err(Error::Invariant("skeleton has no joints".into()));
        }
        if self.parents[0].is_some() {
            return Err(Error::Invariant("joint 0 must be the root".into()));
        }
        for (i, p) in self.parents.iter().enumerate().skip(1) {
            match p {
                Some(p) if *p < i => {}
                _ => return Err(Error::Invariant(format!("joint {i} has invalid parent {p:?}"))),
            }
        }
        check_len("rest offsets", j, self.rest_offsets.len())?;
        self.canonical_pose.validate(j)
    }

    pub fn rest_joints(&self) -> Joints {
        let mut positions: Vec<Vec3> = Vec::with_capacity(self.parents.len());
        for (i, off) in self.rest_offsets.iter().enumerate() {
            let base = self.parents[i].map(|p| positions[p]).unwrap_or_else(Vec3::zeros);
            positions.push(base + off);
        }
        Joints { positions }
    }

    pub fn children(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        self.parents
            .iter()
            .enumerate()
            .filter(move |(_, p)| **p == Some(j))
            .map(|(i, _)| i)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BodyModel {
    pub skeleton: Skeleton,
    /// `shape_dim × J × 3`, row-major.
    pub regressor: Vec<f64>,
    pub shape_dim: usize,
    pub template: Mesh,
    pub weights: SkinningWeights,
    pub expression_dim: usize,
    pub hand_dim: usize,
}

impl BodyModel {
    pub fn joint_count(&self) -> usize {
        self.skeleton.joint_count()
    }

    pub fn validate(&self) -> Result<()> {
        self.skeleton.validate()?;
        let j = self.joint_count();
        check_len("regressor size", self.shape_dim * j * 3, self.regressor.len())?;
        check_len("weight rows", self.template.vertex_count(), self.weights.rows())?;
        if let Some(bad) = self.weights.max_joint().filter(|&m| m >= j) {
            return Err(Error::Invariant(format!("weight references joint {bad} >= {j}")));
        }
        self.weights.validate()
    }

    pub fn canonical_pose(&self) -> &Pose {
        &self.skeleton.canonical_pose
    }

    pub fn rest_pose(&self) -> Pose {
        Pose::identity(self.joint_count(), self.expression_dim, self.hand_dim)
    }

    pub fn regressor_column(&self, b: usize, j: usize) -> Vec3 {
        let o = (b * self.joint_count() + j) * 3;
        Vec3::new(self.regressor[o], self.regressor[o + 1], self.regressor[o + 2])
    }
}

/// Joint locations as an affine function of the shape coefficients.
pub fn regress_joints(model: &BodyModel, shape: &Shape) -> Result<Joints> {
    check_len("shape coefficients", model.shape_dim, shape.coefficients.len())?;
    let mut joints = model.skeleton.rest_joints();
    for (b, &beta) in shape.coefficients.iter().enumerate() {
        if beta == 0.0 {
            continue;
        }
        for (j, p) in joints.positions.iter_mut().enumerate() {
            *p += model.regressor_column(b, j) * beta;
        }
    }
    Ok(joints)
}

/// Global joint transforms under `pose`, relative to the rest configuration:
/// the identity pose maps to identity matrices.
pub fn forward_kinematics(skeleton: &Skeleton, joints: &Joints, pose: &Pose) -> Result<JointTransforms> {
    let n = skeleton.joint_count();
    pose.validate(n)?;
    check_len("joint positions", n, joints.positions.len())?;
    let mut absolute: Vec<Mat4> = Vec::with_capacity(n);
    for j in 0..n {
        let r = pose.joint_rotations[j].to_rotation_matrix();
        let a = match skeleton.parents[j] {
            None => rigid(r.matrix(), &(joints.positions[j] + pose.root_translation)),
            Some(p) => absolute[p] * rigid(r.matrix(), &(joints.positions[j] - joints.positions[p])),
        };
        absolute.push(a);
    }
    let globals = absolute
        .iter()
        .zip(&joints.positions)
        .map(|(a, jp)| a * translation(&(-jp)))
        .collect();
    Ok(JointTransforms { globals })
}

/// Forward kinematics of `pose` at the shape-regressed joints.
pub fn pose_transforms(model: &BodyModel, shape: &Shape, pose: &Pose) -> Result<JointTransforms> {
    let joints = regress_joints(model, shape)?;
    forward_kinematics(&model.skeleton, &joints, pose)
}
