//! Linear blend skinning and the re-posing transforms built from it.

mod dqs;

pub use dqs::dqs_deform;

use rayon::prelude::*;

use crate::body_model::{BodyModel, JointTransforms};
use crate::error::{check_len, Error, Result};
use crate::math::{rigid_inverse, transform_point, Mat4, Vec3};
use crate::mesh::Mesh;
use crate::spatial::UniformGrid;

/// Maximum number of joints influencing one vertex.
pub const K_MAX: usize = 8;
/// Default neighbour count for [`bind_scan_to_model`].
pub const DEFAULT_BIND_K: usize = 4;
/// Regularizer in the inverse-distance binding weights `1 / (d + ε)`.
pub const BIND_EPS: f64 = 1e-8;
/// Scan vertices farther than this from the template are reported (meters).
pub const FAR_VERTEX_DISTANCE: f64 = 0.10;

/// Sparse per-vertex joint weights stored row-compressed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SkinningWeights {
    offsets: Vec<u32>,
    joints: Vec<u32>,
    values: Vec<f64>,
}

/// Sorts by weight, keeps the `K_MAX` largest, renormalizes, and returns the
/// row ordered by joint index.
pub fn normalize_row(mut row: Vec<(u32, f64)>) -> Vec<(u32, f64)> {
    row.retain(|&(_, w)| w > 0.0 && w.is_finite());
    row.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    row.truncate(K_MAX);
    let sum: f64 = row.iter().map(|r| r.1).sum();
    for r in &mut row {
        r.1 /= sum;
    }
    row.sort_by_key(|r| r.0);
    row
}

impl SkinningWeights {
    /// Builds weights from rows that must already satisfy the invariants.
    pub fn from_rows(rows: Vec<Vec<(u32, f64)>>) -> Result<Self> {
        let mut w = SkinningWeights {
            offsets: Vec::with_capacity(rows.len() + 1),
            joints: Vec::new(),
            values: Vec::new(),
        };
        w.offsets.push(0);
        for row in rows {
            for (j, v) in row {
                w.joints.push(j);
                w.values.push(v);
            }
            w.offsets.push(w.joints.len() as u32);
        }
        w.validate()?;
        Ok(w)
    }

    /// Sparsifies a dense row-major `V × J` matrix, truncating to `K_MAX`.
    pub fn from_dense(dense: &[f64], joints: usize) -> Result<Self> {
        if joints == 0 || dense.len() % joints != 0 {
            return Err(Error::InvalidArgument(format!(
                "dense weight buffer of {} values is not a multiple of {joints} joints",
                dense.len()
            )));
        }
        if dense.iter().any(|w| !(0.0..=1.0 + 1e-6).contains(w)) {
            return Err(Error::Invariant("dense weight outside [0, 1]".into()));
        }
        let rows = dense
            .chunks(joints)
            .map(|c| normalize_row(c.iter().enumerate().map(|(j, &w)| (j as u32, w)).collect()))
            .collect();
        Self::from_rows(rows)
    }

    pub fn to_dense(&self, joints: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.rows() * joints];
        for r in 0..self.rows() {
            for (j, w) in self.row(r) {
                out[r * joints + j as usize] = w;
            }
        }
        out
    }

    pub fn rows(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (u32, f64)> + '_ {
        let (a, b) = (self.offsets[r] as usize, self.offsets[r + 1] as usize);
        self.joints[a..b].iter().copied().zip(self.values[a..b].iter().copied())
    }

    pub fn row_vec(&self, r: usize) -> Vec<(u32, f64)> {
        self.row(r).collect()
    }

    pub fn max_joint(&self) -> Option<usize> {
        self.joints.iter().max().map(|&j| j as usize)
    }

    /// Rows picked by index, in the given order (duplicates allowed).
    pub fn select(&self, indices: &[usize]) -> SkinningWeights {
        let mut w = SkinningWeights {
            offsets: vec![0],
            joints: Vec::new(),
            values: Vec::new(),
        };
        for &i in indices {
            for (j, v) in self.row(i) {
                w.joints.push(j);
                w.values.push(v);
            }
            w.offsets.push(w.joints.len() as u32);
        }
        w
    }

    pub fn validate(&self) -> Result<()> {
        for r in 0..self.rows() {
            let row = self.row_vec(r);
            if row.is_empty() || row.len() > K_MAX {
                return Err(Error::Invariant(format!("weight row {r} has {} entries", row.len())));
            }
            if row.iter().any(|(_, w)| !(0.0..=1.0 + 1e-12).contains(w)) {
                return Err(Error::Invariant(format!("weight row {r} has an entry outside [0, 1]")));
            }
            let s: f64 = row.iter().map(|(_, w)| w).sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(Error::Invariant(format!("weight row {r} sums to {s}")));
            }
        }
        Ok(())
    }

    fn check_joints(&self, joints: usize) -> Result<()> {
        match self.max_joint() {
            Some(m) if m >= joints => Err(Error::DimensionMismatch {
                what: "joint transforms",
                expected: m + 1,
                got: joints,
            }),
            _ => Ok(()),
        }
    }

    /// `Σ_j w_j M_j` for row `r`.
    #[inline]
    pub fn blend(&self, r: usize, per_joint: &[Mat4]) -> Mat4 {
        let mut m = Mat4::zeros();
        for (j, w) in self.row(r) {
            m += per_joint[j as usize] * w;
        }
        m
    }
}

/// Per-vertex 4×4 transforms.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexTransforms {
    pub transforms: Vec<Mat4>,
}

/// Deforms rest-pose vertices: `v' = Σ_j w_j G_j v`.
pub fn lbs_deform(mesh: &Mesh, weights: &SkinningWeights, g: &JointTransforms) -> Result<Mesh> {
    check_len("weight rows", mesh.vertex_count(), weights.rows())?;
    weights.check_joints(g.len())?;
    let vertices = mesh
        .vertices
        .par_iter()
        .enumerate()
        .map(|(i, v)| transform_point(&weights.blend(i, &g.globals), v))
        .collect();
    Ok(mesh.with_vertices(vertices))
}

/// Per-joint `G_target · G_source⁻¹`. Joints whose transforms are bitwise equal
/// get the exact identity.
pub fn relative_joint_transforms(g_target: &JointTransforms, g_source: &JointTransforms) -> Result<Vec<Mat4>> {
    check_len("source joint transforms", g_target.len(), g_source.len())?;
    g_target
        .globals
        .iter()
        .zip(&g_source.globals)
        .enumerate()
        .map(|(index, (t, s))| {
            let inv = rigid_inverse(s).ok_or(Error::NonRigidTransform { index })?;
            Ok(if t == s { Mat4::identity() } else { t * inv })
        })
        .collect()
}

/// Blends `G_target · G_source⁻¹` per vertex with the skinning weights.
pub fn compose_repose_transform(
    weights: &SkinningWeights,
    g_target: &JointTransforms,
    g_source: &JointTransforms,
) -> Result<VertexTransforms> {
    weights.check_joints(g_target.len())?;
    let rel = relative_joint_transforms(g_target, g_source)?;
    let transforms = (0..weights.rows())
        .into_par_iter()
        .map(|i| weights.blend(i, &rel))
        .collect();
    Ok(VertexTransforms { transforms })
}

/// Applies one homogeneous transform per vertex.
pub fn apply_vertex_transforms(mesh: &Mesh, t: &VertexTransforms) -> Result<Mesh> {
    check_len("vertex transforms", mesh.vertex_count(), t.transforms.len())?;
    let vertices = apply_to_points(&mesh.vertices, t)?;
    Ok(mesh.with_vertices(vertices))
}

pub fn apply_to_points(points: &[Vec3], t: &VertexTransforms) -> Result<Vec<Vec3>> {
    check_len("vertex transforms", points.len(), t.transforms.len())?;
    Ok(points
        .par_iter()
        .zip(&t.transforms)
        .map(|(p, m)| transform_point(m, p))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BindDiagnostics {
    /// `(scan vertex, distance to nearest template vertex)` beyond [`FAR_VERTEX_DISTANCE`].
    pub far_vertices: Vec<(usize, f64)>,
    pub max_distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Binding {
    pub weights: SkinningWeights,
    pub diagnostics: BindDiagnostics,
}

/// Transfers template skinning weights onto arbitrary points.
///
/// Each point averages the weight rows of its `k` nearest template vertices
/// with weights `1 / (d + ε)`; if some neighbours coincide with the point
/// (`d = 0`) only those are averaged. The result is truncated to `K_MAX` and
/// renormalized.
pub fn bind_scan_to_model(scan_points: &[Vec3], model: &BodyModel, posed_template: &Mesh, k: usize) -> Result<Binding> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if posed_template.vertices.is_empty() {
        return Err(Error::InvalidArgument("empty template".into()));
    }
    check_len(
        "template weight rows",
        posed_template.vertex_count(),
        model.weights.rows(),
    )?;
    let grid = UniformGrid::new(&posed_template.vertices);
    let results: Vec<(Vec<(u32, f64)>, f64)> = scan_points
        .par_iter()
        .map(|p| {
            let nn = grid.knn(p, k);
            let exact = nn.iter().take_while(|n| n.1 == 0.0).count();
            let mut acc: Vec<(u32, f64)> = Vec::with_capacity(K_MAX * k);
            let mut push = |idx: usize, w: f64| {
                for (j, v) in model.weights.row(idx) {
                    match acc.iter_mut().find(|e| e.0 == j) {
                        Some(e) => e.1 += w * v,
                        None => acc.push((j, w * v)),
                    }
                }
            };
            if exact > 0 {
                for n in &nn[..exact] {
                    push(n.0, 1.0);
                }
            } else {
                for n in &nn {
                    push(n.0, 1.0 / (n.1 + BIND_EPS));
                }
            }
            (normalize_row(acc), nn[0].1)
        })
        .collect();

    let mut diagnostics = BindDiagnostics::default();
    let mut rows = Vec::with_capacity(results.len());
    for (i, (row, d)) in results.into_iter().enumerate() {
        if d > FAR_VERTEX_DISTANCE {
            diagnostics.far_vertices.push((i, d));
        }
        diagnostics.max_distance = diagnostics.max_distance.max(d);
        rows.push(row);
    }
    Ok(Binding {
        weights: SkinningWeights::from_rows(rows)?,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body_model::{make_synthetic_body, Pose, Skeleton, SyntheticConfig};
    use crate::math::{rigid, translation};
    use nalgebra::UnitQuaternion;

    fn quad() -> Mesh {
        Mesh::new(
            vec![Vec3::zeros(), Vec3::x(), Vec3::new(1.0, 1.0, 0.0), Vec3::y()],
            vec![[0, 1, 2], [0, 2, 3]],
            None,
        )
        .unwrap()
    }

    fn single(n: usize) -> SkinningWeights {
        SkinningWeights::from_rows(vec![vec![(0, 1.0)]; n]).unwrap()
    }

    #[test]
    fn identity_transforms_leave_mesh() {
        let m = quad();
        let out = lbs_deform(&m, &single(4), &JointTransforms::identity(1)).unwrap();
        assert_eq!(out.vertices, m.vertices);
    }

    #[test]
    fn pure_translation_shifts() {
        let t = Vec3::new(0.1, -0.2, 0.3);
        let out = lbs_deform(
            &quad(),
            &single(4),
            &JointTransforms {
                globals: vec![translation(&t)],
            },
        )
        .unwrap();
        for (a, b) in out.vertices.iter().zip(&quad().vertices) {
            assert!((a - (b + t)).norm() < 1e-15);
        }
    }

    #[test]
    fn half_half_blend_averages_translations() {
        let (t1, t2) = (Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 2.0, 0.0));
        let w = SkinningWeights::from_rows(vec![vec![(0, 0.5), (1, 0.5)]; 4]).unwrap();
        let g = JointTransforms {
            globals: vec![translation(&t1), translation(&t2)],
        };
        let out = lbs_deform(&quad(), &w, &g).unwrap();
        for (a, b) in out.vertices.iter().zip(&quad().vertices) {
            assert!((a - (b + (t1 + t2) / 2.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn row_count_mismatch() {
        assert!(lbs_deform(&quad(), &single(3), &JointTransforms::identity(1)).is_err());
    }

    #[test]
    fn same_pose_compose_is_identity() {
        let (m, _) = make_synthetic_body(1, &SyntheticConfig::default());
        let g =
            crate::body_model::pose_transforms(&m, &crate::body_model::Shape::zeros(m.shape_dim), m.canonical_pose())
                .unwrap();
        let t = compose_repose_transform(&m.weights, &g, &g).unwrap();
        for x in &t.transforms {
            assert!((x - Mat4::identity()).abs().max() <= 1e-12);
        }
    }

    #[test]
    fn single_joint_inverse_rotation() {
        let r = UnitQuaternion::from_scaled_axis(Vec3::new(0.3, 0.4, -0.5));
        let src = JointTransforms {
            globals: vec![rigid(r.to_rotation_matrix().matrix(), &Vec3::zeros())],
        };
        let t = compose_repose_transform(&single(2), &JointTransforms::identity(1), &src).unwrap();
        let inv = rigid(r.inverse().to_rotation_matrix().matrix(), &Vec3::zeros());
        for x in &t.transforms {
            assert!((x - inv).abs().max() < 1e-12);
        }
    }

    #[test]
    fn two_joint_hand_blend() {
        // joint 0: target translate (1,0,0), source identity;
        // joint 1: target identity, source rotation 90° about z
        let rz = rigid(
            UnitQuaternion::from_axis_angle(&Vec3::z_axis(), std::f64::consts::FRAC_PI_2)
                .to_rotation_matrix()
                .matrix(),
            &Vec3::zeros(),
        );
        let target = JointTransforms {
            globals: vec![translation(&Vec3::x()), Mat4::identity()],
        };
        let source = JointTransforms {
            globals: vec![Mat4::identity(), rz],
        };
        let w = SkinningWeights::from_rows(vec![vec![(0, 0.5), (1, 0.5)]]).unwrap();
        let t = compose_repose_transform(&w, &target, &source).unwrap();
        #[rustfmt::skip]
        let expect = Mat4::new(
            0.5, 0.5, 0.0, 0.5,
            -0.5, 0.5, 0.0, 0.0,
            0.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 1.0,
        );
        assert!((t.transforms[0] - expect).abs().max() < 1e-12);
    }

    #[test]
    fn singular_source_rejected() {
        let mut bad = Mat4::identity();
        bad[(1, 1)] = 0.0;
        let r = compose_repose_transform(
            &single(1),
            &JointTransforms::identity(1),
            &JointTransforms { globals: vec![bad] },
        );
        assert!(matches!(r, Err(Error::NonRigidTransform { index: 0 })));
    }

    #[test]
    fn rigid_transforms_preserve_distances() {
        let m = quad();
        let r = rigid(
            UnitQuaternion::from_scaled_axis(Vec3::new(0.2, 1.0, 0.1))
                .to_rotation_matrix()
                .matrix(),
            &Vec3::new(3.0, 0.0, -1.0),
        );
        let out = apply_vertex_transforms(&m, &VertexTransforms { transforms: vec![r; 4] }).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let a = (m.vertices[i] - m.vertices[j]).norm();
                let b = (out.vertices[i] - out.vertices[j]).norm();
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn single_joint_roundtrip() {
        let s = Skeleton::new(vec![None], vec![Vec3::new(0.0, 1.0, 0.0)], Pose::identity(1, 0, 0)).unwrap();
        let joints = s.rest_joints();
        let p_src = Pose::from_axis_angle(&[[0.4, -0.3, 1.1]], Vec3::new(0.2, 0.0, 0.1));
        let p_c = Pose::identity(1, 0, 0);
        let gs = crate::body_model::forward_kinematics(&s, &joints, &p_src).unwrap();
        let gc = crate::body_model::forward_kinematics(&s, &joints, &p_c).unwrap();
        let w = single(4);
        let fwd = compose_repose_transform(&w, &gc, &gs).unwrap();
        let bwd = compose_repose_transform(&w, &gs, &gc).unwrap();
        let back = apply_vertex_transforms(&apply_vertex_transforms(&quad(), &fwd).unwrap(), &bwd).unwrap();
        for (a, b) in back.vertices.iter().zip(&quad().vertices) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    fn bind_fixture() -> (BodyModel, Mesh) {
        let (mut m, _) = make_synthetic_body(0, &SyntheticConfig::default());
        // two template vertices with rows e0 and e1
        m.template = Mesh::new(vec![Vec3::new(-1.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0)], vec![], None).unwrap();
        m.weights = SkinningWeights::from_rows(vec![vec![(0, 1.0)], vec![(1, 1.0)]]).unwrap();
        let t = m.template.clone();
        (m, t)
    }

    #[test]
    fn equidistant_neighbours_split_evenly() {
        let (m, t) = bind_fixture();
        let b = bind_scan_to_model(&[Vec3::new(0.0, 0.3, 0.0)], &m, &t, 2).unwrap();
        assert_eq!(b.weights.row_vec(0), vec![(0, 0.5), (1, 0.5)]);
    }

    #[test]
    fn coincident_vertex_copies_row() {
        let (m, t) = bind_fixture();
        let b = bind_scan_to_model(&[Vec3::new(1.0, 0.0, 0.0)], &m, &t, 2).unwrap();
        assert_eq!(b.weights.row_vec(0), vec![(1, 1.0)]);
    }

    #[test]
    fn k1_copies_nearest() {
        let (m, t) = bind_fixture();
        let b = bind_scan_to_model(&[Vec3::new(0.4, 0.2, 0.0)], &m, &t, 1).unwrap();
        assert_eq!(b.weights.row_vec(0), vec![(1, 1.0)]);
    }

    #[test]
    fn far_vertices_reported_but_bound() {
        let (m, t) = bind_fixture();
        let b = bind_scan_to_model(&[Vec3::new(0.0, 5.0, 0.0), Vec3::new(1.0, 0.0, 0.0)], &m, &t, 2).unwrap();
        assert_eq!(b.weights.rows(), 2);
        assert_eq!(b.diagnostics.far_vertices.len(), 1);
        assert_eq!(b.diagnostics.far_vertices[0].0, 0);
    }

    #[test]
    fn empty_template_rejected() {
        let (mut m, _) = bind_fixture();
        m.weights = SkinningWeights::default();
        assert!(bind_scan_to_model(&[Vec3::zeros()], &m, &Mesh::empty(), 4).is_err());
    }

    #[test]
    fn truncation_keeps_k_max() {
        let row: Vec<(u32, f64)> = (0..12).map(|j| (j, 1.0 + j as f64)).collect();
        let r = normalize_row(row);
        assert_eq!(r.len(), K_MAX);
        assert_eq!(r[0].0, 4);
        assert!((r.iter().map(|e| e.1).sum::<f64>() - 1.0).abs() < 1e-15);
    }
}
