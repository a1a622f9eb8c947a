use nalgebra::UnitQuaternion;
use rayon::prelude::*;

use super::SkinningWeights;
use crate::body_model::JointTransforms;
use crate::error::{check_len, Error, Result};
use crate::math::{quat_mul, rotation_part, translation_part, Mat3, Vec3};
use crate::mesh::Mesh;

/// Unit dual quaternion `(real, dual)`, both stored as `[w, x, y, z]`.
#[derive(Debug, Clone, Copy)]
struct DualQuat {
    real: [f64; 4],
    dual: [f64; 4],
}

impl DualQuat {
    fn from_rigid(m: &nalgebra::Matrix4<f64>) -> Self {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(rotation_part(m));
        let q = UnitQuaternion::from_rotation_matrix(&rot);
        let real = [q.w, q.i, q.j, q.k];
        let t = translation_part(m);
        let d = quat_mul([0.0, t.x, t.y, t.z], real);
        DualQuat {
            real,
            dual: d.map(|v| 0.5 * v),
        }
    }

    fn transform(&self, p: &Vec3) -> Vec3 {
        let [w, x, y, z] = self.real;
        let r = Mat3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        );
        let conj = [w, -x, -y, -z];
        let t = quat_mul(self.dual, conj);
        r * p + Vec3::new(2.0 * t[1], 2.0 * t[2], 2.0 * t[3])
    }
}

fn dot(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Dual-quaternion skinning with hemisphere alignment to the dominant joint.
pub fn dqs_deform(mesh: &Mesh, weights: &SkinningWeights, g: &JointTransforms) -> Result<Mesh> {
    check_len("weight rows", mesh.vertex_count(), weights.rows())?;
    weights.check_joints(g.len())?;
    let dqs: Vec<DualQuat> = g.globals.iter().map(DualQuat::from_rigid).collect();
    let vertices: Result<Vec<Vec3>> = mesh
        .vertices
        .par_iter()
        .enumerate()
        .map(|(i, v)| {
            let row = weights.row_vec(i);
            let pivot = row
                .iter()
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
                .map(|r| dqs[r.0 as usize].real)
                .unwrap_or([1.0, 0.0, 0.0, 0.0]);
            let mut real = [0.0; 4];
            let mut dual = [0.0; 4];
            for (j, w) in row {
                let d = dqs[j as usize];
                let s = if dot(&d.real, &pivot) < 0.0 { -w } else { w };
                for k in 0..4 {
                    real[k] += s * d.real[k];
                    dual[k] += s * d.dual[k];
                }
            }
            let norm = dot(&real, &real).sqrt();
            if norm < 1e-12 {
                return Err(Error::Numeric(format!(
                    "vertex {i}: blended dual quaternion has zero norm"
                )));
            }
            let blended = DualQuat {
                real: real.map(|x| x / norm),
                dual: dual.map(|x| x / norm),
            };
            Ok(blended.transform(v))
        })
        .collect();
    Ok(mesh.with_vertices(vertices?))
}
