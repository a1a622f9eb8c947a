//! Triangle meshes with derived vertex normals and optional per-vertex UVs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::math::{Mat4, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    /// Area-weighted vertex normals; recomputed on every geometric change.
    pub normals: Vec<Vec3>,
    pub uv: Option<Vec<[f64; 2]>>,
}

impl Mesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[u32; 3]>, uv: Option<Vec<[f64; 2]>>) -> Result<Self> {
        let mut mesh = Mesh {
            normals: Vec::new(),
            vertices,
            faces,
            uv,
        };
        mesh.validate_topology()?;
        mesh.recompute_normals();
        Ok(mesh)
    }

    pub fn empty() -> Self {
        Mesh {
            vertices: Vec::new(),
            faces: Vec::new(),
            normals: Vec::new(),
            uv: None,
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn validate_topology(&self) -> Result<()> {
        let v = self.vertices.len();
        if let Some(f) = self.faces.iter().position(|f| f.iter().any(|&i| i as usize >= v)) {
            return Err(Error::Invariant(format!("face {f} references a vertex beyond {v}")));
        }
        if let Some(uv) = &self.uv {
            if uv.len() != v {
                return Err(Error::DimensionMismatch {
                    what: "uv count",
                    expected: v,
                    got: uv.len(),
                });
            }
        }
        if self.vertices.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::Invariant("non-finite vertex".into()));
        }
        Ok(())
    }

    /// Area-weighted vertex normals. Vertices without incident area get +z.
    pub fn recompute_normals(&mut self) {
        let mut acc = vec![Vec3::zeros(); self.vertices.len()];
        for f in &self.faces {
            let [a, b, c] = f.map(|i| self.vertices[i as usize]);
            // cross product length is twice the area: area weighting for free
            let n = (b - a).cross(&(c - a));
            for &i in f {
                acc[i as usize] += n;
            }
        }
        self.normals = acc
            .into_iter()
            .map(|n| {
                let len = n.norm();
                if len > 1e-300 {
                    n / len
                } else {
                    Vec3::z()
                }
            })
            .collect();
    }

    pub fn face_normal(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.faces[f].map(|i| self.vertices[i as usize]);
        let n = (b - a).cross(&(c - a));
        let len = n.norm();
        if len > 0.0 {
            n / len
        } else {
            Vec3::z()
        }
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f].map(|i| self.vertices[i as usize]);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    pub fn transformed(&self, m: &Mat4) -> Mesh {
        let vertices = self
            .vertices
            .iter()
            .map(|p| crate::math::transform_point(m, p))
            .collect();
        self.with_vertices(vertices)
    }

    /// Same topology and UVs with new positions; normals recomputed.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Mesh {
        let mut m = Mesh {
            vertices,
            faces: self.faces.clone(),
            normals: Vec::new(),
            uv: self.uv.clone(),
        };
        m.recompute_normals();
        m
    }

    /// Area-weighted uniform surface samples with face normals, deterministic in `seed`.
    pub fn sample_surface(&self, count: usize, seed: u64) -> (Vec<Vec3>, Vec<Vec3>) {
        if self.faces.is_empty() || count == 0 {
            return (Vec::new(), Vec::new());
        }
        let mut cdf = Vec::with_capacity(self.faces.len());
        let mut total = 0.0;
        for f in 0..self.faces.len() {
            total += self.face_area(f);
            cdf.push(total);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points = Vec::with_capacity(count);
        let mut normals = Vec::with_capacity(count);
        for _ in 0..count {
            let t: f64 = rng.gen::<f64>() * total;
            let f = cdf.partition_point(|&c| c < t).min(self.faces.len() - 1);
            let (mut u, mut v): (f64, f64) = (rng.gen(), rng.gen());
            if u + v > 1.0 {
                u = 1.0 - u;
                v = 1.0 - v;
            }
            let [a, b, c] = self.faces[f].map(|i| self.vertices[i as usize]);
            points.push(a + (b - a) * u + (c - a) * v);
            normals.push(self.face_normal(f));
        }
        (points, normals)
    }
}
