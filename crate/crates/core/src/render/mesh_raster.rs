//! Z-buffered triangle rasterization of normals and coverage.

use super::camera::Camera;
use super::image::Image;
use crate::math::Vec3;
use crate::mesh::Mesh;

#[derive(Debug, Clone)]
pub struct GeometryRender {
    /// View-space normals (x right, y up, z toward the viewer) encoded as `(n + 1) / 2`.
    pub normals: Image,
    pub silhouette: Image,
    /// Camera-space depth of the visible surface, zero where uncovered.
    pub depth: Image,
}

/// Rasterizes `mesh` with perspective-correct normal interpolation.
///
/// Triangles with any vertex in front of the near plane are skipped rather
/// than clipped. Both windings are drawn.
pub fn rasterize_mesh_geometry(mesh: &Mesh, cam: &Camera) -> GeometryRender {
    let (w, h) = (cam.width, cam.height);
    let mut normals = Image::new(w, h, 3);
    let mut silhouette = Image::new(w, h, 1);
    let mut depth = Image::new(w, h, 1);
    let mut zbuf = vec![f64::INFINITY; w * h];
    let rot = cam.rotation();

    let cam_pts: Vec<Vec3> = mesh.vertices.iter().map(|v| cam.to_camera(v)).collect();
    let screen: Vec<[f64; 2]> = cam_pts.iter().map(|t| cam.project_camera_point(t)).collect();
    let cam_normals: Vec<Vec3> = mesh.normals.iter().map(|n| rot * n).collect();

    for face in &mesh.faces {
        let idx = face.map(|i| i as usize);
        if idx
            .iter()
            .any(|&i| !(cam_pts[i].z >= cam.near && cam_pts[i].z <= cam.far))
        {
            continue;
        }
        let [a, b, c] = idx.map(|i| screen[i]);
        let area = edge(a, b, c);
        if area == 0.0 || !area.is_finite() {
            continue;
        }
        let min_x = a[0].min(b[0]).min(c[0]);
        let max_x = a[0].max(b[0]).max(c[0]);
        let min_y = a[1].min(b[1]).min(c[1]);
        let max_y = a[1].max(b[1]).max(c[1]);
        let x0 = (min_x - 0.5).ceil().max(0.0);
        let x1 = (max_x - 0.5).floor().min(w as f64 - 1.0);
        let y0 = (min_y - 0.5).ceil().max(0.0);
        let y1 = (max_y - 0.5).floor().min(h as f64 - 1.0);
        if !(x0 <= x1 && y0 <= y1) {
            continue;
        }
        let inv_z = idx.map(|i| 1.0 / cam_pts[i].z);
        for py in y0 as usize..=y1 as usize {
            for px in x0 as usize..=x1 as usize {
                let p = [px as f64 + 0.5, py as f64 + 0.5];
                let l0 = edge(b, c, p) / area;
                let l1 = edge(c, a, p) / area;
                let l2 = edge(a, b, p) / area;
                if l0 < 0.0 || l1 < 0.0 || l2 < 0.0 {
                    continue;
                }
                // screen-space barycentrics -> perspective-correct weights
                let pw = [l0 * inv_z[0], l1 * inv_z[1], l2 * inv_z[2]];
                let sum = pw[0] + pw[1] + pw[2];
                let z = 1.0 / sum;
                let pix = py * w + px;
                if z >= zbuf[pix] {
                    continue;
                }
                zbuf[pix] = z;
                let n = (cam_normals[idx[0]] * pw[0] + cam_normals[idx[1]] * pw[1] + cam_normals[idx[2]] * pw[2]) / sum;
                let n = n.try_normalize(1e-12).unwrap_or_else(|| Vec3::new(0.0, 0.0, -1.0));
                let view = [n.x, -n.y, -n.z];
                for ch in 0..3 {
                    normals.pixels[pix * 3 + ch] = ((view[ch] + 1.0) * 0.5) as f32;
                }
                silhouette.pixels[pix] = 1.0;
                depth.pixels[pix] = z as f32;
            }
        }
    }
    GeometryRender {
        normals,
        silhouette,
        depth,
    }
}

#[inline]
fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}
