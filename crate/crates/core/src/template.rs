//! Canonical Gaussian template generation in UV space.
//!
//! Every texel covered by the mesh's UV layout becomes one Gaussian anchored
//! at the surface point it maps to. The generator network reads the texture
//! and per-texel position/normal maps and emits residuals on top of that
//! anchor, so a zero final layer reproduces the anchors exactly.

use crate::body_model::{BodyModel, Shape};
use crate::error::{Error, Result};
use crate::gaussian::{bind_gaussians, GaussianSet, RAW_OPACITY_LIMIT};
use crate::math::Vec3;
use crate::mesh::Mesh;
use crate::nnet::{template_graph, Graph, NetworkParams, Tensor, POSE_INPUT, TEMPLATE_OUTPUT, TEXTURE_INPUT};
use crate::real::{logit, sigmoid, Real};
use crate::render::Image;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TemplateConfig {
    pub uv_resolution: usize,
    /// Bound on the predicted center offset, meters.
    pub max_offset: f64,
    /// Opacity at zero network output.
    pub base_opacity: f64,
    /// Gaussian standard deviation at zero output, in texel footprints.
    pub footprint_scale: f64,
}

impl Default for TemplateConfig {
    fn default() -> Self {
        TemplateConfig {
            uv_resolution: 64,
            max_offset: 0.02,
            base_opacity: 0.9,
            footprint_scale: 0.6,
        }
    }
}

/// One covered texel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Texel {
    /// Column and row in the UV raster; row 0 is `v = 1`.
    pub coords: [usize; 2],
    pub uv: [f64; 2],
    pub position: Vec3,
    pub normal: Vec3,
    /// World-space edge length of one texel on the owning face, meters.
    pub footprint: f64,
}

/// Rasterizes the UV layout. Texels are sampled at their centers; a texel on
/// a shared edge belongs to the first face in index order. Returned in
/// row-major order.
pub fn uv_texels(mesh: &Mesh, resolution: usize) -> Result<Vec<Texel>> {
    let uv = mesh
        .uv
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("mesh has no UV coordinates".into()))?;
    if resolution == 0 {
        return Err(Error::InvalidArgument("UV resolution must be positive".into()));
    }
    let r = resolution as f64;
    let mut owner: Vec<Option<(usize, [f64; 3])>> = vec![None; resolution * resolution];
    for (f, face) in mesh.faces.iter().enumerate() {
        let [a, b, c] = face.map(|i| uv[i as usize]);
        // texel space: x = u·R, y = (1 - v)·R
        let to_px = |p: [f64; 2]| [p[0] * r, (1.0 - p[1]) * r];
        let (pa, pb, pc) = (to_px(a), to_px(b), to_px(c));
        let area = edge(pa, pb, pc);
        if area == 0.0 || !area.is_finite() {
            continue;
        }
        let x0 = (pa[0].min(pb[0]).min(pc[0]) - 0.5).ceil().max(0.0);
        let x1 = (pa[0].max(pb[0]).max(pc[0]) - 0.5).floor().min(r - 1.0);
        let y0 = (pa[1].min(pb[1]).min(pc[1]) - 0.5).ceil().max(0.0);
        let y1 = (pa[1].max(pb[1]).max(pc[1]) - 0.5).floor().min(r - 1.0);
        if !(x0 <= x1 && y0 <= y1) {
            continue;
        }
        for y in y0 as usize..=y1 as usize {
            for x in x0 as usize..=x1 as usize {
                if owner[y * resolution + x].is_some() {
                    continue;
                }
                let p = [x as f64 + 0.5, y as f64 + 0.5];
                let l = [edge(pb, pc, p) / area, edge(pc, pa, p) / area, edge(pa, pb, p) / area];
                if l.iter().all(|v| *v >= 0.0) {
                    owner[y * resolution + x] = Some((f, l));
                }
            }
        }
    }
    let uv_area = |f: usize| {
        let [a, b, c] = mesh.faces[f].map(|i| uv[i as usize]);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])).abs()
    };
    Ok(owner
        .iter()
        .enumerate()
        .filter_map(|(idx, o)| {
            let (f, l) = (*o)?;
            let [i, j, k] = mesh.faces[f].map(|v| v as usize);
            let position = mesh.vertices[i] * l[0] + mesh.vertices[j] * l[1] + mesh.vertices[k] * l[2];
            let n = mesh.normals[i] * l[0] + mesh.normals[j] * l[1] + mesh.normals[k] * l[2];
            let normal = n.try_normalize(1e-12).unwrap_or_else(|| mesh.face_normal(f));
            let footprint = (mesh.face_area(f) / (uv_area(f) * r * r)).sqrt();
            let (x, y) = (idx % resolution, idx / resolution);
            Some(Texel {
                coords: [x, y],
                uv: [(x as f64 + 0.5) / r, 1.0 - (y as f64 + 0.5) / r],
                position,
                normal,
                footprint,
            })
        })
        .collect())
}

fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Bilinear texture lookup at `uv`, clamped at the border.
pub fn sample_texture(texture: &Image, uv: [f64; 2]) -> [f64; 3] {
    let (w, h) = (texture.width, texture.height);
    let x = (uv[0] * w as f64 - 0.5).clamp(0.0, (w - 1) as f64);
    let y = ((1.0 - uv[1]) * h as f64 - 0.5).clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (ax, ay) = (x - x0 as f64, y - y0 as f64);
    let ch = texture.channels;
    std::array::from_fn(|c| {
        let c = c.min(ch - 1);
        let at = |xx: usize, yy: usize| texture.at(xx, yy, c) as f64;
        (1.0 - ay) * ((1.0 - ax) * at(x0, y0) + ax * at(x1, y0)) + ay * ((1.0 - ax) * at(x0, y1) + ax * at(x1, y1))
    })
}

/// Builds the canonical Gaussian template of a UV-mapped canonical mesh.
///
/// The generator's 14 output channels per texel are, in order: center offset
/// (3, bounded by `tanh`), log-scale residual (3), rotation residual added to
/// the identity quaternion (4), raw opacity residual (1) and color logit
/// residual (3) over the texture color. Skinning weights come from binding
/// each anchor point to the model template in the canonical pose.
pub fn build_template<T: Real>(
    canonical: &Mesh,
    texture: &Image,
    model: &BodyModel,
    shape: &Shape,
    params: &NetworkParams<T>,
    cfg: &TemplateConfig,
) -> Result<GaussianSet> {
    if texture.width == 0 || texture.height == 0 || texture.pixels.is_empty() {
        return Err(Error::InvalidArgument("texture is empty".into()));
    }
    texture.validate()?;
    let res = cfg.uv_resolution;
    let texels = uv_texels(canonical, res)?;
    if texels.is_empty() {
        return Err(Error::InvalidArgument("UV layout covers no texels".into()));
    }
    let plane = res * res;
    let mut tex = Tensor::<T>::zeros(&[TEXTURE_INPUT, res, res]);
    for y in 0..res {
        for x in 0..res {
            let uv = [(x as f64 + 0.5) / res as f64, 1.0 - (y as f64 + 0.5) / res as f64];
            let c = sample_texture(texture, uv);
            for ch in 0..3 {
                tex.data[ch * plane + y * res + x] = T::from_f64(c[ch]);
            }
        }
    }
    let mut pose = Tensor::<T>::zeros(&[POSE_INPUT, res, res]);
    for t in &texels {
        let p = t.coords[1] * res + t.coords[0];
        for k in 0..3 {
            pose.data[k * plane + p] = T::from_f64(t.position[k]);
            pose.data[(3 + k) * plane + p] = T::from_f64(t.normal[k]);
        }
        pose.data[6 * plane + p] = T::one();
    }
    let mut g = Graph::with_params(params);
    let tv = g.input(tex.clone());
    let pv = g.input(pose);
    let out = template_graph(&mut g, tv, pv)?;
    let raw = g.value(out);
    debug_assert_eq!(raw.shape, vec![TEMPLATE_OUTPUT, res, res]);
    let o = |ch: usize, p: usize| Real::to_f64(raw.data[ch * plane + p]);

    let base_opacity = logit(cfg.base_opacity);
    let mut set = GaussianSet::default();
    for t in &texels {
        let p = t.coords[1] * res + t.coords[0];
        let base_scale = (cfg.footprint_scale * t.footprint).max(1e-6).ln();
        let center = Vec3::new(
            t.position.x + cfg.max_offset * o(0, p).tanh(),
            t.position.y + cfg.max_offset * o(1, p).tanh(),
            t.position.z + cfg.max_offset * o(2, p).tanh(),
        );
        let q = [1.0 + o(6, p), o(7, p), o(8, p), o(9, p)];
        let qn = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        let q = if qn > 1e-12 {
            q.map(|v| v / qn)
        } else {
            [1.0, 0.0, 0.0, 0.0]
        };
        let color: [f64; 3] = std::array::from_fn(|c| {
            let texel = Real::to_f64(tex.data[c * plane + p]).clamp(1e-4, 1.0 - 1e-4);
            sigmoid(logit(texel) + o(11 + c, p))
        });
        set.push(crate::gaussian::Gaussian {
            center,
            raw_opacity: (base_opacity + o(10, p)).clamp(-RAW_OPACITY_LIMIT, RAW_OPACITY_LIMIT),
            raw_scale: [base_scale + o(3, p), base_scale + o(4, p), base_scale + o(5, p)],
            rotation: q,
            color,
        });
    }
    // bind the anchors, not the offset centers
    let mut anchors = GaussianSet {
        centers: texels.iter().map(|t| t.position).collect(),
        ..GaussianSet::default()
    };
    bind_gaussians(&mut anchors, model, shape)?;
    set.binding = anchors.binding;
    set.validate()?;
    Ok(set)
}
