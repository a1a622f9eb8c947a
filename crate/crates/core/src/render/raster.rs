//! Tile-based splat rasterization, forward and reverse.
//!
//! Per pixel, Gaussians sorted front to back by camera-space depth are
//! composited as `C = Σ c_i w_i T_i + T_N·bg`, `w_i = α_i exp(-½ dᵀ Σ₂⁻¹ d)`,
//! `T_i = Π_{k<i} (1 - w_k)`, and the mask is `1 - T_N`.

use rayon::prelude::*;

use super::camera::Camera;
use super::image::ImageBuf;
use crate::error::{Error, Result};
use crate::gaussian::GaussianSet;
use crate::real::{sigmoid, Real};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RasterConfig {
    pub tile_size: usize,
    /// Screen-space support of each splat, in standard deviations.
    pub extent_sigma: f64,
    /// Compositing stops once transmittance falls below this.
    pub min_transmittance: f64,
    /// Added to the diagonal of every projected covariance, px².
    pub aa_floor: f64,
}

impl Default for RasterConfig {
    fn default() -> Self {
        RasterConfig {
            tile_size: 16,
            extent_sigma: 3.0,
            min_transmittance: 1e-4,
            aa_floor: 0.3,
        }
    }
}

/// Result of projecting one Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projected<T> {
    pub mean: [T; 2],
    /// `(xx, xy, yy)` of the 2D covariance.
    pub cov: [T; 3],
    /// `(xx, xy, yy)` of the inverse covariance.
    pub conic: [T; 3],
    pub depth: T,
    /// Camera-space center.
    pub t: [T; 3],
    pub radius: [T; 2],
}

type M3<T> = [[T; 3]; 3];

fn m3_mul<T: Real>(a: &M3<T>, b: &M3<T>) -> M3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

fn m3_t<T: Real>(a: &M3<T>) -> M3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

fn quat_rot<T: Real>(q: [T; 4]) -> M3<T> {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    let one = T::one();
    let two = one + one;
    [
        [
            one - two * (y * y + z * z),
            two * (x * y - w * z),
            two * (x * z + w * y),
        ],
        [
            two * (x * y + w * z),
            one - two * (x * x + z * z),
            two * (y * z - w * x),
        ],
        [
            two * (x * z - w * y),
            two * (y * z + w * x),
            one - two * (x * x + y * y),
        ],
    ]
}

struct CamParams<T> {
    r: M3<T>,
    t: [T; 3],
    fx: T,
    fy: T,
    cx: T,
    cy: T,
    near: T,
    far: T,
}

impl<T: Real> CamParams<T> {
    fn new(cam: &Camera) -> Self {
        let m = &cam.world_to_camera;
        CamParams {
            r: std::array::from_fn(|i| std::array::from_fn(|j| T::from_f64(m[(i, j)]))),
            t: std::array::from_fn(|i| T::from_f64(m[(i, 3)])),
            fx: T::from_f64(cam.fx),
            fy: T::from_f64(cam.fy),
            cx: T::from_f64(cam.cx),
            cy: T::from_f64(cam.cy),
            near: T::from_f64(cam.near),
            far: T::from_f64(cam.far),
        }
    }
}

/// Scalar parameters of one Gaussian at precision `T`.
#[derive(Debug, Clone, Copy)]
struct Params<T> {
    mu: [T; 3],
    raw_scale: [T; 3],
    rot: [T; 4],
}

fn params<T: Real>(g: &GaussianSet, i: usize) -> Params<T> {
    Params {
        mu: std::array::from_fn(|k| T::from_f64(g.centers[i][k])),
        raw_scale: g.raw_scale[i].map(T::from_f64),
        rot: g.rotations[i].map(T::from_f64),
    }
}

fn project_params<T: Real>(p: &Params<T>, cam: &CamParams<T>, cfg: &RasterConfig) -> Option<Projected<T>> {
    let r = &cam.r;
    let t: [T; 3] = std::array::from_fn(|i| r[i][0] * p.mu[0] + r[i][1] * p.mu[1] + r[i][2] * p.mu[2] + cam.t[i]);
    if !(t[2] >= cam.near && t[2] <= cam.far) {
        return None;
    }
    let (tx, ty, tz) = (t[0], t[1], t[2]);
    let mean = [cam.fx * tx / tz + cam.cx, cam.fy * ty / tz + cam.cy];
    let j = [
        [cam.fx / tz, T::zero(), -cam.fx * tx / (tz * tz)],
        [T::zero(), cam.fy / tz, -cam.fy * ty / (tz * tz)],
    ];
    let rot = quat_rot(p.rot);
    let s = p.raw_scale.map(|v| v.exp());
    let m: M3<T> = std::array::from_fn(|i| std::array::from_fn(|k| rot[i][k] * s[k]));
    let sigma = m3_mul(&m, &m3_t(&m));
    let v = m3_mul(&m3_mul(r, &sigma), &m3_t(r));
    // cov2d = J V Jᵀ
    let jv: [[T; 3]; 2] =
        std::array::from_fn(|i| std::array::from_fn(|k| j[i][0] * v[0][k] + j[i][1] * v[1][k] + j[i][2] * v[2][k]));
    let c = |a: usize, b: usize| jv[a][0] * j[b][0] + jv[a][1] * j[b][1] + jv[a][2] * j[b][2];
    let floor = T::from_f64(cfg.aa_floor);
    let mut cov = [c(0, 0) + floor, c(0, 1), c(1, 1) + floor];
    clamp_spd(&mut cov);
    let det = cov[0] * cov[2] - cov[1] * cov[1];
    if !(det > T::zero()) || !det.is_finite() {
        return None;
    }
    let conic = [cov[2] / det, -cov[1] / det, cov[0] / det];
    let k = T::from_f64(cfg.extent_sigma);
    Some(Projected {
        mean,
        cov,
        conic,
        depth: tz,
        t,
        radius: [k * cov[0].sqrt(), k * cov[2].sqrt()],
    })
}

/// Clamps eigenvalues of a symmetric 2×2 at `1e-8`.
fn clamp_spd<T: Real>(cov: &mut [T; 3]) {
    let min_eig = T::from_f64(1e-8);
    let half = T::from_f64(0.5);
    let mid = half * (cov[0] + cov[2]);
    let diff = half * (cov[0] - cov[2]);
    let rad = (diff * diff + cov[1] * cov[1]).sqrt();
    let (l1, l2) = (mid + rad, mid - rad);
    if l2 >= min_eig {
        return;
    }
    let (l1c, l2c) = (l1.max(min_eig), l2.max(min_eig));
    if rad <= T::zero() {
        *cov = [l1c, T::zero(), l1c];
        return;
    }
    // eigenvector of l1: (cos, sin) with angle from the off-diagonal
    let (c2, s2) = (diff / rad, cov[1] / rad);
    let cos2 = half * (T::one() + c2);
    let sin2 = half * (T::one() - c2);
    let cs = half * s2;
    *cov = [l1c * cos2 + l2c * sin2, (l1c - l2c) * cs, l1c * sin2 + l2c * cos2];
}

/// EWA projection of one Gaussian. `None` when outside the near/far range.
pub fn project_gaussian<T: Real>(g: &GaussianSet, i: usize, cam: &Camera, cfg: &RasterConfig) -> Option<Projected<T>> {
    project_params(&params::<T>(g, i), &CamParams::new(cam), cfg)
}

/// Forward state retained for [`rasterize_backward`].
#[derive(Debug, Clone)]
pub struct RenderWorkspace<T> {
    projected: Vec<Option<Projected<T>>>,
    opacity: Vec<T>,
    /// Gaussian ids per tile in compositing order.
    tiles: Vec<Vec<u32>>,
    /// Per pixel: number of entries of its tile list that were visited.
    visited: Vec<u32>,
    background: [T; 3],
    cfg: RasterConfig,
    width: usize,
    height: usize,
    n: usize,
}

#[derive(Debug, Clone)]
pub struct RenderOutput<T: Real = f32> {
    pub color: ImageBuf<T>,
    pub mask: ImageBuf<T>,
    /// Alpha-normalized expected depth; zero where the mask is empty.
    pub depth: ImageBuf<T>,
    pub workspace: Option<RenderWorkspace<T>>,
}

impl<T: Real> RenderOutput<T> {
    pub fn without_workspace(mut self) -> Self {
        self.workspace = None;
        self
    }
}

/// Renders with the default configuration.
pub fn rasterize<T: Real>(g: &GaussianSet, cam: &Camera, background: [f64; 3]) -> RenderOutput<T> {
    rasterize_with(g, cam, background, &RasterConfig::default())
}

pub fn rasterize_with<T: Real>(
    g: &GaussianSet,
    cam: &Camera,
    background: [f64; 3],
    cfg: &RasterConfig,
) -> RenderOutput<T> {
    let (w, h) = (cam.width, cam.height);
    let camp = CamParams::<T>::new(cam);
    let n = g.len();
    let projected: Vec<Option<Projected<T>>> = (0..n)
        .into_par_iter()
        .map(|i| project_params(&params::<T>(g, i), &camp, cfg))
        .collect();
    let opacity: Vec<T> = g.raw_opacity.iter().map(|&o| sigmoid(T::from_f64(o))).collect();
    let colors: Vec<[T; 3]> = g.colors.iter().map(|c| c.map(T::from_f64)).collect();

    // depth order; ties broken on content, then index, so input order never matters
    let mut order: Vec<usize> = (0..n).filter(|&i| projected[i].is_some()).collect();
    let key = |i: usize| {
        let p = projected[i].as_ref().unwrap();
        // + 0.0 folds -0.0 into +0.0 so that signed zeros compare equal
        [
            p.depth.to_f64() + 0.0,
            p.mean[0].to_f64() + 0.0,
            p.mean[1].to_f64() + 0.0,
            p.cov[0].to_f64() + 0.0,
            p.cov[1].to_f64() + 0.0,
            p.cov[2].to_f64() + 0.0,
            opacity[i].to_f64(),
            colors[i][0].to_f64(),
            colors[i][1].to_f64(),
            colors[i][2].to_f64(),
        ]
    };
    order.sort_by(|&a, &b| {
        let (ka, kb) = (key(a), key(b));
        ka.iter()
            .zip(&kb)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    let ts = cfg.tile_size.max(1);
    let (tiles_x, tiles_y) = (w.div_ceil(ts), h.div_ceil(ts));
    let mut tiles: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for &i in &order {
        let Some((x0, x1, y0, y1)) = pixel_bounds(projected[i].as_ref().unwrap(), w, h) else {
            continue;
        };
        for ty in y0 / ts..=y1 / ts {
            for tx in x0 / ts..=x1 / ts {
                tiles[ty * tiles_x + tx].push(i as u32);
            }
        }
    }

    let bg = background.map(T::from_f64);
    let min_t = T::from_f64(cfg.min_transmittance);
    struct TileOut<T> {
        color: Vec<T>,
        mask: Vec<T>,
        depth: Vec<T>,
        visited: Vec<u32>,
    }
    let outs: Vec<TileOut<T>> = (0..tiles_x * tiles_y)
        .into_par_iter()
        .map(|tile| {
            let (tx, ty) = (tile % tiles_x, tile / tiles_x);
            let (px0, py0) = (tx * ts, ty * ts);
            let (px1, py1) = ((px0 + ts).min(w), (py0 + ts).min(h));
            let count = (px1 - px0) * (py1 - py0);
            let mut out = TileOut {
                color: Vec::with_capacity(count * 3),
                mask: Vec::with_capacity(count),
                depth: Vec::with_capacity(count),
                visited: Vec::with_capacity(count),
            };
            let list = &tiles[tile];
            for py in py0..py1 {
                for px in px0..px1 {
                    let sx = T::from_usize(px) + T::from_f64(0.5);
                    let sy = T::from_usize(py) + T::from_f64(0.5);
                    let mut trans = T::one();
                    let mut c = [T::zero(); 3];
                    let mut d = T::zero();
                    let mut visited = list.len();
                    for (k, &gi) in list.iter().enumerate() {
                        let gi = gi as usize;
                        let p = projected[gi].as_ref().unwrap();
                        let Some(weight) = splat_weight(p, opacity[gi], sx, sy) else {
                            continue;
                        };
                        let contrib = weight * trans;
                        for ch in 0..3 {
                            c[ch] += colors[gi][ch] * contrib;
                        }
                        d += p.depth * contrib;
                        trans *= T::one() - weight;
                        if trans < min_t {
                            visited = k + 1;
                            break;
                        }
                    }
                    let alpha = T::one() - trans;
                    for ch in 0..3 {
                        out.color.push(c[ch] + trans * bg[ch]);
                    }
                    out.mask.push(alpha);
                    out.depth.push(if alpha > T::zero() { d / alpha } else { T::zero() });
                    out.visited.push(visited as u32);
                }
            }
            out
        })
        .collect();

    let mut color = ImageBuf::<T>::new(w, h, 3);
    let mut mask = ImageBuf::<T>::new(w, h, 1);
    let mut depth = ImageBuf::<T>::new(w, h, 1);
    let mut visited = vec![0u32; w * h];
    for (tile, out) in outs.into_iter().enumerate() {
        let (tx, ty) = (tile % tiles_x, tile / tiles_x);
        let (px0, py0) = (tx * ts, ty * ts);
        let (px1, py1) = ((px0 + ts).min(w), (py0 + ts).min(h));
        let mut k = 0;
        for py in py0..py1 {
            for px in px0..px1 {
                let pix = py * w + px;
                color.pixels[pix * 3..pix * 3 + 3].copy_from_slice(&out.color[k * 3..k * 3 + 3]);
                mask.pixels[pix] = out.mask[k];
                depth.pixels[pix] = out.depth[k];
                visited[pix] = out.visited[k];
                k += 1;
            }
        }
    }
    RenderOutput {
        color,
        mask,
        depth,
        workspace: Some(RenderWorkspace {
            projected,
            opacity,
            tiles,
            visited,
            background: bg,
            cfg: *cfg,
            width: w,
            height: h,
            n,
        }),
    }
}

/// Inclusive pixel range whose sample points fall inside the splat support.
fn pixel_bounds<T: Real>(p: &Projected<T>, w: usize, h: usize) -> Option<(usize, usize, usize, usize)> {
    let half = T::from_f64(0.5);
    let x0 = (p.mean[0] - p.radius[0] - half).ceil().to_f64().max(0.0);
    let x1 = (p.mean[0] + p.radius[0] - half).floor().to_f64().min(w as f64 - 1.0);
    let y0 = (p.mean[1] - p.radius[1] - half).ceil().to_f64().max(0.0);
    let y1 = (p.mean[1] + p.radius[1] - half).floor().to_f64().min(h as f64 - 1.0);
    if !(x0 <= x1 && y0 <= y1) {
        return None;
    }
    Some((x0 as usize, x1 as usize, y0 as usize, y1 as usize))
}

#[inline]
fn splat_weight<T: Real>(p: &Projected<T>, opacity: T, sx: T, sy: T) -> Option<T> {
    let dx = sx - p.mean[0];
    let dy = sy - p.mean[1];
    if dx.abs() > p.radius[0] || dy.abs() > p.radius[1] {
        return None;
    }
    let q = p.conic[0] * dx * dx + (p.conic[1] + p.conic[1]) * dx * dy + p.conic[2] * dy * dy;
    Some(opacity * (T::from_f64(-0.5) * q).exp())
}

/// Per-Gaussian parameter gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianGrads<T> {
    pub center: Vec<[T; 3]>,
    pub raw_scale: Vec<[T; 3]>,
    pub rotation: Vec<[T; 4]>,
    pub raw_opacity: Vec<T>,
    pub color: Vec<[T; 3]>,
}

impl<T: Real> GaussianGrads<T> {
    pub fn zeros(n: usize) -> Self {
        GaussianGrads {
            center: vec![[T::zero(); 3]; n],
            raw_scale: vec![[T::zero(); 3]; n],
            rotation: vec![[T::zero(); 4]; n],
            raw_opacity: vec![T::zero(); n],
            color: vec![[T::zero(); 3]; n],
        }
    }

    /// Flattened as `[center(3), raw_scale(3), rotation(4), raw_opacity, color(3)]` per Gaussian.
    pub fn flatten(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(self.center.len() * 14);
        for i in 0..self.center.len() {
            v.extend_from_slice(&self.center[i]);
            v.extend_from_slice(&self.raw_scale[i]);
            v.extend_from_slice(&self.rotation[i]);
            v.push(self.raw_opacity[i]);
            v.extend_from_slice(&self.color[i]);
        }
        v
    }

    pub fn add_assign(&mut self, o: &GaussianGrads<T>) {
        for i in 0..self.center.len() {
            for k in 0..3 {
                self.center[i][k] += o.center[i][k];
                self.raw_scale[i][k] += o.raw_scale[i][k];
                self.color[i][k] += o.color[i][k];
            }
            for k in 0..4 {
                self.rotation[i][k] += o.rotation[i][k];
            }
            self.raw_opacity[i] += o.raw_opacity[i];
        }
    }
}

/// Screen-space gradients accumulated per Gaussian.
#[derive(Clone, Copy, Default)]
struct ScreenGrad<T> {
    mean: [T; 2],
    conic: [T; 3],
    opacity: T,
    color: [T; 3],
}

impl<T: Real> ScreenGrad<T> {
    fn add(&mut self, o: &ScreenGrad<T>) {
        for k in 0..2 {
            self.mean[k] += o.mean[k];
        }
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.opacity += o.opacity;
    }
}

/// Exact reverse of the compositing in [`rasterize_with`].
///
/// Gradients are accumulated per tile and merged in tile order, so results do
/// not depend on the number of worker threads.
pub fn rasterize_backward<T: Real>(
    g: &GaussianSet,
    cam: &Camera,
    out: &RenderOutput<T>,
    grad_color: &ImageBuf<T>,
    grad_mask: &ImageBuf<T>,
) -> Result<GaussianGrads<T>> {
    let ws = out
        .workspace
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("render output carries no backward workspace".into()))?;
    if ws.n != g.len() {
        return Err(Error::DimensionMismatch {
            what: "gaussians vs workspace",
            expected: ws.n,
            got: g.len(),
        });
    }
    if grad_color.width != ws.width || grad_color.height != ws.height || grad_color.channels != 3 {
        return Err(Error::InvalidArgument(
            "color gradient image has the wrong shape".into(),
        ));
    }
    if grad_mask.width != ws.width || grad_mask.height != ws.height || grad_mask.channels != 1 {
        return Err(Error::InvalidArgument("mask gradient image has the wrong shape".into()));
    }
    let (w, h) = (ws.width, ws.height);
    let ts = ws.cfg.tile_size.max(1);
    let tiles_x = w.div_ceil(ts);
    let colors: Vec<[T; 3]> = g.colors.iter().map(|c| c.map(T::from_f64)).collect();

    let per_tile: Vec<Vec<ScreenGrad<T>>> = (0..ws.tiles.len())
        .into_par_iter()
        .map(|tile| {
            let list = &ws.tiles[tile];
            let mut acc = vec![ScreenGrad::<T>::default(); list.len()];
            let (tx, ty) = (tile % tiles_x, tile / tiles_x);
            let (px0, py0) = (tx * ts, ty * ts);
            let (px1, py1) = ((px0 + ts).min(w), (py0 + ts).min(h));
            let mut hits: Vec<(usize, T, T)> = Vec::new(); // (list slot, weight, transmittance before)
            for py in py0..py1 {
                for px in px0..px1 {
                    let pix = py * w + px;
                    let gc = [
                        grad_color.pixels[pix * 3],
                        grad_color.pixels[pix * 3 + 1],
                        grad_color.pixels[pix * 3 + 2],
                    ];
                    let gm = grad_mask.pixels[pix];
                    if gc.iter().all(|v| *v == T::zero()) && gm == T::zero() {
                        continue;
                    }
                    let sx = T::from_usize(px) + T::from_f64(0.5);
                    let sy = T::from_usize(py) + T::from_f64(0.5);
                    hits.clear();
                    let mut trans = T::one();
                    for (slot, &gi) in list.iter().enumerate().take(ws.visited[pix] as usize) {
                        let gi = gi as usize;
                        let p = ws.projected[gi].as_ref().unwrap();
                        if let Some(weight) = splat_weight(p, ws.opacity[gi], sx, sy) {
                            hits.push((slot, weight, trans));
                            trans *= T::one() - weight;
                        }
                    }
                    // x: color of everything behind, normalized by transmittance in front of it
                    let mut x = ws.background;
                    // product of (1 - w_k) over splats behind the current one
                    let mut behind = T::one();
                    for &(slot, weight, t_before) in hits.iter().rev() {
                        let gi = list[slot] as usize;
                        let p = ws.projected[gi].as_ref().unwrap();
                        let c = colors[gi];
                        let mut dw = gm * t_before * behind;
                        for ch in 0..3 {
                            dw += gc[ch] * t_before * (c[ch] - x[ch]);
                        }
                        let a = &mut acc[slot];
                        for ch in 0..3 {
                            a.color[ch] += gc[ch] * weight * t_before;
                        }
                        let opacity = ws.opacity[gi];
                        let gauss = weight / opacity;
                        a.opacity += dw * gauss;
                        let dx = sx - p.mean[0];
                        let dy = sy - p.mean[1];
                        let dq = T::from_f64(-0.5) * dw * weight;
                        let two = T::from_f64(2.0);
                        a.conic[0] += dq * dx * dx;
                        a.conic[1] += dq * two * dx * dy;
                        a.conic[2] += dq * dy * dy;
                        a.mean[0] -= dq * (two * p.conic[0] * dx + two * p.conic[1] * dy);
                        a.mean[1] -= dq * (two * p.conic[1] * dx + two * p.conic[2] * dy);
                        for ch in 0..3 {
                            x[ch] = c[ch] * weight + (T::one() - weight) * x[ch];
                        }
                        behind *= T::one() - weight;
                    }
                }
            }
            acc
        })
        .collect();

    let mut screen = vec![ScreenGrad::<T>::default(); g.len()];
    for (tile, acc) in per_tile.iter().enumerate() {
        for (slot, &gi) in ws.tiles[tile].iter().enumerate() {
            screen[gi as usize].add(&acc[slot]);
        }
    }

    let camp = CamParams::<T>::new(cam);
    let per_gauss: Vec<([T; 3], [T; 3], [T; 4], T, [T; 3])> = (0..g.len())
        .into_par_iter()
        .map(|i| {
            let s = &screen[i];
            let Some(p) = ws.projected[i].as_ref() else {
                return (
                    [T::zero(); 3],
                    [T::zero(); 3],
                    [T::zero(); 4],
                    T::zero(),
                    [T::zero(); 3],
                );
            };
            let (dmu, dscale, drot) = project_backward(&params::<T>(g, i), p, &camp, s);
            let o = ws.opacity[i];
            (dmu, dscale, drot, s.opacity * o * (T::one() - o), s.color)
        })
        .collect();
    let mut grads = GaussianGrads::zeros(g.len());
    for (i, (a, b, c, d, e)) in per_gauss.into_iter().enumerate() {
        grads.center[i] = a;
        grads.raw_scale[i] = b;
        grads.rotation[i] = c;
        grads.raw_opacity[i] = d;
        grads.color[i] = e;
    }
    Ok(grads)
}

/// Chain rule from screen-space gradients to `(μ, raw_scale, rotation)`.
fn project_backward<T: Real>(
    p: &Params<T>,
    proj: &Projected<T>,
    cam: &CamParams<T>,
    s: &ScreenGrad<T>,
) -> ([T; 3], [T; 3], [T; 4]) {
    let zero = T::zero();
    let two = T::from_f64(2.0);
    let half = T::from_f64(0.5);
    // conic -> covariance: dL/dΣ₂ = -K G_K K, with the off-diagonal gradient split over both entries
    let k = [[proj.conic[0], proj.conic[1]], [proj.conic[1], proj.conic[2]]];
    let gk = [[s.conic[0], half * s.conic[1]], [half * s.conic[1], s.conic[2]]];
    let kg = mat2_mul(&k, &gk);
    let kgk = mat2_mul(&kg, &k);
    let gcov = [[-kgk[0][0], -kgk[0][1]], [-kgk[1][0], -kgk[1][1]]];

    let [tx, ty, tz] = proj.t;
    let j = [
        [cam.fx / tz, zero, -cam.fx * tx / (tz * tz)],
        [zero, cam.fy / tz, -cam.fy * ty / (tz * tz)],
    ];
    let rot = quat_rot(p.rot);
    let scale = p.raw_scale.map(|v| v.exp());
    let m: M3<T> = std::array::from_fn(|i| std::array::from_fn(|c| rot[i][c] * scale[c]));
    let sigma = m3_mul(&m, &m3_t(&m));
    let v = m3_mul(&m3_mul(&cam.r, &sigma), &m3_t(&cam.r));

    // dL/dV = Jᵀ G J ; dL/dJ = 2 G J V
    let mut gv = [[zero; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            let mut acc = zero;
            for u in 0..2 {
                for w in 0..2 {
                    acc += j[u][a] * gcov[u][w] * j[w][b];
                }
            }
            gv[a][b] = acc;
        }
    }
    let mut gj = [[zero; 3]; 2];
    for u in 0..2 {
        for c in 0..3 {
            let mut acc = zero;
            for w in 0..2 {
                for b in 0..3 {
                    acc += gcov[u][w] * j[w][b] * v[b][c];
                }
            }
            gj[u][c] = two * acc;
        }
    }

    // camera-space center: mean and Jacobian both depend on it
    let tz2 = tz * tz;
    let tz3 = tz2 * tz;
    let mut gt = [zero; 3];
    gt[0] += s.mean[0] * cam.fx / tz;
    gt[2] -= s.mean[0] * cam.fx * tx / tz2;
    gt[1] += s.mean[1] * cam.fy / tz;
    gt[2] -= s.mean[1] * cam.fy * ty / tz2;
    gt[2] -= gj[0][0] * cam.fx / tz2;
    gt[0] -= gj[0][2] * cam.fx / tz2;
    gt[2] += gj[0][2] * two * cam.fx * tx / tz3;
    gt[2] -= gj[1][1] * cam.fy / tz2;
    gt[1] -= gj[1][2] * cam.fy / tz2;
    gt[2] += gj[1][2] * two * cam.fy * ty / tz3;
    let r = &cam.r;
    let dmu: [T; 3] = std::array::from_fn(|c| r[0][c] * gt[0] + r[1][c] * gt[1] + r[2][c] * gt[2]);

    // V = R_w Σ R_wᵀ -> dL/dΣ = R_wᵀ G_V R_w, symmetrized
    let gs = m3_mul(&m3_mul(&m3_t(r), &gv), r);
    let gs: M3<T> = std::array::from_fn(|a| std::array::from_fn(|b| half * (gs[a][b] + gs[b][a])));
    // Σ = M Mᵀ -> dL/dM = 2 G_Σ M
    let gm = m3_mul(&gs, &m);
    let gm: M3<T> = std::array::from_fn(|a| std::array::from_fn(|b| two * gm[a][b]));
    let mut dscale = [zero; 3];
    let mut grot = [[zero; 3]; 3];
    for c in 0..3 {
        let mut acc = zero;
        for a in 0..3 {
            acc += gm[a][c] * rot[a][c];
            grot[a][c] = gm[a][c] * scale[c];
        }
        dscale[c] = acc * scale[c];
    }
    (dmu, dscale, quat_backward(p.rot, &grot))
}

fn mat2_mul<T: Real>(a: &[[T; 2]; 2], b: &[[T; 2]; 2]) -> [[T; 2]; 2] {
    std::array::from_fn(|i| std::array::from_fn(|j| a[i][0] * b[0][j] + a[i][1] * b[1][j]))
}

/// Gradient w.r.t. an unnormalized quaternion given `dL/dR`.
fn quat_backward<T: Real>(q: [T; 4], grot: &M3<T>) -> [T; 4] {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let [w, x, y, z] = q.map(|v| v / n);
    let two = T::from_f64(2.0);
    let four = T::from_f64(4.0);
    let zero = T::zero();
    let dw = [
        [zero, -two * z, two * y],
        [two * z, zero, -two * x],
        [-two * y, two * x, zero],
    ];
    let dx = [
        [zero, two * y, two * z],
        [two * y, -four * x, -two * w],
        [two * z, two * w, -four * x],
    ];
    let dy = [
        [-four * y, two * x, two * w],
        [two * x, zero, two * z],
        [-two * w, two * z, -four * y],
    ];
    let dz = [
        [-four * z, -two * w, two * x],
        [two * w, -four * z, two * y],
        [two * x, two * y, zero],
    ];
    let dot = |d: &M3<T>| {
        let mut acc = zero;
        for a in 0..3 {
            for b in 0..3 {
                acc += d[a][b] * grot[a][b];
            }
        }
        acc
    };
    let gu = [dot(&dw), dot(&dx), dot(&dy), dot(&dz)];
    let u = [w, x, y, z];
    let proj = gu[0] * u[0] + gu[1] * u[1] + gu[2] * u[2] + gu[3] * u[3];
    std::array::from_fn(|k| (gu[k] - u[k] * proj) / n)
}
