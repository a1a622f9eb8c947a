use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::render::ImageBuf;

pub const PSNR_CAP: f64 = 99.0;
const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageReport {
    pub psnr: f64,
    pub ssim: f64,
}

impl ImageReport {
    /// Mean PSNR and SSIM over image pairs.
    pub fn evaluate<T: Real>(pairs: &[(&ImageBuf<T>, &ImageBuf<T>)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidArgument("no image pairs".into()));
        }
        let (mut p, mut s) = (0.0, 0.0);
        for (a, b) in pairs {
            p += psnr(a, b)?;
            s += ssim(a, b)?;
        }
        let n = pairs.len() as f64;
        Ok(ImageReport {
            psnr: p / n,
            ssim: s / n,
        })
    }
}

fn same_shape<T: Real>(a: &ImageBuf<T>, b: &ImageBuf<T>) -> Result<()> {
    a.validate()?;
    b.validate()?;
    if !a.same_shape(b) {
        return Err(Error::InvalidArgument(format!(
            "image shapes differ: {}x{}x{} vs {}x{}x{}",
            a.width, a.height, a.channels, b.width, b.height, b.channels
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio for unit dynamic range, capped at 99 dB.
pub fn psnr<T: Real>(a: &ImageBuf<T>, b: &ImageBuf<T>) -> Result<f64> {
    same_shape(a, b)?;
    if a.pixels.is_empty() {
        return Err(Error::InvalidArgument("empty image".into()));
    }
    let mse = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(x, y)| (Real::to_f64(*x) - Real::to_f64(*y)).powi(2))
        .sum::<f64>()
        / a.pixels.len() as f64;
    if mse < 1e-10 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

fn gaussian_window() -> [f64; WINDOW] {
    let c = (WINDOW / 2) as f64;
    let mut w: [f64; WINDOW] = std::array::from_fn(|i| (-((i as f64 - c).powi(2)) / (2.0 * SIGMA * SIGMA)).exp());
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Structural similarity over all fully contained 11×11 windows, averaged
/// over positions and channels.
pub fn ssim<T: Real>(a: &ImageBuf<T>, b: &ImageBuf<T>) -> Result<f64> {
    same_shape(a, b)?;
    if a.width < WINDOW || a.height < WINDOW {
        return Err(Error::InvalidArgument(format!(
            "SSIM needs at least {WINDOW}x{WINDOW} pixels, got {}x{}",
            a.width, a.height
        )));
    }
    let w = gaussian_window();
    let (ow, oh) = (a.width - WINDOW + 1, a.height - WINDOW + 1);
    let mut total = 0.0;
    for c in 0..a.channels {
        let x = |img: &ImageBuf<T>, i: usize, j: usize| Real::to_f64(img.at(i, j, c));
        // separable filtering: horizontal pass then vertical
        let filter = |f: &dyn Fn(usize, usize) -> f64| -> Vec<f64> {
            let mut rows = vec![0.0; ow * a.height];
            for j in 0..a.height {
                for i in 0..ow {
                    rows[j * ow + i] = (0..WINDOW).map(|k| w[k] * f(i + k, j)).sum();
                }
            }
            let mut out = vec![0.0; ow * oh];
            for j in 0..oh {
                for i in 0..ow {
                    out[j * ow + i] = (0..WINDOW).map(|k| w[k] * rows[(j + k) * ow + i]).sum();
                }
            }
            out
        };
        let mx = filter(&|i, j| x(a, i, j));
        let my = filter(&|i, j| x(b, i, j));
        let mxx = filter(&|i, j| x(a, i, j) * x(a, i, j));
        let myy = filter(&|i, j| x(b, i, j) * x(b, i, j));
        let mxy = filter(&|i, j| x(a, i, j) * x(b, i, j));
        let mut sum = 0.0;
        for p in 0..ow * oh {
            let vx = mxx[p] - mx[p] * mx[p];
            let vy = myy[p] - my[p] * my[p];
            let cxy = mxy[p] - mx[p] * my[p];
            let num = (2.0 * mx[p] * my[p] + C1) * (2.0 * cxy + C2);
            let den = (mx[p] * mx[p] + my[p] * my[p] + C1) * (vx + vy + C2);
            sum += num / den;
        }
        total += sum / (ow * oh) as f64;
    }
    Ok(total / a.channels as f64)
}
