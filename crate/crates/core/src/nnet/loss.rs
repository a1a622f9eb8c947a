use crate::error::{Error, Result};
use crate::real::Real;
use crate::render::{ImageBuf, RenderOutput};

/// Multi-view loss value with its image-space gradients.
#[derive(Debug, Clone)]
pub struct MultiviewLoss<T> {
    pub total: T,
    pub mask: T,
    pub color: T,
    /// `dL/dC` per view.
    pub grad_color: Vec<ImageBuf<T>>,
    /// `dL/dK` per view.
    pub grad_mask: Vec<ImageBuf<T>>,
}

/// `Σ_v mean_px (K_p - K_g)² + Σ_v mean_px ‖C_p - C_g‖²`.
pub fn multiview_loss<T: Real>(pred: &[RenderOutput<T>], truth: &[RenderOutput<T>]) -> Result<MultiviewLoss<T>> {
    if pred.is_empty() {
        return Err(Error::InvalidArgument("multi-view loss needs at least one view".into()));
    }
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            what: "views",
            expected: truth.len(),
            got: pred.len(),
        });
    }
    let two = T::from_f64(2.0);
    let mut out = MultiviewLoss {
        total: T::zero(),
        mask: T::zero(),
        color: T::zero(),
        grad_color: Vec::with_capacity(pred.len()),
        grad_mask: Vec::with_capacity(pred.len()),
    };
    for (p, t) in pred.iter().zip(truth) {
        if !p.color.same_shape(&t.color) || !p.mask.same_shape(&t.mask) {
            return Err(Error::InvalidArgument(
                "prediction and truth renders differ in resolution".into(),
            ));
        }
        let px = T::from_usize(p.mask.pixels.len());
        let mut gm = ImageBuf::new(p.mask.width, p.mask.height, 1);
        let mut mask = T::zero();
        for (i, (a, b)) in p.mask.pixels.iter().zip(&t.mask.pixels).enumerate() {
            let d = *a - *b;
            mask += d * d;
            gm.pixels[i] = two * d / px;
        }
        let mut gc = ImageBuf::new(p.color.width, p.color.height, 3);
        let mut color = T::zero();
        for (i, (a, b)) in p.color.pixels.iter().zip(&t.color.pixels).enumerate() {
            let d = *a - *b;
            color += d * d;
            gc.pixels[i] = two * d / px;
        }
        out.mask += mask / px;
        out.color += color / px;
        out.grad_color.push(gc);
        out.grad_mask.push(gm);
    }
    out.total = out.mask + out.color;
    Ok(out)
}
