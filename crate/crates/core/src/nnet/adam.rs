use super::graph::Gradients;
use super::params::NetworkParams;
use crate::error::{Error, Result};
use crate::real::Real;

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: Vec<Option<(Vec<T>, Vec<T>)>>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of every trainable slot that received a gradient. Nothing is
    /// modified if any gradient is non-finite.
    pub fn step(&mut self, params: &mut NetworkParams<T>, grads: &Gradients<T>) -> Result<()> {
        for (slot, g) in grads.params.iter().enumerate() {
            if let Some(g) = g {
                if !g.is_finite() {
                    let name = params
                        .names()
                        .find(|(_, s)| *s == slot)
                        .map_or("?", |(n, _)| n)
                        .to_string();
                    return Err(Error::Numeric(format!("non-finite gradient for parameter {name}")));
                }
                if g.shape != params.tensor(slot).shape {
                    return Err(Error::DimensionMismatch {
                        what: "gradient",
                        expected: params.tensor(slot).len(),
                        got: g.len(),
                    });
                }
            }
        }
        self.step += 1;
        if self.moments.len() < params.slot_count() {
            self.moments.resize(params.slot_count(), None);
        }
        for (slot, g) in grads.params.iter().enumerate() {
            let Some(g) = g else { continue };
            if !params.is_trainable(slot) {
                continue;
            }
            let (m, v) = self.moments[slot].get_or_insert_with(|| (vec![T::zero(); g.len()], vec![T::zero(); g.len()]));
            let p = &mut params.tensor_mut(slot).data;
            adam_update(p, &g.data, m, v, self.step, self.lr, self.beta1, self.beta2, self.eps);
        }
        Ok(())
    }

    /// Update of a plain parameter vector with its own moment state.
    pub fn step_slice(&mut self, param: &mut [T], grad: &[T]) -> Result<()> {
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric("non-finite gradient".into()));
        }
        self.step += 1;
        if self.moments.is_empty() {
            self.moments.push(None);
        }
        let (m, v) = self.moments[0].get_or_insert_with(|| (vec![T::zero(); grad.len()], vec![T::zero(); grad.len()]));
        adam_update(param, grad, m, v, self.step, self.lr, self.beta1, self.beta2, self.eps);
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn adam_update<T: Real>(p: &mut [T], g: &[T], m: &mut [T], v: &mut [T], t: u64, lr: f64, b1: f64, b2: f64, eps: f64) {
    let (b1t, b2t) = (T::from_f64(b1), T::from_f64(b2));
    let c1 = T::from_f64(1.0 - b1.powi(t as i32));
    let c2 = T::from_f64(1.0 - b2.powi(t as i32));
    let (lr, eps) = (T::from_f64(lr), T::from_f64(eps));
    for i in 0..p.len() {
        m[i] = b1t * m[i] + (T::one() - b1t) * g[i];
        v[i] = b2t * v[i] + (T::one() - b2t) * g[i] * g[i];
        let mh = m[i] / c1;
        let vh = v[i] / c2;
        p[i] -= lr * mh / (vh.sqrt() + eps);
    }
}
