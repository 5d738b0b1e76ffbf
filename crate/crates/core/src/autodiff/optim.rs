use super::{Gradients, ParamStore, Real};
use crate::{Error, Result};

/// Adam with bias correction. Moment updates run in `f64` regardless of the
/// parameter dtype.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }

    /// Applies one update to every parameter and clears `grads`. Parameters
    /// without a gradient are treated as having a zero gradient; their step
    /// count still advances.
    pub fn step<T: Real>(&self, params: &mut ParamStore<T>, grads: &mut Gradients<T>) -> Result<()> {
        if let Some(bad) = grads.first_non_finite() {
            return Err(Error::NonFinite(format!(
                "gradient of `{}`",
                params.get(bad).name
            )));
        }
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let p = params.get_mut(id);
            let n = p.tensor.len();
            if p.adam_m.len() != n {
                p.adam_m = vec![T::zero(); n];
                p.adam_v = vec![T::zero(); n];
            }
            p.step_count += 1;
            let t = p.step_count as i32;
            let c1 = 1.0 - self.beta1.powi(t);
            let c2 = 1.0 - self.beta2.powi(t);
            let g = grads.get(id);
            let data = p.tensor.data_mut();
            for i in 0..n {
                let gi = g.map_or(0.0, |g| g[i].as_f64());
                let m = self.beta1 * p.adam_m[i].as_f64() + (1.0 - self.beta1) * gi;
                let v = self.beta2 * p.adam_v[i].as_f64() + (1.0 - self.beta2) * gi * gi;
                p.adam_m[i] = T::of(m);
                p.adam_v[i] = T::of(v);
                let update = self.lr * (m / c1) / ((v / c2).sqrt() + self.eps);
                data[i] = T::of(data[i].as_f64() - update);
            }
        }
        grads.clear();
        Ok(())
    }
}

/// Rescales `grads` so its global L2 norm is at most `max_norm`. Returns
/// the norm before clipping.
pub fn clip_global_norm<T: Real>(grads: &mut Gradients<T>, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}
