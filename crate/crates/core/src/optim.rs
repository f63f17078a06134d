//! AdamW, cosine learning-rate annealing and gradient clipping.

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamKind, ParamStore};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Moment estimates for every trainable tensor of one store.
#[derive(Clone, Debug)]
pub struct OptimState<T> {
    pub step: u64,
    pub moments: Vec<Moments<T>>,
}

#[derive(Clone, Debug)]
pub struct Moments<T> {
    pub id: ParamId,
    pub m: Tensor<T>,
    pub v: Tensor<T>,
}

impl<T: Scalar> OptimState<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let moments = store
            .ids_of_kind(ParamKind::Trainable)
            .map(|id| {
                let s = store.value(id).shape();
                Moments {
                    id,
                    m: Tensor::zeros(s),
                    v: Tensor::zeros(s),
                }
            })
            .collect();
        OptimState { step: 0, moments }
    }
}

impl AdamW {
    /// One decoupled-weight-decay Adam update from the gradients held in
    /// `store`. Tensors without a gradient are left alone. Non-finite
    /// gradients abort before anything is modified.
    pub fn step<T: Scalar>(&self, store: &mut ParamStore<T>, state: &mut OptimState<T>, lr: f64) -> Result<()> {
        for mo in &state.moments {
            if let Some(g) = store.grad(mo.id) {
                if !g.all_finite() {
                    return Err(Error::NonFinite(format!("gradient of `{}`", store.name(mo.id))));
                }
            }
        }
        state.step += 1;
        let t = state.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (one, eps) = (T::one(), T::of(self.eps));
        let decay = T::of(1.0 - lr * self.weight_decay);
        let step_size = T::of(lr / bc1);
        let inv_bc2 = T::of(1.0 / bc2);
        for mo in &mut state.moments {
            let Some(g) = store.grad(mo.id).cloned() else {
                continue;
            };
            let p = store.value_mut(mo.id).data_mut();
            for (((p, &g), m), v) in p.iter_mut().zip(g.data()).zip(mo.m.data_mut()).zip(mo.v.data_mut()) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                *p = *p * decay - step_size * *m / ((*v * inv_bc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Rescale all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(store: &mut ParamStore<T>, max_norm: f64) -> f64 {
    let ids: Vec<ParamId> = store.ids_of_kind(ParamKind::Trainable).collect();
    let sq: f64 = ids
        .iter()
        .filter_map(|&id| store.grad(id))
        .flat_map(|g| g.data().iter().map(|v| v.f64() * v.f64()))
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = T::of(max_norm / (norm + 1e-6));
        for id in ids {
            if let Some(g) = store.grad_mut(id) {
                g.data_mut().iter_mut().for_each(|v| *v = *v * scale);
            }
        }
    }
    norm
}

/// Cosine annealing from `eta_max` at step 0 to `eta_min` at `total_steps`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Schedule {
    pub eta_max: f64,
    pub eta_min: f64,
    pub total_steps: u64,
}

impl Schedule {
    pub const ETA_MAX: f64 = 4e-4;
    pub const ETA_MIN: f64 = 4e-6;

    pub fn new(total_steps: u64) -> Self {
        Schedule {
            eta_max: Self::ETA_MAX,
            eta_min: Self::ETA_MIN,
            total_steps,
        }
    }
}

pub fn cosine_lr(step: u64, s: &Schedule) -> f64 {
    let step = if step > s.total_steps {
        log::warn!("step {step} beyond schedule length {}, clamped", s.total_steps);
        s.total_steps
    } else {
        step
    };
    if s.total_steps == 0 {
        return s.eta_max;
    }
    let frac = step as f64 / s.total_steps as f64;
    s.eta_min + 0.5 * (s.eta_max - s.eta_min) * (1.0 + (std::f64::consts::PI * frac).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> (ParamStore<f64>, ParamId) {
        let mut s = ParamStore::new();
        let id = s.insert("theta", Tensor::scalar(v), ParamKind::Trainable).unwrap();
        (s, id)
    }

    #[test]
    fn first_step_magnitude_is_lr() {
        let (mut s, id) = scalar_store(0.0);
        let mut st = OptimState::new(&s);
        s.accumulate_grad(id, &Tensor::scalar(1.0));
        let opt = AdamW {
            weight_decay: 0.0,
            ..AdamW::default()
        };
        opt.step(&mut s, &mut st, 1e-3).unwrap();
        assert!((s.value(id).item() + 1e-3).abs() < 1e-10);
    }

    #[test]
    fn pure_decay_without_gradient_signal() {
        let (mut s, id) = scalar_store(2.0);
        let mut st = OptimState::new(&s);
        s.accumulate_grad(id, &Tensor::scalar(0.0));
        let opt = AdamW {
            weight_decay: 0.1,
            ..AdamW::default()
        };
        opt.step(&mut s, &mut st, 0.01).unwrap();
        assert!((s.value(id).item() - 2.0 * (1.0 - 0.01 * 0.1)).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_descends() {
        let (mut s, id) = scalar_store(0.5);
        let mut st = OptimState::new(&s);
        for _ in 0..50 {
            s.zero_grads();
            s.accumulate_grad(id, &Tensor::scalar(-3.0));
            AdamW::default().step(&mut s, &mut st, 1e-2).unwrap();
        }
        assert!(s.value(id).item() > 0.5);
    }

    #[test]
    fn non_finite_gradient_aborts_untouched() {
        let (mut s, id) = scalar_store(1.0);
        let mut st = OptimState::new(&s);
        s.accumulate_grad(id, &Tensor::scalar(f64::NAN));
        assert!(AdamW::default().step(&mut s, &mut st, 1e-3).is_err());
        assert_eq!(s.value(id).item(), 1.0);
        assert_eq!(st.step, 0);
    }

    #[test]
    fn clipping_bounds_global_norm() {
        let mut s = ParamStore::<f64>::new();
        let a = s
            .insert("a", Tensor::zeros([1, 1, 1, 2]), ParamKind::Trainable)
            .unwrap();
        s.accumulate_grad(a, &Tensor::from_vec([1, 1, 1, 2], vec![3.0, 4.0]).unwrap());
        assert!((clip_grad_norm(&mut s, 1.0) - 5.0).abs() < 1e-12);
        let g = s.grad(a).unwrap().data();
        assert!(((g[0] * g[0] + g[1] * g[1]).sqrt() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn schedule_endpoints() {
        let s = Schedule::new(100);
        assert_eq!(cosine_lr(0, &s), 4e-4);
        assert!((cosine_lr(100, &s) - 4e-6).abs() < 1e-18);
        assert!((cosine_lr(50, &s) - (4e-4 + 4e-6) / 2.0).abs() < 1e-15);
        assert_eq!(cosine_lr(150, &s), cosine_lr(100, &s));
        let mut prev = f64::INFINITY;
        for k in 0..=100 {
            let lr = cosine_lr(k, &s);
            assert!(lr <= prev);
            prev = lr;
        }
    }
}
