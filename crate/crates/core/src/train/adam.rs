//! Adam with bias correction and a step-decay learning-rate schedule.

use crate::autodiff::{ParamStore, Real};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// `lr * decay^floor(step / every)`; `every == 0` disables decay.
pub fn scheduled_lr(lr: f64, decay: f64, every: u64, step: u64) -> f64 {
    if every == 0 {
        return lr;
    }
    lr * decay.powi((step / every).min(i32::MAX as u64) as i32)
}

#[derive(Debug, Clone, Default)]
pub struct Adam {
    pub cfg: AdamConfig,
    /// Steps skipped because a gradient was not finite.
    pub skipped: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam { cfg, skipped: 0 }
    }

    /// Applies one update from the accumulated gradients in `store`, then
    /// clears them. A non-finite gradient skips the update, bumps `skipped`
    /// and returns false.
    pub fn step<F: Real>(&mut self, store: &mut ParamStore<F>, lr: f64) -> bool {
        let finite = store.iter().all(|(_, p)| p.grad.iter().all(|g| g.is_finite()));
        if !finite {
            self.skipped += 1;
            log::warn!("non-finite gradient at step {}, update skipped", store.step);
            store.zero_grad();
            return false;
        }
        store.step += 1;
        let t = store.step as i32;
        let AdamConfig { beta1: b1, beta2: b2, eps } = self.cfg;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let (b1f, b2f) = (F::of(b1), F::of(b2));
        let (ob1, ob2) = (F::of(1.0 - b1), F::of(1.0 - b2));
        let step_size = F::of(lr / c1);
        let (inv_sqrt_c2, epsf) = (F::of(1.0 / c2.sqrt()), F::of(eps));
        for p in store.iter_mut() {
            if p.adam_m.is_empty() {
                p.adam_m = vec![F::zero(); p.grad.len()];
                p.adam_v = vec![F::zero(); p.grad.len()];
            }
            let data = p.value.data_mut();
            for i in 0..data.len() {
                let g = p.grad[i];
                let m = b1f * p.adam_m[i] + ob1 * g;
                let v = b2f * p.adam_v[i] + ob2 * g * g;
                p.adam_m[i] = m;
                p.adam_v[i] = v;
                data[i] -= step_size * m / ((v.sqrt() * inv_sqrt_c2) + epsf);
                p.grad[i] = F::zero();
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn scalar_store(x: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("x", Tensor::new(vec![1], vec![x]).unwrap()).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_values() {
        let mut s = scalar_store(2.5);
        let mut adam = Adam::default();
        adam.cfg = AdamConfig::default();
        assert!(adam.step(&mut s, 0.1));
        assert_eq!(s.iter().next().unwrap().1.value.data(), &[2.5]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn quadratic_converges() {
        // f(x) = (x - 3)^2, minimum at 3
        let mut s = scalar_store(-4.0);
        let mut adam = Adam::new(AdamConfig::default());
        let mut steps = 0;
        loop {
            let x = s.iter().next().unwrap().1.value.data()[0];
            if (x - 3.0).abs() < 1e-6 || steps == 2000 {
                break;
            }
            s.iter_mut().next().unwrap().grad[0] = 2.0 * (x - 3.0);
            adam.step(&mut s, 0.1);
            steps += 1;
        }
        let x = s.iter().next().unwrap().1.value.data()[0];
        assert!((x - 3.0).abs() < 1e-6, "x = {x} after {steps} steps");
    }

    #[test]
    fn non_finite_gradient_skips() {
        let mut s = scalar_store(1.0);
        let mut adam = Adam::new(AdamConfig::default());
        s.iter_mut().next().unwrap().grad[0] = f64::NAN;
        assert!(!adam.step(&mut s, 0.1));
        assert_eq!((adam.skipped, s.step), (1, 0));
        assert_eq!(s.iter().next().unwrap().1.value.data(), &[1.0]);
        assert_eq!(s.iter().next().unwrap().1.grad, vec![0.0]);
    }

    #[test]
    fn schedule() {
        assert_eq!(scheduled_lr(0.1, 0.7, 100, 99), 0.1);
        assert!((scheduled_lr(0.1, 0.7, 100, 100) - 0.07).abs() < 1e-15);
        assert!((scheduled_lr(0.1, 0.7, 100, 250) - 0.049).abs() < 1e-15);
        assert_eq!(scheduled_lr(0.1, 0.7, 0, 10_000), 0.1);
    }
}
