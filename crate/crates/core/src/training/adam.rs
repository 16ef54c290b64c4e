//! Adam with bias correction.

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for every parameter of one store, by registration order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub cfg: AdamConfig,
    pub t: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(cfg: AdamConfig, store: &ParamStore<T>) -> Self {
        let zeros = || store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        Self {
            cfg,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update of every trainable parameter from its gradient, then zeroes
    /// all gradients. A non-finite gradient aborts before anything changes.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::contract(format!(
                "optimizer tracks {} parameters, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        for (_, p) in store.iter() {
            if p.trainable && !p.grad.all_finite() {
                return Err(Error::Numeric(format!("non-finite gradient for `{}`", p.name)));
            }
        }
        self.t += 1;
        let c = self.cfg;
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let (one_b1, one_b2) = (T::from_f64(1.0 - c.beta1), T::from_f64(1.0 - c.beta2));
        let correct1 = T::from_f64(1.0 - c.beta1.powi(self.t as i32));
        let correct2 = T::from_f64(1.0 - c.beta2.powi(self.t as i32));
        let (lr, eps) = (T::from_f64(c.lr), T::from_f64(c.eps));
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if !p.trainable {
                continue;
            }
            let grads = p.grad.data();
            let values = p.value.data_mut();
            for (((theta, &g), m), v) in values
                .iter_mut()
                .zip(grads)
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                let m_hat = *m / correct1;
                let v_hat = *v / correct2;
                *theta = *theta - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        store.zero_grad();
        Ok(())
    }
}

/// Rescales all trainable gradients so their joint norm is at most `max_norm`.
pub fn clip_grad_norm<T: Real>(store: &mut ParamStore<T>, max_norm: f64) -> f64 {
    let norm = store.grad_norm();
    if norm > max_norm && norm > 0.0 {
        store.scale_grads(T::from_f64(max_norm / norm));
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("theta", Tensor::vector(vec![v])).unwrap();
        s
    }

    fn set_grad(s: &mut ParamStore<f64>, g: f64) {
        s.iter_mut().next().unwrap().grad.data_mut()[0] = g;
    }

    fn value(s: &ParamStore<f64>) -> f64 {
        s.iter().next().unwrap().1.value.data()[0]
    }

    #[test]
    fn zero_gradient_leaves_parameters_and_counts_the_step() {
        let mut s = scalar_store(1.5);
        let mut adam = AdamState::new(AdamConfig::default(), &s);
        adam.step(&mut s).unwrap();
        assert_eq!(value(&s), 1.5);
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn first_step_has_closed_form_magnitude() {
        let cfg = AdamConfig::default();
        for g in [3.0, -0.02, 1e-9] {
            let mut s = scalar_store(0.0);
            let mut adam = AdamState::new(cfg, &s);
            set_grad(&mut s, g);
            adam.step(&mut s).unwrap();
            let delta = value(&s);
            // m̂ = g and v̂ = g² after one step
            let expected = cfg.lr * g.abs() / (g.abs() + cfg.eps);
            assert!((delta.abs() - expected).abs() < 1e-15, "{delta} vs {expected}");
            assert_eq!(delta.signum(), -g.signum());
        }
    }

    #[test]
    fn constant_gradient_steps_are_bounded_by_lr() {
        let cfg = AdamConfig::default();
        let mut s = scalar_store(0.0);
        let mut adam = AdamState::new(cfg, &s);
        let mut prev = value(&s);
        let mut last = 0.0;
        for _ in 0..2000 {
            set_grad(&mut s, 0.7);
            adam.step(&mut s).unwrap();
            let step = prev - value(&s);
            assert!(step > 0.0 && step <= cfg.lr * (1.0 + 1e-12));
            prev = value(&s);
            last = step;
        }
        assert!((last - cfg.lr).abs() < 1e-9);
    }

    #[test]
    fn hundred_steps_match_reference_iteration() {
        let cfg = AdamConfig {
            lr: 0.05,
            ..AdamConfig::default()
        };
        let (a, b) = (3.0, -1.25); // minimise a·(θ − b)²
        let mut s = scalar_store(2.0);
        let mut adam = AdamState::new(cfg, &s);
        let (mut theta, mut m, mut v) = (2.0f64, 0.0f64, 0.0f64);
        for t in 1..=100 {
            let g = 2.0 * a * (value(&s) - b);
            set_grad(&mut s, g);
            adam.step(&mut s).unwrap();

            let g = 2.0 * a * (theta - b);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let m_hat = m / (1.0 - 0.9f64.powi(t));
            let v_hat = v / (1.0 - 0.999f64.powi(t));
            theta -= 0.05 * m_hat / (v_hat.sqrt() + 1e-8);
            assert!((value(&s) - theta).abs() < 1e-12, "step {t}");
        }
    }

    #[test]
    fn non_finite_gradient_aborts_the_step() {
        let mut s = scalar_store(1.0);
        let mut adam = AdamState::new(AdamConfig::default(), &s);
        set_grad(&mut s, f64::NAN);
        assert!(matches!(adam.step(&mut s), Err(Error::Numeric(_))));
        assert_eq!((value(&s), adam.t), (1.0, 0));
    }

    #[test]
    fn frozen_parameters_do_not_move() {
        let mut s = scalar_store(1.0);
        s.add("frozen", Tensor::vector(vec![2.0])).unwrap();
        s.set_trainable_where(|n| n == "theta");
        for p in s.iter_mut() {
            p.grad.fill(1.0);
        }
        let mut adam = AdamState::new(AdamConfig::default(), &s);
        adam.step(&mut s).unwrap();
        assert_eq!(s.by_name("frozen").unwrap().value.data(), &[2.0]);
        assert!(s.by_name("frozen").unwrap().grad.data()[0] == 0.0);
        assert!(value(&s) < 1.0);
    }

    #[test]
    fn clipping_caps_the_norm() {
        let mut s = scalar_store(0.0);
        set_grad(&mut s, -10.0);
        assert_eq!(clip_grad_norm(&mut s, 2.0), 10.0);
        assert!((s.grad_norm() - 2.0).abs() < 1e-12);
    }
}
