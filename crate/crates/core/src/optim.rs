//! Adaptive-moment optimizer with a cosine-annealed step size.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Step-size schedule shared by every training loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schedule {
    pub steps: usize,
    pub lr: f64,
    pub lr_min: f64,
    /// Multiplier applied to the learning rate of grid-table latents.
    pub grid_lr_scale: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            steps: 1000,
            lr: 2e-3,
            lr_min: 1e-6,
            grid_lr_scale: 10.0,
        }
    }
}

impl Schedule {
    /// `lr_min + (lr - lr_min)(1 + cos(π t / steps)) / 2`
    pub fn lr_at(&self, step: usize) -> f64 {
        let total = self.steps.max(1) as f64;
        let t = (step as f64 / total).min(1.0);
        self.lr_min + 0.5 * (self.lr - self.lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(num_params: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    #[inline]
    fn update<T: Scalar>(&mut self, i: usize, p: &mut T, g: f64, lr: f64, c1: f64, c2: f64) {
        self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
        self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
        let mh = self.m[i] / c1;
        let vh = self.v[i] / c2;
        *p = T::of(p.f64() - lr * mh / (vh.sqrt() + self.eps));
    }

    fn advance(&mut self) -> (f64, f64) {
        self.t += 1;
        (
            1.0 - self.beta1.powi(self.t),
            1.0 - self.beta2.powi(self.t),
        )
    }

    /// One update with a per-parameter learning rate.
    pub fn step<T: Scalar>(&mut self, params: &mut [T], grad: &[f64], lr: impl Fn(usize) -> f64) {
        let (c1, c2) = self.advance();
        for (i, (p, &g)) in params.iter_mut().zip(grad).enumerate() {
            let rate = lr(i);
            self.update(i, p, g, rate, c1, c2);
        }
    }

    /// One update restricted to `indices`; every other parameter and its
    /// moment estimates stay untouched.
    pub fn step_indices<T: Scalar>(
        &mut self,
        params: &mut [T],
        grad: &[f64],
        lr: f64,
        indices: &[usize],
    ) {
        let (c1, c2) = self.advance();
        for &i in indices {
            let g = grad[i];
            let mut p = params[i];
            self.update(i, &mut p, g, lr, c1, c2);
            params[i] = p;
        }
    }
}
