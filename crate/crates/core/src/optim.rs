//! Optimizers over flat parameter vectors.

use alloc::vec;
use alloc::vec::Vec;

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        debug_assert_eq!(params.len(), self.m.len());
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - libm::pow(self.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, t as f64);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (libm::sqrt(v_hat) + self.eps);
        }
    }
}

/// SGD with heavy-ball momentum and L2 weight decay folded into the
/// gradient: `v = μ v + (g + λ θ)`, `θ -= lr v`.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdMomentum {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<f64>,
}

impl SgdMomentum {
    pub fn new(len: usize, lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            momentum,
            weight_decay,
            velocity: vec![0.0; len],
        }
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        debug_assert_eq!(params.len(), self.velocity.len());
        for i in 0..params.len() {
            let g = grads[i] + self.weight_decay * params[i];
            self.velocity[i] = self.momentum * self.velocity[i] + g;
            params[i] -= self.lr * self.velocity[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_momentum_buffer_is_decayed_gradient() {
        let mut params = vec![1.0, -2.0];
        let grads = [0.5, 0.25];
        let mut opt = SgdMomentum::new(2, 0.1, 0.9, 5e-4);
        opt.update(&mut params, &grads);
        assert_eq!(opt.velocity(), &[0.5 + 5e-4 * 1.0, 0.25 + 5e-4 * -2.0]);
        assert!((params[0] - (1.0 - 0.1 * 0.5005)).abs() < 1e-15);
        // second step: v = 0.9 v1 + g2
        let v1 = opt.velocity()[0];
        let p1 = params[0];
        opt.update(&mut params, &grads);
        assert!((opt.velocity()[0] - (0.9 * v1 + 0.5 + 5e-4 * p1)).abs() < 1e-15);
    }

    #[test]
    fn zero_lr_leaves_params() {
        let mut params = vec![1.0, -2.0];
        let mut opt = SgdMomentum::new(2, 0.0, 0.9, 5e-4);
        opt.update(&mut params, &[3.0, 4.0]);
        assert_eq!(params, vec![1.0, -2.0]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // with bias correction the first step is lr * sign(g) (up to eps)
        let mut params = vec![0.0, 0.0];
        let mut opt = Adam::new(2, 1e-4);
        opt.update(&mut params, &[3.0, -0.01]);
        assert!((params[0] + 1e-4).abs() < 1e-10);
        assert!((params[1] - 1e-4).abs() < 1e-9);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut x = vec![5.0];
        let mut opt = Adam::new(1, 0.1);
        for _ in 0..500 {
            let g = [2.0 * (x[0] - 1.0)];
            opt.update(&mut x, &g);
        }
        assert!((x[0] - 1.0).abs() < 1e-2);
    }
}
