//! Adam optimizer and the feasible-set projection for nodal positions.

use crate::error::{Error, Result};

/// Hyperparameters shared by the gradient-based solvers.
///
/// Positions get a smaller learning rate than coefficients: the energy is
/// much stiffer in the nodal positions than in the mode coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub lr_coeff: f64,
    pub lr_position: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr_coeff: 1e-3,
            lr_position: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_iters: 20_000,
            grad_tol: 1e-8,
            seed: 42,
        }
    }
}

impl OptimizerConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_max_iters(mut self, m: usize) -> Self {
        assert!(m >= 1);
        self.max_iters = m;
        self
    }

    pub fn with_learning_rates(mut self, lr_coeff: f64, lr_position: f64) -> Self {
        assert!(lr_coeff > 0.0 && lr_position >= 0.0);
        self.lr_coeff = lr_coeff;
        self.lr_position = lr_position;
        self
    }

    pub fn with_grad_tol(mut self, tol: f64) -> Self {
        self.grad_tol = tol;
        self
    }
}

/// First/second moment accumulators for one parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: usize,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl Adam {
    pub fn new(n: usize, config: &OptimizerConfig) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
        }
    }

    pub fn iteration(&self) -> usize {
        self.step
    }

    /// One Adam update with bias correction; `lr[i]` is the per-parameter
    /// learning rate. Fails on a non-finite gradient.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: &[f64]) -> Result<()> {
        assert_eq!(params.len(), grad.len());
        assert_eq!(params.len(), lr.len());
        if let Some((i, g)) = grad.iter().enumerate().find(|(_, g)| !g.is_finite()) {
            return Err(Error::NonFiniteGradient {
                iteration: self.step,
                detail: format!("gradient component {i} is {g}"),
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr[i] * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

/// Project interior positions onto the monotone set with gap margin `eps`:
/// a forward pass enforces the gap from the left, a backward pass from the
/// right. Endpoints `a`, `b` are fixed.
pub fn project_monotone(interior: &mut [f64], a: f64, b: f64, eps: f64) {
    let n = interior.len();
    if n == 0 {
        return;
    }
    let mut prev = a;
    for x in interior.iter_mut() {
        if *x < prev + eps {
            *x = prev + eps;
        }
        prev = *x;
    }
    let mut next = b;
    for x in interior.iter_mut().rev() {
        if *x > next - eps {
            *x = next - eps;
        }
        next = *x;
    }
}
