//! Adam with optional linear learning-rate annealing.

use serde::{Deserialize, Serialize};

use super::ApproxError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerState {
    pub initial_lr: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub anneal: bool,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl OptimizerState {
    pub fn new(num_params: usize, lr: f64, anneal: bool) -> Self {
        Self {
            initial_lr: lr,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            anneal,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    /// Sets the learning rate for training progress `fraction ∈ [0, 1]`.
    /// Without annealing the rate stays at its initial value.
    pub fn set_progress(&mut self, fraction: f64) {
        if self.anneal {
            self.lr = self.initial_lr * (1.0 - fraction.clamp(0.0, 1.0));
        }
    }

    /// One bias-corrected Adam update. A non-finite gradient rejects the whole
    /// step and leaves parameters and moments untouched.
    pub fn apply(&mut self, params: &mut [f64], grad: &[f64]) -> Result<(), ApproxError> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(ApproxError::DimensionMismatch { what: "optimizer parameters", expected: self.m.len(), got: grad.len() });
        }
        if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
            return Err(ApproxError::NonFiniteGradient { index, value: grad[index] });
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(self.m.iter_mut()).zip(self.v.iter_mut()) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.epsilon);
        }
        Ok(())
    }
}

/// Rescales `grad` in place so its Euclidean norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= scale);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut opt = OptimizerState::new(3, 1e-3, false);
        let mut p = vec![1.0, -2.0, 0.5];
        opt.apply(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_is_learning_rate_sized() {
        let mut opt = OptimizerState::new(1, 0.001, false);
        let mut p = vec![0.0];
        opt.apply(&mut p, &[1.0]).unwrap();
        assert!((p[0] + 0.001).abs() < 1e-10);
    }

    #[test]
    fn annealing_is_linear() {
        let mut opt = OptimizerState::new(1, 5e-4, true);
        opt.set_progress(0.5);
        assert!((opt.lr - 2.5e-4).abs() < 1e-18);
        opt.set_progress(1.0);
        assert_eq!(opt.lr, 0.0);
        let mut fixed = OptimizerState::new(1, 5e-4, false);
        fixed.set_progress(0.5);
        assert_eq!(fixed.lr, 5e-4);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut opt = OptimizerState::new(2, 1e-3, false);
        let mut p = vec![1.0, 1.0];
        let err = opt.apply(&mut p, &[0.5, f64::NAN]).unwrap_err();
        assert!(matches!(err, ApproxError::NonFiniteGradient { index: 1, .. }));
        assert_eq!(p, vec![1.0, 1.0]);
        assert_eq!(opt.step, 0);
        assert!(opt.m.iter().chain(&opt.v).all(|x| *x == 0.0));
    }

    #[test]
    fn step_count_is_monotonic() {
        let mut opt = OptimizerState::new(1, 1e-3, false);
        let mut p = vec![0.0];
        for k in 1..=5 {
            opt.apply(&mut p, &[0.3]).unwrap();
            assert_eq!(opt.step, k);
        }
    }

    #[test]
    fn gradient_clipping_caps_norm() {
        let mut g = vec![3.0, 4.0];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
        let mut small = vec![0.1, 0.1];
        clip_grad_norm(&mut small, 1.0);
        assert_eq!(small, vec![0.1, 0.1]);
    }
}
