//! Adaptive-moment optimizer with bias-corrected first and second moments.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;

#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Adam {
            beta1,
            beta2,
            epsilon,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    /// One update: `params -= lr * m_hat / (sqrt(v_hat) + epsilon)`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        debug_assert_eq!(params.len(), self.m.len());
        debug_assert_eq!(grad.len(), self.m.len());
        self.step += 1;
        let bc1 = 1.0 - libm::pow(self.beta1, self.step as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, self.step as f64);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (math::sqrt(v_hat) + self.epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        // With bias correction, the very first update is lr * g / (|g| + eps),
        // i.e. essentially lr in the gradient's direction.
        let mut adam = Adam::new(1, 0.9, 0.999, 1e-8);
        let mut p = [1.0];
        adam.step(&mut p, &[0.5], 1e-2);
        let expected = 1.0 - 1e-2 * 0.5 / (0.5 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn two_steps_match_hand_computed_recurrence() {
        let (b1, b2, eps, lr) = (0.9, 0.999, 1e-8, 0.1);
        let mut adam = Adam::new(1, b1, b2, eps);
        let mut p = [0.0];
        let (g1, g2) = (1.0, -2.0);
        adam.step(&mut p, &[g1], lr);
        adam.step(&mut p, &[g2], lr);

        let m1 = (1.0 - b1) * g1;
        let v1 = (1.0 - b2) * g1 * g1;
        let p1 = 0.0 - lr * (m1 / (1.0 - b1)) / ((v1 / (1.0 - b2)).sqrt() + eps);
        let m2 = b1 * m1 + (1.0 - b1) * g2;
        let v2 = b2 * v1 + (1.0 - b2) * g2 * g2;
        let p2 = p1
            - lr * (m2 / (1.0 - b1 * b1)) / ((v2 / (1.0 - b2 * b2)).sqrt() + eps);
        assert!((p[0] - p2).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_leaves_params_fixed() {
        let mut adam = Adam::new(3, 0.9, 0.999, 1e-8);
        let mut p = [1.0, -2.0, 3.0];
        let before = p;
        adam.step(&mut p, &[0.0; 3], 0.1);
        assert_eq!(p, before);
    }
}
