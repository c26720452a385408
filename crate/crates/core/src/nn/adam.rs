use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// ADAM optimizer state over a flattened parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(num_params: usize, learning_rate: f64) -> Self {
        AdamState {
            first_moment: vec![0.0; num_params],
            second_moment: vec![0.0; num_params],
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// One bias-corrected ADAM update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        let n = self.first_moment.len();
        for (context, len) in [("adam params", params.len()), ("adam gradient", grad.len())] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    context,
                    expected: n,
                    actual: len,
                });
            }
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..n {
            let g = grad[i];
            let m = self.beta1 * self.first_moment[i] + (1.0 - self.beta1) * g;
            let v = self.beta2 * self.second_moment[i] + (1.0 - self.beta2) * g * g;
            self.first_moment[i] = m;
            self.second_moment[i] = v;
            params[i] -= self.learning_rate * (m / c1) / ((v / c2).sqrt() + self.epsilon);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut s = AdamState::new(2, 0.1);
        s.first_moment = vec![1.0, -2.0];
        s.second_moment = vec![4.0, 1.0];
        let mut p = vec![0.5, 0.25];
        // Non-zero moments still move the parameters; reset them to isolate decay.
        let before = p.clone();
        let mut frozen = s.clone();
        frozen.first_moment = vec![0.0, 0.0];
        frozen.step(&mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p, before);
        assert_eq!(frozen.second_moment, vec![4.0 * 0.999, 1.0 * 0.999]);

        let mut q = vec![0.0, 0.0];
        s.step(&mut q, &[0.0, 0.0]).unwrap();
        assert_eq!(s.first_moment, vec![0.9, -1.8]);
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn first_step_moves_against_gradient_sign() {
        let lr = 0.01;
        let mut s = AdamState::new(3, lr);
        let g = [0.3, -2.0, 1e-3];
        let mut p = vec![0.0; 3];
        s.step(&mut p, &g).unwrap();
        for (pi, gi) in p.iter().zip(g) {
            // m_hat = g and v_hat = g^2 after bias correction.
            let expected = -lr * gi / (gi.abs() + 1e-8);
            assert!((pi - expected).abs() < 1e-12, "{pi} vs {expected}");
            assert_eq!(pi.signum(), -gi.signum());
        }
    }

    #[test]
    fn step_count_increments_by_one() {
        let mut s = AdamState::new(1, 0.1);
        let mut p = vec![0.0];
        for k in 1..=5 {
            s.step(&mut p, &[1.0]).unwrap();
            assert_eq!(s.step_count, k);
        }
    }

    #[test]
    fn non_finite_gradient_errors() {
        let mut s = AdamState::new(1, 0.1);
        let mut p = vec![0.0];
        assert!(s.step(&mut p, &[f64::INFINITY]).is_err());
        assert_eq!(s.step_count, 0);
    }
}
