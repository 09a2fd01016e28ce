//! Bias-corrected Adam.

use super::OptimError;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First/second moment estimates and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One bias-corrected update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> Result<(), OptimError> {
        assert_eq!(params.len(), self.m.len(), "parameter length mismatch");
        assert_eq!(grad.len(), self.m.len(), "gradient length mismatch");
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(OptimError::NonFiniteGradient);
        }
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut state = AdamState::new(4);
        let mut p = vec![1.0, -2.0, 0.5, 3.0];
        let before = p.clone();
        state.step(&mut p, &[0.0; 4], 1e-2).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_is_signed_learning_rate() {
        let mut rng = substream(31, "adam-test");
        let lr = 1e-3;
        for _ in 0..50 {
            let g: f64 = if rng.gen::<bool>() {
                rng.gen_range(1e-3..10.0)
            } else {
                -rng.gen_range(1e-3..10.0)
            };
            let mut state = AdamState::new(1);
            let mut p = vec![0.0];
            state.step(&mut p, &[g], lr).unwrap();
            let update = -p[0];
            assert!(update.abs() >= 0.999 * lr && update.abs() <= lr, "g={g}");
            assert_eq!(update.signum(), g.signum());
        }
    }

    #[test]
    fn identical_calls_give_identical_results() {
        let mut rng = substream(32, "adam-test");
        let g: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let run = || {
            let mut state = AdamState::new(8);
            let mut p = vec![0.1; 8];
            for _ in 0..5 {
                state.step(&mut p, &g, 1e-2).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradient_is_an_error() {
        let mut state = AdamState::new(2);
        let mut p = vec![0.0, 0.0];
        let err = state.step(&mut p, &[1.0, f64::NAN], 1e-2).unwrap_err();
        assert_eq!(err, OptimError::NonFiniteGradient);
    }
}
