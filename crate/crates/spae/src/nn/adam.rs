//! Adam with bias correction.

use super::NnError;

/// Optimizer state: first/second moment accumulators mirroring the flat
/// parameter vector, a step counter, and the hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    /// Learning rate; mutated by the plateau schedule during training.
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub const DEFAULT_ALPHA: f64 = 1e-3;

    pub fn new(n_params: usize, alpha: f64) -> Self {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            alpha,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One Adam update:
/// `m ← β1 m + (1−β1) g`, `v ← β2 v + (1−β2) g²`,
/// `θ ← θ − α · m̂ / (√v̂ + ε)` with `m̂ = m/(1−β1^t)`, `v̂ = v/(1−β2^t)`.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
) -> Result<(), NnError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(NnError::ShapeMismatch(format!(
            "params {}, grads {}, state {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let bc1 = 1.0 - state.beta1.powi(state.t as i32);
    let bc2 = 1.0 - state.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= state.alpha * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_params() {
        let mut params = vec![1.0, -2.0, 0.5];
        let mut state = AdamState::new(3, 1e-3);
        adam_step(&mut params, &[0.0, 0.0, 0.0], &mut state).unwrap();
        assert_eq!(params, vec![1.0, -2.0, 0.5]);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn single_step_matches_formula() {
        // Scalar 1.0, gradient 1.0, defaults: after one step
        // m̂ = v̂ = 1, so θ = 1 − 0.001/(1 + 1e-8) ≈ 0.999.
        let mut params = vec![1.0];
        let mut state = AdamState::new(1, AdamState::DEFAULT_ALPHA);
        adam_step(&mut params, &[1.0], &mut state).unwrap();
        let expect = 1.0 - 0.001 / (1.0 + 1e-8);
        assert!((params[0] - expect).abs() < 1e-15, "{} vs {expect}", params[0]);
    }

    #[test]
    fn successive_steps_move_against_gradient() {
        let mut params = vec![1.0];
        let mut state = AdamState::new(1, 1e-3);
        let mut prev = params[0];
        for _ in 0..5 {
            adam_step(&mut params, &[2.5], &mut state).unwrap();
            assert!(params[0] < prev, "positive gradient must decrease param");
            prev = params[0];
        }
        let mut params = vec![1.0];
        let mut state = AdamState::new(1, 1e-3);
        let mut prev = params[0];
        for _ in 0..5 {
            adam_step(&mut params, &[-2.5], &mut state).unwrap();
            assert!(params[0] > prev, "negative gradient must increase param");
            prev = params[0];
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut params = vec![0.0; 3];
        let mut state = AdamState::new(3, 1e-3);
        assert!(adam_step(&mut params, &[0.0; 2], &mut state).is_err());
        let mut wrong_state = AdamState::new(2, 1e-3);
        assert!(adam_step(&mut params, &[0.0; 3], &mut wrong_state).is_err());
    }
}
