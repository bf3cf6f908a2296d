//! Bias-corrected Adam.

use crate::tensor::Tensor;

/// Per-parameter Adam state: first and second moment estimates plus the
/// shared hyperparameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(numel: usize, lr: f64) -> Self {
        AdamState {
            first_moment: vec![0.0; numel],
            second_moment: vec![0.0; numel],
            step_count: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam update applied elementwise:
///
/// ```text
/// m ← β₁·m + (1−β₁)·g        v ← β₂·v + (1−β₂)·g²
/// m̂ = m/(1−β₁ᵗ)              v̂ = v/(1−β₂ᵗ)
/// θ ← θ − lr · m̂ / (√v̂ + ε)
/// ```
pub fn adam_step(param: &mut Tensor, grad: &Tensor, state: &mut AdamState) {
    assert_eq!(
        param.shape, grad.shape,
        "adam_step: parameter shape {:?} vs gradient shape {:?}",
        param.shape, grad.shape
    );
    assert_eq!(state.first_moment.len(), param.numel(), "adam_step: state size mismatch");
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for k in 0..param.data.len() {
        let g = grad.data[k];
        state.first_moment[k] = state.beta1 * state.first_moment[k] + (1.0 - state.beta1) * g;
        state.second_moment[k] = state.beta2 * state.second_moment[k] + (1.0 - state.beta2) * g * g;
        let m_hat = state.first_moment[k] / bc1;
        let v_hat = state.second_moment[k] / bc2;
        param.data[k] -= state.lr * m_hat / (v_hat.sqrt() + state.epsilon);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_identity() {
        let mut p = Tensor::matrix(2, 2, vec![1.0, -0.5, 2.0, 0.25]);
        let before = p.data.clone();
        let g = Tensor::zeros(vec![2, 2]);
        // Fresh moments and zero gradient leave every element untouched,
        // whatever the hyperparameters.
        for lr in [1e-3, 0.1] {
            let mut st = AdamState::new(4, lr);
            st.beta1 = 0.5;
            adam_step(&mut p, &g, &mut st);
            assert_eq!(p.data, before);
            assert_eq!(st.step_count, 1);
        }
    }

    #[test]
    fn first_step_moves_by_roughly_the_learning_rate() {
        // θ=1, g=0.5, lr=1e-3: m̂=g, v̂=g², so the update is lr·g/(|g|+ε) ≈ lr.
        let mut p = Tensor::scalar(1.0);
        let g = Tensor::scalar(0.5);
        let mut st = AdamState::new(1, 1e-3);
        adam_step(&mut p, &g, &mut st);
        let expected = 1.0 - 1e-3 * 0.5 / (0.5 + 1e-8);
        assert!((p.data[0] - expected).abs() < 1e-15);
        assert!((p.data[0] - 0.999).abs() < 1e-9);
    }

    #[test]
    fn constant_gradient_descends_monotonically() {
        let mut p = Tensor::scalar(3.0);
        let g = Tensor::scalar(1.0);
        let mut st = AdamState::new(1, 1e-2);
        let v0 = p.data[0];
        adam_step(&mut p, &g, &mut st);
        let v1 = p.data[0];
        adam_step(&mut p, &g, &mut st);
        let v2 = p.data[0];
        assert!(v1 < v0 && v2 < v1, "expected strict descent: {v0} {v1} {v2}");
        assert_eq!(st.step_count, 2);
    }

    #[test]
    #[should_panic(expected = "adam_step: parameter shape")]
    fn shape_mismatch_panics() {
        let mut p = Tensor::zeros(vec![2]);
        let g = Tensor::zeros(vec![3]);
        adam_step(&mut p, &g, &mut AdamState::new(2, 1e-3));
    }
}
