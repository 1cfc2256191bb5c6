//! Adam optimizer with bias correction.

use super::Element;
use crate::error::{Error, Result};

/// Optimizer state: one pair of moment buffers per parameter, in parameter
/// storage precision.
#[derive(Debug, Clone)]
pub struct AdamState<T: Element> {
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub first_moment: Vec<Vec<T>>,
    pub second_moment: Vec<Vec<T>>,
}

impl<T: Element> AdamState<T> {
    pub fn new(param_lens: &[usize], learning_rate: f64) -> Self {
        AdamState {
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            first_moment: param_lens.iter().map(|&l| vec![T::ZERO; l]).collect(),
            second_moment: param_lens.iter().map(|&l| vec![T::ZERO; l]).collect(),
        }
    }
}

/// One Adam update over a parameter list. Moment math runs in f64 and is
/// stored back in parameter precision, so an f32 run round-trips exactly
/// through f32 checkpoints.
pub fn adam_step<T: Element>(
    params: &mut [Vec<T>],
    grads: &[Option<Vec<T>>],
    state: &mut AdamState<T>,
) -> Result<()> {
    if params.len() != grads.len()
        || params.len() != state.first_moment.len()
        || params.len() != state.second_moment.len()
    {
        return Err(Error::State(format!(
            "adam_step: {} params, {} grads, {} moment buffers",
            params.len(),
            grads.len(),
            state.first_moment.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        match g {
            None => {
                return Err(Error::State(format!(
                    "adam_step: parameter {i} has no gradient"
                )))
            }
            Some(g) if g.len() != p.len() => {
                return Err(Error::State(format!(
                    "adam_step: parameter {i} has {} elements, gradient has {}",
                    p.len(),
                    g.len()
                )))
            }
            _ => {}
        }
    }

    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);

    for (i, param) in params.iter_mut().enumerate() {
        let grad = grads[i].as_ref().unwrap();
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        for j in 0..param.len() {
            let g = grad[j].to_f64();
            let m_new = state.beta1 * m[j].to_f64() + (1.0 - state.beta1) * g;
            let v_new = state.beta2 * v[j].to_f64() + (1.0 - state.beta2) * g * g;
            m[j] = T::from_f64(m_new);
            v[j] = T::from_f64(v_new);
            let m_hat = m[j].to_f64() / bc1;
            let v_hat = v[j].to_f64() / bc2;
            let update = state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
            param[j] = T::from_f64(param[j].to_f64() - update);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_noop() {
        let mut params = vec![vec![1.5f64, -0.25, 3.0]];
        let before = params.clone();
        let grads = vec![Some(vec![0.0; 3])];
        let mut state = AdamState::new(&[3], 1e-4);
        adam_step(&mut params, &grads, &mut state).unwrap();
        assert_eq!(params, before);
        assert_eq!(state.step_count, 1);
    }

    #[test]
    fn first_step_magnitude_is_lr_times_sign() {
        // With bias correction, m_hat = g and v_hat = g^2, so the first
        // update is lr * g / (|g| + eps) which is approximately lr * sign(g).
        let lr = 1e-3;
        let mut params = vec![vec![0.7f64, -0.2]];
        let grads = vec![Some(vec![4.0, -0.5])];
        let mut state = AdamState::new(&[2], lr);
        adam_step(&mut params, &grads, &mut state).unwrap();
        assert!((params[0][0] - (0.7 - lr)).abs() < 1e-8);
        assert!((params[0][1] - (-0.2 + lr)).abs() < 1e-8);
    }

    #[test]
    fn descends_on_quadratic() {
        // f(x) = x^2 from x = 1; gradient 2x.
        let mut params = vec![vec![1.0f64]];
        let mut state = AdamState::new(&[1], 0.05);
        let f = |x: f64| x * x;
        let start = f(params[0][0]);
        for _ in 0..2 {
            let g = 2.0 * params[0][0];
            adam_step(&mut params, &[Some(vec![g])], &mut state).unwrap();
        }
        assert!(f(params[0][0]) < start);
    }

    #[test]
    fn missing_grad_is_state_error() {
        let mut params = vec![vec![1.0f32]];
        let mut state = AdamState::new(&[1], 1e-4);
        let err = adam_step(&mut params, &[None], &mut state).unwrap_err();
        assert!(matches!(err, Error::State(_)));
    }
}
