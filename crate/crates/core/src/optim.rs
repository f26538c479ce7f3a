//! Adam optimizer with bias correction.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Adam state: first and second moment estimates per parameter tensor plus
/// the shared step counter.
pub struct AdamState {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    /// Fresh state (zero moments, step 0) for parameters with the given shapes.
    pub fn new(shapes: &[&[usize]]) -> AdamState {
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update over all parameters.
///
/// `params[i]` is updated in place from `grads[i]`; parameter order must
/// match the order the state was created with. The update is elementwise, so
/// two identical calls from the same state produce identical results.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut [Arc<Tensor>],
    grads: &[Tensor],
    lr: f32,
) -> Result<()> {
    if params.len() != state.m.len() || grads.len() != state.m.len() {
        return Err(Error::Contract(format!(
            "adam_step: state has {} slots, got {} params / {} grads",
            state.m.len(),
            params.len(),
            grads.len()
        )));
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - (state.beta1 as f64).powf(t);
    let bc2 = 1.0 - (state.beta2 as f64).powf(t);
    for i in 0..params.len() {
        if params[i].shape() != grads[i].shape() {
            return Err(Error::Shape {
                op: "adam_step",
                left: params[i].shape().to_vec(),
                right: grads[i].shape().to_vec(),
            });
        }
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        // Clone-on-write: no copy when the trainer holds the only reference.
        let p = Arc::make_mut(&mut params[i]).data_mut();
        let g = grads[i].data();
        for j in 0..p.len() {
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
            let mh = m[j] as f64 / bc1;
            let vh = v[j] as f64 / bc2;
            p[j] -= (lr as f64 * mh / (vh.sqrt() + state.eps as f64)) as f32;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradients_leave_params_unchanged_and_advance_step() {
        let mut state = AdamState::new(&[&[2, 2]]);
        let before = vec![1.0f32, -2.0, 0.5, 3.0];
        let mut params = vec![Arc::new(
            Tensor::from_vec(&[2, 2], before.clone()).unwrap(),
        )];
        let grads = vec![Tensor::zeros(&[2, 2])];
        adam_step(&mut state, &mut params, &grads, 1e-3).unwrap();
        assert_eq!(params[0].data(), &before[..]);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn single_step_moves_against_gradient() {
        let mut state = AdamState::new(&[&[1]]);
        let mut params = vec![Arc::new(Tensor::from_vec(&[1], vec![1.0]).unwrap())];
        let grads = vec![Tensor::from_vec(&[1], vec![2.0]).unwrap()];
        adam_step(&mut state, &mut params, &grads, 0.1).unwrap();
        // With bias correction the first step is lr * g / (|g| + ~0) = lr.
        assert!((params[0].data()[0] - (1.0 - 0.1)).abs() < 1e-4);
    }

    #[test]
    fn identical_histories_produce_identical_params() {
        let run = || {
            let mut state = AdamState::new(&[&[3]]);
            let mut params = vec![Arc::new(
                Tensor::from_vec(&[3], vec![0.3, -0.7, 1.2]).unwrap(),
            )];
            for s in 0..10 {
                let g = Tensor::from_vec(&[3], vec![0.1 * s as f32, -0.2, 0.05]).unwrap();
                adam_step(&mut state, &mut params, &[g], 3e-3).unwrap();
            }
            params[0].data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn mismatched_param_count_is_an_error() {
        let mut state = AdamState::new(&[&[1]]);
        let mut params = vec![];
        assert!(adam_step(&mut state, &mut params, &[], 0.1).is_err());
    }
}
