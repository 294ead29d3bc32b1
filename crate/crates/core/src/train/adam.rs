//! Adam with bias correction. Weight decay defaults to the coupled form
//! (an L2 term added to the gradient before the moment updates); the
//! decoupled form is available behind a flag.

use crate::error::{Error, Result};
use crate::model::NamedTensors;
use crate::tensor::{Scalar, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct AdamState<S: Scalar> {
    pub m: Vec<Tensor<S>>,
    pub v: Vec<Tensor<S>>,
    pub step: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(params: &NamedTensors<S>) -> Self {
        AdamState {
            m: params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect(),
            v: params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect(),
            step: 0,
        }
    }
}

/// One update over every parameter. `grads` align with the registry order.
pub fn adam_step<S: Scalar>(
    params: &mut NamedTensors<S>,
    grads: &[Vec<S>],
    state: &mut AdamState<S>,
    lr: f64,
    weight_decay: f64,
    decoupled: bool,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::shape(
            "adam_step",
            format!("{} gradients for {} parameters", grads.len(), params.len()),
        ));
    }
    state.step += 1;
    let t = state.step;
    let bc1 = 1.0 - BETA1.powi(t as i32);
    let bc2 = 1.0 - BETA2.powi(t as i32);
    let (b1, b2) = (S::of(BETA1), S::of(BETA2));
    let (ib1, ib2) = (S::of(1.0 - BETA1), S::of(1.0 - BETA2));
    let (inv_bc1, inv_bc2) = (S::of(1.0 / bc1), S::of(1.0 / bc2));
    let lr_s = S::of(lr);
    let wd = S::of(weight_decay);
    let eps = S::of(EPS);

    for (idx, grad) in grads.iter().enumerate() {
        let p = &mut params.tensors_mut()[idx];
        if grad.len() != p.len() {
            return Err(Error::shape(
                "adam_step",
                format!(
                    "gradient length {} does not match parameter {} ({})",
                    grad.len(),
                    idx,
                    p.len()
                ),
            ));
        }
        for (i, &g) in grad.iter().enumerate() {
            if !g.is_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient element {i} of parameter {idx} is {g}"
                )));
            }
            let pv = p.data()[i];
            let g = if decoupled { g } else { g + wd * pv };
            let m = &mut state.m[idx].data_mut()[i];
            *m = b1 * *m + ib1 * g;
            let m_hat = *m * inv_bc1;
            let v = &mut state.v[idx].data_mut()[i];
            *v = b2 * *v + ib2 * g * g;
            let v_hat = *v * inv_bc2;
            let mut next = pv - lr_s * m_hat / (v_hat.sqrt() + eps);
            if decoupled {
                next = next - lr_s * wd * pv;
            }
            p.data_mut()[i] = next;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_param(v: f64) -> NamedTensors<f64> {
        let mut p = NamedTensors::new();
        p.add("w".to_string(), Tensor::scalar(v));
        p
    }

    #[test]
    fn zero_gradient_zero_decay_leaves_parameters_unchanged() {
        let mut params = single_param(1.25);
        let mut st = AdamState::new(&params);
        adam_step(&mut params, &[vec![0.0]], &mut st, 1e-3, 0.0, false).unwrap();
        assert_eq!(params.tensors()[0].item(), 1.25);
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        for g in [0.01, 1.0, -3.0] {
            let mut params = single_param(0.0);
            let mut st = AdamState::new(&params);
            adam_step(&mut params, &[vec![g]], &mut st, 1e-3, 0.0, false).unwrap();
            let moved = params.tensors()[0].item();
            // bias correction makes m_hat / sqrt(v_hat) ~ sign(g)
            assert!(
                (moved.abs() - 1e-3).abs() < 1e-5,
                "g {g} moved {moved}"
            );
            assert_eq!(moved.signum(), -g.signum());
        }
    }

    #[test]
    fn three_step_trace_matches_scalar_recursion() {
        let grads = [0.3f64, -0.2, 0.05];
        let lr = 1e-2;
        let wd = 1e-4;
        let mut params = single_param(0.5);
        let mut st = AdamState::new(&params);

        // independent scalar recursion
        let (mut p, mut m, mut v) = (0.5f64, 0.0f64, 0.0f64);
        for (k, &g_raw) in grads.iter().enumerate() {
            let t = (k + 1) as i32;
            let g = g_raw + wd * p;
            m = BETA1 * m + (1.0 - BETA1) * g;
            v = BETA2 * v + (1.0 - BETA2) * g * g;
            let mh = m / (1.0 - BETA1.powi(t));
            let vh = v / (1.0 - BETA2.powi(t));
            p -= lr * mh / (vh.sqrt() + EPS);
        }

        for &g in &grads {
            adam_step(&mut params, &[vec![g]], &mut st, lr, wd, false).unwrap();
        }
        assert!(
            (params.tensors()[0].item() - p).abs() < 1e-10,
            "{} vs {p}",
            params.tensors()[0].item()
        );
    }

    #[test]
    fn non_finite_gradient_aborts_with_diagnostics() {
        let mut params = single_param(0.0);
        let mut st = AdamState::new(&params);
        let err = adam_step(&mut params, &[vec![f64::NAN]], &mut st, 1e-3, 0.0, false).unwrap_err();
        assert!(err.to_string().contains("parameter 0"));
    }

    #[test]
    fn decoupled_decay_shrinks_weights_without_touching_moments() {
        let mut params = single_param(1.0);
        let mut st = AdamState::new(&params);
        adam_step(&mut params, &[vec![0.0]], &mut st, 0.1, 0.5, true).unwrap();
        // zero gradient: moments stay zero, update is only the decay term
        assert!((params.tensors()[0].item() - (1.0 - 0.1 * 0.5)).abs() < 1e-12);
        assert_eq!(st.m[0].item(), 0.0);
    }
}
