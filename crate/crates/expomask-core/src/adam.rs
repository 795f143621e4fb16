//! Adam optimizer with bias correction.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::unet::UNetParams;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        AdamHyper {
            lr,
            ..Default::default()
        }
    }
}

/// First and second moment estimates, one tensor per parameter tensor in
/// the fixed [`UNetParams::tensors`] order.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub hyper: AdamHyper,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &UNetParams, hyper: AdamHyper) -> Self {
        let m: Vec<Tensor> = params
            .tensors()
            .into_iter()
            .map(|(_, t)| t.zeros_like())
            .collect();
        let v = m.clone();
        AdamState {
            hyper,
            step: 0,
            m,
            v,
        }
    }
}

/// One Adam update, in place:
/// `p -= lr * m_hat / (sqrt(v_hat) + eps)` with bias-corrected moments.
pub fn adam_step(params: &mut UNetParams, grads: &UNetParams, state: &mut AdamState) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let h = state.hyper;
    let m_corr = 1.0 - h.beta1.powi(t);
    let v_corr = 1.0 - h.beta2.powi(t);

    let mut p_tensors = params.tensors_mut();
    let g_tensors = grads.tensors();
    if p_tensors.len() != g_tensors.len()
        || p_tensors.len() != state.m.len()
    {
        return Err(Error::ShapeMismatch(
            "optimizer state does not match parameter structure".into(),
        ));
    }

    for (idx, ((p_name, p), (g_name, g))) in
        p_tensors.iter_mut().zip(g_tensors.iter()).enumerate()
    {
        if p_name != g_name || p.shape() != g.shape() {
            return Err(Error::ShapeMismatch(format!(
                "gradient tensor '{g_name}' does not match parameter '{p_name}'"
            )));
        }
        let m = state.m[idx].data_mut();
        let v = state.v[idx].data_mut();
        let pd = p.data_mut();
        for ((pv, &gv), (mv, vv)) in pd
            .iter_mut()
            .zip(g.data())
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            *mv = h.beta1 * *mv + (1.0 - h.beta1) * gv;
            *vv = h.beta2 * *vv + (1.0 - h.beta2) * gv * gv;
            let m_hat = *mv / m_corr;
            let v_hat = *vv / v_corr;
            *pv -= h.lr * m_hat / (v_hat.sqrt() + h.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::unet::UNetConfig;

    fn toy_params(seed: u64) -> UNetParams {
        UNetParams::init(
            &UNetConfig {
                input_channels: 3,
                channel_scale: 16,
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = toy_params(1);
        let before = params.clone();
        let grads = params.grads_like();
        let mut state = AdamState::new(&params, AdamHyper::default());
        adam_step(&mut params, &grads, &mut state).unwrap();
        assert_eq!(params, before);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn single_step_matches_the_recurrence_by_hand() {
        // Scalar parameter 0, gradient 1, defaults: m=0.1, v=0.001,
        // m_hat=1, v_hat=1, update = -lr / (1 + eps).
        let mut params = toy_params(2);
        for (_, t) in params.tensors_mut() {
            for x in t.data_mut() {
                *x = 0.0;
            }
        }
        let mut grads = params.grads_like();
        grads.head.bias.data_mut()[0] = 1.0;
        let mut state = AdamState::new(&params, AdamHyper::default());
        adam_step(&mut params, &grads, &mut state).unwrap();

        let m_hat = (0.1f64) / (1.0 - 0.9);
        let v_hat = (0.001f64) / (1.0 - 0.999);
        let expected = -(0.001 * m_hat / (v_hat.sqrt() + 1e-8));
        let got = params.head.bias.data()[0];
        assert!(
            (got - expected).abs() < 1e-15,
            "update {got} vs hand value {expected}"
        );
        // Everything without gradient stayed put.
        assert!(params.head.kernel.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mismatched_gradient_structure_is_rejected() {
        let mut params = toy_params(4);
        let other = UNetParams::init(
            &UNetConfig {
                input_channels: 1,
                channel_scale: 16,
            },
            4,
        )
        .unwrap();
        let grads = other.grads_like();
        let mut state = AdamState::new(&params, AdamHyper::default());
        assert!(adam_step(&mut params, &grads, &mut state).is_err());
    }

    #[test]
    fn identical_calls_from_identical_state_agree() {
        let run = || {
            let mut params = toy_params(3);
            let mut grads = params.grads_like();
            for (_, t) in grads.tensors_mut() {
                for (i, x) in t.data_mut().iter_mut().enumerate() {
                    *x = (i as f64 * 0.01).sin();
                }
            }
            let mut state = AdamState::new(&params, AdamHyper::default());
            for _ in 0..5 {
                adam_step(&mut params, &grads, &mut state).unwrap();
            }
            params
        };
        assert_eq!(run(), run());
    }
}
