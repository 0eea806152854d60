use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        Self {
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }
}

/// One bias-corrected Adam update applied in place.
pub fn adam_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    lr: f64,
    cfg: AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape("adam_step", (params.len(), grads.len(), state.m.len())));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::shape("adam_step", (p.shape(), g.shape())));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::from_f64(cfg.beta1), T::from_f64(cfg.beta2));
    let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
    let corr1 = T::from_f64(1.0 - cfg.beta1.powi(t));
    let corr2 = T::from_f64(1.0 - cfg.beta2.powi(t));
    let lr = T::from_f64(lr);
    let eps = T::from_f64(cfg.eps);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let pd = p.data_mut();
        let (md, vd) = (m.data_mut(), v.data_mut());
        for (i, &gi) in g.data().iter().enumerate() {
            md[i] = b1 * md[i] + one_b1 * gi;
            vd[i] = b2 * vd[i] + one_b2 * gi * gi;
            let m_hat = md[i] / corr1;
            let v_hat = vd[i] / corr2;
            pd[i] = pd[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Step decay: `lr0 * gamma^floor(epoch / step_size)`.
pub fn step_lr(lr0: f64, epoch: usize, step_size: usize, gamma: f64) -> f64 {
    lr0 * gamma.powi((epoch / step_size.max(1)) as i32)
}
