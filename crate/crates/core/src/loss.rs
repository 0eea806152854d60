//! Supervised pose losses and their learned homoscedastic weighting.
//!
//! The total is `Σ exp(-s_k) L_k + s_k` over the rotation, translation and
//! translation-direction terms, with each `s_k` trainable and starting at 0.

use nalgebra::Vector3;

use crate::autodiff::{Bound, ParamId, ParamStore, Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::{UnitQuaternion, QUAT_EPS};

/// Minimum translation norm (meters) for the direction term.
pub const DIRECTION_EPS: f64 = 1e-6;

/// Ids of the three trainable loss scalars.
#[derive(Clone, Copy, Debug)]
pub struct LossWeights {
    pub s_q: ParamId,
    pub s_t: ParamId,
    pub s_tn: ParamId,
}

impl LossWeights {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>) -> Self {
        Self {
            s_q: store.insert("loss.s_q", Tensor::scalar(T::zero())),
            s_t: store.insert("loss.s_t", Tensor::scalar(T::zero())),
            s_tn: store.insert("loss.s_tn", Tensor::scalar(T::zero())),
        }
    }

    pub fn values<T: Scalar>(&self, store: &ParamStore<T>) -> [f64; 3] {
        [self.s_q, self.s_t, self.s_tn].map(|id| store.get(id).item().as_f64())
    }
}

/// L1 distance between the normalized, sign-canonicalized prediction and `q`.
pub fn loss_rotation<T: Scalar>(tape: &mut Tape<T>, q_hat: Var, q: &UnitQuaternion) -> Result<Var> {
    if tape.shape(q_hat) != [4] {
        return Err(Error::shape("loss_rotation", tape.shape(q_hat)));
    }
    let norm = tape.l2_norm(q_hat)?;
    let n = tape.value(norm).item().as_f64();
    if !(n > QUAT_EPS) {
        return Err(Error::NearZeroQuaternion { norm: n });
    }
    let mut unit = tape.div_scalar(q_hat, norm)?;
    if tape.value(unit).data()[0] < T::zero() {
        unit = tape.scalar_mul(unit, -1.0)?;
    }
    let target = tape.constant(Tensor::from_f64(&[4], &q.to_array())?);
    let diff = tape.sub(unit, target)?;
    tape.l1_norm(diff)
}

/// `‖t̂ - t‖₁`.
pub fn loss_translation<T: Scalar>(tape: &mut Tape<T>, t_hat: Var, t: &Vector3<f64>) -> Result<Var> {
    let target = tape.constant(Tensor::from_f64(&[3], t.as_slice())?);
    let diff = tape.sub(t_hat, target)?;
    tape.l1_norm(diff)
}

/// `‖t̂/‖t̂‖ - t/‖t‖‖₂`; undefined for near-zero vectors.
pub fn loss_translation_normalized<T: Scalar>(tape: &mut Tape<T>, t_hat: Var, t: &Vector3<f64>) -> Result<Var> {
    let t_norm = t.norm();
    if !(t_norm > DIRECTION_EPS) {
        return Err(Error::DegenerateDirection { norm: t_norm });
    }
    let norm = tape.l2_norm(t_hat)?;
    let n = tape.value(norm).item().as_f64();
    if !(n > DIRECTION_EPS) {
        return Err(Error::DegenerateDirection { norm: n });
    }
    let dir = tape.div_scalar(t_hat, norm)?;
    let target = tape.constant(Tensor::from_f64(&[3], (t / t_norm).as_slice())?);
    let diff = tape.sub(dir, target)?;
    tape.l2_norm(diff)
}

/// `exp(-s) * loss + s` for one term.
pub fn weighted_term<T: Scalar>(tape: &mut Tape<T>, loss: Var, s: Var) -> Result<Var> {
    let neg = tape.scalar_mul(s, -1.0)?;
    let w = tape.exp(neg)?;
    let scaled = tape.mul(w, loss)?;
    tape.add(scaled, s)
}

/// Learned-weight total; a missing direction term drops both its parts.
pub fn loss_total<T: Scalar>(
    tape: &mut Tape<T>,
    p: &Bound,
    weights: &LossWeights,
    l_q: Var,
    l_t: Var,
    l_tn: Option<Var>,
) -> Result<Var> {
    let a = weighted_term(tape, l_q, p.var(weights.s_q))?;
    let b = weighted_term(tape, l_t, p.var(weights.s_t))?;
    let mut total = tape.add(a, b)?;
    if let Some(l_tn) = l_tn {
        let c = weighted_term(tape, l_tn, p.var(weights.s_tn))?;
        total = tape.add(total, c)?;
    }
    Ok(total)
}

/// Scalar reference of [`loss_total`].
pub fn loss_total_value(l_q: f64, l_t: f64, l_tn: f64, s: [f64; 3]) -> f64 {
    [l_q, l_t, l_tn]
        .iter()
        .zip(s)
        .map(|(l, s)| (-s).exp() * l + s)
        .sum()
}
