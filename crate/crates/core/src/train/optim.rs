//! Optimizers and gradient clipping.

use crate::autograd::{ParamId, ParamStore};
use crate::error::{shape_err, Result};
use crate::tensor::{Scalar, Tensor};

/// Whether an optimizer step changed the parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// A gradient contained NaN or infinity; parameters are untouched.
    SkippedNonFinite,
}

#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
        }
    }
}

pub const ADAM_BETAS: (f64, f64) = (0.9, 0.999);
pub const ADAM_EPS: f64 = 1e-8;

/// One AdamW update of a single tensor at step `t` (1-based): decoupled
/// decay `theta *= 1 - lr * wd`, then the bias-corrected Adam step.
pub fn adamw_step<T: Scalar>(
    param: &mut [T],
    grad: &[T],
    state: &mut AdamState<T>,
    t: u64,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if param.len() != grad.len() || state.m.len() != param.len() {
        return Err(shape_err!(
            "adamw_step: parameter, gradient and state lengths differ"
        ));
    }
    let (b1, b2) = (T::lit(ADAM_BETAS.0), T::lit(ADAM_BETAS.1));
    let one = T::one();
    let bc1 = one - T::lit(ADAM_BETAS.0.powi(t as i32));
    let bc2 = one - T::lit(ADAM_BETAS.1.powi(t as i32));
    let lr_t = T::lit(lr);
    let decay = one - T::lit(lr * weight_decay);
    let eps = T::lit(ADAM_EPS);
    for i in 0..param.len() {
        let g = grad[i];
        state.m[i] = b1 * state.m[i] + (one - b1) * g;
        state.v[i] = b2 * state.v[i] + (one - b2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        param[i] = param[i] * decay - lr_t * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub enum OptimizerKind {
    Sgd { momentum: f64, weight_decay: f64 },
    AdamW { weight_decay: f64 },
}

enum Slots<T> {
    Sgd(Vec<Option<Vec<T>>>),
    Adam(Vec<Option<AdamState<T>>>),
}

pub struct Optimizer<T> {
    kind: OptimizerKind,
    slots: Slots<T>,
    steps: u64,
}

fn all_finite<T: Scalar>(grads: &[(ParamId, Tensor<T>)]) -> bool {
    grads.iter().all(|(_, g)| g.all_finite())
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, store: &ParamStore<T>) -> Self {
        let n = store.len();
        let slots = match kind {
            OptimizerKind::Sgd { .. } => Slots::Sgd((0..n).map(|_| None).collect()),
            OptimizerKind::AdamW { .. } => Slots::Adam((0..n).map(|_| None).collect()),
        };
        Self {
            kind,
            slots,
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(
        &mut self,
        store: &mut ParamStore<T>,
        grads: &[(ParamId, Tensor<T>)],
        lr: f64,
    ) -> Result<StepOutcome> {
        if !all_finite(grads) {
            return Ok(StepOutcome::SkippedNonFinite);
        }
        self.steps += 1;
        match (&self.kind, &mut self.slots) {
            (OptimizerKind::AdamW { weight_decay }, Slots::Adam(states)) => {
                for (id, g) in grads {
                    let p = store.get_mut(*id);
                    let st = states[id.index()].get_or_insert_with(|| AdamState::new(p.len()));
                    adamw_step(p.data_mut(), g.data(), st, self.steps, lr, *weight_decay)?;
                }
            }
            (
                OptimizerKind::Sgd {
                    momentum,
                    weight_decay,
                },
                Slots::Sgd(vel),
            ) => {
                let (mu, wd, lr_t) = (T::lit(*momentum), T::lit(*weight_decay), T::lit(lr));
                for (id, g) in grads {
                    let p = store.get_mut(*id);
                    let v = vel[id.index()].get_or_insert_with(|| vec![T::zero(); p.len()]);
                    for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                        let d = gv + wd * *pv;
                        *vv = mu * *vv + d;
                        *pv -= lr_t * *vv;
                    }
                }
            }
            _ => unreachable!("slots match optimizer kind"),
        }
        Ok(StepOutcome::Applied)
    }
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(grads: &mut [(ParamId, Tensor<T>)], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|(_, g)| g.sq_norm()).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = T::lit(max_norm / norm);
        for (_, g) in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: &[f64]) -> (ParamStore<f64>, ParamId) {
        let mut s = ParamStore::new();
        let id = s
            .add(
                "p",
                Tensor::new(vec![values.len()], values.to_vec()).unwrap(),
            )
            .unwrap();
        (s, id)
    }

    #[test]
    fn zero_grad_no_decay_is_noop() {
        let (mut s, id) = store_with(&[0.5, -1.0]);
        let mut opt = Optimizer::new(OptimizerKind::AdamW { weight_decay: 0.0 }, &s);
        let g = vec![(id, Tensor::zeros(vec![2]).unwrap())];
        opt.step(&mut s, &g, 1e-3).unwrap();
        assert_eq!(s.get(id).data(), &[0.5, -1.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut s, id) = store_with(&[0.0]);
        let mut opt = Optimizer::new(OptimizerKind::AdamW { weight_decay: 0.0 }, &s);
        let g = vec![(id, Tensor::ones(vec![1]).unwrap())];
        opt.step(&mut s, &g, 1e-3).unwrap();
        let want = -1e-3 / (1.0 + 1e-8);
        assert!((s.get(id).data()[0] - want).abs() < 1e-15);
    }

    #[test]
    fn decoupled_decay_without_gradient() {
        let (mut s, id) = store_with(&[2.0, -4.0]);
        let mut opt = Optimizer::new(OptimizerKind::AdamW { weight_decay: 0.1 }, &s);
        let g = vec![(id, Tensor::zeros(vec![2]).unwrap())];
        opt.step(&mut s, &g, 0.01).unwrap();
        assert_eq!(
            s.get(id).data(),
            &[2.0 * (1.0 - 0.001), -4.0 * (1.0 - 0.001)]
        );
    }

    #[test]
    fn non_finite_gradients_skip_the_step() {
        let (mut s, id) = store_with(&[1.0]);
        let mut opt = Optimizer::new(OptimizerKind::AdamW { weight_decay: 0.0 }, &s);
        let g = vec![(id, Tensor::full(vec![1], f64::NAN).unwrap())];
        assert_eq!(
            opt.step(&mut s, &g, 0.1).unwrap(),
            StepOutcome::SkippedNonFinite
        );
        assert_eq!(s.get(id).data(), &[1.0]);
        assert_eq!(opt.steps(), 0);
    }

    #[test]
    fn sgd_momentum_accumulates() {
        let (mut s, id) = store_with(&[0.0]);
        let mut opt = Optimizer::new(
            OptimizerKind::Sgd {
                momentum: 0.5,
                weight_decay: 0.0,
            },
            &s,
        );
        let g = vec![(id, Tensor::ones(vec![1]).unwrap())];
        opt.step(&mut s, &g, 0.1).unwrap();
        opt.step(&mut s, &g, 0.1).unwrap();
        assert!((s.get(id).data()[0] + 0.1 * (1.0 + 1.5)).abs() < 1e-15);
    }

    #[test]
    fn clipping() {
        let (_, id) = store_with(&[0.0]);
        let mut g = vec![(id, Tensor::new(vec![2], vec![3.0f64, 4.0]).unwrap())];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0].1.data()[0] - 0.6).abs() < 1e-15);
        assert!((g[0].1.data()[1] - 0.8).abs() < 1e-15);

        let mut small = vec![(id, Tensor::new(vec![2], vec![0.3f64, 0.4]).unwrap())];
        clip_grad_norm(&mut small, 1.0);
        assert_eq!(small[0].1.data(), &[0.3, 0.4]);

        for scale in [0.01, 0.5, 2.0, 30.0] {
            let mut g = vec![
                (
                    id,
                    Tensor::new(vec![3], vec![scale, -scale * 2.0, scale * 0.5]).unwrap(),
                ),
                (id, Tensor::new(vec![1], vec![scale * 1.5]).unwrap()),
            ];
            let before = clip_grad_norm(&mut g, 1.0);
            let after: f64 = g.iter().map(|(_, t)| t.sq_norm()).sum::<f64>().sqrt();
            assert!((after - before.min(1.0)).abs() < 1e-6);
        }
    }
}
