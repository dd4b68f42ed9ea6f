use serde::{Deserialize, Serialize};

use super::{ParamId, Params, Tensor};
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Tensor,
    pub v: Tensor,
    pub t: u64,
}

/// Adam with bias correction. Only parameters that receive a gradient
/// get state, so two instances over disjoint parameter sets never share any.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    states: Vec<Option<AdamState>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            states: Vec::new(),
        }
    }

    pub fn state(&self, id: ParamId) -> Option<&AdamState> {
        self.states.get(id.0).and_then(Option::as_ref)
    }

    pub fn tracked(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.states
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_some())
            .map(|(i, _)| ParamId(i))
    }

    /// Applies one update for each `(param, grad)` pair. Nothing is modified
    /// when any gradient is non-finite.
    pub fn step(&mut self, params: &mut Params, grads: &[(ParamId, Tensor)]) -> Result<()> {
        for (id, g) in grads {
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient);
            }
            if !g.same_shape(params.get(*id)) {
                return Err(Error::shape(
                    "adam_step",
                    format!("gradient {:?} for parameter {:?}", g.shape(), params.get(*id).shape()),
                ));
            }
        }
        for (id, g) in grads {
            let lr = self.lr;
            adam_step(params.get_mut(*id), g, self.slot(*id, g), lr);
        }
        Ok(())
    }

    fn slot(&mut self, id: ParamId, like: &Tensor) -> &mut AdamState {
        if self.states.len() <= id.0 {
            self.states.resize(id.0 + 1, None);
        }
        self.states[id.0].get_or_insert_with(|| AdamState {
            m: Tensor::zeros(like.rows(), like.cols()),
            v: Tensor::zeros(like.rows(), like.cols()),
            t: 0,
        })
    }
}

/// One bias-corrected Adam update of `param` in place.
pub fn adam_step(param: &mut Tensor, grad: &Tensor, state: &mut AdamState, lr: f64) {
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    let p = param.data_mut();
    let m = state.m.data_mut();
    let v = state.v.data_mut();
    for (k, g) in grad.data().iter().enumerate() {
        m[k] = BETA1 * m[k] + (1.0 - BETA1) * g;
        v[k] = BETA2 * v[k] + (1.0 - BETA2) * g * g;
        let m_hat = m[k] / c1;
        let v_hat = v[k] / c2;
        p[k] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut params = Params::new();
        let id = params.add("p", Tensor::row_vector(&[0.5, -1.0]));
        let mut adam = Adam::new(1e-3);
        for _ in 0..10 {
            adam.step(&mut params, &[(id, Tensor::zeros(1, 2))]).unwrap();
        }
        assert_eq!(params.get(id).data(), &[0.5, -1.0]);
    }

    #[test]
    fn first_step_matches_hand_evaluation() {
        // t=1: m̂ = g = 1, v̂ = g² = 1, Δ = lr · 1/(1 + ε).
        let mut params = Params::new();
        let id = params.add("p", Tensor::scalar(0.0));
        let mut adam = Adam::new(0.001);
        adam.step(&mut params, &[(id, Tensor::scalar(1.0))]).unwrap();
        let p = params.get(id).item().unwrap();
        let expected = -0.001 / (1.0 + 1e-8);
        assert!((p - expected).abs() < 1e-18);
        assert!((p - (-0.000_999_999_990)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut params = Params::new();
        let id = params.add("p", Tensor::scalar(0.0));
        let mut adam = Adam::new(0.1);
        let err = adam.step(&mut params, &[(id, Tensor::scalar(f64::NAN))]);
        assert!(matches!(err, Err(Error::NonFiniteGradient)));
        assert_eq!(params.get(id).item().unwrap(), 0.0);
    }

    #[test]
    fn disjoint_optimizers_keep_separate_state() {
        let mut params = Params::new();
        let a = params.add("a", Tensor::scalar(1.0));
        let b = params.add("b", Tensor::scalar(1.0));
        let mut opt_a = Adam::new(0.1);
        let mut opt_b = Adam::new(0.1);
        opt_a.step(&mut params, &[(a, Tensor::scalar(1.0))]).unwrap();
        opt_b.step(&mut params, &[(b, Tensor::scalar(-1.0))]).unwrap();
        assert!(opt_a.state(b).is_none());
        assert!(opt_b.state(a).is_none());
        assert_eq!(opt_a.tracked().collect::<Vec<_>>(), vec![a]);
        assert_eq!(opt_a.state(a).unwrap().t, 1);
    }
}
