use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::glorot_uniform;
use super::{Graph, ParamId, Params, Tensor, Var};
use crate::error::{Error, Result};

/// Slope of the negative half of LeakyReLU.
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Tanh,
    LeakyRelu,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Tanh => g.tanh(x),
            Activation::LeakyRelu => g.leaky_relu(x, LEAKY_SLOPE),
        }
    }
}

/// `y = x · W + b` with `W: in × out` and `b: 1 × out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Glorot-uniform weight, zero bias.
    pub fn new<R: Rng>(
        params: &mut Params,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Self {
        let weight = params.add(format!("{name}.weight"), glorot_uniform(rng, in_dim, out_dim));
        let bias = params.add(format!("{name}.bias"), Tensor::zeros(1, out_dim));
        Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, params: &Params, x: Var, trainable: bool) -> Result<Var> {
        let w = g.param(params, self.weight, trainable);
        let b = g.param(params, self.bias, trainable);
        let xw = g.matmul(x, w)?;
        g.add_row(xw, b)
    }

    pub fn param_ids(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }

    /// Overwrites the weights; used to build hand-constructed maps in tests.
    pub fn assign(&self, params: &mut Params, weight: Tensor, bias: Tensor) -> Result<()> {
        if weight.shape() != (self.in_dim, self.out_dim) || bias.shape() != (1, self.out_dim) {
            return Err(Error::shape(
                "Linear::assign",
                format!("weight {:?}, bias {:?}", weight.shape(), bias.shape()),
            ));
        }
        params.set(self.weight, weight);
        params.set(self.bias, bias);
        Ok(())
    }
}

/// Stack of linear layers, each followed by its own activation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activations: Vec<Activation>,
}

impl Mlp {
    /// `dims = [in, hidden.., out]`, one activation per layer.
    pub fn new<R: Rng>(
        params: &mut Params,
        rng: &mut R,
        name: &str,
        dims: &[usize],
        activations: &[Activation],
    ) -> Self {
        assert_eq!(dims.len(), activations.len() + 1, "one activation per layer");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(params, rng, &format!("{name}.{i}"), w[0], w[1]))
            .collect();
        Mlp {
            layers,
            activations: activations.to_vec(),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn forward(&self, g: &mut Graph, params: &Params, x: Var, trainable: bool) -> Result<Var> {
        let cols = g.value(x).cols();
        if cols != self.in_dim() {
            return Err(Error::shape(
                "Mlp::forward",
                format!("input has {cols} columns, expected {}", self.in_dim()),
            ));
        }
        let mut h = x;
        for (layer, act) in self.layers.iter().zip(&self.activations) {
            h = layer.forward(g, params, h, trainable)?;
            h = act.apply(g, h);
        }
        Ok(h)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(Linear::param_ids).collect()
    }

    /// Sets every weight and bias to zero.
    pub fn zero_out(&self, params: &mut Params) {
        for id in self.param_ids() {
            let (r, c) = params.get(id).shape();
            params.set(id, Tensor::zeros(r, c));
        }
    }
}
