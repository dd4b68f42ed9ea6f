//! Dense `f64` tensors with tape-based reverse-mode differentiation.
//!
//! A [`Graph`] is built per forward pass. Model parameters live in a
//! [`Params`] store and are bound into a graph either as trainable leaves or
//! as constants, which is how one component's parameters are frozen while the
//! other's loss is optimised. Reductions run left to right so identical
//! inputs give bit-identical values and gradients.

mod adam;
mod gradcheck;
mod graph;
mod mlp;
mod params;
mod tensor;

pub use adam::{adam_step, Adam, AdamState, BETA1, BETA2, EPSILON};
pub use gradcheck::grad_check;
pub use graph::{matmul_plain, Graph, Var};
pub use mlp::{Activation, Linear, Mlp, LEAKY_SLOPE};
pub use params::{glorot_uniform, uniform, ParamId, Params};
pub use tensor::{cosine_distance, dot, norm2, Tensor};

pub(crate) use graph::softmax_in_place;
