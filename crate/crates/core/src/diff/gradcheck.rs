use super::{Graph, Tensor, Var};
use crate::error::Result;

/// Compares the reverse-mode gradient of a scalar function against central
/// differences and returns `max_i |analytic_i − numeric_i| / max(1, |analytic_i|)`.
///
/// `f` builds the function on a fresh graph from the supplied input node.
pub fn grad_check<F>(f: F, input: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let x = g.input(input.clone());
    let y = f(&mut g, x)?;
    g.backward(y)?;
    let analytic = g
        .grad(x)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(input.rows(), input.cols()));

    let eval = |t: Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let x = g.constant(t);
        let y = f(&mut g, x)?;
        g.value(y).item()
    };

    let mut worst: f64 = 0.0;
    for k in 0..input.len() {
        let mut plus = input.clone();
        plus.data_mut()[k] += step;
        let mut minus = input.clone();
        minus.data_mut()[k] -= step;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * step);
        let a = analytic.data()[k];
        worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}
