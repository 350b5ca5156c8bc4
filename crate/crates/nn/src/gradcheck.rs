//! Central finite-difference checks for graph gradients.

use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Compares the backprop gradient of `f` at `x` with central differences.
///
/// `f` builds a scalar output from a single input node. `floor` guards the
/// relative error for near-zero gradient entries.
pub fn check<F>(x: &Tensor<f64>, step: f64, floor: f64, f: F) -> GradCheckReport
where
    F: for<'g> Fn(&'g Graph<f64>, Var<'g, f64>) -> Var<'g, f64>,
{
    let g = Graph::new();
    let xv = g.input(x.clone());
    let y = f(&g, xv);
    let grads = g.backward(y);
    let analytic: Vec<f64> = grads
        .get(xv)
        .map(|t| t.data().to_vec())
        .unwrap_or_else(|| vec![0.0; x.len()]);

    let eval = |t: Tensor<f64>| {
        let g = Graph::new();
        let v = g.constant(t);
        f(&g, v).item()
    };
    let numeric: Vec<f64> = (0..x.len())
        .map(|i| {
            let mut plus = x.clone();
            plus.data_mut()[i] += step;
            let mut minus = x.clone();
            minus.data_mut()[i] -= step;
            (eval(plus) - eval(minus)) / (2.0 * step)
        })
        .collect();

    let mut max_rel_err = 0.0;
    let mut worst_index = 0;
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(floor);
        if rel > max_rel_err {
            max_rel_err = rel;
            worst_index = i;
        }
    }
    GradCheckReport { max_rel_err, worst_index, analytic, numeric }
}
