//! Central-difference verification of reverse-mode gradients.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Compare the analytic gradient of a scalar function against central
/// differences. Returns the max over elements of
/// `|analytic - central| / max(1, |analytic|)`.
pub fn finite_difference_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    assert!(eps > 0.0, "finite_difference_check: eps must be > 0");
    let mut g = Graph::new();
    let xv = g.leaf(x.clone(), true);
    let loss = f(&mut g, xv)?;
    g.backward(loss)?;
    let analytic = g.take_grad(xv).expect("leaf requires grad");

    let eval = |t: &Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.leaf(t.clone(), false);
        let loss = f(&mut g, v)?;
        Ok(g.value(loss).item())
    };

    let mut max_err: f64 = 0.0;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let hi = eval(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let lo = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let central = (hi - lo) / (2.0 * eps);
        let a = analytic.data()[i];
        let err = (a - central).abs() / a.abs().max(1.0);
        max_err = max_err.max(err);
    }
    Ok(max_err)
}
