//! Central finite-difference oracle for checking analytic gradients.
//!
//! Kept independent of the tape: it only evaluates the function on plain
//! tensors and perturbs one coordinate at a time.

use crate::autodiff::{Tape, Tensor};
use crate::error::Result;

/// Largest relative discrepancy found, with the input and element where it occurred.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_input: usize,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Relative error with a floor so that gradients that are both tiny
/// compare on an absolute scale.
pub fn rel_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Step `1e-5 * max(1, |x|)` central difference of scalar `f` at `inputs`.
pub fn numeric_gradient(
    f: &dyn Fn(&[Tensor]) -> Result<Tensor>,
    inputs: &[Tensor],
    which: usize,
) -> Result<Vec<f64>> {
    let base = inputs[which].to_vec();
    let mut out = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let h = 1e-5 * base[i].abs().max(1.0);
        let eval = |delta: f64| -> Result<f64> {
            let mut v = base.clone();
            v[i] += delta;
            let mut xs = inputs.to_vec();
            xs[which] = Tensor::new(inputs[which].shape(), v)?;
            f(&xs)?.item()
        };
        out.push((eval(h)? - eval(-h)?) / (2.0 * h));
    }
    Ok(out)
}

/// Compares the tape gradient of scalar `f` against central differences for
/// every input listed in `check`.
pub fn check_gradients(
    f: &dyn Fn(&[Tensor]) -> Result<Tensor>,
    inputs: &[Tensor],
    check: &[usize],
    floor: f64,
) -> Result<GradCheck> {
    let tape = Tape::new();
    let leaves: Vec<Tensor> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let out = f(&leaves)?;
    let grads = out.backward(false)?;
    let mut worst = GradCheck {
        max_rel_error: 0.0,
        worst_input: 0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    for &w in check {
        let analytic = grads.get_or_zeros(&leaves[w]);
        let numeric = numeric_gradient(f, inputs, w)?;
        for (i, (a, n)) in analytic.data().iter().zip(&numeric).enumerate() {
            let e = rel_error(*a, *n, floor);
            if e > worst.max_rel_error {
                worst = GradCheck {
                    max_rel_error: e,
                    worst_input: w,
                    worst_index: i,
                    analytic: *a,
                    numeric: *n,
                };
            }
        }
    }
    Ok(worst)
}
