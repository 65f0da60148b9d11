//! Finite-difference verification of analytic gradients.

use super::{Tape, TensorId};
use crate::error::{MovitError, Result};

/// Central-difference gradient of a scalar-valued graph builder at `x`.
///
/// `f` must rebuild the same graph from scratch on the tape it is given;
/// it receives `x` as a gradient-tracked leaf and returns the scalar
/// output tensor.
pub fn central_difference_grad<F>(f: &F, x: &[f64], shape: &[usize], step: f64) -> Result<Vec<f64>>
where
    F: Fn(&mut Tape<f64>, TensorId) -> Result<TensorId>,
{
    if step <= 0.0 {
        return Err(MovitError::Contract("step must be positive".into()));
    }
    let eval = |data: &[f64]| -> Result<f64> {
        let mut tape = Tape::new();
        let leaf = tape.leaf(data.to_vec(), shape.to_vec())?;
        let out = f(&mut tape, leaf)?;
        if tape.tensor(out).numel() != 1 {
            return Err(MovitError::Contract(
                "grad_check expects a scalar-valued function".into(),
            ));
        }
        let v = tape.data(out)[0];
        if !v.is_finite() {
            return Err(MovitError::NonFinite("grad_check function value".into()));
        }
        Ok(v)
    };
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let plus = eval(&probe)?;
        probe[i] = x[i] - step;
        let minus = eval(&probe)?;
        probe[i] = x[i];
        grad[i] = (plus - minus) / (2.0 * step);
    }
    Ok(grad)
}

/// Compares the analytic gradient of `f` at `x` against central
/// differences; returns the maximum relative error
/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-12)`.
pub fn grad_check<F>(f: F, x: &[f64], shape: &[usize], step: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, TensorId) -> Result<TensorId>,
{
    let mut tape = Tape::new();
    let leaf = tape.leaf(x.to_vec(), shape.to_vec())?;
    let out = f(&mut tape, leaf)?;
    if tape.tensor(out).numel() != 1 {
        return Err(MovitError::Contract(
            "grad_check expects a scalar-valued function".into(),
        ));
    }
    if !tape.data(out)[0].is_finite() {
        return Err(MovitError::NonFinite("grad_check function value".into()));
    }
    tape.backward(out)?;
    let analytic: Vec<f64> = match tape.grad(leaf) {
        Some(g) => g.to_vec(),
        None => vec![0.0; x.len()],
    };
    let numeric = central_difference_grad(&f, x, shape, step)?;
    let mut max_rel = 0.0f64;
    for (&a, &n) in analytic.iter().zip(&numeric) {
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-12);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}
