use super::{Tape, Tensor, Var};
use crate::Result;

fn eval<F>(f: &F, point: &Tensor) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.input("x", point.clone());
    let y = f(&mut tape, x)?;
    Ok(tape.value(y).item())
}

/// Central-difference gradient with the fourth-order five-point stencil
/// `(8 (f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h`.
pub fn numeric_gradient<F>(scalar_fn: F, point: &Tensor, step: f64) -> Result<Vec<f64>>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    let mut grad = Vec::with_capacity(point.len());
    let mut probe = point.clone();
    for i in 0..point.len() {
        let x0 = point.values()[i];
        let mut at = |dx: f64| -> Result<f64> {
            probe.values_mut()[i] = x0 + dx;
            eval(&scalar_fn, &probe)
        };
        let (p2, p1, m1, m2) = (at(2.0 * step)?, at(step)?, at(-step)?, at(-2.0 * step)?);
        probe.values_mut()[i] = x0;
        // differences first, so an input the function ignores gets exactly 0
        grad.push((8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * step));
    }
    Ok(grad)
}

/// Compares the tape gradient of `scalar_fn` at `point` with a central
/// difference. Returns `max_i |analytic_i - numeric_i| / max(|analytic_i|, 1e-12)`.
///
/// `scalar_fn` receives a fresh tape and the input leaf and must return a
/// one-element node.
pub fn finite_diff_check<F>(scalar_fn: F, point: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.input("x", point.clone());
    let y = scalar_fn(&mut tape, x)?;
    tape.backward(y)?;
    let analytic = tape
        .grad(x)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; point.len()]);
    let numeric = numeric_gradient(&scalar_fn, point, step)?;
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(1e-12))
        .fold(0.0, f64::max))
}
