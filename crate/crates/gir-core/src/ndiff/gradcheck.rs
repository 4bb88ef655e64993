//! Finite-difference gradient verification.
//!
//! `build` constructs a scalar loss on a fresh tape from the given leaf
//! variables; the same builder is re-run under perturbed inputs to form
//! central-difference estimates.

use super::{Tape, Tensor, Var};

/// Largest relative error between analytic and central-difference gradients
/// across every entry of every input tensor.
///
/// Relative error is |a - n| / max(1e-6, |a| + |n|), so agreement on
/// near-zero gradients is judged absolutely.
pub fn max_relative_error(
    inputs: &[Tensor],
    step: f64,
    build: impl Fn(&mut Tape, &[Var]) -> Var,
) -> f64 {
    let eval = |tensors: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors.iter().map(|t| tape.param(t)).collect();
        let loss = build(&mut tape, &vars);
        tape.value(loss).item()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t)).collect();
    let loss = build(&mut tape, &vars);
    let grads = tape.backward(loss).expect("loss must be scalar");

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var);
        for j in 0..work[pi].data.len() {
            let orig = work[pi].data[j];
            work[pi].data[j] = orig + step;
            let plus = eval(&work);
            work[pi].data[j] = orig - step;
            let minus = eval(&work);
            work[pi].data[j] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.data[j];
            let denom = (a.abs() + numeric.abs()).max(1e-6);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    worst
}
