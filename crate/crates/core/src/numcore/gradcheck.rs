use crate::error::Result;

use super::{Tape, Tensor, Var};

/// Compares tape gradients against central finite differences.
///
/// `loss_fn` rebuilds the computation on a fresh tape from the given leaf
/// handles and returns the scalar loss. The result is the maximum over every
/// leaf entry of `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(leaves: &[Tensor], h: f64, loss_fn: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let analytic = analytic_grads(leaves, &loss_fn)?;

    let mut worst: f64 = 0.0;
    let mut probe: Vec<Tensor> = leaves.to_vec();
    for (li, grad) in analytic.iter().enumerate() {
        for k in 0..leaves[li].len() {
            let original = leaves[li].data()[k];
            probe[li].data_mut()[k] = original + h;
            let plus = eval(&probe, &loss_fn)?;
            probe[li].data_mut()[k] = original - h;
            let minus = eval(&probe, &loss_fn)?;
            probe[li].data_mut()[k] = original;

            let numeric = (plus - minus) / (2.0 * h);
            let a = grad.data()[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

/// Runs `loss_fn` once and returns the gradient of every leaf.
pub fn analytic_grads<F>(leaves: &[Tensor], loss_fn: &F) -> Result<Vec<Tensor>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = loss_fn(&mut tape, &vars)?;
    tape.backward(loss)?;
    Ok(vars
        .iter()
        .map(|&v| tape.grad(v).expect("backward sets every leaf gradient"))
        .collect())
}

fn eval<F>(leaves: &[Tensor], loss_fn: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = loss_fn(&mut tape, &vars)?;
    tape.value(loss).item()
}
