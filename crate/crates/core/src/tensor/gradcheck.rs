use crate::error::{GkdError, Result};

use super::{Tape, Tensor, Var};

/// Central-difference step.
pub const GRAD_CHECK_EPS: f64 = 1e-5;

/// Compares tape gradients of a scalar function against central finite
/// differences and returns the worst relative error
/// `|analytic − numeric| / max(1e-8, |analytic| + |numeric|)` over every
/// coordinate of every parameter.
///
/// `f` rebuilds the computation on a fresh tape from the parameter leaves it
/// is handed; it must return a 1×1 value.
pub fn grad_check<F>(params: &[Tensor], f: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
    let loss = f(&mut tape, &vars)?;
    check_finite(tape.value(loss), "loss")?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| {
            tape.grad(v)
                .unwrap_or_else(|| Tensor::zeros(p.rows(), p.cols()))
        })
        .collect();
    drop(tape);

    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.constant(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let value = tape.value(out).item();
        if !value.is_finite() {
            return Err(GkdError::Numeric("perturbed loss".into()));
        }
        Ok(value)
    };

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = params.iter().map(Tensor::detached).collect();
    for (p, grad) in analytic.iter().enumerate() {
        check_finite(grad, "analytic gradient")?;
        for k in 0..work[p].data().len() {
            let orig = work[p].data()[k];
            work[p].data_mut()[k] = orig + GRAD_CHECK_EPS;
            let plus = eval(&work)?;
            work[p].data_mut()[k] = orig - GRAD_CHECK_EPS;
            let minus = eval(&work)?;
            work[p].data_mut()[k] = orig;

            let numeric = (plus - minus) / (2.0 * GRAD_CHECK_EPS);
            let a = grad.data()[k];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

fn check_finite(t: &Tensor, what: &str) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(GkdError::Numeric(what.into()))
    }
}
