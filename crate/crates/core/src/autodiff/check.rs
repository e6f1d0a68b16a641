//! Central finite-difference gradient checks.

use super::{Array, Tape, Var};
use crate::error::Result;

/// Outcome of a gradient check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
}

/// Floor for the relative-error denominator so that gradients that are
/// zero up to rounding do not blow up the ratio.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// Compares reverse-mode gradients of `f` against central differences with
/// step `h`, for every value of every input array (or every `stride`-th
/// value when `stride > 1`).
pub fn check_gradients<F>(inputs: &[Array], h: f64, stride: usize, f: F) -> Result<GradCheck>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|a| tape.var(a.clone())).collect();
    let out = f(&tape, &vars)?;
    let grads = out.backward()?;
    let analytic: Vec<Array> = vars.iter().map(|v| grads.wrt(*v)).collect();

    let eval = |arrays: &[Array]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = arrays.iter().map(|a| tape.var(a.clone())).collect();
        Ok(f(&tape, &vars)?.item())
    };

    let mut work = inputs.to_vec();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut counter = 0usize;
    for i in 0..work.len() {
        for j in 0..work[i].len() {
            counter += 1;
            if stride > 1 && counter % stride != 0 {
                continue;
            }
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - h;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[i].data()[j];
            let denom = a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
            worst = worst.max((a - numeric).abs() / denom);
            checked += 1;
        }
    }
    Ok(GradCheck {
        max_rel_error: worst,
        checked,
    })
}
