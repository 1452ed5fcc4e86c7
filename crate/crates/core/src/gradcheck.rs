//! Central finite-difference gradient checking.
//!
//! Only forward evaluations are used on the numeric side, so the check is
//! independent of every backward rule it validates.

use alloc::vec::Vec;

use crate::error::Result;
use crate::tensor::Tensor;

/// Relative error with an absolute floor, `|a − n| / max(|a|, |n|, 1e-3)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-3);
    (analytic - numeric).abs() / denom
}

/// Outcome of one [`check`] call.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub max_rel_error: f64,
    /// `(input index, element index)` of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Compare reverse-mode gradients of the scalar `f(inputs)` with central
/// differences of step `h`, over every element of every input.
pub fn check<F>(f: F, inputs: &[(Vec<f64>, Vec<usize>)], h: f64) -> Result<GradReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let params = inputs
        .iter()
        .map(|(d, s)| Tensor::param(d.clone(), s))
        .collect::<Result<Vec<_>>>()?;
    f(&params)?.backward()?;
    let analytic: Vec<Vec<f64>> = params.iter().map(|p| p.grad().unwrap_or_default()).collect();

    let eval = |which: usize, idx: usize, delta: f64| -> Result<f64> {
        let consts = inputs
            .iter()
            .enumerate()
            .map(|(i, (d, s))| {
                let mut d = d.clone();
                if i == which {
                    d[idx] += delta;
                }
                Tensor::new(d, s)
            })
            .collect::<Result<Vec<_>>>()?;
        f(&consts)?.item()
    };

    let mut report = GradReport { max_rel_error: 0.0, worst: (0, 0), checked: 0 };
    for (i, (d, _)) in inputs.iter().enumerate() {
        for j in 0..d.len() {
            let numeric = (eval(i, j, h)? - eval(i, j, -h)?) / (2.0 * h);
            let err = relative_error(analytic[i][j], numeric);
            report.checked += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (i, j);
            }
        }
    }
    Ok(report)
}
