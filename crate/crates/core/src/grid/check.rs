//! Central finite-difference gradient probes.

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Outcome of comparing analytic and numeric partial derivatives.
#[derive(Clone, Debug, Default)]
pub struct GradCheck {
    pub probes: usize,
    pub max_rel_err: f64,
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.probes > 0 && self.max_rel_err <= tol
    }
}

/// |a − n| / max(|a|, |n|, floor). The floor keeps near-zero partials from
/// turning roundoff of order 1e-11 into large relative errors.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub const REL_FLOOR: f64 = 1e-6;

/// Evaluates `f` on fresh tapes; every input is treated as a trainable leaf. `probes` lists `(input index, element index)`
/// pairs to perturb by ±`step`.
pub fn check_gradients<F>(
    inputs: &[Tensor],
    probes: &[(usize, usize)],
    step: f64,
    f: F,
) -> Result<GradCheck>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs
        .iter()
        .map(|t| tape.leaf(&t.clone().requiring_grad()))
        .collect();
    let loss = f(&tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.get(*v).map_or(vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();

    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.leaf(t)).collect();
        Ok(f(&tape, &vars)?.item())
    };

    let mut report = GradCheck::default();
    let mut work = inputs.to_vec();
    for &(ti, ei) in probes {
        let orig = work[ti].data()[ei];
        work[ti].data_mut()[ei] = orig + step;
        let up = eval(&work)?;
        work[ti].data_mut()[ei] = orig - step;
        let down = eval(&work)?;
        work[ti].data_mut()[ei] = orig;
        let numeric = (up - down) / (2.0 * step);
        let a = analytic[ti][ei];
        let err = rel_err(a, numeric, REL_FLOOR);
        report.probes += 1;
        if err > report.max_rel_err || report.worst.is_none() {
            report.max_rel_err = report.max_rel_err.max(err);
            if err >= report.max_rel_err {
                report.worst = Some((ti, ei, a, numeric));
            }
        }
    }
    Ok(report)
}
