//! Central finite-difference verification of analytic gradients.

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Outcome of a gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(input, element)` of the worst entry.
    pub worst: Option<(usize, usize)>,
    /// Analytic and numeric derivative at `worst`.
    pub worst_values: Option<(f64, f64)>,
    pub checked: usize,
    pub tol: f64,
    pub floor: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tol
    }
}

/// Denominator floor used by [`relative_error`]. Central differences at
/// eps 1e-4 carry ~1e-11 of round-off on O(1) objectives, so derivatives
/// below this are compared absolutely (to `tol · 1e-6`).
pub const DEFAULT_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    relative_error_floor(analytic, numeric, DEFAULT_FLOOR)
}

/// `|a - n| / max(|a|, |n|, floor)`. Below `floor` the comparison becomes
/// absolute, which keeps derivatives at the round-off level of the central
/// difference from dominating.
pub fn relative_error_floor(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Checks the tape gradient of a scalar function of one tensor against
/// central differences at every element.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    grad_check_many(
        |tape, vars| f(tape, vars[0]),
        std::slice::from_ref(x),
        None,
        eps,
        tol,
    )
}

/// Multi-input variant. `coords` restricts the numeric side to the listed
/// `(input, element)` pairs; `None` checks everything.
pub fn grad_check_many<F>(
    f: F,
    inputs: &[Tensor<f64>],
    coords: Option<&[(usize, usize)]>,
    eps: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    grad_check_many_floor(f, inputs, coords, eps, tol, DEFAULT_FLOOR)
}

/// [`grad_check_many`] with an explicit denominator floor.
pub fn grad_check_many_floor<F>(
    f: F,
    inputs: &[Tensor<f64>],
    coords: Option<&[(usize, usize)]>,
    eps: f64,
    tol: f64,
    floor: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.get(v)).collect();

    let all: Vec<(usize, usize)>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = inputs
                .iter()
                .enumerate()
                .flat_map(|(i, t)| (0..t.len()).map(move |e| (i, e)))
                .collect();
            &all
        }
    };
    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };
    compare(eval, inputs, &analytic, coords, eps, tol, floor)
}

/// Compares a caller-supplied analytic gradient against central differences
/// of `value`. Used directly to exercise deliberately wrong gradients.
pub fn compare_with_numeric<F>(
    value: F,
    x: &Tensor<f64>,
    analytic: &Tensor<f64>,
    eps: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&Tensor<f64>) -> Result<f64>,
{
    let coords: Vec<(usize, usize)> = (0..x.len()).map(|e| (0, e)).collect();
    compare(
        |ts: &[Tensor<f64>]| value(&ts[0]),
        std::slice::from_ref(x),
        std::slice::from_ref(analytic),
        &coords,
        eps,
        tol,
        DEFAULT_FLOOR,
    )
}

fn compare<F>(
    eval: F,
    inputs: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    coords: &[(usize, usize)],
    eps: f64,
    tol: f64,
    floor: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor<f64>]) -> Result<f64>,
{
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        worst_values: None,
        checked: 0,
        tol,
        floor,
    };
    for &(i, e) in coords {
        let orig = work[i].data()[e];
        work[i].data_mut()[e] = orig + eps;
        let plus = eval(&work)?;
        work[i].data_mut()[e] = orig - eps;
        let minus = eval(&work)?;
        work[i].data_mut()[e] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic[i].data()[e];
        let err = relative_error_floor(a, numeric, floor);
        report.checked += 1;
        if report.worst.is_none() || err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst = Some((i, e));
            report.worst_values = Some((a, numeric));
        }
    }
    Ok(report)
}
