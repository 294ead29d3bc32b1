//! Central finite-difference verification of tape gradients.

use super::{Scalar, Tape, Tensor, VarId};
use crate::error::Result;

/// One disagreement between analytic and numeric gradients.
#[derive(Clone, Debug)]
pub struct FdFailure {
    pub input: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Outcome of a finite-difference sweep. Failures are reported, not thrown.
#[derive(Clone, Debug, Default)]
pub struct FdReport {
    pub probes: usize,
    pub max_rel_err: f64,
    pub failures: Vec<FdFailure>,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Numeric gradient of a scalar-valued graph by central differences,
/// one entry per element of each `requires_grad` input.
pub fn numeric_grads<S, F>(f: &F, inputs: &[Tensor<S>], h: f64) -> Result<Vec<Vec<f64>>>
where
    S: Scalar,
    F: Fn(&mut Tape<S>, &[VarId]) -> Result<VarId>,
{
    let eval = |probe: &[Tensor<S>]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<VarId> = probe.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &ids)?;
        Ok(tape.value(out).item().to_f64())
    };
    let mut grads = Vec::with_capacity(inputs.len());
    for (i, input) in inputs.iter().enumerate() {
        if !input.requires_grad_flag() {
            grads.push(Vec::new());
            continue;
        }
        let mut g = Vec::with_capacity(input.len());
        for e in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[e] += S::of(h);
            let fp = eval(&plus)?;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[e] += S::of(-h);
            let fm = eval(&minus)?;
            g.push((fp - fm) / (2.0 * h));
        }
        grads.push(g);
    }
    Ok(grads)
}

/// Analytic gradients from one forward/backward pass.
pub fn analytic_grads<S, F>(f: &F, inputs: &[Tensor<S>]) -> Result<Vec<Vec<f64>>>
where
    S: Scalar,
    F: Fn(&mut Tape<S>, &[VarId]) -> Result<VarId>,
{
    let mut tape = Tape::new();
    let ids: Vec<VarId> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &ids)?;
    tape.backward(out)?;
    Ok(ids
        .iter()
        .zip(inputs)
        .map(|(&id, input)| {
            if !input.requires_grad_flag() {
                return Vec::new();
            }
            tape.grad(id)
                .map(|g| g.iter().map(|v| v.to_f64()).collect())
                .unwrap_or_else(|| vec![0.0; input.len()])
        })
        .collect())
}

pub fn compare_grads(analytic: &[Vec<f64>], numeric: &[Vec<f64>], tol: f64) -> FdReport {
    let mut report = FdReport::default();
    for (i, (ag, ng)) in analytic.iter().zip(numeric).enumerate() {
        for (e, (&a, &n)) in ag.iter().zip(ng).enumerate() {
            let err = rel_err(a, n);
            report.probes += 1;
            report.max_rel_err = report.max_rel_err.max(err);
            if err > tol {
                report.failures.push(FdFailure {
                    input: i,
                    element: e,
                    analytic: a,
                    numeric: n,
                    rel_err: err,
                });
            }
        }
    }
    report
}

/// Check every element of every `requires_grad` input of a scalar-valued
/// graph against central differences.
pub fn finite_difference_check<S, F>(
    f: F,
    inputs: &[Tensor<S>],
    h: f64,
    tol: f64,
) -> Result<FdReport>
where
    S: Scalar,
    F: Fn(&mut Tape<S>, &[VarId]) -> Result<VarId>,
{
    let analytic = analytic_grads(&f, inputs)?;
    let numeric = numeric_grads(&f, inputs, h)?;
    Ok(compare_grads(&analytic, &numeric, tol))
}
