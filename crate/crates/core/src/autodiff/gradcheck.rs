//! Central finite-difference verification of analytic gradients.

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Step used for the central differences.
pub const FD_STEP: f64 = 1e-5;

/// Relative errors are measured against `max(|analytic|, |numeric|, floor)`.
/// Without a floor, entries whose true gradient is ~0 would compare pure
/// rounding noise against itself.
pub const DENOMINATOR_FLOOR: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
pub struct LeafReport {
    pub leaf: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub leaves: Vec<LeafReport>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.leaves.iter().all(|l| l.max_rel_error < self.tolerance)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.leaves.iter().map(|l| l.max_rel_error).fold(0.0, f64::max)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(DENOMINATOR_FLOOR);
    (analytic - numeric).abs() / denom
}

fn evaluate<F>(leaves: &[Tensor], build: &F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = leaves.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    Ok(g.value(out).item())
}

/// Compares the analytic gradient of `build` at `leaves` with central finite
/// differences, one report row per leaf.
///
/// `build` must be a pure function of the leaf values; it is evaluated twice at
/// the base point and any bitwise difference is reported as an error.
pub fn grad_check<F>(leaves: &[Tensor], build: F, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if leaves.is_empty() {
        return Ok(GradCheckReport {
            leaves: Vec::new(),
            tolerance,
        });
    }
    let mut g = Graph::new();
    let vars: Vec<Var> = leaves.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    let base = g.value(out).item();
    let again = evaluate(leaves, &build)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::NonDeterministic(format!("{base} != {again}")));
    }
    let grads = g.backward(out)?;

    let mut reports = Vec::with_capacity(leaves.len());
    let mut probe = leaves.to_vec();
    for (li, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var);
        let mut worst = 0.0f64;
        for j in 0..leaves[li].len() {
            let orig = leaves[li].data()[j];
            probe[li].data_mut()[j] = orig + FD_STEP;
            let plus = evaluate(&probe, &build)?;
            probe[li].data_mut()[j] = orig - FD_STEP;
            let minus = evaluate(&probe, &build)?;
            probe[li].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic.data()[j], numeric));
        }
        reports.push(LeafReport {
            leaf: li,
            max_rel_error: worst,
        });
    }
    Ok(GradCheckReport {
        leaves: reports,
        tolerance,
    })
}
