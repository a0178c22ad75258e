//! Up to `m` inexact model steps reusing one finite-difference tensor.
//!
//! Each step snapshots the derivatives at the current iterate (one oracle
//! call), minimizes the regularized model inexactly, and evaluates value and
//! gradient at the new point (one more call): exactly two calls per step.
//! The run stops with `success` after `m` steps, with `solution` as soon as
//! an iterate is eps-stationary, or with `halt` when the cumulative decrease
//! falls short of the per-step threshold.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::factorial;
use crate::model::RegularizedModel;
use crate::multilinear::RankOneSum;
use crate::problems::{OracleCounter, ProblemOracle};
use crate::subsolver::subsolve;
use crate::{Error, Result};

/// Why a lazy run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepStatus {
    /// All `m` prescribed steps completed.
    Success,
    /// An eps-approximate stationary point was found.
    Solution,
    /// Insufficient decrease (or a failed subsolve).
    Halt,
}

impl std::fmt::Display for StepStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            StepStatus::Success => "success",
            StepStatus::Solution => "solution",
            StepStatus::Halt => "halt",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for StepStatus {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "success" => Ok(StepStatus::Success),
            "solution" => Ok(StepStatus::Solution),
            "halt" => Ok(StepStatus::Halt),
            other => Err(format!("unknown status `{other}`")),
        }
    }
}

/// Per-step observations at the new iterate.
#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub f: f64,
    pub grad_norm: f64,
    pub step_norm: f64,
    pub inner_iterations: usize,
    pub subsolve_failed: bool,
}

/// Full state of one lazy run.
#[derive(Debug, Clone)]
pub struct LazyRunState {
    /// Last iterate generated.
    pub x_current: DVector<f64>,
    /// Best-so-far iterate (running argmin of f, first-seen on ties).
    pub x_best: DVector<f64>,
    pub f_best: f64,
    /// Objective value at the entry point.
    pub f_entry: f64,
    /// Number of executed steps (each consumed two oracle calls).
    pub steps: usize,
    pub trace: Vec<StepRecord>,
}

/// Right-hand side of the sufficient-decrease test after step `t`:
/// `eps^{(p+1)/p} (t+1) / (2^6 3^{1/p} sigma^{1/p} (p+1)!)`.
pub fn decrease_threshold(sigma: f64, eps: f64, p: usize, t: usize) -> f64 {
    let pf = p as f64;
    eps.powf((pf + 1.0) / pf) * (t as f64 + 1.0)
        / (64.0 * 3.0f64.powf(1.0 / pf) * sigma.powf(1.0 / pf) * factorial(p + 1))
}

/// Attempts up to `m` model steps from `x`, reusing `tensor` and `sigma`
/// throughout. Returns the output point, the stop status, and the run state.
///
/// A subsolve that exhausts its budget is surfaced as `halt` with a failure
/// flag on the step's trace record; its best iterate still costs the step's
/// second oracle call and participates in best-so-far tracking.
#[allow(clippy::too_many_arguments)]
pub fn lazy_tensor_steps(
    problem: &ProblemOracle,
    counter: &OracleCounter,
    x: &DVector<f64>,
    tensor: &RankOneSum,
    sigma: f64,
    m: usize,
    eps: f64,
    inner_budget: usize,
) -> Result<(DVector<f64>, StepStatus, LazyRunState)> {
    if m < 1 {
        return Err(Error::InvalidArgument("m must be at least 1".into()));
    }
    if sigma.is_nan() || sigma <= 0.0 || eps.is_nan() || eps <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "sigma {sigma} and eps {eps} must be positive"
        )));
    }
    let p = tensor.order();
    let snapshot_orders: Vec<usize> = (0..p).collect();

    let mut state = LazyRunState {
        x_current: x.clone(),
        x_best: x.clone(),
        f_best: f64::INFINITY,
        f_entry: f64::NAN,
        steps: 0,
        trace: Vec::new(),
    };
    let mut x_t = x.clone();

    for t in 0..m {
        let snapshot = problem.evaluate(counter, &x_t, &snapshot_orders)?;
        if t == 0 {
            state.f_entry = snapshot.value();
            state.f_best = snapshot.value();
        }
        let model = RegularizedModel::new(x_t.clone(), &snapshot, tensor.clone(), sigma)?;
        let (x_next, inner_iterations, failed) = match subsolve(&model, inner_budget) {
            Ok(r) => (r.point, r.inner_iterations, false),
            Err(Error::SubsolveBudget { best, .. }) => (best.point, best.inner_iterations, true),
            Err(e) => return Err(e),
        };

        let eval_next = problem.evaluate(counter, &x_next, &[0, 1])?;
        let f_next = eval_next.value();
        let grad_norm = eval_next.gradient().norm();
        state.trace.push(StepRecord {
            f: f_next,
            grad_norm,
            step_norm: (&x_next - &x_t).norm(),
            inner_iterations,
            subsolve_failed: failed,
        });
        state.steps += 1;
        if f_next < state.f_best {
            state.f_best = f_next;
            state.x_best = x_next.clone();
        }
        state.x_current = x_next.clone();

        if grad_norm <= eps {
            return Ok((x_next, StepStatus::Solution, state));
        }
        if failed {
            let best = state.x_best.clone();
            return Ok((best, StepStatus::Halt, state));
        }
        if state.f_entry - state.f_best >= decrease_threshold(sigma, eps, p, t) {
            x_t = x_next;
        } else {
            let best = state.x_best.clone();
            return Ok((best, StepStatus::Halt, state));
        }
    }
    let best = state.x_best.clone();
    Ok((best, StepStatus::Success, state))
}
