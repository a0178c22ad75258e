//! The adaptive outer loop: check stationarity, schedule `(sigma, h)` from
//! the current Lipschitz estimate, build the finite-difference tensor, run
//! the lazy steps, then double or halve the estimate according to the
//! outcome. Every oracle call is accounted for: a completed outer iteration
//! costs exactly `1 + n + 2 * steps` calls (stationarity check, probes, and
//! two per lazy step).

use nalgebra::DVector;
use serde::Serialize;

use crate::factorial;
use crate::fdtensor::{build_fd_tensor_with_base, schedule};
use crate::lazy::{lazy_tensor_steps, StepRecord, StepStatus};
use crate::problems::{OracleCounter, ProblemOracle};
use crate::{Error, Result};

/// Outer-loop configuration. `lazy_steps` is the reuse length `m`; the
/// boxed default `(p-1) n + 1` comes from [`optimal_m`].
#[derive(Debug, Clone, Serialize)]
pub struct DriverConfig {
    /// Model order, 1..=3.
    pub p: usize,
    /// Tensor reuse length `m >= 1`.
    pub m: usize,
    /// Target stationarity tolerance.
    pub eps: f64,
    /// Initial Lipschitz estimate.
    pub l0: f64,
    /// Safety cap on outer iterations; `None` resolves to ten times the
    /// a-priori iteration bound when the problem's Lipschitz constant and
    /// lower bound are known, and to 10^6 otherwise.
    pub max_outer: Option<usize>,
    /// Iteration budget for each inner subsolve.
    pub inner_budget: usize,
    /// Apply the cancellation floor to the probe stepsize.
    pub h_floor_enabled: bool,
    pub seed: u64,
    /// Start point override; `None` uses the problem's canonical start.
    pub start: Option<Vec<f64>>,
}

impl DriverConfig {
    /// Defaults for a given order and dimension: `m = optimal_m(p, n)`,
    /// `L0 = 1`, inner budget 10000, floor enabled.
    pub fn new(p: usize, n: usize, eps: f64) -> Self {
        Self {
            p,
            m: optimal_m(p, n),
            eps,
            l0: 1.0,
            max_outer: None,
            inner_budget: 10_000,
            h_floor_enabled: true,
            seed: 0,
            start: None,
        }
    }
}

/// One outer iteration of the run.
#[derive(Debug, Clone, Serialize)]
pub struct OuterIterationRecord {
    pub k: usize,
    pub l_k: f64,
    pub sigma_k: f64,
    /// Probe stepsize actually used (after the floor, when enabled).
    pub h_k: f64,
    pub status: StepStatus,
    /// Objective value at the iteration's start point `z_k`.
    pub f: f64,
    /// Gradient norm at `z_k`.
    pub grad_norm: f64,
    /// Counter value after this iteration completed.
    pub oracle_calls_cum: u64,
    pub h_floored: bool,
    pub subsolve_failed: bool,
    /// Lazy steps executed (each cost two oracle calls).
    pub steps: usize,
    pub lazy_trace: Vec<StepRecord>,
}

/// Complete trace of one driver run.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub problem: String,
    pub n: usize,
    pub config: DriverConfig,
    pub records: Vec<OuterIterationRecord>,
    /// True when the run stopped at an eps-stationary point (rather than at
    /// the safety cap).
    pub terminated: bool,
    /// Termination index: completed outer iterations when terminated, the
    /// cap otherwise.
    pub k_eps: usize,
    pub success_count: usize,
    pub halt_count: usize,
    pub final_point: Vec<f64>,
    pub final_f: f64,
    pub final_grad_norm: f64,
    pub oracle_calls: u64,
    pub h_floor_applied: bool,
    pub subsolve_failures: usize,
}

/// Tensor-reuse length minimizing the per-target oracle cost `(m + n) /
/// m^{(p-1)/p}`: one for `p = 1`, otherwise `(p - 1) n + 1`.
pub fn optimal_m(p: usize, n: usize) -> usize {
    if p == 1 {
        1
    } else {
        (p - 1) * n + 1
    }
}

/// A-priori bound on the number of outer iterations:
/// `1 + 2^7 (3 * 11(p+1) L_max)^{1/p} (p+1)! (f(z0) - f_low)
///  eps^{-(p+1)/p} / m^{(p-1)/p} + log2(L_max / L0)`.
pub fn iteration_bound(
    l_max: f64,
    f0_minus_flow: f64,
    p: usize,
    m: usize,
    eps: f64,
    l0: f64,
) -> f64 {
    let pf = p as f64;
    1.0 + 128.0
        * (3.0 * 11.0 * (pf + 1.0) * l_max).powf(1.0 / pf)
        * factorial(p + 1)
        * f0_minus_flow
        * eps.powf(-(pf + 1.0) / pf)
        / (m as f64).powf((pf - 1.0) / pf)
        + (l_max / l0).log2()
}

/// Runs the adaptive outer loop on `problem` until an eps-stationary point
/// is found or the safety cap is reached.
pub fn run(problem: &ProblemOracle, cfg: &DriverConfig) -> Result<RunReport> {
    validate(problem, cfg)?;
    let n = problem.dim();
    let counter = OracleCounter::new();
    let step1_orders: Vec<usize> = (0..=cfg.p.max(2) - 1).collect();

    let mut z = match &cfg.start {
        Some(v) => {
            if v.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "start point has dimension {}, problem has {n}",
                    v.len()
                )));
            }
            DVector::from_column_slice(v)
        }
        None => problem.start(),
    };
    let mut l_k = cfg.l0;
    let mut records: Vec<OuterIterationRecord> = Vec::new();
    let mut cap = cfg.max_outer;

    loop {
        // Step 1: one oracle call covering the gradient check and the
        // derivative snapshot the tensor build reuses at z_k.
        let eval = problem.evaluate(&counter, &z, &step1_orders)?;
        let f_z = eval.value();
        let grad_norm = eval.gradient().norm();
        if cap.is_none() {
            cap = Some(default_cap(problem, cfg, f_z));
        }
        if grad_norm <= cfg.eps {
            return Ok(finish(
                problem, cfg, records, true, z, f_z, grad_norm, &counter,
            ));
        }
        if records.len() >= cap.unwrap() {
            return Ok(finish(
                problem, cfg, records, false, z, f_z, grad_norm, &counter,
            ));
        }

        // Step 2: schedule and finite-difference tensor (n probe calls; the
        // base snapshot rides on the Step 1 call).
        let sched = schedule(l_k, cfg.m, cfg.p, n, cfg.eps)?;
        let (h_k, h_floored) = if cfg.h_floor_enabled {
            sched.floored_h(&z)
        } else {
            (sched.h, false)
        };
        let base = eval.get(cfg.p - 1).expect("snapshot covers order p-1");
        let tensor = build_fd_tensor_with_base(problem, &counter, &z, base, h_k, cfg.p)?;

        // Step 3: lazy steps with the frozen tensor.
        let (z_next, status, state) = lazy_tensor_steps(
            problem,
            &counter,
            &z,
            &tensor,
            sched.sigma,
            cfg.m,
            cfg.eps,
            cfg.inner_budget,
        )?;

        // Step 4: halve on success, double on halt, keep on solution.
        let l_next = match status {
            StepStatus::Success => l_k / 2.0,
            StepStatus::Solution => l_k,
            StepStatus::Halt => 2.0 * l_k,
        };
        let subsolve_failed = state.trace.iter().any(|r| r.subsolve_failed);
        records.push(OuterIterationRecord {
            k: records.len(),
            l_k,
            sigma_k: sched.sigma,
            h_k,
            status,
            f: f_z,
            grad_norm,
            oracle_calls_cum: counter.calls(),
            h_floored,
            subsolve_failed,
            steps: state.steps,
            lazy_trace: state.trace.clone(),
        });
        z = z_next;
        l_k = l_next;

        if status == StepStatus::Solution {
            // the terminal stationarity check reuses the evaluation the lazy
            // run already made at this point; no extra oracle call
            let last = state
                .trace
                .last()
                .expect("solution implies at least one step");
            return Ok(finish(
                problem,
                cfg,
                records,
                true,
                z,
                last.f,
                last.grad_norm,
                &counter,
            ));
        }
    }
}

fn validate(problem: &ProblemOracle, cfg: &DriverConfig) -> Result<()> {
    if !(1..=3).contains(&cfg.p) {
        return Err(Error::UnsupportedOrder { order: cfg.p });
    }
    if cfg.m < 1 || cfg.inner_budget < 1 {
        return Err(Error::InvalidArgument(
            "m and inner_budget must be at least 1".into(),
        ));
    }
    if cfg.eps.is_nan() || cfg.eps <= 0.0 || cfg.l0.is_nan() || cfg.l0 <= 0.0 {
        return Err(Error::InvalidArgument("eps and L0 must be positive".into()));
    }
    let needed = (cfg.p - 1).max(1);
    if problem.max_order() < needed {
        return Err(Error::OrderBeyondOracle {
            order: needed,
            max_order: problem.max_order(),
        });
    }
    Ok(())
}

fn default_cap(problem: &ProblemOracle, cfg: &DriverConfig, f_z0: f64) -> usize {
    match (problem.lipschitz(cfg.p), problem.f_low()) {
        (Some(l), Some(f_low)) => {
            let l_max = cfg.l0.max(2.0 * l);
            let bound = iteration_bound(l_max, f_z0 - f_low, cfg.p, cfg.m, cfg.eps, cfg.l0);
            if bound.is_finite() && bound >= 0.0 {
                (10.0 * bound.ceil()).min(1e15) as usize
            } else {
                1_000_000
            }
        }
        _ => 1_000_000,
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    problem: &ProblemOracle,
    cfg: &DriverConfig,
    records: Vec<OuterIterationRecord>,
    terminated: bool,
    z: DVector<f64>,
    f: f64,
    grad_norm: f64,
    counter: &OracleCounter,
) -> RunReport {
    let success_count = records
        .iter()
        .filter(|r| r.status == StepStatus::Success)
        .count();
    let halt_count = records
        .iter()
        .filter(|r| r.status == StepStatus::Halt)
        .count();
    RunReport {
        problem: problem.name().to_string(),
        n: problem.dim(),
        config: cfg.clone(),
        k_eps: records.len(),
        h_floor_applied: records.iter().any(|r| r.h_floored),
        subsolve_failures: records.iter().filter(|r| r.subsolve_failed).count(),
        records,
        terminated,
        success_count,
        halt_count,
        final_point: z.iter().copied().collect(),
        final_f: f,
        final_grad_norm: grad_norm,
        oracle_calls: counter.calls(),
    }
}
