//! Objective oracles with per-call accounting.
//!
//! An oracle call of order `q` returns any nonempty subset of
//! `{f, grad f, ..., grad^q f}` at a single point and counts as exactly one
//! call, no matter how many orders are requested together. The counter is
//! the ground truth for all complexity bookkeeping in this crate.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DVector;

use crate::multilinear::SymmetricTensor;
use crate::{Error, Result};

/// One derivative: order 0 is the function value, higher orders are
/// symmetric forms of that order.
#[derive(Debug, Clone)]
pub enum Derivative {
    Value(f64),
    Form(SymmetricTensor),
}

impl Derivative {
    pub fn order(&self) -> usize {
        match self {
            Derivative::Value(_) => 0,
            Derivative::Form(t) => t.order(),
        }
    }
}

/// The result of one oracle call: derivatives keyed by order.
#[derive(Debug, Clone)]
pub struct Derivatives {
    by_order: BTreeMap<usize, Derivative>,
}

impl Derivatives {
    pub fn get(&self, order: usize) -> Option<&Derivative> {
        self.by_order.get(&order)
    }

    /// Function value (order 0). Panics if it was not requested.
    pub fn value(&self) -> f64 {
        match self.by_order.get(&0) {
            Some(Derivative::Value(v)) => *v,
            _ => panic!("order 0 was not part of this oracle call"),
        }
    }

    /// Derivative form of the given order (>= 1). Panics if absent.
    pub fn form(&self, order: usize) -> &SymmetricTensor {
        match self.by_order.get(&order) {
            Some(Derivative::Form(t)) => t,
            _ => panic!("order {order} was not part of this oracle call"),
        }
    }

    /// Gradient as a vector. Panics if order 1 was not requested.
    pub fn gradient(&self) -> DVector<f64> {
        self.form(1).as_vector()
    }
}

/// Cumulative count of oracle calls; incremented by exactly one per
/// `evaluate` invocation. Atomic so concurrent probe sweeps stay exact.
#[derive(Debug, Default)]
pub struct OracleCounter {
    calls: AtomicU64,
}

impl OracleCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    fn bump(&self) {
        self.calls.fetch_add(1, Ordering::SeqCst);
    }
}

/// An objective with analytic derivatives up to a declared order.
///
/// Implementations must be pure: the same point always yields the same
/// derivatives, bitwise.
pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;

    /// Highest derivative order this objective can return.
    fn max_order(&self) -> usize;

    /// Exact derivative of the given order at `x`; `order = 0` is the value.
    fn derivative(&self, x: &DVector<f64>, order: usize) -> Derivative;

    /// Lipschitz constant of the order-`p` derivative, when known.
    fn lipschitz(&self, _p: usize) -> Option<f64> {
        None
    }

    /// Global lower bound on the objective, when known.
    fn f_low(&self) -> Option<f64> {
        None
    }

    /// Canonical starting point.
    fn start(&self) -> DVector<f64>;

    fn name(&self) -> &'static str;
}

/// An [`Objective`] behind the call-counting gate.
pub struct ProblemOracle {
    objective: Box<dyn Objective>,
}

impl std::fmt::Debug for ProblemOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemOracle")
            .field("name", &self.objective.name())
            .field("dim", &self.objective.dim())
            .field("max_order", &self.objective.max_order())
            .finish()
    }
}

impl ProblemOracle {
    pub fn new(objective: Box<dyn Objective>) -> Self {
        Self { objective }
    }

    pub fn dim(&self) -> usize {
        self.objective.dim()
    }

    pub fn max_order(&self) -> usize {
        self.objective.max_order()
    }

    pub fn lipschitz(&self, p: usize) -> Option<f64> {
        self.objective.lipschitz(p)
    }

    pub fn f_low(&self) -> Option<f64> {
        self.objective.f_low()
    }

    pub fn start(&self) -> DVector<f64> {
        self.objective.start()
    }

    pub fn name(&self) -> &'static str {
        self.objective.name()
    }

    /// Evaluates the requested derivative orders at `x` in a single oracle
    /// call: the counter is incremented by exactly one.
    pub fn evaluate(
        &self,
        counter: &OracleCounter,
        x: &DVector<f64>,
        orders: &[usize],
    ) -> Result<Derivatives> {
        if orders.is_empty() {
            return Err(Error::InvalidArgument(
                "requested order set is empty".into(),
            ));
        }
        for &q in orders {
            if q > self.max_order() {
                return Err(Error::OrderBeyondOracle {
                    order: q,
                    max_order: self.max_order(),
                });
            }
        }
        if x.len() != self.dim() {
            return Err(Error::InvalidArgument(format!(
                "point dimension {} does not match problem dimension {}",
                x.len(),
                self.dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("evaluation point"));
        }
        counter.bump();
        let mut by_order = BTreeMap::new();
        for &q in orders {
            by_order
                .entry(q)
                .or_insert_with(|| self.objective.derivative(x, q));
        }
        Ok(Derivatives { by_order })
    }
}

/// Names accepted by [`builtin_problem`].
pub const BUILTIN_NAMES: [&str; 5] = [
    "quadratic",
    "rosenbrock_chain",
    "cos_sum",
    "cubic_sep",
    "logistic_smooth",
];

/// Constructs one of the built-in test objectives by name.
pub fn builtin_problem(name: &str, n: usize) -> Result<ProblemOracle> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "dimension must be at least 1".into(),
        ));
    }
    let objective: Box<dyn Objective> = match name {
        "quadratic" => Box::new(Quadratic { dim: n }),
        "rosenbrock_chain" => {
            if n < 2 {
                return Err(Error::InvalidArgument(
                    "rosenbrock_chain needs dimension at least 2".into(),
                ));
            }
            Box::new(RosenbrockChain { dim: n })
        }
        "cos_sum" => Box::new(CosSum { dim: n }),
        "cubic_sep" => Box::new(CubicSep { dim: n }),
        "logistic_smooth" => Box::new(LogisticSmooth { dim: n, b: 0.25 }),
        other => return Err(Error::UnknownProblem(other.to_string())),
    };
    Ok(ProblemOracle::new(objective))
}

// ---------------------------------------------------------------------------
// Built-in objectives
// ---------------------------------------------------------------------------

/// `f(x) = 0.5 ||x||^2`. The gradient has Lipschitz constant 1; all higher
/// derivatives are constant, so their Lipschitz constants are 0.
struct Quadratic {
    dim: usize,
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.dim
    }

    fn max_order(&self) -> usize {
        3
    }

    fn derivative(&self, x: &DVector<f64>, order: usize) -> Derivative {
        match order {
            0 => Derivative::Value(0.5 * x.dot(x)),
            1 => Derivative::Form(SymmetricTensor::from_vector(x)),
            2 => Derivative::Form(SymmetricTensor::from_diagonal(2, &vec![1.0; self.dim])),
            _ => Derivative::Form(SymmetricTensor::zeros(3, self.dim)),
        }
    }

    fn lipschitz(&self, p: usize) -> Option<f64> {
        match p {
            1 => Some(1.0),
            2 | 3 => Some(0.0),
            _ => None,
        }
    }

    fn f_low(&self) -> Option<f64> {
        Some(0.0)
    }

    fn start(&self) -> DVector<f64> {
        let mut z = DVector::zeros(self.dim);
        z[0] = 10.0;
        z
    }

    fn name(&self) -> &'static str {
        "quadratic"
    }
}

/// Chained Rosenbrock: `sum_{i<n} 100 (x_{i+1} - x_i^2)^2 + (1 - x_i)^2`.
/// Lipschitz constants are left unknown so runs exercise the adaptive path.
struct RosenbrockChain {
    dim: usize,
}

impl Objective for RosenbrockChain {
    fn dim(&self) -> usize {
        self.dim
    }

    fn max_order(&self) -> usize {
        3
    }

    fn derivative(&self, x: &DVector<f64>, order: usize) -> Derivative {
        let n = self.dim;
        match order {
            0 => {
                let mut f = 0.0;
                for i in 0..n - 1 {
                    let a = x[i + 1] - x[i] * x[i];
                    let b = 1.0 - x[i];
                    f += 100.0 * a * a + b * b;
                }
                Derivative::Value(f)
            }
            1 => {
                let mut g = DVector::zeros(n);
                for i in 0..n - 1 {
                    let a = x[i + 1] - x[i] * x[i];
                    g[i] += -400.0 * x[i] * a - 2.0 * (1.0 - x[i]);
                    g[i + 1] += 200.0 * a;
                }
                Derivative::Form(SymmetricTensor::from_vector(&g))
            }
            2 => {
                let mut h = SymmetricTensor::zeros(2, n);
                for i in 0..n - 1 {
                    let d_ii = -400.0 * x[i + 1] + 1200.0 * x[i] * x[i] + 2.0;
                    h.set_sym(&[i, i], h.get(&[i, i]) + d_ii);
                    h.set_sym(&[i, i + 1], -400.0 * x[i]);
                    h.set_sym(&[i + 1, i + 1], h.get(&[i + 1, i + 1]) + 200.0);
                }
                Derivative::Form(h)
            }
            _ => {
                let mut t = SymmetricTensor::zeros(3, n);
                for i in 0..n - 1 {
                    t.set_sym(&[i, i, i], 2400.0 * x[i]);
                    t.set_sym(&[i, i, i + 1], -400.0);
                }
                Derivative::Form(t)
            }
        }
    }

    fn f_low(&self) -> Option<f64> {
        Some(0.0)
    }

    fn start(&self) -> DVector<f64> {
        DVector::from_fn(self.dim, |i, _| if i % 2 == 0 { -1.2 } else { 1.0 })
    }

    fn name(&self) -> &'static str {
        "rosenbrock_chain"
    }
}

/// `f(x) = sum_i cos(x_i)`. Every derivative order has Lipschitz constant 1,
/// which makes this the reference problem for the finite-difference error
/// bounds.
struct CosSum {
    dim: usize,
}

impl Objective for CosSum {
    fn dim(&self) -> usize {
        self.dim
    }

    fn max_order(&self) -> usize {
        3
    }

    fn derivative(&self, x: &DVector<f64>, order: usize) -> Derivative {
        match order {
            0 => Derivative::Value(x.iter().map(|v| v.cos()).sum()),
            1 => Derivative::Form(SymmetricTensor::from_vector(&DVector::from_fn(
                self.dim,
                |i, _| -x[i].sin(),
            ))),
            2 => {
                let diag: Vec<f64> = x.iter().map(|v| -v.cos()).collect();
                Derivative::Form(SymmetricTensor::from_diagonal(2, &diag))
            }
            _ => {
                let diag: Vec<f64> = x.iter().map(|v| v.sin()).collect();
                Derivative::Form(SymmetricTensor::from_diagonal(3, &diag))
            }
        }
    }

    fn lipschitz(&self, p: usize) -> Option<f64> {
        (p <= 3).then_some(1.0)
    }

    fn f_low(&self) -> Option<f64> {
        Some(-(self.dim as f64))
    }

    fn start(&self) -> DVector<f64> {
        DVector::from_fn(self.dim, |i, _| 0.5 + 0.05 * i as f64)
    }

    fn name(&self) -> &'static str {
        "cos_sum"
    }
}

/// Separable cubic `sum_i g(x_i)` with `g(t) = t^3/3 + t` for `t >= -1`.
/// The plain cubic is unbounded below, so for `t < -1` the second derivative
/// is reflected (`g''(t) = 2(-2 - t)`), which keeps `g''` globally
/// 2-Lipschitz and creates a minimizer at `t = -2 - sqrt(3)`. Third
/// derivatives do not exist at the switch point, so the oracle stops at
/// order 2.
struct CubicSep {
    dim: usize,
}

impl CubicSep {
    fn value_1d(t: f64) -> f64 {
        if t >= -1.0 {
            t * t * t / 3.0 + t
        } else {
            let u = t + 2.0;
            2.0 + 3.0 * t - u * u * u / 3.0
        }
    }

    fn deriv_1d(t: f64) -> f64 {
        if t >= -1.0 {
            t * t + 1.0
        } else {
            let u = t + 2.0;
            3.0 - u * u
        }
    }

    fn second_1d(t: f64) -> f64 {
        if t >= -1.0 {
            2.0 * t
        } else {
            2.0 * (-2.0 - t)
        }
    }
}

impl Objective for CubicSep {
    fn dim(&self) -> usize {
        self.dim
    }

    fn max_order(&self) -> usize {
        2
    }

    fn derivative(&self, x: &DVector<f64>, order: usize) -> Derivative {
        match order {
            0 => Derivative::Value(x.iter().map(|&t| Self::value_1d(t)).sum()),
            1 => Derivative::Form(SymmetricTensor::from_vector(&DVector::from_fn(
                self.dim,
                |i, _| Self::deriv_1d(x[i]),
            ))),
            _ => {
                let diag: Vec<f64> = x.iter().map(|&t| Self::second_1d(t)).collect();
                Derivative::Form(SymmetricTensor::from_diagonal(2, &diag))
            }
        }
    }

    fn lipschitz(&self, p: usize) -> Option<f64> {
        (p == 2).then_some(2.0)
    }

    fn f_low(&self) -> Option<f64> {
        // per-coordinate minimum at t = -2 - sqrt(3)
        let t = -2.0 - 3.0f64.sqrt();
        Some(self.dim as f64 * Self::value_1d(t))
    }

    fn start(&self) -> DVector<f64> {
        DVector::from_element(self.dim, 1.0)
    }

    fn name(&self) -> &'static str {
        "cubic_sep"
    }
}

/// `f(x) = sum_i [ log(1 + e^{x_i}) - b x_i ]` with `b = 0.25`; smooth with
/// all derivative orders bounded.
struct LogisticSmooth {
    dim: usize,
    b: f64,
}

impl LogisticSmooth {
    fn softplus(t: f64) -> f64 {
        if t > 0.0 {
            t + (-t).exp().ln_1p()
        } else {
            t.exp().ln_1p()
        }
    }

    fn sigmoid(t: f64) -> f64 {
        if t >= 0.0 {
            1.0 / (1.0 + (-t).exp())
        } else {
            let e = t.exp();
            e / (1.0 + e)
        }
    }
}

impl Objective for LogisticSmooth {
    fn dim(&self) -> usize {
        self.dim
    }

    fn max_order(&self) -> usize {
        3
    }

    fn derivative(&self, x: &DVector<f64>, order: usize) -> Derivative {
        match order {
            0 => Derivative::Value(x.iter().map(|&t| Self::softplus(t) - self.b * t).sum()),
            1 => Derivative::Form(SymmetricTensor::from_vector(&DVector::from_fn(
                self.dim,
                |i, _| Self::sigmoid(x[i]) - self.b,
            ))),
            2 => {
                let diag: Vec<f64> = x
                    .iter()
                    .map(|&t| {
                        let s = Self::sigmoid(t);
                        s * (1.0 - s)
                    })
                    .collect();
                Derivative::Form(SymmetricTensor::from_diagonal(2, &diag))
            }
            _ => {
                let diag: Vec<f64> = x
                    .iter()
                    .map(|&t| {
                        let s = Self::sigmoid(t);
                        s * (1.0 - s) * (1.0 - 2.0 * s)
                    })
                    .collect();
                Derivative::Form(SymmetricTensor::from_diagonal(3, &diag))
            }
        }
    }

    fn lipschitz(&self, p: usize) -> Option<f64> {
        match p {
            // max |g''|, max |g'''|, max |g''''| of the softplus term
            1 => Some(0.25),
            2 => Some(1.0 / (6.0 * 3.0f64.sqrt())),
            3 => Some(0.125),
            _ => None,
        }
    }

    fn f_low(&self) -> Option<f64> {
        // per-coordinate minimum at sigmoid(t) = b
        let t = (self.b / (1.0 - self.b)).ln();
        Some(self.dim as f64 * (Self::softplus(t) - self.b * t))
    }

    fn start(&self) -> DVector<f64> {
        DVector::from_element(self.dim, 2.0)
    }

    fn name(&self) -> &'static str {
        "logistic_smooth"
    }
}
