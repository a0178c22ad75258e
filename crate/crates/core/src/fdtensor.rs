//! Finite-difference approximation of the order-`p` derivative from
//! order-`(p-1)` probes along the canonical basis, and the `(sigma, h)`
//! schedule that keeps the approximation error inside the budget of the
//! decrease analysis.

use nalgebra::DVector;

use crate::multilinear::RankOneSum;
use crate::problems::{Derivative, OracleCounter, ProblemOracle};
use crate::{Error, Result};

/// Relative floor applied to the analytic stepsize before probing, guarding
/// against catastrophic cancellation; `2^-26` is half of f64's mantissa
/// width.
pub const H_FLOOR_SCALE: f64 = 1.4901161193847656e-8; // 2^-26

/// Regularization weight and finite-difference stepsize for one outer
/// iteration: `sigma = 11 (p+1) L m` and the matching closed-form `h`.
#[derive(Debug, Clone, Copy)]
pub struct FdSchedule {
    pub sigma: f64,
    /// Closed-form stepsize; apply [`FdSchedule::floored_h`] before probing.
    pub h: f64,
    pub eps: f64,
    pub p: usize,
    pub n: usize,
    pub m: usize,
}

/// Computes the schedule from the current Lipschitz estimate:
///
/// ```text
/// sigma = 11 (p+1) L m
/// h     = 4 / (sigma sqrt(n)) * [ sigma^p eps^{(p+1)/p}
///           / ( (8(p+1))^p 2^7 3^{1/p} sigma^{1/p} ) ]^{1/(p+1)}
/// ```
pub fn schedule(l_k: f64, m: usize, p: usize, n: usize, eps: f64) -> Result<FdSchedule> {
    if l_k.is_nan() || l_k <= 0.0 || eps.is_nan() || eps <= 0.0 || m < 1 || p < 1 || n < 1 {
        return Err(Error::InvalidArgument(format!(
            "schedule requires L > 0, eps > 0, m >= 1, p >= 1, n >= 1; got L={l_k}, m={m}, p={p}, n={n}, eps={eps}"
        )));
    }
    let pf = p as f64;
    let sigma = 11.0 * (pf + 1.0) * l_k * m as f64;
    let bracket = sigma.powi(p as i32) * eps.powf((pf + 1.0) / pf)
        / ((8.0 * (pf + 1.0)).powi(p as i32)
            * 128.0
            * 3.0f64.powf(1.0 / pf)
            * sigma.powf(1.0 / pf));
    let h = 4.0 / (sigma * (n as f64).sqrt()) * bracket.powf(1.0 / (pf + 1.0));
    Ok(FdSchedule {
        sigma,
        h,
        eps,
        p,
        n,
        m,
    })
}

impl FdSchedule {
    /// Stepsize to actually probe with at `z`: the closed-form value floored
    /// at `2^-26 (1 + ||z||_inf)`. The boolean reports whether the floor was
    /// binding, which the driver records as a deviation flag.
    pub fn floored_h(&self, z: &DVector<f64>) -> (f64, bool) {
        let floor = H_FLOOR_SCALE * (1.0 + z.amax());
        if self.h < floor {
            (floor, true)
        } else {
            (self.h, false)
        }
    }
}

/// Builds the forward finite-difference tensor at `z` with stepsize `h`:
/// slice `i` is `(grad^{p-1} f(z + h e_i) - grad^{p-1} f(z)) / h`.
///
/// Consumes exactly `n + 1` oracle calls (one at `z`, one per probe).
pub fn build_fd_tensor(
    problem: &ProblemOracle,
    counter: &OracleCounter,
    z: &DVector<f64>,
    h: f64,
    p: usize,
) -> Result<RankOneSum> {
    let base = problem.evaluate(counter, z, &[p - 1])?;
    let base = base
        .get(p - 1)
        .expect("requested order must be present")
        .clone();
    build_fd_tensor_with_base(problem, counter, z, &base, h, p)
}

/// Same as [`build_fd_tensor`], but reuses an order-`(p-1)` derivative
/// already in hand for the base point, so only the `n` probe calls are made.
pub fn build_fd_tensor_with_base(
    problem: &ProblemOracle,
    counter: &OracleCounter,
    z: &DVector<f64>,
    base: &Derivative,
    h: f64,
    p: usize,
) -> Result<RankOneSum> {
    if !h.is_finite() || h <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "stepsize {h} must be positive"
        )));
    }
    if p < 1 {
        return Err(Error::InvalidArgument("order must be at least 1".into()));
    }
    if base.order() != p - 1 {
        return Err(Error::InvalidArgument(format!(
            "base derivative has order {}, expected {}",
            base.order(),
            p - 1
        )));
    }
    let n = problem.dim();
    for i in 0..n {
        if z[i] + h == z[i] {
            return Err(Error::DegenerateStep { h, coordinate: i });
        }
    }

    match base {
        Derivative::Value(f0) => {
            // p = 1: scalar slices (f(z + h e_i) - f(z)) / h
            let mut slices = DVector::zeros(n);
            for i in 0..n {
                let mut zp = z.clone();
                zp[i] += h;
                let probe = problem.evaluate(counter, &zp, &[0])?;
                slices[i] = (probe.value() - f0) / h;
            }
            Ok(RankOneSum::from_scalars(slices, h))
        }
        Derivative::Form(base_form) => {
            let mut slices = Vec::with_capacity(n);
            for i in 0..n {
                let mut zp = z.clone();
                zp[i] += h;
                let probe = problem.evaluate(counter, &zp, &[p - 1])?;
                slices.push(probe.form(p - 1).sub(base_form)?.scale(1.0 / h));
            }
            RankOneSum::from_forms(slices, h)
        }
    }
}

/// Operator-norm deviation between the symmetric part of a finite-difference
/// tensor and the exact order-`p` derivative at `z`. Test helper; needs an
/// oracle of order at least `p` and does not participate in run accounting.
pub fn fd_error(problem: &ProblemOracle, z: &DVector<f64>, tensor: &RankOneSum) -> Result<f64> {
    let p = tensor.order();
    let local = OracleCounter::new();
    let exact = problem.evaluate(&local, z, &[p])?;
    let diff = tensor.symmetrize()?.sub(exact.form(p))?;
    Ok(diff.operator_norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::builtin_problem;
    use approx::assert_relative_eq;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sigma_formula_p1() {
        let s = schedule(1.0, 1, 1, 4, 1e-2).unwrap();
        assert_eq!(s.sigma, 22.0);
    }

    #[test]
    fn sigma_formula_p2() {
        let s = schedule(1.0, 5, 2, 4, 1e-2).unwrap();
        assert_eq!(s.sigma, 165.0);
    }

    #[test]
    fn h_formula_p1_reference_value() {
        // independent evaluation: (4/44) * sqrt(22 * 1e-4 / (16 * 128 * 3 * 22))
        let s = schedule(1.0, 1, 1, 4, 1e-2).unwrap();
        let expected = 4.0 / 44.0 * (22.0f64 * 1e-4 / (16.0 * 128.0 * 3.0 * 22.0)).sqrt();
        assert_relative_eq!(s.h, expected, max_relative = 1e-14);
        assert_relative_eq!(s.h, 1.1598e-5, max_relative = 1e-4);
    }

    #[test]
    fn h_scales_like_sigma_to_minus_one_over_p() {
        for p in 1..=3usize {
            let a = schedule(1.0, 3, p, 6, 1e-3).unwrap();
            let b = schedule(8.0, 3, p, 6, 1e-3).unwrap();
            let ratio = a.h / b.h;
            let expected = (b.sigma / a.sigma).powf(1.0 / p as f64);
            assert_relative_eq!(ratio, expected, max_relative = 1e-12);
        }
    }

    #[test]
    fn schedule_rejects_nonpositive_inputs() {
        assert!(schedule(0.0, 1, 1, 2, 1e-2).is_err());
        assert!(schedule(1.0, 0, 1, 2, 1e-2).is_err());
        assert!(schedule(1.0, 1, 1, 2, 0.0).is_err());
    }

    #[test]
    fn floor_binds_only_for_tiny_h() {
        let s = schedule(1.0, 1, 1, 4, 1e-2).unwrap();
        let z = DVector::from_element(4, 1.0);
        let (h, floored) = s.floored_h(&z);
        assert_eq!(h, s.h);
        assert!(!floored);

        let tiny = schedule(1e9, 1, 1, 4, 1e-12).unwrap();
        let (h2, floored2) = tiny.floored_h(&z);
        assert!(floored2);
        assert_eq!(h2, H_FLOOR_SCALE * 2.0);
    }

    #[test]
    fn fd_of_quadratic_gradient_is_exact() {
        let p = builtin_problem("quadratic", 3).unwrap();
        let c = OracleCounter::new();
        let z = DVector::from_column_slice(&[1.0, -2.0, 0.5]);
        for h in [1e-1, 1e-3] {
            let t = build_fd_tensor(&p, &c, &z, h, 2).unwrap();
            let err = fd_error(&p, &z, &t).unwrap();
            assert!(
                err <= 1e-12,
                "quadratic FD Hessian error {err} should vanish"
            );
        }
    }

    #[test]
    fn oracle_count_is_n_plus_one() {
        for n in [1usize, 3, 7] {
            let p = builtin_problem("cos_sum", n).unwrap();
            let c = OracleCounter::new();
            let z = p.start();
            build_fd_tensor(&p, &c, &z, 1e-3, 2).unwrap();
            assert_eq!(c.calls(), n as u64 + 1);
        }
    }

    #[test]
    fn with_base_uses_n_calls() {
        let p = builtin_problem("cos_sum", 5).unwrap();
        let c = OracleCounter::new();
        let z = p.start();
        let base = p.evaluate(&c, &z, &[1]).unwrap().get(1).unwrap().clone();
        build_fd_tensor_with_base(&p, &c, &z, &base, 1e-3, 2).unwrap();
        assert_eq!(c.calls(), 6);
    }

    #[test]
    fn constant_function_gives_zero_slices() {
        struct Constant;
        impl crate::problems::Objective for Constant {
            fn dim(&self) -> usize {
                3
            }
            fn max_order(&self) -> usize {
                1
            }
            fn derivative(&self, _x: &DVector<f64>, order: usize) -> Derivative {
                match order {
                    0 => Derivative::Value(4.5),
                    _ => Derivative::Form(crate::multilinear::SymmetricTensor::zeros(1, 3)),
                }
            }
            fn start(&self) -> DVector<f64> {
                DVector::zeros(3)
            }
            fn name(&self) -> &'static str {
                "constant"
            }
        }
        let p = ProblemOracle::new(Box::new(Constant));
        let c = OracleCounter::new();
        let t = build_fd_tensor(&p, &c, &p.start(), 1e-2, 1).unwrap();
        assert_eq!(t.linear_part().unwrap(), &DVector::zeros(3));
    }

    #[test]
    fn cube_slice_saturates_the_error_bound() {
        // f(t) = t^3 in one dimension: the FD Hessian slice at 0 is 3h while
        // the true second derivative is 0, and L = 6 makes the bound tight.
        struct Cube;
        impl crate::problems::Objective for Cube {
            fn dim(&self) -> usize {
                1
            }
            fn max_order(&self) -> usize {
                2
            }
            fn derivative(&self, x: &DVector<f64>, order: usize) -> Derivative {
                use crate::multilinear::SymmetricTensor;
                match order {
                    0 => Derivative::Value(x[0].powi(3)),
                    1 => Derivative::Form(SymmetricTensor::from_vector(&DVector::from_element(
                        1,
                        3.0 * x[0] * x[0],
                    ))),
                    _ => Derivative::Form(SymmetricTensor::from_diagonal(2, &[6.0 * x[0]])),
                }
            }
            fn lipschitz(&self, p: usize) -> Option<f64> {
                (p == 2).then_some(6.0)
            }
            fn start(&self) -> DVector<f64> {
                DVector::zeros(1)
            }
            fn name(&self) -> &'static str {
                "cube"
            }
        }
        let p = ProblemOracle::new(Box::new(Cube));
        let c = OracleCounter::new();
        let z = DVector::zeros(1);
        for h in [1e-1, 1e-2, 1e-3] {
            let t = build_fd_tensor(&p, &c, &z, h, 2).unwrap();
            let err = fd_error(&p, &z, &t).unwrap();
            let bound = 6.0 * 1.0f64.sqrt() / 2.0 * h; // = 3h, attained exactly
            assert_relative_eq!(err, bound, max_relative = 1e-10);
        }
    }

    #[test]
    fn degenerate_step_is_detected() {
        let p = builtin_problem("quadratic", 2).unwrap();
        let c = OracleCounter::new();
        let z = DVector::from_column_slice(&[1e18, 0.0]);
        let err = build_fd_tensor(&p, &c, &z, 1e-3, 1).unwrap_err();
        assert!(matches!(err, Error::DegenerateStep { .. }));
    }

    #[test]
    fn error_bound_holds_across_builtins_with_known_l() {
        // fd_error <= (L sqrt(n) / 2) h, with norm-estimate slack at p = 3
        let cases: [(&str, usize); 2] = [("cos_sum", 1), ("cos_sum", 2)];
        for (name, p_ord) in cases {
            for n in [2usize, 4, 8] {
                let prob = builtin_problem(name, n).unwrap();
                let l = prob.lipschitz(p_ord).unwrap();
                let c = OracleCounter::new();
                let z = prob.start();
                for h in [1e-1, 1e-2, 1e-3] {
                    let t = build_fd_tensor(&prob, &c, &z, h, p_ord).unwrap();
                    let err = fd_error(&prob, &z, &t).unwrap();
                    let bound = l * (n as f64).sqrt() / 2.0 * h;
                    assert!(
                        err <= bound,
                        "{name} p={p_ord} n={n} h={h}: fd error {err} above bound {bound}"
                    );
                }
            }
        }
        for n in [2usize, 4] {
            let prob = builtin_problem("cos_sum", n).unwrap();
            let c = OracleCounter::new();
            let z = prob.start();
            for h in [1e-1, 1e-2, 1e-3] {
                let t = build_fd_tensor(&prob, &c, &z, h, 3).unwrap();
                let err = fd_error(&prob, &z, &t).unwrap();
                let bound = (n as f64).sqrt() / 2.0 * h + 1e-6;
                assert!(
                    err <= bound,
                    "cos_sum p=3 n={n} h={h}: fd error {err} above bound {bound}"
                );
            }
        }
        // cubic_sep has known L only for p = 2
        for n in [2usize, 4, 8] {
            let prob = builtin_problem("cubic_sep", n).unwrap();
            let l = prob.lipschitz(2).unwrap();
            let c = OracleCounter::new();
            let z = prob.start();
            for h in [1e-1, 1e-2, 1e-3] {
                let t = build_fd_tensor(&prob, &c, &z, h, 2).unwrap();
                let err = fd_error(&prob, &z, &t).unwrap();
                let bound = l * (n as f64).sqrt() / 2.0 * h;
                assert!(
                    err <= bound,
                    "cubic_sep n={n} h={h}: fd error {err} above bound {bound}"
                );
            }
        }
    }

    #[test]
    fn error_shrinks_with_h() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for p_ord in [1usize, 2] {
            let prob = builtin_problem("cos_sum", 4).unwrap();
            let c = OracleCounter::new();
            let z = DVector::from_fn(4, |_, _| rng.gen_range(0.2..=1.2));
            let mut last = f64::INFINITY;
            for h in [1e-1, 1e-2, 1e-3] {
                let t = build_fd_tensor(&prob, &c, &z, h, p_ord).unwrap();
                let err = fd_error(&prob, &z, &t).unwrap();
                assert!(
                    err <= last * 1.1,
                    "fd error should not grow as h shrinks: {err} after {last}"
                );
                last = err;
            }
        }
    }
}
