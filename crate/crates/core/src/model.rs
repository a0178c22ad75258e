//! The regularized approximate Taylor model around an anchor point:
//!
//! ```text
//! M(y) = f(xb) + sum_{i=1}^{p-1} (1/i!) D^i f(xb)[y - xb]^i
//!        + (1/p!) T[y - xb]^p + sigma/(p+1)! ||y - xb||^{p+1}
//! ```
//!
//! with exact derivatives up to order `p - 1` snapshotted at the anchor and
//! the top-order tensor `T` supplied as a rank-one sum. The model depends
//! only on the symmetric part of `T`, so the raw finite-difference form can
//! be used directly.

use nalgebra::DVector;
use serde::Serialize;

use crate::factorial;
use crate::multilinear::{RankOneSum, SymmetricTensor};
use crate::problems::Derivatives;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct RegularizedModel {
    anchor: DVector<f64>,
    f_anchor: f64,
    /// Derivative snapshot, orders 1..=p-1 (empty when p = 1).
    derivs: Vec<SymmetricTensor>,
    tensor: RankOneSum,
    sigma: f64,
}

/// Outcome of the two inexact-acceptance predicates at a candidate point.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Acceptance {
    /// `M(y) <= f(anchor)`, ties accepted.
    pub monotone: bool,
    /// `||grad M(y)|| <= sigma / (2 p!) * ||y - anchor||^p`.
    pub stationarity: bool,
    pub grad_norm: f64,
    pub step_norm: f64,
}

impl Acceptance {
    pub fn both(&self) -> bool {
        self.monotone && self.stationarity
    }
}

impl RegularizedModel {
    /// Assembles a model from an oracle snapshot at the anchor. The snapshot
    /// must contain orders `0..=p-1`; the model never re-queries the oracle.
    pub fn new(
        anchor: DVector<f64>,
        snapshot: &Derivatives,
        tensor: RankOneSum,
        sigma: f64,
    ) -> Result<Self> {
        let p = tensor.order();
        let mut derivs = Vec::with_capacity(p.saturating_sub(1));
        for q in 1..p {
            match snapshot.get(q) {
                Some(crate::problems::Derivative::Form(t)) => derivs.push(t.clone()),
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "snapshot is missing the order-{q} derivative"
                    )))
                }
            }
        }
        Self::from_parts(anchor, snapshot.value(), derivs, tensor, sigma)
    }

    /// Assembles a model from explicit parts (mainly for tests and synthetic
    /// instances).
    pub fn from_parts(
        anchor: DVector<f64>,
        f_anchor: f64,
        derivs: Vec<SymmetricTensor>,
        tensor: RankOneSum,
        sigma: f64,
    ) -> Result<Self> {
        let p = tensor.order();
        let n = anchor.len();
        if !sigma.is_finite() || sigma <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "sigma {sigma} must be positive"
            )));
        }
        if tensor.dim() != n {
            return Err(Error::InvalidArgument(format!(
                "tensor dimension {} does not match anchor dimension {n}",
                tensor.dim()
            )));
        }
        if derivs.len() != p - 1 {
            return Err(Error::InvalidArgument(format!(
                "expected {} derivative snapshots for order {p}, got {}",
                p - 1,
                derivs.len()
            )));
        }
        for (k, d) in derivs.iter().enumerate() {
            if d.order() != k + 1 || d.dim() != n {
                return Err(Error::InvalidArgument(format!(
                    "snapshot {k} must be an order-{} form of dimension {n}",
                    k + 1
                )));
            }
        }
        if !f_anchor.is_finite() {
            return Err(Error::NonFinite("anchor value"));
        }
        Ok(Self {
            anchor,
            f_anchor,
            derivs,
            tensor,
            sigma,
        })
    }

    pub fn order(&self) -> usize {
        self.tensor.order()
    }

    pub fn dim(&self) -> usize {
        self.anchor.len()
    }

    pub fn anchor(&self) -> &DVector<f64> {
        &self.anchor
    }

    pub fn f_anchor(&self) -> f64 {
        self.f_anchor
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn tensor(&self) -> &RankOneSum {
        &self.tensor
    }

    /// Order-`q` derivative snapshot at the anchor, `1 <= q <= p-1`.
    pub fn snapshot(&self, q: usize) -> &SymmetricTensor {
        &self.derivs[q - 1]
    }

    /// Model value at `y`.
    pub fn value(&self, y: &DVector<f64>) -> f64 {
        self.value_at_step(&(y - &self.anchor))
    }

    /// Model value at anchor offset `s = y - anchor`. All terms vanish
    /// exactly at `s = 0`, so the anchor value is reproduced bitwise.
    pub fn value_at_step(&self, s: &DVector<f64>) -> f64 {
        let p = self.order();
        let mut acc = self.f_anchor;
        for (k, d) in self.derivs.iter().enumerate() {
            let i = k + 1;
            acc += d.eval_power(s) / factorial(i);
        }
        acc += self.tensor.eval(s) / factorial(p);
        acc += self.sigma / factorial(p + 1) * s.norm().powi(p as i32 + 1);
        acc
    }

    /// Model gradient at `y`.
    pub fn gradient(&self, y: &DVector<f64>) -> DVector<f64> {
        self.gradient_at_step(&(y - &self.anchor))
    }

    /// Model gradient at anchor offset `s`:
    /// `sum_i (1/(i-1)!) D^i f[s]^{i-1} + (1/p!) grad T[s]^p + (sigma/p!) ||s||^{p-1} s`.
    pub fn gradient_at_step(&self, s: &DVector<f64>) -> DVector<f64> {
        let p = self.order();
        let mut g = DVector::zeros(self.dim());
        for (k, d) in self.derivs.iter().enumerate() {
            let i = k + 1;
            g.axpy(1.0 / factorial(i - 1), &d.contract_to_vector(s), 1.0);
        }
        g.axpy(1.0 / factorial(p), &self.tensor.gradient(s), 1.0);
        g.axpy(
            self.sigma / factorial(p) * s.norm().powi(p as i32 - 1),
            s,
            1.0,
        );
        g
    }

    /// Evaluates the two acceptance predicates at `y` with the exact
    /// displayed constants: monotonicity is non-strict (zero tie tolerance)
    /// and the stationarity threshold is `sigma / (2 p!) ||y - anchor||^p`.
    pub fn check_acceptance(&self, y: &DVector<f64>) -> Acceptance {
        let s = y - &self.anchor;
        let step_norm = s.norm();
        let grad_norm = self.gradient_at_step(&s).norm();
        let p = self.order();
        Acceptance {
            monotone: self.value_at_step(&s) <= self.f_anchor,
            stationarity: grad_norm <= self.sigma / (2.0 * factorial(p)) * step_norm.powi(p as i32),
            grad_norm,
            step_norm,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multilinear::{RankOneSum, SymmetricTensor};
    use crate::testutil::random_model;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn anchor_value_is_bitwise_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for p in 1..=3usize {
            for _ in 0..20 {
                let n = rng.gen_range(1..=5);
                let m = random_model(&mut rng, p, n);
                let y = m.anchor().clone();
                assert_eq!(m.value(&y), m.f_anchor());
            }
        }
    }

    #[test]
    fn p1_model_value_example() {
        // f(xb) = 0, T = (1, 0), sigma = 2, y - xb = (1, 0): 0 + 1 + 1 = 2
        let anchor = DVector::zeros(2);
        let t = RankOneSum::from_scalars(DVector::from_column_slice(&[1.0, 0.0]), 1.0);
        let m = RegularizedModel::from_parts(anchor, 0.0, vec![], t, 2.0).unwrap();
        let y = DVector::from_column_slice(&[1.0, 0.0]);
        assert_eq!(m.value(&y), 2.0);
    }

    #[test]
    fn p2_model_value_example() {
        // f = 0.5 ||x||^2 anchored at 0 with exact Hessian rows, sigma = 6,
        // y = (1, 0): 0 + 0 + 0.5 + 1 = 1.5
        let anchor = DVector::zeros(2);
        let grad = SymmetricTensor::from_vector(&DVector::zeros(2));
        let slices = vec![
            SymmetricTensor::from_vector(&DVector::from_column_slice(&[1.0, 0.0])),
            SymmetricTensor::from_vector(&DVector::from_column_slice(&[0.0, 1.0])),
        ];
        let t = RankOneSum::from_forms(slices, 1.0).unwrap();
        let m = RegularizedModel::from_parts(anchor, 0.0, vec![grad], t, 6.0).unwrap();
        let y = DVector::from_column_slice(&[1.0, 0.0]);
        assert_eq!(m.value(&y), 1.5);
    }

    #[test]
    fn gradient_at_anchor_is_snapshot_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for p in 2..=3usize {
            let n = 4;
            let m = random_model(&mut rng, p, n);
            let g = m.gradient(m.anchor());
            assert_relative_eq!(g, m.snapshot(1).as_vector(), max_relative = 1e-14);
        }
    }

    #[test]
    fn gradient_at_anchor_p1_is_the_tensor() {
        let anchor = DVector::zeros(3);
        let d = DVector::from_column_slice(&[0.5, -2.0, 1.0]);
        let t = RankOneSum::from_scalars(d.clone(), 1.0);
        let m = RegularizedModel::from_parts(anchor.clone(), 1.0, vec![], t, 3.0).unwrap();
        assert_eq!(m.gradient(&anchor), d);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for p in 1..=3usize {
            for _ in 0..15 {
                let n = rng.gen_range(1..=5);
                let m = random_model(&mut rng, p, n);
                let y = m.anchor() + DVector::from_fn(n, |_, _| rng.gen_range(-0.7..=0.7));
                let g = m.gradient(&y);
                let h = 1e-5;
                for u in 0..n {
                    let mut yp = y.clone();
                    let mut ym = y.clone();
                    yp[u] += h;
                    ym[u] -= h;
                    let fd = (m.value(&yp) - m.value(&ym)) / (2.0 * h);
                    assert_relative_eq!(g[u], fd, max_relative = 1e-6, epsilon = 1e-7);
                }
            }
        }
    }

    #[test]
    fn symmetrizing_the_tensor_changes_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for p in 1..=3usize {
            let n = 4;
            let m = random_model(&mut rng, p, n);
            // replace T by its dense symmetric part expressed again as a
            // rank-one sum over basis slices
            let sym = m.tensor().symmetrize().unwrap();
            let sym_tensor = if p == 1 {
                RankOneSum::from_scalars(sym.as_vector(), 1.0)
            } else {
                // slice i of the dense symmetric form: entries with the last
                // index pinned at i
                let slices = (0..n)
                    .map(|i| {
                        let entries = if p == 2 {
                            (0..n).map(|j| sym.get(&[j, i])).collect()
                        } else {
                            let mut e = Vec::with_capacity(n * n);
                            for a in 0..n {
                                for b in 0..n {
                                    e.push(sym.get(&[a, b, i]));
                                }
                            }
                            e
                        };
                        SymmetricTensor::from_entries(p - 1, n, entries).unwrap()
                    })
                    .collect();
                RankOneSum::from_forms(slices, 1.0).unwrap()
            };
            let m_sym = RegularizedModel::from_parts(
                m.anchor().clone(),
                m.f_anchor(),
                (1..p).map(|q| m.snapshot(q).clone()).collect(),
                sym_tensor,
                m.sigma(),
            )
            .unwrap();
            for _ in 0..20 {
                let y = m.anchor() + DVector::from_fn(n, |_, _| rng.gen_range(-1.0..=1.0));
                assert_relative_eq!(
                    m.value(&y),
                    m_sym.value(&y),
                    max_relative = 1e-10,
                    epsilon = 1e-12
                );
                assert_relative_eq!(
                    m.gradient(&y),
                    m_sym.gradient(&y),
                    max_relative = 1e-10,
                    epsilon = 1e-10
                );
            }
        }
    }

    #[test]
    fn acceptance_at_anchor() {
        // at y = anchor: monotone by equality, stationarity only when the
        // model gradient vanishes there
        let anchor = DVector::zeros(2);
        let g = SymmetricTensor::from_vector(&DVector::from_column_slice(&[1.0, 0.0]));
        let slices = vec![SymmetricTensor::zeros(1, 2), SymmetricTensor::zeros(1, 2)];
        let t = RankOneSum::from_forms(slices, 1.0).unwrap();
        let m = RegularizedModel::from_parts(anchor.clone(), 5.0, vec![g], t, 2.0).unwrap();
        let a = m.check_acceptance(&anchor);
        assert!(a.monotone);
        assert!(
            !a.stationarity,
            "nonzero anchor gradient fails the zero-step threshold"
        );
    }

    #[test]
    fn acceptance_p1_closed_form_step() {
        let anchor = DVector::zeros(2);
        let d = DVector::from_column_slice(&[2.0, 0.0]);
        let t = RankOneSum::from_scalars(d.clone(), 1.0);
        let sigma = 4.0;
        let m = RegularizedModel::from_parts(anchor.clone(), 0.0, vec![], t, sigma).unwrap();
        let y = &anchor - &d / sigma;
        let a = m.check_acceptance(&y);
        assert!(a.monotone && a.stationarity);
        assert_relative_eq!(
            m.value(&y),
            -d.norm_squared() / (2.0 * sigma),
            epsilon = 1e-14
        );
        assert!(a.grad_norm <= 1e-13);
    }

    #[test]
    fn acceptance_detects_ascent_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let m = random_model(&mut rng, 2, 3);
        // far enough out the sigma term dominates and the model value
        // exceeds the anchor value
        let dir = DVector::from_fn(3, |_, _| rng.gen_range(0.5..=1.0));
        let y = m.anchor() + dir * 1e3;
        let a = m.check_acceptance(&y);
        assert!(!a.monotone);
    }

    #[test]
    fn rejects_bad_sigma_and_missing_snapshots() {
        let anchor = DVector::zeros(2);
        let t = RankOneSum::from_scalars(DVector::zeros(2), 1.0);
        assert!(RegularizedModel::from_parts(anchor.clone(), 0.0, vec![], t.clone(), 0.0).is_err());
        let slices = vec![SymmetricTensor::zeros(1, 2); 2];
        let t2 = RankOneSum::from_forms(slices, 1.0).unwrap();
        assert!(RegularizedModel::from_parts(anchor, 0.0, vec![], t2, 1.0).is_err());
    }
}
