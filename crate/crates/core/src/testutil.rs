//! Shared helpers for unit tests: seeded random forms, rank-one sums, and
//! regularized models.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::model::RegularizedModel;
use crate::multilinear::{RankOneSum, SymmetricTensor};

pub fn random_form(rng: &mut ChaCha8Rng, order: usize, dim: usize) -> SymmetricTensor {
    let raw: Vec<f64> = (0..dim.pow(order as u32))
        .map(|_| rng.gen_range(-2.0..=2.0))
        .collect();
    SymmetricTensor::symmetrized(order, dim, raw).unwrap()
}

pub fn random_rank_one_sum(rng: &mut ChaCha8Rng, order: usize, dim: usize) -> RankOneSum {
    if order == 1 {
        RankOneSum::from_scalars(DVector::from_fn(dim, |_, _| rng.gen_range(-2.0..=2.0)), 1.0)
    } else {
        let slices = (0..dim).map(|_| random_form(rng, order - 1, dim)).collect();
        RankOneSum::from_forms(slices, 1.0).unwrap()
    }
}

pub fn random_model(rng: &mut ChaCha8Rng, p: usize, n: usize) -> RegularizedModel {
    let anchor = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..=1.0));
    let f_anchor = rng.gen_range(-1.0..=1.0);
    let derivs: Vec<SymmetricTensor> = (1..p).map(|q| random_form(rng, q, n)).collect();
    let tensor = random_rank_one_sum(rng, p, n);
    let sigma = rng.gen_range(0.3f64.ln()..=30.0f64.ln()).exp();
    RegularizedModel::from_parts(anchor, f_anchor, derivs, tensor, sigma).unwrap()
}
