//! Dense symmetric multilinear forms over `R^n` for orders 1..=3, and
//! rank-one-sum tensors of the shape produced by coordinate-wise finite
//! differences.
//!
//! A `q`-form `T` acts on `q` directions; for a single repeated direction we
//! write `T[h]^q` for the full contraction and `T[h]^{q-1}` for the vector
//! obtained by leaving one slot free. Storage is a dense `n^q` array, which
//! is exact and cheap at the dimensions this crate targets (`n <= 50` for
//! order 2, `n <= 12` for order 3).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Highest supported form order.
pub const MAX_ORDER: usize = 3;

/// A dense symmetric `q`-linear form over `R^n`, `1 <= q <= 3`.
///
/// Entries are invariant under every index permutation; constructors either
/// check this or enforce it by averaging. Order-1 forms are plain vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricTensor {
    order: usize,
    dim: usize,
    entries: Vec<f64>,
}

impl SymmetricTensor {
    /// Zero form of the given order and dimension.
    pub fn zeros(order: usize, dim: usize) -> Self {
        assert!(
            (1..=MAX_ORDER).contains(&order),
            "order {order} out of range 1..=3"
        );
        assert!(dim >= 1, "dimension must be positive");
        Self {
            order,
            dim,
            entries: vec![0.0; dim.pow(order as u32)],
        }
    }

    /// Builds a form from a dense entry array, checking length, finiteness,
    /// and exact permutation symmetry.
    pub fn from_entries(order: usize, dim: usize, entries: Vec<f64>) -> Result<Self> {
        if !(1..=MAX_ORDER).contains(&order) {
            return Err(Error::UnsupportedOrder { order });
        }
        if dim < 1 || entries.len() != dim.pow(order as u32) {
            return Err(Error::InvalidArgument(format!(
                "entry array of length {} does not match dim {} and order {}",
                entries.len(),
                dim,
                order
            )));
        }
        if entries.iter().any(|e| !e.is_finite()) {
            return Err(Error::NonFinite("tensor entries"));
        }
        let t = Self {
            order,
            dim,
            entries,
        };
        let mut idx = vec![0usize; order];
        loop {
            let v = t.get(&idx);
            let mut perm = idx.clone();
            perm.sort_unstable();
            // comparing against the sorted representative covers all permutations
            if t.get(&perm) != v {
                return Err(Error::InvalidArgument(format!(
                    "entries are not permutation symmetric at index {idx:?}"
                )));
            }
            if !next_index(&mut idx, dim) {
                break;
            }
        }
        Ok(t)
    }

    /// Builds a form by averaging the given dense array over all index
    /// permutations, so the result is symmetric whatever the input.
    pub fn symmetrized(order: usize, dim: usize, entries: Vec<f64>) -> Result<Self> {
        if !(1..=MAX_ORDER).contains(&order) {
            return Err(Error::UnsupportedOrder { order });
        }
        if dim < 1 || entries.len() != dim.pow(order as u32) {
            return Err(Error::InvalidArgument(format!(
                "entry array of length {} does not match dim {} and order {}",
                entries.len(),
                dim,
                order
            )));
        }
        if entries.iter().any(|e| !e.is_finite()) {
            return Err(Error::NonFinite("tensor entries"));
        }
        let raw = Self {
            order,
            dim,
            entries,
        };
        let mut out = Self::zeros(order, dim);
        let mut idx = vec![0usize; order];
        loop {
            // average once per orbit, at the sorted representative, and write
            // the same value to every permutation so symmetry is bitwise
            if idx.windows(2).all(|w| w[0] <= w[1]) {
                let perms = permutations(&idx);
                let avg = perms.iter().map(|p| raw.get(p)).sum::<f64>() / perms.len() as f64;
                out.set_sym(&idx, avg);
            }
            if !next_index(&mut idx, dim) {
                break;
            }
        }
        Ok(out)
    }

    /// Order-1 form from a vector.
    pub fn from_vector(v: &DVector<f64>) -> Self {
        assert!(!v.is_empty(), "vector must be nonempty");
        Self {
            order: 1,
            dim: v.len(),
            entries: v.iter().copied().collect(),
        }
    }

    /// Order-2 form from a square matrix (must be exactly symmetric).
    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        assert_eq!(m.nrows(), m.ncols(), "matrix must be square");
        let n = m.nrows();
        let mut entries = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                entries.push(m[(i, j)]);
            }
        }
        Self::from_entries(2, n, entries)
    }

    /// Form with the given values on the main diagonal `(i, ..., i)` and
    /// zeros elsewhere.
    pub fn from_diagonal(order: usize, diag: &[f64]) -> Self {
        let dim = diag.len();
        let mut t = Self::zeros(order, dim);
        for (i, &v) in diag.iter().enumerate() {
            let idx = vec![i; order];
            t.entries[linear_index(&idx, dim)] = v;
        }
        t
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Entry at a multi-index, e.g. `t.get(&[i, j, k])` for order 3.
    pub fn get(&self, idx: &[usize]) -> f64 {
        assert_eq!(
            idx.len(),
            self.order,
            "multi-index length must equal the order"
        );
        self.entries[linear_index(idx, self.dim)]
    }

    /// Writes `v` at a multi-index and every permutation of it.
    pub fn set_sym(&mut self, idx: &[usize], v: f64) {
        assert_eq!(
            idx.len(),
            self.order,
            "multi-index length must equal the order"
        );
        for p in permutations(idx) {
            self.entries[linear_index(&p, self.dim)] = v;
        }
    }

    /// The order-1 form as a vector.
    pub fn as_vector(&self) -> DVector<f64> {
        assert_eq!(self.order, 1, "as_vector requires an order-1 form");
        DVector::from_column_slice(&self.entries)
    }

    /// The order-2 form as a dense matrix.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        assert_eq!(self.order, 2, "to_matrix requires an order-2 form");
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.entries[i * self.dim + j])
    }

    /// Full contraction `T[h]^q` with a single repeated direction.
    pub fn eval_power(&self, h: &DVector<f64>) -> f64 {
        assert_eq!(h.len(), self.dim, "direction dimension mismatch");
        let n = self.dim;
        match self.order {
            1 => self.entries.iter().zip(h.iter()).map(|(t, x)| t * x).sum(),
            2 => {
                let mut acc = 0.0;
                for i in 0..n {
                    let mut row = 0.0;
                    for j in 0..n {
                        row += self.entries[i * n + j] * h[j];
                    }
                    acc += h[i] * row;
                }
                acc
            }
            3 => {
                let mut acc = 0.0;
                for i in 0..n {
                    let mut plane = 0.0;
                    for j in 0..n {
                        let mut row = 0.0;
                        for k in 0..n {
                            row += self.entries[(i * n + j) * n + k] * h[k];
                        }
                        plane += h[j] * row;
                    }
                    acc += h[i] * plane;
                }
                acc
            }
            _ => unreachable!(),
        }
    }

    /// The vector `v` with `v_u = T[h, ..., h, e_u]` (the form contracted
    /// with `q - 1` copies of `h`). For `q = 1` there is nothing to contract
    /// and the form itself is returned; it satisfies
    /// `<contract_to_vector(T, h), h> = eval_power(T, h)`.
    pub fn contract_to_vector(&self, h: &DVector<f64>) -> DVector<f64> {
        assert_eq!(h.len(), self.dim, "direction dimension mismatch");
        let n = self.dim;
        match self.order {
            1 => self.as_vector(),
            2 => {
                let mut v = DVector::zeros(n);
                for u in 0..n {
                    let mut acc = 0.0;
                    for i in 0..n {
                        acc += self.entries[u * n + i] * h[i];
                    }
                    v[u] = acc;
                }
                v
            }
            3 => {
                let mut v = DVector::zeros(n);
                for u in 0..n {
                    let mut acc = 0.0;
                    for i in 0..n {
                        let mut row = 0.0;
                        for j in 0..n {
                            row += self.entries[(i * n + j) * n + u] * h[j];
                        }
                        acc += h[i] * row;
                    }
                    v[u] = acc;
                }
                v
            }
            _ => unreachable!(),
        }
    }

    /// Induced operator norm `max |T[h]^q|` over the unit ball.
    ///
    /// Exact for orders 1 and 2 (Euclidean norm, spectral radius). For order
    /// 3 this is a lower-bound estimate from a shifted power iteration with
    /// deterministic restarts; the returned value never exceeds the true
    /// norm.
    pub fn operator_norm(&self) -> f64 {
        match self.order {
            1 => self.as_vector().norm(),
            2 => {
                let eig = self.to_matrix().symmetric_eigen();
                eig.eigenvalues.iter().fold(0.0f64, |m, &l| m.max(l.abs()))
            }
            3 => self.norm3_lower_bound(),
            _ => unreachable!(),
        }
    }

    /// Entry-wise difference `self - other`.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.order != other.order || self.dim != other.dim {
            return Err(Error::InvalidArgument(format!(
                "cannot subtract a ({}, {}) form from a ({}, {}) form",
                other.order, other.dim, self.order, self.dim
            )));
        }
        let entries = self
            .entries
            .iter()
            .zip(other.entries.iter())
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self {
            order: self.order,
            dim: self.dim,
            entries,
        })
    }

    /// Entry-wise scaling.
    pub fn scale(&self, c: f64) -> Self {
        Self {
            order: self.order,
            dim: self.dim,
            entries: self.entries.iter().map(|e| c * e).collect(),
        }
    }

    /// Frobenius norm of the entry array; an upper bound on the operator norm.
    pub fn frobenius_norm(&self) -> f64 {
        self.entries.iter().map(|e| e * e).sum::<f64>().sqrt()
    }

    /// Shifted symmetric power iteration for `max |T[h]^3|`, restarted from
    /// every basis vector and a fixed set of seeded random directions. Every
    /// iterate yields a valid lower bound, so the running maximum does too.
    fn norm3_lower_bound(&self) -> f64 {
        let n = self.dim;
        let shift = 2.0 * self.frobenius_norm() + 1e-12;
        let mut rng = ChaCha8Rng::seed_from_u64(0x7e3a_11c5);
        let mut starts: Vec<DVector<f64>> = (0..n)
            .map(|i| {
                let mut e = DVector::zeros(n);
                e[i] = 1.0;
                e
            })
            .collect();
        for _ in 0..16 {
            let v = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..=1.0));
            let norm = v.norm();
            if norm > 0.0 {
                starts.push(v / norm);
            }
        }
        let mut best = 0.0f64;
        for sign in [1.0, -1.0] {
            for start in &starts {
                let mut h = start.clone();
                for _ in 0..200 {
                    best = best.max(self.eval_power(&h).abs());
                    let mut next = self.contract_to_vector(&h) * sign + &h * shift;
                    let norm = next.norm();
                    if norm == 0.0 {
                        break;
                    }
                    next /= norm;
                    let delta = (&next - &h).norm();
                    h = next;
                    if delta <= 1e-13 {
                        break;
                    }
                }
                best = best.max(self.eval_power(&h).abs());
            }
        }
        best
    }
}

/// The `p`-linear form `sum_i D_i (x) e_i` built from `n` order-`(p-1)`
/// slices, one per canonical basis direction, without materializing the
/// (generally nonsymmetric) dense order-`p` array.
///
/// For `p = 1` the slices are scalars and the form is a plain vector.
#[derive(Debug, Clone)]
pub struct RankOneSum {
    dim: usize,
    order: usize,
    slices: SliceSet,
    step: f64,
}

#[derive(Debug, Clone)]
enum SliceSet {
    /// `p = 1`: one scalar slice per coordinate.
    Scalars(DVector<f64>),
    /// `p >= 2`: one order-`(p-1)` form per coordinate.
    Forms(Vec<SymmetricTensor>),
}

impl RankOneSum {
    /// Order-1 sum from scalar slices. `step` is the finite-difference step
    /// that produced the slices (must be positive; use 1.0 for synthetic
    /// tensors).
    pub fn from_scalars(slices: DVector<f64>, step: f64) -> Self {
        assert!(step > 0.0, "step must be positive");
        assert!(slices.nrows() >= 1, "need at least one slice");
        Self {
            dim: slices.len(),
            order: 1,
            slices: SliceSet::Scalars(slices),
            step,
        }
    }

    /// Order-`(q+1)` sum from `n` order-`q` slices of dimension `n`.
    pub fn from_forms(slices: Vec<SymmetricTensor>, step: f64) -> Result<Self> {
        if step <= 0.0 || !step.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "step {step} must be positive"
            )));
        }
        let n = slices.len();
        if n == 0 {
            return Err(Error::InvalidArgument("need at least one slice".into()));
        }
        let slice_order = slices[0].order();
        for s in &slices {
            if s.dim() != n || s.order() != slice_order {
                return Err(Error::InvalidArgument(format!(
                    "every slice must have dim {n} and order {slice_order}"
                )));
            }
        }
        Ok(Self {
            dim: n,
            order: slice_order + 1,
            slices: SliceSet::Forms(slices),
            step,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The order `p` of the represented form (slice order plus one).
    pub fn order(&self) -> usize {
        self.order
    }

    /// Finite-difference step used to build the slices.
    pub fn step(&self) -> f64 {
        self.step
    }

    /// The scalar slices as a vector, when `p = 1`.
    pub fn linear_part(&self) -> Option<&DVector<f64>> {
        match &self.slices {
            SliceSet::Scalars(d) => Some(d),
            SliceSet::Forms(_) => None,
        }
    }

    /// The order-`(p-1)` slices, when `p >= 2`.
    pub fn form_slices(&self) -> Option<&[SymmetricTensor]> {
        match &self.slices {
            SliceSet::Scalars(_) => None,
            SliceSet::Forms(f) => Some(f),
        }
    }

    /// Frobenius norm of the dense raw form (root of the summed squared
    /// slice entries); an upper bound on the operator norm.
    pub fn frobenius_norm(&self) -> f64 {
        match &self.slices {
            SliceSet::Scalars(d) => d.norm(),
            SliceSet::Forms(slices) => slices
                .iter()
                .map(|t| {
                    let f = t.frobenius_norm();
                    f * f
                })
                .sum::<f64>()
                .sqrt(),
        }
    }

    /// `T[s]^p = sum_i D_i[s]^{p-1} s_i`.
    pub fn eval(&self, s: &DVector<f64>) -> f64 {
        assert_eq!(s.len(), self.dim, "direction dimension mismatch");
        match &self.slices {
            SliceSet::Scalars(d) => d.dot(s),
            SliceSet::Forms(slices) => slices
                .iter()
                .enumerate()
                .map(|(i, d)| d.eval_power(s) * s[i])
                .sum(),
        }
    }

    /// Gradient of `s -> T[s]^p`:
    /// `sum_i ( D_i[s]^{p-1} e_i + (p-1) s_i D_i[s]^{p-2} )`.
    /// For `p = 1` this is the constant slice vector.
    pub fn gradient(&self, s: &DVector<f64>) -> DVector<f64> {
        assert_eq!(s.len(), self.dim, "direction dimension mismatch");
        match &self.slices {
            SliceSet::Scalars(d) => d.clone(),
            SliceSet::Forms(slices) => {
                let mut g = DVector::zeros(self.dim);
                let contractions = (self.order - 1) as f64;
                for (i, d) in slices.iter().enumerate() {
                    g[i] += d.eval_power(s);
                    g.axpy(contractions * s[i], &d.contract_to_vector(s), 1.0);
                }
                g
            }
        }
    }

    /// The symmetric part as a dense form: averages the slot holding `e_i`
    /// over all positions. Diagonal action is preserved exactly
    /// (`eval_power(symmetrize(R), s) = R.eval(s)`) and the operator norm
    /// can only shrink.
    pub fn symmetrize(&self) -> Result<SymmetricTensor> {
        if self.order > MAX_ORDER {
            return Err(Error::UnsupportedOrder { order: self.order });
        }
        let n = self.dim;
        match &self.slices {
            SliceSet::Scalars(d) => Ok(SymmetricTensor::from_vector(d)),
            SliceSet::Forms(slices) => match self.order {
                2 => {
                    let mut out = SymmetricTensor::zeros(2, n);
                    for j in 0..n {
                        for i in 0..n {
                            // raw form has column i equal to slice D_i
                            let raw_ji = slices[i].entries()[j];
                            let raw_ij = slices[j].entries()[i];
                            out.entries[j * n + i] = 0.5 * (raw_ji + raw_ij);
                        }
                    }
                    Ok(out)
                }
                3 => {
                    let mut out = SymmetricTensor::zeros(3, n);
                    for a in 0..n {
                        for b in 0..n {
                            for c in 0..n {
                                let v = (slices[a].entries()[b * n + c]
                                    + slices[b].entries()[a * n + c]
                                    + slices[c].entries()[a * n + b])
                                    / 3.0;
                                out.entries[(a * n + b) * n + c] = v;
                            }
                        }
                    }
                    Ok(out)
                }
                _ => unreachable!(),
            },
        }
    }
}

fn linear_index(idx: &[usize], dim: usize) -> usize {
    let mut lin = 0usize;
    for &i in idx {
        debug_assert!(i < dim);
        lin = lin * dim + i;
    }
    lin
}

/// Advances a multi-index in lexicographic order; returns false after the
/// last one.
fn next_index(idx: &mut [usize], dim: usize) -> bool {
    for pos in (0..idx.len()).rev() {
        idx[pos] += 1;
        if idx[pos] < dim {
            return true;
        }
        idx[pos] = 0;
    }
    false
}

/// All permutations of a short multi-index (at most 3! = 6 of them).
fn permutations(idx: &[usize]) -> Vec<Vec<usize>> {
    match idx.len() {
        1 => vec![idx.to_vec()],
        2 => vec![vec![idx[0], idx[1]], vec![idx[1], idx[0]]],
        3 => {
            let (a, b, c) = (idx[0], idx[1], idx[2]);
            vec![
                vec![a, b, c],
                vec![a, c, b],
                vec![b, a, c],
                vec![b, c, a],
                vec![c, a, b],
                vec![c, b, a],
            ]
        }
        _ => panic!("unsupported index length"),
    }
}
