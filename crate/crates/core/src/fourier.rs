//! Trigonometric basis on `[0,1]^D`, triangular partial sums and the
//! de La Vallée Poussin (VP) operator.
//!
//! Multi-indices are always enumerated in lexicographic order of their
//! component tuples `(k_1, ..., k_D)`. The same order is used by the feature
//! vector [`phi_vector`], by [`FourierModel`] and by every covariance matrix
//! built in the inference module.

use std::f64::consts::{PI, SQRT_2};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FdaError, Result};

/// A multi-index `k = (k_1, ..., k_D)` of non-negative integers.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(components: Vec<u32>) -> Self {
        MultiIndex(components)
    }

    pub fn zero(dim: usize) -> Self {
        MultiIndex(vec![0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn components(&self) -> &[u32] {
        &self.0
    }

    /// `|k|_1 = k_1 + ... + k_D`.
    pub fn l1(&self) -> u32 {
        self.0.iter().sum()
    }
}

impl From<Vec<u32>> for MultiIndex {
    fn from(v: Vec<u32>) -> Self {
        MultiIndex(v)
    }
}

/// Number of multi-indices in `N^dim` with `|k|_1 <= bound`, i.e. `C(bound + dim, dim)`.
pub fn count_indices(dim: usize, bound: usize) -> usize {
    let mut c: u128 = 1;
    for i in 1..=dim as u128 {
        c = c * (bound as u128 + i) / i;
    }
    c as usize
}

/// All multi-indices of a given dimension with `|k|_1 <= bound`, in
/// lexicographic order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexSet {
    dim: usize,
    bound: usize,
    flat: Vec<u32>,
}

impl IndexSet {
    pub fn enumerate(dim: usize, bound: usize) -> Self {
        assert!(dim >= 1, "dimension must be at least 1");
        let n = count_indices(dim, bound);
        let mut flat = Vec::with_capacity(n * dim);
        let mut current = vec![0u32; dim];
        fill_lex(&mut flat, &mut current, 0, bound as u32);
        debug_assert_eq!(flat.len(), n * dim);
        IndexSet { dim, bound, flat }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bound(&self) -> usize {
        self.bound
    }

    pub fn len(&self) -> usize {
        self.flat.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    /// Components of the `i`-th multi-index.
    pub fn get(&self, i: usize) -> &[u32] {
        &self.flat[i * self.dim..(i + 1) * self.dim]
    }

    pub fn l1(&self, i: usize) -> u32 {
        self.get(i).iter().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[u32]> + '_ {
        self.flat.chunks_exact(self.dim)
    }

    /// Position of `k` in lexicographic order, or `None` when `k` is not in the set.
    pub fn position(&self, k: &[u32]) -> Option<usize> {
        if k.len() != self.dim {
            return None;
        }
        let total: usize = k.iter().map(|&c| c as usize).sum();
        if total > self.bound {
            return None;
        }
        let mut rank = 0usize;
        let mut remaining = self.bound;
        for (d, &kd) in k.iter().enumerate() {
            let rest = self.dim - d - 1;
            for v in 0..kd as usize {
                rank += count_indices(rest, remaining - v);
            }
            remaining -= kd as usize;
        }
        Some(rank)
    }
}

fn fill_lex(out: &mut Vec<u32>, current: &mut [u32], axis: usize, remaining: u32) {
    if axis == current.len() {
        out.extend_from_slice(current);
        return;
    }
    for v in 0..=remaining {
        current[axis] = v;
        fill_lex(out, current, axis + 1, remaining - v);
    }
    current[axis] = 0;
}

/// Univariate basis element: `phi_0 = 1`, `phi_{2m-1}(u) = sqrt2 sin(2 pi m u)`,
/// `phi_{2m}(u) = sqrt2 cos(2 pi m u)`.
#[inline]
pub fn basis_1d(order: u32, u: f64) -> f64 {
    if order == 0 {
        return 1.0;
    }
    let m = order.div_ceil(2) as f64;
    let arg = 2.0 * PI * m * u;
    if order % 2 == 1 {
        SQRT_2 * arg.sin()
    } else {
        SQRT_2 * arg.cos()
    }
}

/// Tensor-product basis element `phi_k(t) = prod_j phi_{k_j}(t_j)`.
pub fn basis_eval(k: &MultiIndex, t: &[f64]) -> Result<f64> {
    if k.dim() != t.len() {
        return Err(FdaError::DimensionMismatch {
            expected: k.dim(),
            got: t.len(),
        });
    }
    Ok(k
        .components()
        .iter()
        .zip(t)
        .map(|(&kd, &td)| basis_1d(kd, td))
        .product())
}

/// Per-axis table of `phi_m(t_d)` for `m = 0..=max_order`, laid out axis-major.
pub(crate) fn axis_table(t: &[f64], max_order: usize, out: &mut Vec<f64>) {
    let stride = max_order + 1;
    out.clear();
    out.resize(t.len() * stride, 0.0);
    for (d, &u) in t.iter().enumerate() {
        let row = &mut out[d * stride..(d + 1) * stride];
        row[0] = 1.0;
        let mut m = 1;
        while 2 * m - 1 <= max_order {
            let (s, c) = (2.0 * PI * m as f64 * u).sin_cos();
            row[2 * m - 1] = SQRT_2 * s;
            if 2 * m <= max_order {
                row[2 * m] = SQRT_2 * c;
            }
            m += 1;
        }
    }
}

/// Evaluates every basis element of `index` at `t` into `out`.
pub fn basis_values(index: &IndexSet, t: &[f64], out: &mut [f64]) -> Result<()> {
    if t.len() != index.dim() {
        return Err(FdaError::DimensionMismatch {
            expected: index.dim(),
            got: t.len(),
        });
    }
    if out.len() != index.len() {
        return Err(FdaError::LengthMismatch {
            expected: index.len(),
            got: out.len(),
        });
    }
    let mut table = Vec::new();
    basis_values_with(index, t, &mut table, out);
    Ok(())
}

pub(crate) fn basis_values_with(index: &IndexSet, t: &[f64], table: &mut Vec<f64>, out: &mut [f64]) {
    let stride = index.bound() + 1;
    axis_table(t, index.bound(), table);
    for (slot, k) in out.iter_mut().zip(index.iter()) {
        let mut v = 1.0;
        for (d, &kd) in k.iter().enumerate() {
            v *= table[d * stride + kd as usize];
        }
        *slot = v;
    }
}

/// Coefficients attached to every index of an [`IndexSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct Coefficients {
    index: IndexSet,
    values: Vec<f64>,
}

impl Coefficients {
    pub fn new(index: IndexSet, values: Vec<f64>) -> Result<Self> {
        if values.len() != index.len() {
            return Err(FdaError::LengthMismatch {
                expected: index.len(),
                got: values.len(),
            });
        }
        Ok(Coefficients { index, values })
    }

    pub fn zeros(dim: usize, bound: usize) -> Self {
        let index = IndexSet::enumerate(dim, bound);
        let values = vec![0.0; index.len()];
        Coefficients { index, values }
    }

    /// Builds coefficients from a sparse list; indices outside the bound are rejected.
    pub fn from_sparse(dim: usize, bound: usize, entries: &[(MultiIndex, f64)]) -> Result<Self> {
        let mut c = Coefficients::zeros(dim, bound);
        for (k, v) in entries {
            let pos = c
                .index
                .position(k.components())
                .ok_or_else(|| FdaError::MissingCoefficient(k.components().to_vec()))?;
            c.values[pos] = *v;
        }
        Ok(c)
    }

    pub fn index(&self) -> &IndexSet {
        &self.index
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, k: &[u32]) -> Option<f64> {
        self.index.position(k).map(|p| self.values[p])
    }
}

/// Triangular partial sum `S_L(t) = sum_{|k|_1 <= 2L} a_k phi_k(t)`.
pub fn partial_sum_eval(coeffs: &Coefficients, level: usize, t: &[f64]) -> Result<f64> {
    let dim = coeffs.index.dim();
    if t.len() != dim {
        return Err(FdaError::DimensionMismatch {
            expected: dim,
            got: t.len(),
        });
    }
    if coeffs.index.bound() < 2 * level {
        let mut missing = vec![0; dim];
        missing[0] = 2 * level as u32;
        return Err(FdaError::MissingCoefficient(missing));
    }
    let mut table = Vec::new();
    axis_table(t, 2 * level, &mut table);
    let stride = 2 * level + 1;
    let mut sum = 0.0;
    for (k, &a) in coeffs.index.iter().zip(&coeffs.values) {
        let l1: u32 = k.iter().sum();
        if l1 as usize > 2 * level {
            continue;
        }
        let mut v = a;
        for (d, &kd) in k.iter().enumerate() {
            v *= table[d * stride + kd as usize];
        }
        sum += v;
    }
    Ok(sum)
}

/// Weight of a basis element with `|k|_1 = l1` in `V_L`: 1 for `l1 <= 2L`,
/// `(L - l)/L` on the shells `l1 in {2L + 2l - 1, 2L + 2l}`, 0 beyond `4L - 2`.
#[inline]
pub fn vp_weight(level: usize, l1: usize) -> f64 {
    if l1 <= 2 * level {
        return 1.0;
    }
    let shell = (l1 - 2 * level).div_ceil(2);
    if shell >= level {
        0.0
    } else {
        (level - shell) as f64 / level as f64
    }
}

/// Coefficients of `V_L(mu)`: a truncation level together with coefficients on
/// `{k : |k|_1 <= 4L - 2}`.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierModel {
    level: usize,
    coeffs: Coefficients,
}

impl FourierModel {
    pub fn new(dim: usize, level: usize, values: Vec<f64>) -> Result<Self> {
        if level == 0 {
            return Err(FdaError::invalid("L", "truncation level must be at least 1"));
        }
        let index = IndexSet::enumerate(dim, 4 * level - 2);
        Ok(FourierModel {
            level,
            coeffs: Coefficients::new(index, values)?,
        })
    }

    pub fn from_coefficients(level: usize, coeffs: Coefficients) -> Result<Self> {
        if level == 0 {
            return Err(FdaError::invalid("L", "truncation level must be at least 1"));
        }
        if coeffs.index.bound() != 4 * level - 2 {
            let mut missing = vec![0; coeffs.index.dim()];
            missing[0] = (4 * level - 2) as u32;
            return Err(FdaError::MissingCoefficient(missing));
        }
        Ok(FourierModel { level, coeffs })
    }

    /// Model whose coefficients are `f(k)` for every `|k|_1 <= 4L - 2`.
    pub fn from_fn(dim: usize, level: usize, f: impl Fn(&[u32]) -> f64) -> Result<Self> {
        let index = IndexSet::enumerate(dim, 4 * level.max(1) - 2);
        let values = index.iter().map(&f).collect();
        FourierModel::new(dim, level, values)
    }

    pub fn dim(&self) -> usize {
        self.coeffs.index.dim()
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn index(&self) -> &IndexSet {
        &self.coeffs.index
    }

    pub fn coefficients(&self) -> &Coefficients {
        &self.coeffs
    }

    pub fn values(&self) -> &[f64] {
        &self.coeffs.values
    }

    pub fn coefficient(&self, k: &[u32]) -> Option<f64> {
        self.coeffs.get(k)
    }

    pub fn eval(&self, t: &[f64]) -> Result<f64> {
        vp_eval(self, t)
    }
}

/// `V_L(t) = (1/L) sum_{j=0}^{L-1} S_{L+j}(t)`, evaluated through the shell weights.
pub fn vp_eval(model: &FourierModel, t: &[f64]) -> Result<f64> {
    let phi = phi_vector(model.dim(), model.level, t)?;
    Ok(phi.iter().zip(model.values()).map(|(p, a)| p * a).sum())
}

/// `V_L` at many points (flat, `dim` per point), sharing one weight table.
pub fn vp_eval_many(model: &FourierModel, points: &[f64]) -> Result<Vec<f64>> {
    let dim = model.dim();
    if points.len() % dim != 0 {
        return Err(FdaError::LengthMismatch {
            expected: (points.len() / dim + 1) * dim,
            got: points.len(),
        });
    }
    let weighted: Vec<f64> = vp_weights(model.index(), model.level)
        .iter()
        .zip(model.values())
        .map(|(w, a)| w * a)
        .collect();
    Ok(points
        .par_chunks(dim)
        .map_init(
            || (Vec::new(), vec![0.0; weighted.len()]),
            |(table, buf), t| {
                basis_values_with(model.index(), t, table, buf);
                buf.iter().zip(&weighted).map(|(b, a)| b * a).sum()
            },
        )
        .collect())
}

/// `V_L(t)` computed literally as the average of the `L` partial sums.
pub fn vp_eval_by_partial_sums(model: &FourierModel, t: &[f64]) -> Result<f64> {
    let l = model.level;
    let mut acc = 0.0;
    for j in 0..l {
        acc += partial_sum_eval(&model.coeffs, l + j, t)?;
    }
    Ok(acc / l as f64)
}

/// Feature vector `Phi_L(t)` over `IndexSet(dim, 4L - 2)` such that
/// `dot(a, Phi_L(t)) = V_L(t)` for coefficient vector `a`.
pub fn phi_vector(dim: usize, level: usize, t: &[f64]) -> Result<Vec<f64>> {
    if level == 0 {
        return Err(FdaError::invalid("L", "truncation level must be at least 1"));
    }
    let index = IndexSet::enumerate(dim, 4 * level - 2);
    phi_vector_on(&index, level, t)
}

/// Same as [`phi_vector`] with a pre-built index set (must have bound `4L - 2`).
pub fn phi_vector_on(index: &IndexSet, level: usize, t: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; index.len()];
    basis_values(index, t, &mut out)?;
    for (i, v) in out.iter_mut().enumerate() {
        *v *= vp_weight(level, index.l1(i) as usize);
    }
    Ok(out)
}

/// Shell weights of `Phi_L`, aligned with `IndexSet(dim, 4L - 2)`.
pub fn vp_weights(index: &IndexSet, level: usize) -> Vec<f64> {
    (0..index.len())
        .map(|i| vp_weight(level, index.l1(i) as usize))
        .collect()
}

/// `(1/L) sum_{j=0}^{L-1} sum_{|k|_1 <= 2(L+j)} phi_k(t)^2`, by direct summation.
pub fn theta_average(level: usize, dim: usize, t: &[f64]) -> f64 {
    assert!(level >= 1);
    assert_eq!(t.len(), dim);
    let mut total = 0.0;
    for j in 0..level {
        let bound = 2 * (level + j);
        let index = IndexSet::enumerate(dim, bound);
        for k in index.iter() {
            let v: f64 = k.iter().zip(t).map(|(&kd, &td)| basis_1d(kd, td)).product();
            total += v * v;
        }
    }
    total / level as f64
}

/// Leading constant `(2^{2D+1} - 2^D) / (D+1)!` of `theta_average / L^D`.
pub fn theta_leading_constant(dim: usize) -> f64 {
    let d = dim as i32;
    let fact: f64 = (1..=dim + 1).map(|i| i as f64).product();
    (2f64.powi(2 * d + 1) - 2f64.powi(d)) / fact
}
