//! Control-neighbors integration weights over a pooled design.
//!
//! For a design `T_1..T_n`, the leave-one-out nearest neighbor of `T_l` is its
//! nearest point in `design \ {T_l}`. The degree `d_j` counts how often `T_j`
//! is that neighbor, and the cumulative volume `c_j` sums the `f_T`-mass of
//! the leave-one-out Voronoi cells of `T_j` over all `l != j`. The integration
//! rule `I(phi) = sum_j w_j phi(T_j)` uses `w_j = (1 + c_j - d_j) / n`.
//!
//! Nearest-neighbor ties are broken in favour of the lexicographically
//! smallest location.

use std::cmp::Ordering;

use rand::Rng;
use rand_distr::{Beta, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta as BetaDist, ContinuousCDF};

use crate::error::{FdaError, Result};
use crate::rng::{self, stage};

/// Below this size nearest neighbors are found by a full scan.
const BRUTE_FORCE_BELOW: usize = 500;
/// MC volume draws per independent RNG chunk.
const MC_CHUNK: usize = 8192;

/// All observation locations pooled across curves, with their `(i, m)` identity.
#[derive(Clone, Debug, PartialEq)]
pub struct PooledDesign {
    dim: usize,
    points: Vec<f64>,
    ids: Vec<(usize, usize)>,
}

impl PooledDesign {
    /// Validates the locations (inside `[0,1]^dim`, pairwise distinct, at least two).
    pub fn new(dim: usize, points: Vec<f64>, ids: Vec<(usize, usize)>) -> Result<Self> {
        if dim == 0 {
            return Err(FdaError::invalid("D", "dimension must be at least 1"));
        }
        if points.len() % dim != 0 {
            return Err(FdaError::LengthMismatch {
                expected: (points.len() / dim + 1) * dim,
                got: points.len(),
            });
        }
        let n = points.len() / dim;
        if ids.len() != n {
            return Err(FdaError::LengthMismatch {
                expected: n,
                got: ids.len(),
            });
        }
        if n < 2 {
            return Err(FdaError::TooFewPoints { needed: 2, got: n });
        }
        for p in points.chunks_exact(dim) {
            if p.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
                return Err(FdaError::OutOfDomain(p.to_vec()));
            }
        }
        let design = PooledDesign { dim, points, ids };
        let order = design.lex_order();
        for w in order.windows(2) {
            if design.point(w[0]) == design.point(w[1]) {
                return Err(FdaError::DuplicatePoint(design.point(w[0]).to_vec()));
            }
        }
        Ok(design)
    }

    /// Design without curve structure: ids are `(0, j)`.
    pub fn from_points(dim: usize, points: Vec<f64>) -> Result<Self> {
        let n = points.len() / dim.max(1);
        PooledDesign::new(dim, points, (0..n).map(|j| (0, j)).collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn point(&self, j: usize) -> &[f64] {
        &self.points[j * self.dim..(j + 1) * self.dim]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn ids(&self) -> &[(usize, usize)] {
        &self.ids
    }

    fn lex_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| lex_cmp(self.point(a), self.point(b)));
        order
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y).unwrap_or(Ordering::Equal) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

/// Per-axis law of a product design density on `[0,1]^D`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensityKind {
    Uniform,
    /// Product of Beta(a, b) marginals.
    ProductBeta { a: f64, b: f64 },
    /// Product of `1 + slope (u - 1/2)` marginals, `|slope| < 2`.
    ProductLinear { slope: f64 },
}

/// Known design density `f_T` with its sampler and (for `D = 1`) its CDF.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignDensity {
    pub dim: usize,
    #[serde(flatten)]
    pub kind: DensityKind,
}

impl DesignDensity {
    pub fn uniform(dim: usize) -> Self {
        DesignDensity {
            dim,
            kind: DensityKind::Uniform,
        }
    }

    pub fn new(dim: usize, kind: DensityKind) -> Result<Self> {
        let d = DesignDensity { dim, kind };
        d.check_parameters()?;
        Ok(d)
    }

    fn check_parameters(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(FdaError::invalid("density.dim", "must be at least 1"));
        }
        match self.kind {
            DensityKind::Uniform => Ok(()),
            DensityKind::ProductBeta { a, b } => {
                if a >= 1.0 && b >= 1.0 && a.is_finite() && b.is_finite() {
                    Ok(())
                } else {
                    Err(FdaError::invalid("density.a/b", "Beta parameters must be finite and >= 1"))
                }
            }
            DensityKind::ProductLinear { slope } => {
                if slope.abs() < 2.0 {
                    Ok(())
                } else {
                    Err(FdaError::invalid("density.slope", "|slope| must be < 2"))
                }
            }
        }
    }

    fn marginal_pdf(&self, u: f64) -> f64 {
        match self.kind {
            DensityKind::Uniform => 1.0,
            DensityKind::ProductBeta { a, b } => {
                let norm = statrs::function::beta::beta(a, b);
                u.powf(a - 1.0) * (1.0 - u).powf(b - 1.0) / norm
            }
            DensityKind::ProductLinear { slope } => 1.0 + slope * (u - 0.5),
        }
    }

    fn marginal_cdf(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match self.kind {
            DensityKind::Uniform => u,
            DensityKind::ProductBeta { a, b } => BetaDist::new(a, b).map(|d| d.cdf(u)).unwrap_or(u),
            DensityKind::ProductLinear { slope } => u + 0.5 * slope * (u * u - u),
        }
    }

    fn sample_marginal<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.kind {
            DensityKind::Uniform => rng.gen::<f64>(),
            DensityKind::ProductBeta { a, b } => Beta::new(a, b).expect("validated parameters").sample(rng),
            DensityKind::ProductLinear { slope } => {
                let p: f64 = rng.gen();
                if slope.abs() < 1e-12 {
                    p
                } else {
                    let lin = 1.0 - 0.5 * slope;
                    ((lin * lin + 2.0 * slope * p).sqrt() - lin) / slope
                }
            }
        }
    }

    /// Density value `f_T(t)`.
    pub fn pdf(&self, t: &[f64]) -> f64 {
        t.iter().map(|&u| self.marginal_pdf(u)).product()
    }

    /// Distribution function; only defined for `D = 1`.
    pub fn cdf(&self, u: f64) -> Option<f64> {
        (self.dim == 1).then(|| self.marginal_cdf(u))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        for x in out.iter_mut() {
            *x = self.sample_marginal(rng);
        }
    }

    /// Bounds `(C_0, C_1)` of the density over `[0,1]^D`.
    pub fn bounds(&self) -> (f64, f64) {
        let (lo, hi) = match self.kind {
            DensityKind::Uniform => (1.0, 1.0),
            DensityKind::ProductLinear { slope } => (1.0 - slope.abs() / 2.0, 1.0 + slope.abs() / 2.0),
            DensityKind::ProductBeta { .. } => {
                let grid = 1000;
                (0..=grid)
                    .map(|i| self.marginal_pdf(i as f64 / grid as f64))
                    .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)))
            }
        };
        (lo.powi(self.dim as i32), hi.powi(self.dim as i32))
    }

    /// Checks `0 < C_0 <= f_T <= C_1` on a validation grid.
    pub fn validate_bounded(&self) -> Result<()> {
        self.check_parameters()?;
        let (c0, c1) = self.bounds();
        if c0 <= 0.0 || !c1.is_finite() {
            return Err(FdaError::invalid(
                "density",
                format!("density must be bounded away from 0 and infinity (C0={c0}, C1={c1})"),
            ));
        }
        Ok(())
    }
}

/// How the cumulative Voronoi volumes are computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VolumeMethod {
    /// Exact closed forms in `D = 1`, Monte Carlo otherwise.
    #[default]
    Auto,
    Exact,
    MonteCarlo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightConfig {
    #[serde(default)]
    pub method: VolumeMethod,
    /// MC draw count; defaults to `max(1e5, 100 n)`.
    #[serde(default)]
    pub mc_samples: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for WeightConfig {
    fn default() -> Self {
        WeightConfig {
            method: VolumeMethod::Auto,
            mc_samples: None,
            seed: 0,
        }
    }
}

impl WeightConfig {
    pub fn with_seed(seed: u64) -> Self {
        WeightConfig {
            seed,
            ..Default::default()
        }
    }

    pub fn default_mc_samples(n: usize) -> usize {
        (100 * n).max(100_000)
    }
}

/// Provenance of a [`DesignWeights`] computation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightsMeta {
    pub method: String,
    pub mc_samples: Option<usize>,
    pub seed: u64,
    /// `sum_j w_j - 1`.
    pub weight_sum_residual: f64,
}

/// Degrees, cumulative volumes and integration weights, aligned with the design order.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignWeights {
    pub degrees: Vec<u32>,
    pub volumes: Vec<f64>,
    pub weights: Vec<f64>,
    pub meta: WeightsMeta,
}

impl DesignWeights {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    fn assemble(degrees: Vec<u32>, volumes: Vec<f64>, method: &str, mc_samples: Option<usize>, seed: u64) -> Self {
        let n = degrees.len() as f64;
        let weights: Vec<f64> = degrees
            .iter()
            .zip(&volumes)
            .map(|(&d, &c)| (1.0 + c - d as f64) / n)
            .collect();
        let residual = weights.iter().sum::<f64>() - 1.0;
        DesignWeights {
            degrees,
            volumes,
            weights,
            meta: WeightsMeta {
                method: method.to_string(),
                mc_samples,
                seed,
                weight_sum_residual: residual,
            },
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Candidate {
    dist2: f64,
    index: usize,
}

/// Keeps the two best candidates under (distance, lexicographic location).
struct BestTwo<'a> {
    design: &'a PooledDesign,
    first: Option<Candidate>,
    second: Option<Candidate>,
}

impl<'a> BestTwo<'a> {
    fn new(design: &'a PooledDesign) -> Self {
        BestTwo {
            design,
            first: None,
            second: None,
        }
    }

    fn better(&self, a: &Candidate, b: &Candidate) -> bool {
        match a.dist2.partial_cmp(&b.dist2).unwrap_or(Ordering::Equal) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => lex_cmp(self.design.point(a.index), self.design.point(b.index)) == Ordering::Less,
        }
    }

    fn offer(&mut self, c: Candidate) {
        match self.first {
            None => self.first = Some(c),
            Some(f) if self.better(&c, &f) => {
                self.second = self.first;
                self.first = Some(c);
            }
            _ => match self.second {
                None => self.second = Some(c),
                Some(s) if self.better(&c, &s) => self.second = Some(c),
                _ => {}
            },
        }
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Exact nearest-neighbor search over a design: sorted line for `D = 1`,
/// uniform bucket grid for `D >= 2`, full scan for small designs.
pub struct NeighborIndex<'a> {
    design: &'a PooledDesign,
    kind: IndexKind,
}

enum IndexKind {
    Line { sorted: Vec<f64>, order: Vec<usize> },
    Brute,
    Grid { per_axis: usize, offsets: Vec<usize>, items: Vec<usize> },
}

impl<'a> NeighborIndex<'a> {
    pub fn new(design: &'a PooledDesign) -> Self {
        let n = design.len();
        let dim = design.dim();
        let kind = if dim == 1 {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| design.points[a].partial_cmp(&design.points[b]).unwrap_or(Ordering::Equal));
            let sorted = order.iter().map(|&j| design.points[j]).collect();
            IndexKind::Line { sorted, order }
        } else if n < BRUTE_FORCE_BELOW {
            IndexKind::Brute
        } else {
            let per_axis = ((n as f64 / 2.0).powf(1.0 / dim as f64).floor() as usize).max(1);
            let n_cells = per_axis.pow(dim as u32);
            let cell_ids: Vec<usize> = (0..n).map(|j| cell_id(design.point(j), per_axis)).collect();
            let mut offsets = vec![0usize; n_cells + 1];
            for &c in &cell_ids {
                offsets[c + 1] += 1;
            }
            for c in 0..n_cells {
                offsets[c + 1] += offsets[c];
            }
            let mut cursor = offsets.clone();
            let mut items = vec![0usize; n];
            for (j, &c) in cell_ids.iter().enumerate() {
                items[cursor[c]] = j;
                cursor[c] += 1;
            }
            IndexKind::Grid {
                per_axis,
                offsets,
                items,
            }
        };
        NeighborIndex { design, kind }
    }

    /// Nearest and second-nearest design points to `query`, skipping `exclude`.
    pub fn nearest_two(&self, query: &[f64], exclude: Option<usize>) -> (usize, Option<usize>) {
        let mut best = BestTwo::new(self.design);
        match &self.kind {
            IndexKind::Line { sorted, order } => {
                let p = sorted.partition_point(|&s| s < query[0]);
                let lo = p.saturating_sub(3);
                let hi = (p + 3).min(sorted.len());
                for r in lo..hi {
                    let j = order[r];
                    if Some(j) != exclude {
                        let d = sorted[r] - query[0];
                        best.offer(Candidate { dist2: d * d, index: j });
                    }
                }
            }
            IndexKind::Brute => {
                for j in 0..self.design.len() {
                    if Some(j) != exclude {
                        best.offer(Candidate {
                            dist2: dist2(query, self.design.point(j)),
                            index: j,
                        });
                    }
                }
            }
            IndexKind::Grid {
                per_axis,
                offsets,
                items,
            } => {
                let g = *per_axis;
                let h = 1.0 / g as f64;
                let dim = self.design.dim();
                let center: Vec<isize> = query
                    .iter()
                    .map(|&x| ((x * g as f64).floor() as isize).clamp(0, g as isize - 1))
                    .collect();
                let mut coords = vec![0isize; dim];
                for ring in 0..=g as isize {
                    visit_ring(&center, ring, g as isize, &mut coords, 0, false, &mut |cell| {
                        for &j in &items[offsets[cell]..offsets[cell + 1]] {
                            if Some(j) != exclude {
                                best.offer(Candidate {
                                    dist2: dist2(query, self.design.point(j)),
                                    index: j,
                                });
                            }
                        }
                    });
                    if let Some(s) = best.second {
                        let reach = ring as f64 * h;
                        if s.dist2 < reach * reach {
                            break;
                        }
                    }
                }
            }
        }
        let first = best.first.expect("design has at least two points").index;
        (first, best.second.map(|c| c.index))
    }
}

fn cell_id(t: &[f64], per_axis: usize) -> usize {
    let mut id = 0;
    for &x in t.iter().rev() {
        let c = ((x * per_axis as f64).floor() as usize).min(per_axis - 1);
        id = id * per_axis + c;
    }
    id
}

/// Calls `f` with the flat id of every cell at Chebyshev distance exactly `ring` from `center`.
fn visit_ring(
    center: &[isize],
    ring: isize,
    g: isize,
    coords: &mut [isize],
    axis: usize,
    on_shell: bool,
    f: &mut dyn FnMut(usize),
) {
    if axis == center.len() {
        if on_shell || ring == 0 {
            let mut id = 0usize;
            for &c in coords.iter().rev() {
                id = id * g as usize + c as usize;
            }
            f(id);
        }
        return;
    }
    for off in -ring..=ring {
        let c = center[axis] + off;
        if c < 0 || c >= g {
            continue;
        }
        coords[axis] = c;
        visit_ring(center, ring, g, coords, axis + 1, on_shell || off.abs() == ring, f);
    }
}

/// `d_j` = number of `l != j` whose leave-one-out nearest neighbor is `T_j`.
pub fn degrees(design: &PooledDesign) -> Vec<u32> {
    let index = NeighborIndex::new(design);
    let n = design.len();
    let nearest: Vec<usize> = (0..n)
        .into_par_iter()
        .map(|l| index.nearest_two(design.point(l), Some(l)).0)
        .collect();
    let mut d = vec![0u32; n];
    for j in nearest {
        d[j] += 1;
    }
    d
}

/// Exact cumulative volumes for `D = 1` through the order-statistics closed
/// forms; designs with fewer than five points use [`cumulative_volumes_direct_1d`].
pub fn cumulative_volumes_exact_1d(design: &PooledDesign, density: &DesignDensity) -> Result<Vec<f64>> {
    if design.dim() != 1 || density.dim != 1 {
        return Err(FdaError::DimensionMismatch {
            expected: 1,
            got: design.dim(),
        });
    }
    let n = design.len();
    if n < 5 {
        return cumulative_volumes_direct_1d(design, density);
    }
    let cdf = |u: f64| density.marginal_cdf(u);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| design.points[a].partial_cmp(&design.points[b]).unwrap_or(Ordering::Equal));
    let s: Vec<f64> = order.iter().map(|&j| design.points[j]).collect();
    let mid = |a: usize, b: usize| cdf(0.5 * (s[a] + s[b]));
    let nf = n as f64;
    let mut sorted_c = vec![0.0; n];
    // zero-based: s[0] = S_1, ..., s[n-1] = S_n
    sorted_c[0] = (nf - 2.0) * mid(0, 1) + mid(0, 2);
    sorted_c[1] = (nf - 2.0) * (mid(1, 2) - mid(0, 1)) + mid(1, 3);
    for j in 2..n - 2 {
        sorted_c[j] = (nf - 3.0) * (mid(j, j + 1) - mid(j - 1, j))
            + (mid(j, j + 1) - mid(j - 2, j))
            + (mid(j, j + 2) - mid(j - 1, j));
    }
    sorted_c[n - 2] = (nf - 2.0) * (mid(n - 2, n - 1) - mid(n - 3, n - 2)) + (1.0 - mid(n - 4, n - 2));
    sorted_c[n - 1] = (nf - 2.0) * (1.0 - mid(n - 2, n - 1)) + (1.0 - mid(n - 3, n - 1));
    let mut c = vec![0.0; n];
    for (r, &j) in order.iter().enumerate() {
        c[j] = sorted_c[r];
    }
    Ok(c)
}

/// Cumulative volumes for `D = 1` by building every leave-one-out Voronoi
/// partition of `[0,1]` explicitly. `O(n^2)`.
pub fn cumulative_volumes_direct_1d(design: &PooledDesign, density: &DesignDensity) -> Result<Vec<f64>> {
    if design.dim() != 1 {
        return Err(FdaError::DimensionMismatch {
            expected: 1,
            got: design.dim(),
        });
    }
    let n = design.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| design.points[a].partial_cmp(&design.points[b]).unwrap_or(Ordering::Equal));
    let mut c = vec![0.0; n];
    for l in 0..n {
        let kept: Vec<usize> = order.iter().copied().filter(|&j| j != l).collect();
        for (r, &j) in kept.iter().enumerate() {
            let lo = if r == 0 {
                0.0
            } else {
                0.5 * (design.points[kept[r - 1]] + design.points[j])
            };
            let hi = if r + 1 == kept.len() {
                1.0
            } else {
                0.5 * (design.points[j] + design.points[kept[r + 1]])
            };
            c[j] += density.marginal_cdf(hi) - density.marginal_cdf(lo);
        }
    }
    Ok(c)
}

/// Monte Carlo cumulative volumes: for `u ~ f_T` with nearest and second
/// nearest design points `j1(u), j2(u)`,
/// `c_j = (1/Q) sum_u [(n-1) 1{j1(u) = j} + 1{j2(u) = j}]`.
pub fn cumulative_volumes_mc(design: &PooledDesign, density: &DesignDensity, q: usize, seed: u64) -> Result<Vec<f64>> {
    if density.dim != design.dim() {
        return Err(FdaError::DimensionMismatch {
            expected: design.dim(),
            got: density.dim,
        });
    }
    if q == 0 {
        return Err(FdaError::invalid("mc_samples", "must be at least 1"));
    }
    let n = design.len();
    let dim = design.dim();
    let index = NeighborIndex::new(design);
    let chunks = q.div_ceil(MC_CHUNK);
    let counts = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = rng::stream(seed, stage::VOLUMES, chunk as u64);
            let draws = MC_CHUNK.min(q - chunk * MC_CHUNK);
            let mut counts = vec![0u64; n];
            let mut u = vec![0.0; dim];
            for _ in 0..draws {
                density.sample(&mut rng, &mut u);
                let (j1, j2) = index.nearest_two(&u, None);
                counts[j1] += (n - 1) as u64;
                counts[j2.expect("at least two points")] += 1;
            }
            counts
        })
        .reduce(
            || vec![0u64; n],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        );
    Ok(counts.into_iter().map(|c| c as f64 / q as f64).collect())
}

/// Degrees, volumes and weights `w_j = (1 + c_j - d_j) / n`.
pub fn weights(design: &PooledDesign, density: &DesignDensity, config: &WeightConfig) -> Result<DesignWeights> {
    if density.dim != design.dim() {
        return Err(FdaError::DimensionMismatch {
            expected: design.dim(),
            got: density.dim,
        });
    }
    let d = degrees(design);
    let exact_available = design.dim() == 1;
    let use_exact = match config.method {
        VolumeMethod::Auto => exact_available,
        VolumeMethod::Exact => {
            if !exact_available {
                return Err(FdaError::invalid(
                    "weights.method",
                    "exact volumes are only available for D = 1",
                ));
            }
            true
        }
        VolumeMethod::MonteCarlo => false,
    };
    if use_exact {
        let c = cumulative_volumes_exact_1d(design, density)?;
        Ok(DesignWeights::assemble(d, c, "exact_1d", None, config.seed))
    } else {
        let q = config
            .mc_samples
            .unwrap_or_else(|| WeightConfig::default_mc_samples(design.len()));
        let c = cumulative_volumes_mc(design, density, q, config.seed)?;
        Ok(DesignWeights::assemble(d, c, "monte_carlo", Some(q), config.seed))
    }
}

/// `sum_l w_l values_l`.
pub fn integrate(values: &[f64], weights: &DesignWeights) -> Result<f64> {
    if values.len() != weights.len() {
        return Err(FdaError::LengthMismatch {
            expected: weights.len(),
            got: values.len(),
        });
    }
    Ok(values.iter().zip(&weights.weights).map(|(v, w)| v * w).sum())
}
