//! Hölder exponent of the mean function from squared increments of cell averages.
//!
//! The unit cube is cut into `K^D` cells. For each cell `k` (except the top
//! corner) `b_k` averages `(m_k - m_{k+})^2` over the neighbours `k+`, where
//! `m_k` is the mean response in cell `k` (0 for an empty cell). With
//! `g = mean_k b_k` and the grid `H_j = j/J`,
//! `H_j_hat = -log(g + K^{-2 H_j}) / (2 log K)` tracks `H_j` while `H_j` is
//! below the exponent and falls away above it.

use serde::{Deserialize, Serialize};

use crate::error::{FdaError, Result};
use crate::estimate::{default_rho, optimal_level};
use crate::simulate::FunctionalDataset;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NeighborMode {
    /// `k+ = k + e_d`.
    #[default]
    Adjacent,
    /// Every in-range `k+` with `|k+|_1 = |k|_1 + 1`.
    Shell,
}

/// `K` cells per axis over `[0,1)^D`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub dim: usize,
    pub cells: usize,
    pub mode: NeighborMode,
}

impl PartitionSpec {
    pub fn new(dim: usize, cells: usize, mode: NeighborMode) -> Result<Self> {
        if cells < 2 {
            return Err(FdaError::invalid("K", "need at least two cells per axis"));
        }
        if dim == 0 {
            return Err(FdaError::invalid("D", "dimension must be at least 1"));
        }
        Ok(PartitionSpec { dim, cells, mode })
    }

    pub fn n_cells(&self) -> usize {
        self.cells.pow(self.dim as u32)
    }

    /// Cell of a point; the right end 1 is folded into the last cell.
    pub fn cell_of(&self, t: &[f64]) -> usize {
        let k = self.cells;
        let mut id = 0;
        for &x in t.iter().rev() {
            let c = ((x * k as f64).floor() as usize).min(k - 1);
            id = id * k + c;
        }
        id
    }

    pub fn coords(&self, mut id: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.dim);
        for _ in 0..self.dim {
            out.push(id % self.cells);
            id /= self.cells;
        }
        out
    }

    fn flat(&self, coords: &[usize]) -> usize {
        coords.iter().rev().fold(0, |acc, &c| acc * self.cells + c)
    }

    pub fn center(&self, id: usize) -> Vec<f64> {
        self.coords(id)
            .into_iter()
            .map(|c| (c as f64 + 0.5) / self.cells as f64)
            .collect()
    }

    /// `X(K)`: every cell except the top corner.
    pub fn index_set(&self) -> Vec<usize> {
        let top = self.n_cells() - 1;
        (0..self.n_cells()).filter(|&c| c != top).collect()
    }

    fn l1(&self, id: usize) -> usize {
        self.coords(id).iter().sum()
    }

    /// Neighbours `k+` of cell `id` under the partition's mode.
    pub fn neighbors(&self, id: usize) -> Vec<usize> {
        match self.mode {
            NeighborMode::Adjacent => {
                let c = self.coords(id);
                (0..self.dim)
                    .filter(|&d| c[d] + 1 < self.cells)
                    .map(|d| {
                        let mut n = c.clone();
                        n[d] += 1;
                        self.flat(&n)
                    })
                    .collect()
            }
            NeighborMode::Shell => {
                let target = self.l1(id) + 1;
                (0..self.n_cells()).filter(|&j| self.l1(j) == target).collect()
            }
        }
    }
}

/// Cell membership: observations in each cell (pooled order) and their counts.
#[derive(Clone, Debug)]
pub struct CellWeights {
    pub members: Vec<Vec<usize>>,
}

impl CellWeights {
    /// `F_k` at every pooled observation: `1/count` inside the cell, 0 elsewhere.
    pub fn weight(&self, cell: usize, obs: usize) -> f64 {
        let m = &self.members[cell];
        if m.contains(&obs) {
            1.0 / m.len() as f64
        } else {
            0.0
        }
    }

    pub fn count(&self, cell: usize) -> usize {
        self.members[cell].len()
    }
}

pub fn cell_weights(data: &FunctionalDataset, partition: &PartitionSpec) -> CellWeights {
    let mut members = vec![Vec::new(); partition.n_cells()];
    let mut j = 0;
    for c in data.curves() {
        for t in c.t.chunks_exact(data.dim()) {
            members[partition.cell_of(t)].push(j);
            j += 1;
        }
    }
    CellWeights { members }
}

/// `sum Y F_k`, the mean response per cell with the rule `0/0 = 0`.
pub fn cell_means(data: &FunctionalDataset, partition: &PartitionSpec) -> Vec<f64> {
    let mut sum = vec![0.0; partition.n_cells()];
    let mut count = vec![0usize; partition.n_cells()];
    for c in data.curves() {
        for (t, y) in c.t.chunks_exact(data.dim()).zip(&c.y) {
            let k = partition.cell_of(t);
            sum[k] += y;
            count[k] += 1;
        }
    }
    sum.iter()
        .zip(&count)
        .map(|(s, &n)| if n == 0 { 0.0 } else { s / n as f64 })
        .collect()
}

fn b_from_means(partition: &PartitionSpec, means: &[f64], k: usize) -> Option<f64> {
    let nb = partition.neighbors(k);
    if nb.is_empty() {
        return None;
    }
    let s: f64 = nb.iter().map(|&j| (means[k] - means[j]).powi(2)).sum();
    Some(s / nb.len() as f64)
}

/// `b_k`: mean over `k+` of `(m_k - m_{k+})^2`.
pub fn b_hat(data: &FunctionalDataset, partition: &PartitionSpec, k: usize) -> Result<f64> {
    if k >= partition.n_cells() {
        return Err(FdaError::invalid("k", "cell index out of range"));
    }
    let means = cell_means(data, partition);
    b_from_means(partition, &means, k).ok_or_else(|| FdaError::Estimation(format!("cell {k} has no neighbours")))
}

/// All `b_k` over `X(K)`, in cell order. Cells without neighbours are skipped.
pub fn b_hat_all(data: &FunctionalDataset, partition: &PartitionSpec) -> Vec<(usize, f64)> {
    let means = cell_means(data, partition);
    b_all_from_means(partition, &means)
}

fn b_all_from_means(partition: &PartitionSpec, means: &[f64]) -> Vec<(usize, f64)> {
    if partition.mode == NeighborMode::Shell {
        // sum over a whole l1 level: n m^2 - 2 m S1 + S2
        let levels = partition.dim * (partition.cells - 1) + 1;
        let mut n = vec![0.0; levels];
        let mut s1 = vec![0.0; levels];
        let mut s2 = vec![0.0; levels];
        for (j, &m) in means.iter().enumerate() {
            let l = partition.l1(j);
            n[l] += 1.0;
            s1[l] += m;
            s2[l] += m * m;
        }
        return partition
            .index_set()
            .into_iter()
            .map(|k| {
                let l = partition.l1(k) + 1;
                let m = means[k];
                (k, (n[l] * m * m - 2.0 * m * s1[l] + s2[l]) / n[l])
            })
            .collect();
    }
    partition
        .index_set()
        .into_iter()
        .filter_map(|k| b_from_means(partition, means, k).map(|b| (k, b)))
        .collect()
}

/// Mean of `b_k` over `X(K)`.
pub fn g_hat(data: &FunctionalDataset, partition: &PartitionSpec) -> Result<f64> {
    let b = b_hat_all(data, partition);
    if b.is_empty() {
        return Err(FdaError::Estimation("no cells in X(K)".into()));
    }
    Ok(b.iter().map(|(_, v)| v).sum::<f64>() / b.len() as f64)
}

/// `-log(g + K^{-2 H}) / (2 log K)`.
pub fn h_hat(g: f64, cells: usize, h: f64) -> f64 {
    let k = cells as f64;
    -(g + k.powf(-2.0 * h)).ln() / (2.0 * k.ln())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularityConfig {
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_tau_prime")]
    pub tau_prime: f64,
    #[serde(default = "default_r_prime")]
    pub r_prime: f64,
    #[serde(default)]
    pub neighbor_mode: NeighborMode,
    #[serde(default = "default_cap")]
    pub cap: f64,
    /// Fixes `K` instead of `floor(exp(log(N)^tau))`.
    #[serde(default)]
    pub cells: Option<usize>,
}

fn default_tau() -> f64 {
    0.6
}

fn default_tau_prime() -> f64 {
    0.5
}

fn default_r_prime() -> f64 {
    1.0
}

fn default_cap() -> f64 {
    100.0
}

impl Default for RegularityConfig {
    fn default() -> Self {
        RegularityConfig {
            tau: default_tau(),
            tau_prime: default_tau_prime(),
            r_prime: default_r_prime(),
            neighbor_mode: NeighborMode::Adjacent,
            cap: default_cap(),
            cells: None,
        }
    }
}

impl RegularityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(FdaError::invalid("regularity.tau", "must be in (0, 1)"));
        }
        if !(self.tau_prime > 0.0 && self.tau_prime < 1.0) {
            return Err(FdaError::invalid("regularity.tau_prime", "must be in (0, 1)"));
        }
        if !(self.r_prime > 0.0) {
            return Err(FdaError::invalid("regularity.r_prime", "must be positive"));
        }
        if !(self.cap > 0.0) {
            return Err(FdaError::invalid("regularity.cap", "must be positive"));
        }
        if matches!(self.cells, Some(k) if k < 2) {
            return Err(FdaError::invalid("regularity.cells", "must be at least 2"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HGridPoint {
    pub j: usize,
    #[serde(rename = "Hj")]
    pub h: f64,
    #[serde(rename = "Hhat")]
    pub h_hat: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularityEstimate {
    #[serde(rename = "K")]
    pub cells: usize,
    /// `floor(exp(log(N)^tau))` before clamping.
    #[serde(rename = "K_theory")]
    pub cells_theory: usize,
    #[serde(rename = "J")]
    pub grid_size: usize,
    pub tau: f64,
    pub tau_prime: f64,
    pub r_prime: f64,
    pub threshold: f64,
    pub g_hat: f64,
    #[serde(rename = "H_grid")]
    pub h_grid: Vec<HGridPoint>,
    pub j0_hat: usize,
    pub alpha_hat: f64,
    #[serde(rename = "C_hat")]
    pub c_hat: Option<f64>,
    #[serde(rename = "L_hat")]
    pub l_hat: Option<usize>,
    /// `(M_bar^{-2} sum M_i^2)^{-1}`.
    pub n_eff: f64,
    /// `M_bar^{-1} sum M_i^2`.
    pub m_eff: f64,
    pub mode: NeighborMode,
    pub flags: Vec<String>,
}

impl RegularityEstimate {
    pub fn partition(&self, dim: usize) -> PartitionSpec {
        PartitionSpec {
            dim,
            cells: self.cells,
            mode: self.mode,
        }
    }
}

/// `floor(exp(log(N)^tau))` and `max(4, floor(log(N)^{r'}))`.
pub fn tuning_sizes(n_curves: usize, tau: f64, r_prime: f64) -> (usize, usize) {
    let ln = (n_curves as f64).ln();
    let k = ln.powf(tau).exp().floor() as usize;
    let j = (ln.powf(r_prime).floor() as usize).max(4);
    (k, j)
}

/// `j0 = max{j : |H_j_hat - H_j| <= log(N)^{-tau'}}` and `alpha = (j0 + 1/2)/J`.
pub fn estimate_alpha(data: &FunctionalDataset, config: &RegularityConfig) -> Result<RegularityEstimate> {
    config.validate()?;
    let n = data.n_curves();
    if n < 3 {
        return Err(FdaError::TooFewPoints { needed: 3, got: n });
    }
    let dim = data.dim();
    let m_bar = data.m_bar() as f64;
    let (k_theory, jj) = tuning_sizes(n, config.tau, config.r_prime);
    let k_max = ((m_bar / 8.0).powf(1.0 / dim as f64).floor() as usize).max(2);
    let cells = config.cells.unwrap_or_else(|| k_theory.clamp(2, k_max));
    let mut flags = Vec::new();
    if config.cells.is_none() && cells != k_theory {
        flags.push(format!("K clamped from {k_theory} to {cells}"));
    }
    let partition = PartitionSpec::new(dim, cells, config.neighbor_mode)?;
    let means = cell_means(data, &partition);
    let counts = cell_weights(data, &partition);
    if counts.members.iter().all(|m| m.is_empty()) {
        return Err(FdaError::Estimation("all cells are empty".into()));
    }
    let empty = counts.members.iter().filter(|m| m.is_empty()).count();
    if empty > 0 {
        flags.push(format!("{empty} empty cells"));
    }
    let b = b_all_from_means(&partition, &means);
    if b.is_empty() {
        return Err(FdaError::Estimation("no cells in X(K)".into()));
    }
    let g = b.iter().map(|(_, v)| v).sum::<f64>() / b.len() as f64;
    let threshold = (n as f64).ln().powf(-config.tau_prime);
    let h_grid: Vec<HGridPoint> = (1..=jj)
        .map(|j| {
            let h = j as f64 / jj as f64;
            HGridPoint {
                j,
                h,
                h_hat: h_hat(g, cells, h),
            }
        })
        .collect();
    let accepted: Vec<bool> = h_grid.iter().map(|p| (p.h_hat - p.h).abs() <= threshold).collect();
    let j0 = accepted.iter().rposition(|&a| a).map(|i| i + 1).unwrap_or(0);
    if j0 == 0 {
        flags.push("empty acceptance set: j0 set to 0".to_string());
    }
    if accepted.iter().skip_while(|&&a| a).any(|&a| a) {
        flags.push("acceptance set is not a down-set".to_string());
    }
    let sizes = data.sizes();
    let sum_sq: f64 = sizes.iter().map(|&m| (m * m) as f64).sum();
    let (min_m, max_m) = (
        *sizes.iter().min().expect("nonempty"),
        *sizes.iter().max().expect("nonempty"),
    );
    if max_m as f64 > 20.0 * min_m as f64 {
        flags.push("unbalanced curve sizes: max M_i / min M_i > 20".to_string());
    }
    if min_m < 2 {
        flags.push("some curves have fewer than two observations".to_string());
    }
    Ok(RegularityEstimate {
        cells,
        cells_theory: k_theory,
        grid_size: jj,
        tau: config.tau,
        tau_prime: config.tau_prime,
        r_prime: config.r_prime,
        threshold,
        g_hat: g,
        h_grid,
        j0_hat: j0,
        alpha_hat: (j0 as f64 + 0.5) / jj as f64,
        c_hat: None,
        l_hat: None,
        n_eff: m_bar * m_bar / sum_sq,
        m_eff: sum_sq / m_bar,
        mode: config.neighbor_mode,
        flags,
    })
}

/// `L*` evaluated at the estimated exponent.
pub fn plug_in_level(estimate: &RegularityEstimate, k1: f64, c_vp: f64, m_bar: f64, dim: usize, rho: Option<f64>) -> usize {
    optimal_level(
        estimate.alpha_hat,
        c_vp,
        k1,
        dim,
        m_bar,
        rho.unwrap_or_else(|| default_rho(dim)),
    )
}

/// Points per cell used for the pairwise distance sums of the Hölder constant.
const PAIR_CAP: usize = 4000;

/// `C = min(max_k sqrt(b_k / v_k), cap)`, with `v_k` the neighbour-averaged
/// mean of `|T - T'|^{alpha - 3/(2J)}` over cross-cell pairs.
pub fn holder_constant(data: &FunctionalDataset, estimate: &RegularityEstimate, cap: f64) -> Result<f64> {
    if !(cap > 0.0) {
        return Err(FdaError::invalid("cap", "must be positive"));
    }
    let dim = data.dim();
    let partition = estimate.partition(dim);
    let cells = cell_weights(data, &partition);
    let means = cell_means(data, &partition);
    let points: Vec<&[f64]> = data.curves().iter().flat_map(|c| c.t.chunks_exact(dim)).collect();
    let e = estimate.alpha_hat - 3.0 / (2.0 * estimate.grid_size as f64);
    let mut best: Option<f64> = None;
    for (k, b) in b_all_from_means(&partition, &means) {
        let a = &cells.members[k];
        let a = &a[..a.len().min(PAIR_CAP)];
        let nb = partition.neighbors(k);
        let mut v = 0.0;
        for &j in &nb {
            let c = &cells.members[j];
            let c = &c[..c.len().min(PAIR_CAP)];
            if a.is_empty() || c.is_empty() {
                continue;
            }
            let mut s = 0.0;
            for &p in a {
                for &q in c {
                    let d: f64 = points[p].iter().zip(points[q]).map(|(x, y)| (x - y) * (x - y)).sum();
                    s += d.sqrt().powf(e);
                }
            }
            v += s / (a.len() * c.len()) as f64;
        }
        v /= nb.len() as f64;
        if v > 0.0 {
            let r = (b / v).sqrt();
            best = Some(best.map_or(r, |x: f64| x.max(r)));
        }
    }
    best.map(|r| r.min(cap))
        .ok_or_else(|| FdaError::Estimation("every v_k is zero; Hölder constant undefined".into()))
}

/// Exponent, constant and plug-in level in one pass.
pub fn regularity_report(
    data: &FunctionalDataset,
    config: &RegularityConfig,
    k1: Option<f64>,
    c_vp: f64,
) -> Result<RegularityEstimate> {
    let mut est = estimate_alpha(data, config)?;
    match holder_constant(data, &est, config.cap) {
        Ok(c) => est.c_hat = Some(c),
        Err(e) => est.flags.push(e.to_string()),
    }
    if let Some(k1) = k1 {
        est.l_hat = Some(plug_in_level(&est, k1, c_vp, data.m_bar() as f64, data.dim(), None));
    }
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::DesignDensity;
    use crate::simulate::{simulate, CovarianceSpec, Curve, MLaw, MeanSpec, NoiseSpec, SimulationSpec};

    fn weierstrass(alpha: f64, amplitude: f64, n: usize, m: usize, seed: u64) -> FunctionalDataset {
        let spec = SimulationSpec {
            dim: 1,
            n_curves: n,
            m_law: MLaw::Fixed { m },
            mean: MeanSpec::Weierstrass {
                alpha,
                j_max: 20,
                amplitude,
            },
            covariance: CovarianceSpec::Zero,
            noise: NoiseSpec::none(),
            density: DesignDensity::uniform(1),
            truth: false,
        };
        simulate(&spec, seed).unwrap()
    }

    #[test]
    fn index_set_cardinality() {
        for dim in 1..=3 {
            for k in 2..=6 {
                let p = PartitionSpec::new(dim, k, NeighborMode::Adjacent).unwrap();
                let set = p.index_set();
                assert_eq!(set.len(), k.pow(dim as u32) - 1);
                // brute force: |j|_1 <= D(K-1) - 1 and |j|_inf <= K-1
                let brute = (0..p.n_cells())
                    .filter(|&c| p.coords(c).iter().sum::<usize>() < dim * (k - 1))
                    .count();
                assert_eq!(brute, set.len());
                for c in set {
                    assert!(!p.neighbors(c).is_empty());
                    let shell = PartitionSpec { mode: NeighborMode::Shell, ..p };
                    assert!(!shell.neighbors(c).is_empty());
                }
            }
        }
    }

    #[test]
    fn centers_in_cells() {
        let p = PartitionSpec::new(2, 5, NeighborMode::Adjacent).unwrap();
        for c in 0..p.n_cells() {
            assert_eq!(p.cell_of(&p.center(c)), c);
        }
        assert_eq!(p.cell_of(&[1.0, 1.0]), p.n_cells() - 1);
    }

    #[test]
    fn b_hat_example() {
        let ds = FunctionalDataset::new(
            1,
            vec![
                Curve {
                    t: vec![0.1, 0.2],
                    y: vec![1.0, 1.0],
                },
                Curve {
                    t: vec![0.7, 0.8],
                    y: vec![3.0, 3.0],
                },
            ],
        )
        .unwrap();
        let p = PartitionSpec::new(1, 2, NeighborMode::Adjacent).unwrap();
        assert_eq!(b_hat(&ds, &p, 0).unwrap(), 4.0);
        let w = cell_weights(&ds, &p);
        assert_eq!(w.weight(0, 0), 0.5);
        assert_eq!(w.weight(1, 0), 0.0);
        for cell in 0..2 {
            let total: f64 = (0..4).map(|o| w.weight(cell, o)).sum();
            assert!(total == 0.0 || total == 1.0);
        }
    }

    #[test]
    fn empty_cell_contributes_zero() {
        let ds = FunctionalDataset::new(
            1,
            vec![Curve {
                t: vec![0.05, 0.1, 0.15, 0.9],
                y: vec![2.0, 2.0, 2.0, 5.0],
            }],
        )
        .unwrap();
        let p = PartitionSpec::new(1, 3, NeighborMode::Adjacent).unwrap();
        assert_eq!(cell_means(&ds, &p), vec![2.0, 0.0, 5.0]);
        assert_eq!(g_hat(&ds, &p).unwrap(), (4.0 + 25.0) / 2.0);
    }

    #[test]
    fn modes_agree_in_one_dimension() {
        let ds = weierstrass(0.5, 1.0, 50, 40, 2);
        let a = PartitionSpec::new(1, 7, NeighborMode::Adjacent).unwrap();
        let s = PartitionSpec::new(1, 7, NeighborMode::Shell).unwrap();
        let (ga, gs) = (g_hat(&ds, &a).unwrap(), g_hat(&ds, &s).unwrap());
        assert!((ga - gs).abs() <= 1e-12 * ga, "{ga} {gs}");
    }

    #[test]
    fn shell_level_sums_match_direct() {
        let ds = simulate(
            &SimulationSpec {
                dim: 2,
                n_curves: 50,
                m_law: MLaw::Fixed { m: 20 },
                mean: MeanSpec::Weierstrass {
                    alpha: 0.5,
                    j_max: 8,
                    amplitude: 1.0,
                },
                covariance: CovarianceSpec::Zero,
                noise: NoiseSpec::none(),
                density: DesignDensity::uniform(2),
                truth: false,
            },
            3,
        )
        .unwrap();
        let p = PartitionSpec::new(2, 4, NeighborMode::Shell).unwrap();
        let means = cell_means(&ds, &p);
        for (k, b) in b_all_from_means(&p, &means) {
            let direct = b_from_means(&p, &means, k).unwrap();
            assert!((b - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn h_hat_examples() {
        assert!((h_hat(0.0, 10, 0.4) - 0.4).abs() < 1e-15);
        let g = 10f64.powf(-0.8);
        assert!((h_hat(g, 10, 0.4) - (0.4 - 2f64.ln() / (2.0 * 10f64.ln()))).abs() < 1e-14);
        for j in 1..10 {
            let h = j as f64 / 10.0;
            assert!(h_hat(0.3, 8, h) <= h);
            assert!(h_hat(0.3, 8, h) < h_hat(0.3, 8, h + 0.1));
        }
    }

    #[test]
    fn constant_mean_gives_top_of_grid() {
        let spec = SimulationSpec {
            dim: 1,
            n_curves: 100,
            m_law: MLaw::Fixed { m: 20 },
            mean: MeanSpec::Constant { value: 3.0 },
            covariance: CovarianceSpec::Zero,
            noise: NoiseSpec::none(),
            density: DesignDensity::uniform(1),
            truth: false,
        };
        let ds = simulate(&spec, 1).unwrap();
        let est = estimate_alpha(&ds, &RegularityConfig::default()).unwrap();
        assert_eq!(est.g_hat, 0.0);
        assert_eq!(est.j0_hat, est.grid_size);
        assert!((est.alpha_hat - (1.0 + 0.5 / est.grid_size as f64)).abs() < 1e-15);
        for p in &est.h_grid {
            assert_eq!(p.h_hat, p.h);
        }
        assert_eq!(holder_constant(&ds, &est, 100.0).unwrap(), 0.0);
    }

    #[test]
    fn tuning_sizes_default_profile() {
        let (k, j) = tuning_sizes(500, 0.6, 1.0);
        assert_eq!(k, 19);
        assert_eq!(j, 6);
        assert_eq!(tuning_sizes(10, 0.6, 1.0).1, 4);
    }

    #[test]
    fn weierstrass_scaling_of_g() {
        let ds = weierstrass(0.5, 1.0, 500, 100, 9);
        // g ~ c K^{-2 alpha}: slope of log g against log K near -1
        let g: Vec<f64> = [16usize, 32, 64]
            .iter()
            .map(|&k| g_hat(&ds, &PartitionSpec::new(1, k, NeighborMode::Adjacent).unwrap()).unwrap())
            .collect();
        for w in g.windows(2) {
            let slope = (w[1] / w[0]).ln() / 2f64.ln();
            assert!((slope + 1.0).abs() <= 0.3, "{slope} {g:?}");
        }
    }

    #[test]
    fn exponent_recovered_and_ordered() {
        let a5 = estimate_alpha(&weierstrass(0.5, 1.0, 500, 100, 4), &RegularityConfig::default()).unwrap();
        assert!((a5.alpha_hat - 0.5).abs() <= 0.15, "{a5:?}");
        let a3 = estimate_alpha(&weierstrass(0.3, 1.0, 500, 100, 4), &RegularityConfig::default()).unwrap();
        let a7 = estimate_alpha(&weierstrass(0.7, 1.0, 500, 100, 4), &RegularityConfig::default()).unwrap();
        assert!(a7.alpha_hat > a3.alpha_hat);
        assert!(!a5.flags.iter().any(|f| f.contains("down-set")));
    }

    #[test]
    fn grid_bracket_property() {
        // 0 <= alpha - j0/J < 1/J for j0 = floor(J alpha)
        for jj in 4..12 {
            for a in [0.13, 0.3, 0.5, 0.77, 0.99] {
                let j0 = (jj as f64 * a).floor();
                let gap = a - j0 / jj as f64;
                assert!((0.0..1.0 / jj as f64).contains(&gap));
            }
        }
    }

    #[test]
    fn plug_in_level_matches_formula() {
        let mut est = estimate_alpha(&weierstrass(0.5, 1.0, 100, 50, 1), &RegularityConfig::default()).unwrap();
        est.alpha_hat = 0.5;
        assert_eq!(
            plug_in_level(&est, 1.0, 1.0, 1e4, 1, None),
            optimal_level(0.5, 1.0, 1.0, 1, 1e4, 2.5)
        );
        let mut prev = usize::MAX;
        for a in [0.2, 0.4, 0.6, 0.8, 1.0] {
            est.alpha_hat = a;
            let l = plug_in_level(&est, 1.0, 1.0, 1e4, 1, None);
            assert!(l <= prev);
            prev = l;
        }
    }

    #[test]
    fn holder_constant_scales_with_amplitude() {
        let mut ratios = Vec::new();
        for rep in 0..10 {
            let one = weierstrass(0.5, 1.0, 200, 50, 100 + rep);
            let two = weierstrass(0.5, 2.0, 200, 50, 100 + rep);
            let est = estimate_alpha(&one, &RegularityConfig::default()).unwrap();
            let c1 = holder_constant(&one, &est, 100.0).unwrap();
            let c2 = holder_constant(&two, &est, 100.0).unwrap();
            ratios.push(c2 / c1);
        }
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        assert!((1.5..=2.5).contains(&mean), "{mean}");
        let est = estimate_alpha(&weierstrass(0.5, 1.0, 200, 50, 1), &RegularityConfig::default()).unwrap();
        assert_eq!(holder_constant(&weierstrass(0.5, 1e6, 200, 50, 1), &est, 3.0).unwrap(), 3.0);
    }
}
