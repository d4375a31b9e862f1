//! Gaussian approximation of the coefficient errors, pointwise intervals,
//! uniform bands from simulated Gaussian suprema, and subsampling bands.
//!
//! The covariance of the coefficient vector over `IndexSet(D, 4L - 2)` is
//!
//! ```text
//! Sigma_pq = rho/M_bar * int g phi_p phi_q / f_T
//!          + sum M_i(M_i-1) / (M_bar(M_bar-1)) * int int gamma(t,s) phi_p(t) phi_q(s)
//! ```
//!
//! with `g = sigma^2 + gamma(t,t)`. Bands use the unnormalized sup statistic,
//! so the rate `min(r1, r2)` cancels between statistic and critical value.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index::sample as sample_indices;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::design::{self, DesignDensity, PooledDesign, WeightConfig};
use crate::error::{FdaError, Result};
use crate::estimate::{self, default_rho, fourier_coefficients_with, optimal_level, Regime};
use crate::fourier::{basis_values_with, phi_vector_on, vp_eval_many, vp_weights, FourierModel, IndexSet};
use crate::rng::{self, stage};
use crate::simulate::{midpoint_grid, FunctionalDataset};

/// `r1 = sqrt(M_bar / L^D)` and `r2 = M_bar / sqrt(sum M_i(M_i-1))` (infinite when no pairs).
pub fn rates(sizes: &[usize], dim: usize, level: usize) -> (f64, f64) {
    let m_bar: f64 = sizes.iter().map(|&m| m as f64).sum();
    let pairs: f64 = sizes.iter().map(|&m| (m * m.saturating_sub(1)) as f64).sum();
    let r1 = (m_bar / (level as f64).powi(dim as i32)).sqrt();
    let r2 = if pairs > 0.0 { m_bar / pairs.sqrt() } else { f64::INFINITY };
    (r1, r2)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    Oracle,
    PlugIn,
}

/// Covariance of the coefficient vector over `IndexSet(D, 4L - 2)`.
#[derive(Clone, Debug)]
pub struct SigmaMatrix {
    pub level: usize,
    pub dim: usize,
    pub mode: SigmaMode,
    pub rho: f64,
    /// `rho / M_bar` part.
    pub diagonal_term: DMatrix<f64>,
    /// `int int gamma phi_p phi_q`, before scaling by the pair factor.
    pub dense_integral: DMatrix<f64>,
    /// `sum M_i(M_i-1) / (M_bar(M_bar-1))`.
    pub pair_factor: f64,
    pub matrix: DMatrix<f64>,
    /// Most negative eigenvalue removed when projecting onto the PSD cone (0 if none).
    pub projection: f64,
}

impl SigmaMatrix {
    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.nrows() == 0
    }

    /// Zero covariance, for degenerate checks.
    pub fn zeros(dim: usize, level: usize) -> Self {
        let n = IndexSet::enumerate(dim, 4 * level - 2).len();
        SigmaMatrix {
            level,
            dim,
            mode: SigmaMode::Oracle,
            rho: default_rho(dim),
            diagonal_term: DMatrix::zeros(n, n),
            dense_integral: DMatrix::zeros(n, n),
            pair_factor: 0.0,
            matrix: DMatrix::zeros(n, n),
            projection: 0.0,
        }
    }

    /// Arbitrary symmetric matrix wrapped as an oracle covariance.
    pub fn from_matrix(dim: usize, level: usize, matrix: DMatrix<f64>) -> Result<Self> {
        let n = IndexSet::enumerate(dim, 4 * level - 2).len();
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(FdaError::LengthMismatch {
                expected: n,
                got: matrix.nrows(),
            });
        }
        let mut s = SigmaMatrix::zeros(dim, level);
        s.matrix = matrix;
        Ok(s)
    }
}

/// Default quadrature nodes per axis.
pub fn default_quadrature(dim: usize) -> usize {
    match dim {
        1 => 1024,
        2 => 64,
        _ => 16,
    }
}

fn basis_matrix(index: &IndexSet, nodes: &[f64]) -> DMatrix<f64> {
    let dim = index.dim();
    let n = nodes.len() / dim;
    let p = index.len();
    let rows: Vec<Vec<f64>> = nodes
        .par_chunks(dim)
        .map_init(Vec::new, |table, t| {
            let mut buf = vec![0.0; p];
            basis_values_with(index, t, table, &mut buf);
            buf
        })
        .collect();
    DMatrix::from_fn(n, p, |i, j| rows[i][j])
}

/// `B^T diag(c) B`.
fn weighted_gram(b: &DMatrix<f64>, c: &[f64]) -> DMatrix<f64> {
    let mut scaled = b.clone();
    for (i, mut row) in scaled.row_iter_mut().enumerate() {
        row *= c[i];
    }
    b.transpose() * scaled
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Clips negative eigenvalues; returns the most negative one removed.
fn project_psd(m: &mut DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(m.clone());
    let min = eig.eigenvalues.min();
    if min >= 0.0 {
        return 0.0;
    }
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    *m = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    symmetrize(m);
    min
}

fn check_density_on_nodes(density: &DesignDensity, nodes: &[f64]) -> Result<Vec<f64>> {
    nodes
        .chunks(density.dim)
        .map(|t| {
            let f = density.pdf(t);
            if f > 0.0 {
                Ok(f)
            } else {
                Err(FdaError::NonPositiveDensity(t.to_vec()))
            }
        })
        .collect()
}

fn assemble(
    dim: usize,
    level: usize,
    mode: SigmaMode,
    rho: f64,
    sizes: &[usize],
    first: DMatrix<f64>,
    dense: DMatrix<f64>,
) -> SigmaMatrix {
    let m_bar: f64 = sizes.iter().map(|&m| m as f64).sum();
    let pairs: f64 = sizes.iter().map(|&m| (m * m.saturating_sub(1)) as f64).sum();
    let pair_factor = if pairs > 0.0 { pairs / (m_bar * (m_bar - 1.0)) } else { 0.0 };
    let diagonal_term = first * (rho / m_bar);
    let mut matrix = &diagonal_term + &dense * pair_factor;
    symmetrize(&mut matrix);
    let projection = project_psd(&mut matrix);
    SigmaMatrix {
        level,
        dim,
        mode,
        rho,
        diagonal_term,
        dense_integral: dense,
        pair_factor,
        matrix,
        projection,
    }
}

/// Known noise and covariance.
pub struct OracleInputs<'a> {
    pub sigma2: &'a (dyn Fn(&[f64]) -> f64 + Sync),
    pub gamma: &'a (dyn Fn(&[f64], &[f64]) -> f64 + Sync),
    /// Whether `gamma` is identically zero, which skips the double integral.
    pub gamma_is_zero: bool,
}

/// `Sigma` from known `sigma^2`, `gamma` and `f_T`, by tensor midpoint quadrature.
pub fn sigma_matrix_oracle(
    sizes: &[usize],
    density: &DesignDensity,
    level: usize,
    inputs: &OracleInputs<'_>,
    rho: Option<f64>,
    resolution: Option<usize>,
) -> Result<SigmaMatrix> {
    let dim = density.dim;
    let res = resolution.unwrap_or_else(|| default_quadrature(dim));
    let index = IndexSet::enumerate(dim, 4 * level - 2);
    let nodes = midpoint_grid(dim, res);
    let n_nodes = nodes.len() / dim;
    let f = check_density_on_nodes(density, &nodes)?;
    let b = basis_matrix(&index, &nodes);
    let vol = 1.0 / n_nodes as f64;
    let c: Vec<f64> = nodes
        .chunks(dim)
        .zip(&f)
        .map(|(t, fv)| ((inputs.sigma2)(t) + (inputs.gamma)(t, t)) / fv * vol)
        .collect();
    let first = weighted_gram(&b, &c);
    let p = index.len();
    let dense = if inputs.gamma_is_zero {
        DMatrix::zeros(p, p)
    } else {
        // (G B) row by row, G_{ts} = gamma(t, s) vol^2
        let rows: Vec<Vec<f64>> = (0..n_nodes)
            .into_par_iter()
            .map(|i| {
                let t = &nodes[i * dim..(i + 1) * dim];
                let mut acc = vec![0.0; p];
                for s in 0..n_nodes {
                    let g = (inputs.gamma)(t, &nodes[s * dim..(s + 1) * dim]) * vol * vol;
                    if g != 0.0 {
                        for (a, bv) in acc.iter_mut().zip(b.row(s).iter()) {
                            *a += g * bv;
                        }
                    }
                }
                acc
            })
            .collect();
        let gb = DMatrix::from_fn(n_nodes, p, |i, j| rows[i][j]);
        b.transpose() * gb
    };
    Ok(assemble(
        dim,
        level,
        SigmaMode::Oracle,
        rho.unwrap_or_else(|| default_rho(dim)),
        sizes,
        first,
        dense,
    ))
}

/// Indices of the `k` design points nearest to `t` (full scan with partial selection).
fn k_nearest(design: &PooledDesign, t: &[f64], k: usize, scratch: &mut Vec<(f64, usize)>) -> Vec<usize> {
    scratch.clear();
    for j in 0..design.len() {
        let d: f64 = design.point(j).iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum();
        scratch.push((d, j));
    }
    let k = k.min(scratch.len());
    if k < scratch.len() {
        scratch.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    }
    scratch[..k].iter().map(|&(_, j)| j).collect()
}

/// `Sigma` with `sigma^2 + gamma(t,t)` estimated by local averages of squared
/// pilot residuals, and the dense integral estimated from within-curve residual
/// cross-products.
pub fn sigma_matrix_plugin(
    data: &FunctionalDataset,
    density: &DesignDensity,
    level: usize,
    weight_config: &WeightConfig,
    rho: Option<f64>,
    resolution: Option<usize>,
) -> Result<SigmaMatrix> {
    let dim = data.dim();
    let design = data.pooled_design()?;
    let weights = design::weights(&design, density, weight_config)?;
    let (_, resid) = estimate::pilot_residuals(data, &design, density, &weights, None)?;
    let m_bar = design.len();
    let window = ((m_bar as f64).powf(dim as f64 / (dim as f64 + 2.0)).ceil() as usize).clamp(1, m_bar);

    let res = resolution.unwrap_or_else(|| default_quadrature(dim));
    let index = IndexSet::enumerate(dim, 4 * level - 2);
    let p = index.len();
    let nodes = midpoint_grid(dim, res);
    let n_nodes = nodes.len() / dim;
    let f = check_density_on_nodes(density, &nodes)?;
    let b = basis_matrix(&index, &nodes);
    let vol = 1.0 / n_nodes as f64;
    let g_hat: Vec<f64> = nodes
        .par_chunks(dim)
        .map_init(Vec::new, |scratch, t| {
            let nn = k_nearest(&design, t, window, scratch);
            nn.iter().map(|&j| resid[j] * resid[j]).sum::<f64>() / nn.len() as f64
        })
        .collect();
    let c: Vec<f64> = g_hat.iter().zip(&f).map(|(g, fv)| g / fv * vol).collect();
    let first = weighted_gram(&b, &c);

    // sum_i [u_i u_i^T - sum_m v_m v_m^T] / sum_i M_i(M_i-1), v_m = r phi(T) / f(T)
    let pairs = data.pair_count();
    let dense = if pairs > 0.0 {
        let mut acc = DMatrix::<f64>::zeros(p, p);
        let mut offset = 0;
        let mut table = Vec::new();
        let mut buf = vec![0.0; p];
        for curve in data.curves() {
            let m = curve.len();
            if m >= 2 {
                let mut v = DMatrix::<f64>::zeros(m, p);
                for a in 0..m {
                    let t = design.point(offset + a);
                    basis_values_with(&index, t, &mut table, &mut buf);
                    let s = resid[offset + a] / density.pdf(t);
                    for (j, bv) in buf.iter().enumerate() {
                        v[(a, j)] = s * bv;
                    }
                }
                let u: DVector<f64> = v.row_sum().transpose();
                acc += &u * u.transpose() - v.transpose() * &v;
            }
            offset += m;
        }
        acc / pairs
    } else {
        DMatrix::zeros(p, p)
    };
    Ok(assemble(
        dim,
        level,
        SigmaMode::PlugIn,
        rho.unwrap_or_else(|| default_rho(dim)),
        &data.sizes(),
        first,
        dense,
    ))
}

/// `z_{1 - a/2}` for confidence level `1 - a`; zero at level 0.
pub fn two_sided_z(level: f64) -> f64 {
    if level <= 0.0 {
        return 0.0;
    }
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(0.5 + level / 2.0)
}

/// `Phi_L(t)^T Sigma Phi_L(t)`.
pub fn pointwise_variance(sigma: &SigmaMatrix, t: &[f64]) -> Result<f64> {
    let index = IndexSet::enumerate(sigma.dim, 4 * sigma.level - 2);
    let phi = DVector::from_vec(phi_vector_on(&index, sigma.level, t)?);
    let v = (phi.transpose() * &sigma.matrix * &phi)[(0, 0)];
    if v < -1e-10 {
        return Err(FdaError::Numerical(format!("negative pointwise variance {v} at {t:?}")));
    }
    Ok(v.max(0.0))
}

/// `mu_hat(t) -+ z_{1 - a/2} sqrt(v(t))`.
pub fn pointwise_interval(model: &FourierModel, sigma: &SigmaMatrix, t: &[f64], level: f64) -> Result<(f64, f64)> {
    if model.level() != sigma.level || model.dim() != sigma.dim {
        return Err(FdaError::LengthMismatch {
            expected: model.values().len(),
            got: sigma.len(),
        });
    }
    check_level(level)?;
    let center = model.eval(t)?;
    let half = two_sided_z(level) * pointwise_variance(sigma, t)?.sqrt();
    Ok((center - half, center + half))
}

fn check_level(level: f64) -> Result<()> {
    if (0.0..1.0).contains(&level) {
        Ok(())
    } else {
        Err(FdaError::invalid("level", format!("{level} must be in [0, 1)")))
    }
}

/// `inf { z : F_n(z) >= q }` for the empirical CDF of `values`.
pub fn empirical_quantile(values: &mut [f64], q: f64) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if q <= 0.0 {
        return values[0];
    }
    // smallest k with k/n >= q
    let mut k = (q * n as f64).ceil() as usize;
    while k > 1 && (k - 1) as f64 / n as f64 >= q {
        k -= 1;
    }
    while k < n && (k as f64 / n as f64) < q {
        k += 1;
    }
    values[k.clamp(1, n) - 1]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandMethod {
    Gaussian,
    Subsampling,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRefinement {
    pub per_axis: usize,
    pub critical_value: f64,
}

/// Band or pointwise intervals on a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandResult {
    pub dim: usize,
    pub grid_per_axis: usize,
    /// Flat grid, `dim` per point, first axis fastest.
    pub grid: Vec<f64>,
    pub center: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub level: f64,
    pub method: BandMethod,
    pub rate: f64,
    pub critical_value: f64,
    #[serde(rename = "L")]
    pub truncation: usize,
    pub undersmoothed: bool,
    pub clipping: f64,
    pub refinement: Vec<GridRefinement>,
    pub seed: u64,
    pub flags: Vec<String>,
}

impl BandResult {
    pub fn half_width(&self) -> Vec<f64> {
        self.upper.iter().zip(&self.lower).map(|(u, l)| 0.5 * (u - l)).collect()
    }

    /// Whether `lower <= f <= upper` at every grid point.
    pub fn covers(&self, f: &[f64]) -> bool {
        f.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    /// `t_1..t_D,center,lower,upper`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let cols: Vec<String> = (1..=self.dim).map(|d| format!("t_{d}")).collect();
        writeln!(w, "{},center,lower,upper", cols.join(","))?;
        for (i, t) in self.grid.chunks(self.dim).enumerate() {
            let ts: Vec<String> = t.iter().map(|x| x.to_string()).collect();
            writeln!(w, "{},{},{},{}", ts.join(","), self.center[i], self.lower[i], self.upper[i])?;
        }
        Ok(())
    }

    /// Metadata without the per-point arrays.
    pub fn sidecar(&self) -> serde_json::Value {
        serde_json::json!({
            "method": self.method,
            "level": self.level,
            "critical_value": self.critical_value,
            "rate": self.rate,
            "L": self.truncation,
            "grid_per_axis": self.grid_per_axis,
            "undersmoothed": self.undersmoothed,
            "clipping": self.clipping,
            "refinement": self.refinement,
            "seed": self.seed,
            "flags": self.flags,
        })
    }
}

/// Symmetric square root with negative eigenvalues clipped; returns the root
/// and the magnitude of the most negative eigenvalue.
pub fn sqrt_psd(m: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let eig = SymmetricEigen::new(m.clone());
    let min = eig.eigenvalues.min();
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let root = &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose();
    (root, if min < 0.0 { -min } else { 0.0 })
}

const DRAW_CHUNK: usize = 64;

/// Draws of `sup_t |(Sigma^{1/2} Z)^T Phi_L(t)|` over a grid.
fn gaussian_sup_draws(psi: &DMatrix<f64>, n_draws: usize, seed: u64) -> Vec<f64> {
    let p = psi.ncols();
    let chunks: Vec<Vec<f64>> = (0..n_draws.div_ceil(DRAW_CHUNK))
        .into_par_iter()
        .map(|c| {
            let lo = c * DRAW_CHUNK;
            let hi = (lo + DRAW_CHUNK).min(n_draws);
            let mut z = DMatrix::<f64>::zeros(p, DRAW_CHUNK);
            for (col, d) in (lo..hi).enumerate() {
                let mut r = rng::stream(seed, stage::GAUSSIAN_DRAWS, d as u64);
                for i in 0..p {
                    z[(i, col)] = StandardNormal.sample(&mut r);
                }
            }
            let vals = psi * z;
            (0..hi - lo).map(|col| vals.column(col).amax()).collect()
        })
        .collect();
    chunks.concat()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianBandConfig {
    pub level: f64,
    #[serde(default)]
    pub grid: Option<usize>,
    #[serde(default = "default_draws")]
    pub n_draws: usize,
    #[serde(default)]
    pub seed: u64,
    /// Also report the critical value on a grid of half the resolution.
    #[serde(default = "default_true")]
    pub refinement: bool,
}

fn default_draws() -> usize {
    2000
}

fn default_true() -> bool {
    true
}

impl GaussianBandConfig {
    pub fn new(level: f64, seed: u64) -> Self {
        GaussianBandConfig {
            level,
            grid: None,
            n_draws: default_draws(),
            seed,
            refinement: true,
        }
    }
}

fn psi_matrix(sigma_root: &DMatrix<f64>, index: &IndexSet, level: usize, grid: &[f64]) -> DMatrix<f64> {
    let phi = basis_matrix(index, grid);
    let w = vp_weights(index, level);
    let mut phi_w = phi;
    for (j, mut col) in phi_w.column_iter_mut().enumerate() {
        col *= w[j];
    }
    phi_w * sigma_root
}

/// Simultaneous band `mu_hat -+ c`, `c` the `level`-quantile of the simulated sup.
pub fn uniform_band_gaussian(
    model: &FourierModel,
    sigma: &SigmaMatrix,
    config: &GaussianBandConfig,
    sizes: &[usize],
) -> Result<BandResult> {
    check_level(config.level)?;
    if model.level() != sigma.level || model.dim() != sigma.dim {
        return Err(FdaError::LengthMismatch {
            expected: model.values().len(),
            got: sigma.len(),
        });
    }
    if config.n_draws == 0 {
        return Err(FdaError::invalid("n_draws", "must be at least 1"));
    }
    let dim = model.dim();
    let per_axis = config.grid.unwrap_or_else(|| crate::simulate::default_grid(dim));
    let (root, clipping) = sqrt_psd(&sigma.matrix);
    if root.iter().any(|v| !v.is_finite()) {
        return Err(FdaError::Numerical("eigendecomposition of Sigma failed".into()));
    }
    let critical = |n: usize| {
        let grid = midpoint_grid(dim, n);
        let psi = psi_matrix(&root, model.index(), model.level(), &grid);
        let mut sups = gaussian_sup_draws(&psi, config.n_draws, config.seed);
        empirical_quantile(&mut sups, config.level)
    };
    let grid = midpoint_grid(dim, per_axis);
    let c = if config.level == 0.0 { 0.0 } else { critical(per_axis) };
    let mut refinement = vec![GridRefinement {
        per_axis,
        critical_value: c,
    }];
    if config.refinement && per_axis >= 4 && config.level > 0.0 {
        let coarse = per_axis / 2;
        refinement.push(GridRefinement {
            per_axis: coarse,
            critical_value: critical(coarse),
        });
    }
    let center = vp_eval_many(model, &grid)?;
    let (r1, r2) = rates(sizes, dim, model.level());
    Ok(BandResult {
        dim,
        grid_per_axis: per_axis,
        lower: center.iter().map(|m| m - c).collect(),
        upper: center.iter().map(|m| m + c).collect(),
        center,
        grid,
        level: config.level,
        method: BandMethod::Gaussian,
        rate: r1.min(r2),
        critical_value: c,
        truncation: model.level(),
        undersmoothed: false,
        clipping,
        refinement,
        seed: config.seed,
        flags: Vec::new(),
    })
}

/// Pointwise intervals on the band grid (same `Sigma`, same level).
pub fn pointwise_band(model: &FourierModel, sigma: &SigmaMatrix, level: f64, per_axis: usize, sizes: &[usize]) -> Result<BandResult> {
    check_level(level)?;
    let dim = model.dim();
    let grid = midpoint_grid(dim, per_axis);
    let center = vp_eval_many(model, &grid)?;
    let (root, clipping) = sqrt_psd(&sigma.matrix);
    let psi = psi_matrix(&root, model.index(), model.level(), &grid);
    let z = two_sided_z(level);
    let half: Vec<f64> = psi.row_iter().map(|r| z * r.norm()).collect();
    let (r1, r2) = rates(sizes, dim, model.level());
    Ok(BandResult {
        dim,
        grid_per_axis: per_axis,
        lower: center.iter().zip(&half).map(|(m, h)| m - h).collect(),
        upper: center.iter().zip(&half).map(|(m, h)| m + h).collect(),
        center,
        grid,
        level,
        method: BandMethod::Gaussian,
        rate: r1.min(r2),
        critical_value: z,
        truncation: model.level(),
        undersmoothed: false,
        clipping,
        refinement: Vec::new(),
        seed: 0,
        flags: vec!["pointwise".into()],
    })
}

/// `max(log log x, 1)`.
pub fn default_vartheta(x: f64) -> f64 {
    if x > std::f64::consts::E {
        x.ln().ln().max(1.0)
    } else {
        1.0
    }
}

/// `L^ = ceil(vartheta(M_bar) M_bar^{1/(2 alpha + D)})`, the undersmoothed level
/// for bands centred at the mean function itself.
pub fn undersmoothed_level(m_bar: f64, alpha: f64, dim: usize) -> usize {
    ((default_vartheta(m_bar) * m_bar.powf(1.0 / (2.0 * alpha + dim as f64))).ceil() as usize).max(1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SubsampleScheme {
    /// Observation indices uniformly without replacement.
    #[default]
    Flat,
    /// Whole curves in random order until half the observations are reached.
    Curves,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarthetaMode {
    /// 1 in the dense regime, `max(log log |A|, 1)` otherwise.
    Auto,
    One,
    LogLog,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsamplingConfig {
    pub alpha: f64,
    #[serde(default = "one")]
    pub c_vp: f64,
    #[serde(rename = "K1")]
    pub k1: f64,
    #[serde(default)]
    pub rho: Option<f64>,
    pub level: f64,
    pub n_subsamples: usize,
    #[serde(default = "auto_vartheta")]
    pub vartheta: VarthetaMode,
    #[serde(default)]
    pub scheme: SubsampleScheme,
    #[serde(default)]
    pub grid: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

fn auto_vartheta() -> VarthetaMode {
    VarthetaMode::Auto
}

/// Subsampling output: the uniform band plus pointwise intervals on the same grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsamplingResult {
    pub band: BandResult,
    pub pointwise_lower: Vec<f64>,
    pub pointwise_upper: Vec<f64>,
    pub tau_full: f64,
    pub tau: Vec<f64>,
    pub sup_statistics: Vec<f64>,
}

/// `tau_A` from the per-curve counts of a (sub)sample.
pub fn tau(counts: &[usize], alpha: f64, dim: usize, vartheta: f64) -> f64 {
    let total: f64 = counts.iter().map(|&m| m as f64).sum();
    let pairs: f64 = counts.iter().map(|&m| (m * m.saturating_sub(1)) as f64).sum();
    let first = vartheta * total.powf(alpha / (2.0 * alpha + dim as f64));
    let second = if pairs > 0.0 { total / pairs.sqrt() } else { f64::INFINITY };
    first.min(second)
}

fn fit_with_level(data: &FunctionalDataset, density: &DesignDensity, level: usize, seed: u64) -> Result<FourierModel> {
    let design = data.pooled_design()?;
    let w = design::weights(&design, density, &WeightConfig::with_seed(seed))?;
    fourier_coefficients_with(data, &design, density, level, &w)
}

/// Draws the kept `(curve, positions)` of one subsample of size `floor(M_bar/2)`.
fn draw_subsample(data: &FunctionalDataset, scheme: SubsampleScheme, seed: u64, j: usize) -> Vec<(usize, Vec<usize>)> {
    let mut r = rng::stream(seed, stage::SUBSAMPLES, j as u64);
    let sizes = data.sizes();
    let target = data.m_bar() / 2;
    let mut keep: Vec<(usize, Vec<usize>)> = (0..sizes.len()).map(|i| (i, Vec::new())).collect();
    match scheme {
        SubsampleScheme::Flat => {
            let mut offsets = Vec::with_capacity(sizes.len());
            let mut acc = 0;
            for &m in &sizes {
                offsets.push(acc);
                acc += m;
            }
            let mut picked = sample_indices(&mut r, data.m_bar(), target).into_vec();
            picked.sort_unstable();
            for flat in picked {
                let i = offsets.partition_point(|&o| o <= flat) - 1;
                keep[i].1.push(flat - offsets[i]);
            }
        }
        SubsampleScheme::Curves => {
            let mut order: Vec<usize> = (0..sizes.len()).collect();
            order.shuffle(&mut r);
            let mut total = 0;
            for i in order {
                if total >= target {
                    break;
                }
                keep[i].1 = (0..sizes[i]).collect();
                total += sizes[i];
            }
        }
    }
    keep
}

/// Subsampling confidence band and pointwise intervals.
pub fn subsampling_bands(data: &FunctionalDataset, density: &DesignDensity, config: &SubsamplingConfig) -> Result<SubsamplingResult> {
    check_level(config.level)?;
    if data.m_bar() < 8 {
        return Err(FdaError::TooFewPoints {
            needed: 8,
            got: data.m_bar(),
        });
    }
    if config.n_subsamples == 0 {
        return Err(FdaError::invalid("n_subsamples", "must be at least 1"));
    }
    if !(config.alpha > 0.0 && config.k1 > 0.0 && config.c_vp > 0.0) {
        return Err(FdaError::invalid("subsampling", "alpha, K1 and c_vp must be positive"));
    }
    let dim = data.dim();
    let rho = config.rho.unwrap_or_else(|| default_rho(dim));
    let level_for = |n: usize| optimal_level(config.alpha, config.c_vp, config.k1, dim, n as f64, rho);
    let dense = estimate::regime(data, config.alpha)?.label == Regime::Dense;
    let vartheta = |n: usize| match config.vartheta {
        VarthetaMode::One => 1.0,
        VarthetaMode::LogLog => default_vartheta(n as f64),
        VarthetaMode::Auto => {
            if dense {
                1.0
            } else {
                default_vartheta(n as f64)
            }
        }
    };

    let per_axis = config.grid.unwrap_or_else(|| crate::simulate::default_grid(dim));
    let grid = midpoint_grid(dim, per_axis);
    let n_grid = grid.len() / dim;
    let full_level = level_for(data.m_bar());
    let full = fit_with_level(data, density, full_level, rng::derive_seed(config.seed, stage::VOLUMES, u64::MAX))?;
    let center = vp_eval_many(&full, &grid)?;
    let tau_full = tau(&data.sizes(), config.alpha, dim, vartheta(data.m_bar()));

    let mut flags = Vec::new();
    if full_level == 1 {
        flags.push("L* clamped to 1 on the full sample".to_string());
    }
    struct Draw {
        tau: f64,
        delta: Vec<f64>,
        clamped: bool,
    }
    let draws: Vec<Result<Draw>> = (0..config.n_subsamples)
        .into_par_iter()
        .map(|j| {
            let keep = draw_subsample(data, config.scheme, config.seed, j);
            let counts: Vec<usize> = keep.iter().map(|(_, ms)| ms.len()).filter(|&m| m > 0).collect();
            let sub = data.subset(&keep)?;
            let level = level_for(sub.m_bar());
            let model = fit_with_level(&sub, density, level, rng::derive_seed(config.seed, stage::VOLUMES, j as u64))?;
            let est = vp_eval_many(&model, &grid)?;
            let delta = est.iter().zip(&center).map(|(a, b)| a - b).collect();
            Ok(Draw {
                tau: tau(&counts, config.alpha, dim, vartheta(sub.m_bar())),
                delta,
                clamped: level == 1,
            })
        })
        .collect();
    let draws: Vec<Draw> = draws.into_iter().collect::<Result<_>>()?;
    if draws.iter().any(|d| d.clamped) {
        flags.push("L*(|A|) clamped to 1 for some subsamples".to_string());
    }

    let a = 1.0 - config.level;
    let mut sups: Vec<f64> = draws
        .iter()
        .map(|d| d.tau * d.delta.iter().fold(0.0f64, |m, v| m.max(v.abs())))
        .collect();
    let sup_statistics = sups.clone();
    let c_inf = if config.level == 0.0 {
        0.0
    } else {
        empirical_quantile(&mut sups, config.level)
    };
    let (pointwise_lower, pointwise_upper): (Vec<f64>, Vec<f64>) = (0..n_grid)
        .into_par_iter()
        .map(|g| {
            let mut vals: Vec<f64> = draws.iter().map(|d| d.tau * d.delta[g]).collect();
            let hi = empirical_quantile(&mut vals, 1.0 - a / 2.0);
            let lo = empirical_quantile(&mut vals, a / 2.0);
            (center[g] - hi / tau_full, center[g] - lo / tau_full)
        })
        .unzip();
    let half = c_inf / tau_full;
    let (r1, r2) = rates(&data.sizes(), dim, full_level);
    let band = BandResult {
        dim,
        grid_per_axis: per_axis,
        lower: center.iter().map(|m| m - half).collect(),
        upper: center.iter().map(|m| m + half).collect(),
        center,
        grid,
        level: config.level,
        method: BandMethod::Subsampling,
        rate: r1.min(r2),
        critical_value: c_inf,
        truncation: full_level,
        undersmoothed: false,
        clipping: 0.0,
        refinement: Vec::new(),
        seed: config.seed,
        flags,
    };
    Ok(SubsamplingResult {
        band,
        pointwise_lower,
        pointwise_upper,
        tau_full,
        tau: draws.iter().map(|d| d.tau).collect(),
        sup_statistics,
    })
}
