//! Single replications of the benchmark experiments.
//!
//! Each [`Experiment`] maps a seed to a fixed list of named metrics. Sweeps
//! rewrite one field of the experiment before the replication runs.

use serde::{Deserialize, Serialize};

use crate::design::{self, DesignDensity, PooledDesign, WeightConfig};
use crate::error::{FdaError, Result};
use crate::estimate::{default_rho, fourier_coefficients_with, optimal_level};
use crate::fourier::{vp_eval, vp_eval_many, FourierModel, IndexSet};
use crate::inference::{
    pointwise_interval, sigma_matrix_oracle, subsampling_bands, uniform_band_gaussian, GaussianBandConfig, OracleInputs,
    SubsampleScheme, SubsamplingConfig, VarthetaMode,
};
use crate::regularity::{estimate_alpha, plug_in_level, RegularityConfig};
use crate::rng::{self, stage};
use crate::simulate::{default_grid, empirical_l2_error, midpoint_grid, simulate, MLaw, MeanSpec, SimulationSpec};

pub type Metrics = Vec<(String, f64)>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Integrand {
    /// `sum_d |t_d - at|`.
    Kink { at: f64 },
}

impl Integrand {
    pub fn eval(&self, t: &[f64]) -> f64 {
        match self {
            Integrand::Kink { at } => t.iter().map(|x| (x - at).abs()).sum(),
        }
    }

    /// Integral against `f_T` when the density is uniform.
    pub fn uniform_integral(&self, dim: usize) -> f64 {
        match self {
            Integrand::Kink { at } => dim as f64 * (at * at + (1.0 - at) * (1.0 - at)) / 2.0,
        }
    }
}

fn default_integrand() -> Integrand {
    Integrand::Kink { at: 1.0 / 3.0 }
}

fn default_c_vp() -> f64 {
    1.0
}

fn default_level() -> f64 {
    0.95
}

fn default_draws() -> usize {
    2000
}

fn default_vartheta() -> VarthetaMode {
    VarthetaMode::Auto
}

fn default_m_ref() -> f64 {
    1e4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Experiment {
    /// Control-neighbour integration of a Lipschitz integrand under a uniform design.
    IntegrationRmse {
        dim: usize,
        n: usize,
        #[serde(default = "default_integrand")]
        integrand: Integrand,
    },
    /// Degree and volume moments by sorted position, `D = 1`, uniform design.
    Moments { n: usize },
    /// Every coefficient with `|k|_1 <= bound`.
    CoefficientBias { simulation: SimulationSpec, bound: usize },
    /// L2 risk of the estimator at the oracle `L*` (or a fixed `L`).
    Risk {
        simulation: SimulationSpec,
        alpha: f64,
        #[serde(default = "default_c_vp")]
        c_vp: f64,
        /// Defaults to the oracle `K_1` of the simulation.
        #[serde(default, rename = "K1")]
        k1: Option<f64>,
        #[serde(default, rename = "L")]
        level: Option<usize>,
        #[serde(default)]
        grid: Option<usize>,
    },
    /// Pointwise interval at `t0` and uniform band with the oracle `Sigma`.
    CoverageGaussian {
        simulation: SimulationSpec,
        alpha: f64,
        #[serde(default = "default_c_vp")]
        c_vp: f64,
        #[serde(default, rename = "K1")]
        k1: Option<f64>,
        #[serde(default = "default_level")]
        level: f64,
        t0: Vec<f64>,
        #[serde(default = "default_draws")]
        n_draws: usize,
        #[serde(default)]
        grid: Option<usize>,
        #[serde(default)]
        quadrature: Option<usize>,
    },
    /// Uniform subsampling band, `N_s = ratio * N` subsets.
    CoverageSubsampling {
        simulation: SimulationSpec,
        alpha: f64,
        #[serde(default = "default_c_vp")]
        c_vp: f64,
        #[serde(default, rename = "K1")]
        k1: Option<f64>,
        #[serde(default = "default_level")]
        level: f64,
        subsample_ratio: f64,
        #[serde(default = "default_vartheta")]
        vartheta: VarthetaMode,
        #[serde(default)]
        scheme: SubsampleScheme,
        #[serde(default)]
        grid: Option<usize>,
    },
    /// Exponent estimate and the ratio of plug-in to true `L*` at a reference `M_bar`.
    Regularity {
        simulation: SimulationSpec,
        #[serde(default)]
        regularity: RegularityConfig,
        /// True exponent; defaults to the Weierstrass exponent of the mean.
        #[serde(default)]
        alpha: Option<f64>,
        #[serde(default = "default_c_vp")]
        c_vp: f64,
        #[serde(default = "one", rename = "K1")]
        k1: f64,
        #[serde(default = "default_m_ref")]
        m_bar_ref: f64,
    },
}

fn one() -> f64 {
    1.0
}

/// Fields a sweep may rewrite.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    /// Design size of the integration and moment experiments.
    N,
    NCurves,
    /// Fixed per-curve size.
    M,
    /// Total observations with the per-curve size held fixed.
    MBar,
    /// Weierstrass exponent of the mean (and the assumed exponent).
    Alpha,
}

impl SweepVariable {
    pub fn name(&self) -> &'static str {
        match self {
            SweepVariable::N => "n",
            SweepVariable::NCurves => "N",
            SweepVariable::M => "M",
            SweepVariable::MBar => "M_bar",
            SweepVariable::Alpha => "alpha",
        }
    }
}

fn as_count(v: f64, name: &'static str) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        Err(FdaError::invalid(name, format!("sweep value {v} is not a positive integer")))
    }
}

impl Experiment {
    pub fn simulation(&self) -> Option<&SimulationSpec> {
        match self {
            Experiment::IntegrationRmse { .. } | Experiment::Moments { .. } => None,
            Experiment::CoefficientBias { simulation, .. }
            | Experiment::Risk { simulation, .. }
            | Experiment::CoverageGaussian { simulation, .. }
            | Experiment::CoverageSubsampling { simulation, .. }
            | Experiment::Regularity { simulation, .. } => Some(simulation),
        }
    }

    fn simulation_mut(&mut self) -> Option<&mut SimulationSpec> {
        match self {
            Experiment::IntegrationRmse { .. } | Experiment::Moments { .. } => None,
            Experiment::CoefficientBias { simulation, .. }
            | Experiment::Risk { simulation, .. }
            | Experiment::CoverageGaussian { simulation, .. }
            | Experiment::CoverageSubsampling { simulation, .. }
            | Experiment::Regularity { simulation, .. } => Some(simulation),
        }
    }

    /// Copy of the experiment with `var` set to `value`.
    pub fn with_sweep(&self, var: SweepVariable, value: f64) -> Result<Experiment> {
        let mut e = self.clone();
        match var {
            SweepVariable::N => match &mut e {
                Experiment::IntegrationRmse { n, .. } | Experiment::Moments { n } => *n = as_count(value, "sweep.n")?,
                _ => return Err(FdaError::invalid("sweep.variable", "n applies to integration_rmse and moments")),
            },
            SweepVariable::NCurves => {
                let sim = e
                    .simulation_mut()
                    .ok_or_else(|| FdaError::invalid("sweep.variable", "experiment has no simulation"))?;
                sim.n_curves = as_count(value, "sweep.N")?;
            }
            SweepVariable::M => {
                let sim = e
                    .simulation_mut()
                    .ok_or_else(|| FdaError::invalid("sweep.variable", "experiment has no simulation"))?;
                sim.m_law = MLaw::Fixed {
                    m: as_count(value, "sweep.M")?,
                };
            }
            SweepVariable::MBar => {
                let sim = e
                    .simulation_mut()
                    .ok_or_else(|| FdaError::invalid("sweep.variable", "experiment has no simulation"))?;
                let m = match sim.m_law {
                    MLaw::Fixed { m } => m,
                    _ => return Err(FdaError::invalid("sweep.variable", "M_bar sweeps need a fixed m_law")),
                };
                let total = as_count(value, "sweep.M_bar")?;
                if total % m != 0 {
                    return Err(FdaError::invalid("sweep.values", format!("{total} is not a multiple of m = {m}")));
                }
                sim.n_curves = total / m;
            }
            SweepVariable::Alpha => {
                let sim = e
                    .simulation_mut()
                    .ok_or_else(|| FdaError::invalid("sweep.variable", "experiment has no simulation"))?;
                match &mut sim.mean {
                    MeanSpec::Weierstrass { alpha, .. } => *alpha = value,
                    _ => return Err(FdaError::invalid("sweep.variable", "alpha sweeps need a weierstrass mean")),
                }
                match &mut e {
                    Experiment::Risk { alpha, .. }
                    | Experiment::CoverageGaussian { alpha, .. }
                    | Experiment::CoverageSubsampling { alpha, .. } => *alpha = value,
                    Experiment::Regularity { alpha, .. } => *alpha = Some(value),
                    _ => {}
                }
            }
        }
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(sim) = self.simulation() {
            sim.validate()?;
        }
        match self {
            Experiment::IntegrationRmse { dim, n, .. } => {
                if !(1..=3).contains(dim) {
                    return Err(FdaError::invalid("experiment.dim", "must be 1, 2 or 3"));
                }
                if *n < 2 {
                    return Err(FdaError::invalid("experiment.n", "must be at least 2"));
                }
            }
            Experiment::Moments { n } => {
                if *n < 6 {
                    return Err(FdaError::invalid("experiment.n", "must be at least 6"));
                }
            }
            Experiment::Risk { alpha, level, .. } => {
                if level.is_none() && !(*alpha > 0.0) {
                    return Err(FdaError::invalid("experiment.alpha", "must be positive"));
                }
            }
            Experiment::CoverageGaussian { alpha, level, t0, simulation, .. } => {
                if !(*alpha > 0.0) {
                    return Err(FdaError::invalid("experiment.alpha", "must be positive"));
                }
                if !(*level > 0.0 && *level < 1.0) {
                    return Err(FdaError::invalid("experiment.level", "must be in (0, 1)"));
                }
                if t0.len() != simulation.dim {
                    return Err(FdaError::invalid("experiment.t0", "length must equal dim"));
                }
            }
            Experiment::CoverageSubsampling {
                alpha,
                level,
                subsample_ratio,
                ..
            } => {
                if !(*alpha > 0.0) {
                    return Err(FdaError::invalid("experiment.alpha", "must be positive"));
                }
                if !(*level > 0.0 && *level < 1.0) {
                    return Err(FdaError::invalid("experiment.level", "must be in (0, 1)"));
                }
                if !(*subsample_ratio > 0.0) {
                    return Err(FdaError::invalid("experiment.subsample_ratio", "must be positive"));
                }
            }
            Experiment::Regularity {
                regularity, simulation, alpha, ..
            } => {
                regularity.validate()?;
                if alpha.is_none() && !matches!(simulation.mean, MeanSpec::Weierstrass { .. }) {
                    return Err(FdaError::invalid("experiment.alpha", "required unless the mean is weierstrass"));
                }
            }
            Experiment::CoefficientBias { .. } => {}
        }
        Ok(())
    }

    /// Names of the metrics, in output order.
    pub fn metric_names(&self) -> Vec<String> {
        let names: Vec<&str> = match self {
            Experiment::IntegrationRmse { .. } => vec!["error", "sq_error"],
            Experiment::Moments { .. } => vec![
                "d_label0",
                "c_label0",
                "cd2_interior",
                "cd2_second",
                "cd2_end",
                "d2_interior",
                "cxd_interior",
                "rho_interior",
            ],
            Experiment::CoefficientBias { simulation, bound } => {
                return IndexSet::enumerate(simulation.dim, *bound)
                    .iter()
                    .map(|k| format!("a_{}", k.iter().map(u32::to_string).collect::<Vec<_>>().join("_")))
                    .collect();
            }
            Experiment::Risk { .. } => vec!["risk", "L"],
            Experiment::CoverageGaussian { .. } => {
                vec!["covered_pointwise", "covered_uniform", "pointwise_half_width", "critical_value", "L"]
            }
            Experiment::CoverageSubsampling { .. } => vec!["covered_uniform", "half_width", "critical_value", "L"],
            Experiment::Regularity { .. } => vec!["alpha_hat", "j0_hat", "K", "J", "g_hat", "L_ratio"],
        };
        names.into_iter().map(String::from).collect()
    }

    /// One replication; the values follow [`Experiment::metric_names`].
    pub fn run(&self, seed: u64) -> Result<Metrics> {
        let values = match self {
            Experiment::IntegrationRmse { dim, n, integrand } => integration_error(*dim, *n, integrand, seed)?,
            Experiment::Moments { n } => moments(*n, seed)?,
            Experiment::CoefficientBias { simulation, bound } => coefficient_draw(simulation, *bound, seed)?,
            Experiment::Risk {
                simulation,
                alpha,
                c_vp,
                k1,
                level,
                grid,
            } => {
                let level = match level {
                    Some(l) => *l,
                    None => oracle_level(simulation, *alpha, *c_vp, *k1)?,
                };
                let data = simulate(&no_truth(simulation), seed)?;
                let model = fit(&data, &simulation.density, level, seed)?;
                let per_axis = grid.unwrap_or_else(|| default_grid(simulation.dim));
                let mean = &simulation.mean;
                let risk = empirical_l2_error(|t| vp_eval(&model, t).unwrap_or(f64::NAN), |t| mean.eval(t), simulation.dim, per_axis);
                vec![risk, level as f64]
            }
            Experiment::CoverageGaussian {
                simulation,
                alpha,
                c_vp,
                k1,
                level,
                t0,
                n_draws,
                grid,
                quadrature,
            } => {
                let l = oracle_level(simulation, *alpha, *c_vp, *k1)?;
                let data = simulate(&no_truth(simulation), seed)?;
                let model = fit(&data, &simulation.density, l, seed)?;
                let sizes = data.sizes();
                let sigma2 = |t: &[f64]| simulation.noise.sigma.eval(t).powi(2);
                let gamma = |s: &[f64], t: &[f64]| simulation.covariance.eval(s, t);
                let inputs = OracleInputs {
                    sigma2: &sigma2,
                    gamma: &gamma,
                    gamma_is_zero: simulation.covariance.is_zero(),
                };
                let sigma = sigma_matrix_oracle(&sizes, &simulation.density, l, &inputs, None, *quadrature)?;
                let target = projection(&simulation.mean, simulation.dim, l)?;
                let (lo, hi) = pointwise_interval(&model, &sigma, t0, *level)?;
                let v0 = vp_eval(&target, t0)?;
                let band = uniform_band_gaussian(
                    &model,
                    &sigma,
                    &GaussianBandConfig {
                        level: *level,
                        grid: *grid,
                        n_draws: *n_draws,
                        seed: rng::derive_seed(seed, stage::GAUSSIAN_DRAWS, 0),
                        refinement: false,
                    },
                    &sizes,
                )?;
                let truth = vp_eval_many(&target, &band.grid)?;
                vec![
                    indicator(lo <= v0 && v0 <= hi),
                    indicator(band.covers(&truth)),
                    0.5 * (hi - lo),
                    band.critical_value,
                    l as f64,
                ]
            }
            Experiment::CoverageSubsampling {
                simulation,
                alpha,
                c_vp,
                k1,
                level,
                subsample_ratio,
                vartheta,
                scheme,
                grid,
            } => {
                let k1 = match k1 {
                    Some(v) => *v,
                    None => oracle_k1(simulation),
                };
                let data = simulate(&no_truth(simulation), seed)?;
                let n_subsamples = ((subsample_ratio * simulation.n_curves as f64).round() as usize).max(1);
                let config = SubsamplingConfig {
                    alpha: *alpha,
                    c_vp: *c_vp,
                    k1,
                    rho: None,
                    level: *level,
                    n_subsamples,
                    vartheta: vartheta.clone(),
                    scheme: *scheme,
                    grid: *grid,
                    seed: rng::derive_seed(seed, stage::SUBSAMPLES, 0),
                };
                let res = subsampling_bands(&data, &simulation.density, &config)?;
                let target = projection(&simulation.mean, simulation.dim, res.band.truncation)?;
                let truth = vp_eval_many(&target, &res.band.grid)?;
                let half = res.band.half_width().first().copied().unwrap_or(0.0);
                vec![
                    indicator(res.band.covers(&truth)),
                    half,
                    res.band.critical_value,
                    res.band.truncation as f64,
                ]
            }
            Experiment::Regularity {
                simulation,
                regularity,
                alpha,
                c_vp,
                k1,
                m_bar_ref,
            } => {
                let truth_alpha = match (alpha, &simulation.mean) {
                    (Some(a), _) => *a,
                    (None, MeanSpec::Weierstrass { alpha, .. }) => *alpha,
                    _ => return Err(FdaError::invalid("experiment.alpha", "unknown true exponent")),
                };
                let data = simulate(&no_truth(simulation), seed)?;
                let est = estimate_alpha(&data, regularity)?;
                let rho = default_rho(simulation.dim);
                let l_hat = plug_in_level(&est, *k1, *c_vp, *m_bar_ref, simulation.dim, Some(rho));
                let l_true = optimal_level(truth_alpha, *c_vp, *k1, simulation.dim, *m_bar_ref, rho);
                vec![
                    est.alpha_hat,
                    est.j0_hat as f64,
                    est.cells as f64,
                    est.grid_size as f64,
                    est.g_hat,
                    l_hat as f64 / l_true as f64,
                ]
            }
        };
        Ok(self.metric_names().into_iter().zip(values).collect())
    }
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn no_truth(spec: &SimulationSpec) -> SimulationSpec {
    SimulationSpec {
        truth: false,
        ..spec.clone()
    }
}

fn fit(data: &crate::simulate::FunctionalDataset, density: &DesignDensity, level: usize, seed: u64) -> Result<FourierModel> {
    let design = data.pooled_design()?;
    let w = design::weights(&design, density, &WeightConfig::with_seed(rng::derive_seed(seed, stage::VOLUMES, 0)))?;
    fourier_coefficients_with(data, &design, density, level, &w)
}

const ORACLE_RESOLUTION: [usize; 3] = [4096, 128, 24];

/// `K_1 = int (sigma^2 + gamma(t,t)) / f_T` by midpoint quadrature.
pub fn oracle_k1(spec: &SimulationSpec) -> f64 {
    let dim = spec.dim;
    let grid = midpoint_grid(dim, ORACLE_RESOLUTION[dim - 1]);
    let n = grid.len() / dim;
    grid.chunks_exact(dim)
        .map(|t| (spec.noise.sigma.eval(t).powi(2) + spec.covariance.eval(t, t)) / spec.density.pdf(t))
        .sum::<f64>()
        / n as f64
}

/// `K_2 = int gamma(t,t)`.
pub fn oracle_k2(spec: &SimulationSpec) -> f64 {
    let dim = spec.dim;
    let grid = midpoint_grid(dim, ORACLE_RESOLUTION[dim - 1]);
    let n = grid.len() / dim;
    grid.chunks_exact(dim).map(|t| spec.covariance.eval(t, t)).sum::<f64>() / n as f64
}

/// `L*` with the oracle `K_1` unless one is given.
pub fn oracle_level(spec: &SimulationSpec, alpha: f64, c_vp: f64, k1: Option<f64>) -> Result<usize> {
    let k1 = k1.unwrap_or_else(|| oracle_k1(spec));
    if !(k1 > 0.0) {
        return Err(FdaError::invalid("K1", "oracle K1 is zero; supply K1"));
    }
    let m_bar = match spec.m_law {
        MLaw::Fixed { m } => (m * spec.n_curves) as f64,
        MLaw::Uniform { min, max } => (min + max) as f64 / 2.0 * spec.n_curves as f64,
    };
    Ok(optimal_level(alpha, c_vp, k1, spec.dim, m_bar, default_rho(spec.dim)))
}

/// Exact Fourier coefficients of `mean` up to `|k|_1 <= 4L - 2`; the target `V_L(mu)`.
pub fn projection(mean: &MeanSpec, dim: usize, level: usize) -> Result<FourierModel> {
    let index = IndexSet::enumerate(dim, 4 * level - 2);
    let mut values = vec![0.0; index.len()];
    let mut add = |k: &[u32], a: f64| {
        if let Some(p) = index.position(k) {
            values[p] += a;
        }
    };
    match mean {
        MeanSpec::Zero => {}
        MeanSpec::Constant { value } => add(&vec![0; dim], *value),
        MeanSpec::TrigPolynomial { terms } => {
            for t in terms {
                add(&t.k, t.a);
            }
        }
        MeanSpec::Weierstrass {
            alpha,
            j_max,
            amplitude,
        } => {
            // cos(2 pi m t) = phi_{2m}(t) / sqrt 2
            let scale = std::f64::consts::FRAC_1_SQRT_2.powi(dim as i32);
            for j in 1..=*j_max {
                let k = vec![2u32 << j; dim];
                add(&k, amplitude * 2f64.powf(-(j as f64) * alpha) * scale);
            }
        }
    }
    FourierModel::new(dim, level, values)
}

fn integration_error(dim: usize, n: usize, integrand: &Integrand, seed: u64) -> Result<Vec<f64>> {
    let density = DesignDensity::uniform(dim);
    let mut r = rng::stream(seed, stage::DESIGN, 0);
    let mut pts = vec![0.0; n * dim];
    density.sample(&mut r, &mut pts);
    let design = PooledDesign::from_points(dim, pts)?;
    let w = design::weights(&design, &density, &WeightConfig::with_seed(rng::derive_seed(seed, stage::VOLUMES, 0)))?;
    let values: Vec<f64> = (0..n).map(|j| integrand.eval(design.point(j))).collect();
    let err = design::integrate(&values, &w)? - integrand.uniform_integral(dim);
    Ok(vec![err, err * err])
}

fn moments(n: usize, seed: u64) -> Result<Vec<f64>> {
    let density = DesignDensity::uniform(1);
    let mut r = rng::stream(seed, stage::DESIGN, 0);
    let mut pts = vec![0.0; n];
    density.sample(&mut r, &mut pts);
    let design = PooledDesign::from_points(1, pts.clone())?;
    let w = design::weights(&design, &density, &WeightConfig::with_seed(seed))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| pts[a].total_cmp(&pts[b]));
    let cd = |pos: usize| {
        let j = order[pos];
        (w.volumes[j], w.degrees[j] as f64)
    };
    let sq = |pos: usize| {
        let (c, d) = cd(pos);
        (c - d) * (c - d)
    };
    let interior = 2..n - 2;
    let k = interior.len() as f64;
    let mean_over = |f: &dyn Fn(usize) -> f64| interior.clone().map(f).sum::<f64>() / k;
    Ok(vec![
        w.degrees[0] as f64,
        w.volumes[0],
        mean_over(&sq),
        (sq(1) + sq(n - 2)) / 2.0,
        (sq(0) + sq(n - 1)) / 2.0,
        mean_over(&|p| cd(p).1 * cd(p).1),
        mean_over(&|p| cd(p).0 * cd(p).1),
        mean_over(&|p| {
            let (c, d) = cd(p);
            (1.0 + c - d) * (1.0 + c - d)
        }),
    ])
}

fn coefficient_draw(spec: &SimulationSpec, bound: usize, seed: u64) -> Result<Vec<f64>> {
    let level = (bound + 2).div_ceil(4).max(1);
    let data = simulate(&no_truth(spec), seed)?;
    let model = fit(&data, &spec.density, level, seed)?;
    IndexSet::enumerate(spec.dim, bound)
        .iter()
        .map(|k| {
            model
                .coefficient(k)
                .ok_or_else(|| FdaError::MissingCoefficient(k.to_vec()))
        })
        .collect()
}
