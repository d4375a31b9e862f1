//! Pooled control-neighbors Fourier coefficients and the de La Vallée Poussin
//! mean estimator.
//!
//! `a_k = sum_{(i,m)} w_{i,m} Y_{i,m} phi_k(T_{i,m}) / f_T(T_{i,m})` with the
//! weights of [`crate::design::weights`] computed once on the pooled design.

use serde::{Deserialize, Serialize};

use crate::design::{self, DesignDensity, DesignWeights, PooledDesign, WeightConfig, WeightsMeta};
use crate::error::{FdaError, Result};
use crate::fourier::{basis_values_with, partial_sum_eval, theta_leading_constant, vp_eval_many, FourierModel, IndexSet};
use crate::simulate::FunctionalDataset;
use crate::util::ordered_vec_sum;

/// `varrho(D)`: second moment of `1 + c - d` at interior points. Exact for `D = 1`.
pub const RHO_ONE: f64 = 2.5;

pub fn default_rho(_dim: usize) -> f64 {
    RHO_ONE
}

fn default_c_vp() -> f64 {
    1.0
}

/// How `K_1` enters the optimal level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", untagged)]
pub enum K1Choice {
    Value(f64),
    /// The string `"plug-in"`: estimate from pilot residuals.
    Named(String),
}

impl K1Choice {
    pub fn plug_in() -> Self {
        K1Choice::Named("plug-in".into())
    }

    fn validate(&self) -> Result<()> {
        match self {
            K1Choice::Value(v) if *v > 0.0 && v.is_finite() => Ok(()),
            K1Choice::Value(v) => Err(FdaError::invalid("estimate.optimal.K1", format!("{v} must be positive"))),
            K1Choice::Named(s) if s == "plug-in" => Ok(()),
            K1Choice::Named(s) => Err(FdaError::invalid(
                "estimate.optimal.K1",
                format!("expected a positive number or \"plug-in\", got {s:?}"),
            )),
        }
    }
}

/// Truncation level: explicit or the risk-optimal `L*`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelChoice {
    #[serde(rename = "L")]
    Fixed(usize),
    Optimal(OptimalLevel),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimalLevel {
    pub alpha: f64,
    #[serde(default = "default_c_vp")]
    pub c_vp: f64,
    #[serde(rename = "K1")]
    pub k1: K1Choice,
    #[serde(default)]
    pub rho: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimationConfig {
    pub level: LevelChoice,
    pub density: DesignDensity,
    #[serde(default)]
    pub weights: WeightConfig,
}

impl EstimationConfig {
    pub fn validate(&self) -> Result<()> {
        match &self.level {
            LevelChoice::Fixed(l) if *l >= 1 => {}
            LevelChoice::Fixed(_) => return Err(FdaError::invalid("estimate.L", "must be at least 1")),
            LevelChoice::Optimal(o) => {
                if !(o.alpha > 0.0) {
                    return Err(FdaError::invalid("estimate.optimal.alpha", "must be positive"));
                }
                if !(o.c_vp > 0.0) {
                    return Err(FdaError::invalid("estimate.optimal.c_vp", "must be positive"));
                }
                if let Some(r) = o.rho {
                    if !(r > 0.0) {
                        return Err(FdaError::invalid("estimate.optimal.rho", "must be positive"));
                    }
                }
                o.k1.validate()?;
            }
        }
        self.density.validate_bounded()
    }
}

/// Coefficients together with the weights that produced them.
#[derive(Clone, Debug)]
pub struct CoefficientFit {
    pub model: FourierModel,
    pub weights: DesignWeights,
}

/// Per-observation factor `w Y / f_T(T)` for the pooled design.
fn weighted_responses(design: &PooledDesign, y: &[f64], weights: &DesignWeights, density: &DesignDensity) -> Result<Vec<f64>> {
    (0..design.len())
        .map(|j| {
            let f = density.pdf(design.point(j));
            if !(f > 0.0) {
                return Err(FdaError::NonPositiveDensity(design.point(j).to_vec()));
            }
            Ok(weights.weights[j] * y[j] / f)
        })
        .collect()
}

/// `a_k = sum_j c_j phi_k(T_j)` over `IndexSet(D, 4L - 2)`.
pub fn coefficients_from_factors(design: &PooledDesign, factors: &[f64], level: usize) -> Result<FourierModel> {
    if level == 0 {
        return Err(FdaError::invalid("L", "truncation level must be at least 1"));
    }
    let index = IndexSet::enumerate(design.dim(), 4 * level - 2);
    let width = index.len();
    let values = ordered_vec_sum(design.len(), width, |j, acc| {
        let mut table = Vec::new();
        let mut buf = vec![0.0; width];
        basis_values_with(&index, design.point(j), &mut table, &mut buf);
        let c = factors[j];
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += c * b;
        }
    });
    FourierModel::new(design.dim(), level, values)
}

/// Control-neighbors coefficient estimates for `|k|_1 <= 4L - 2`.
pub fn fourier_coefficients(
    data: &FunctionalDataset,
    density: &DesignDensity,
    level: usize,
    config: &WeightConfig,
) -> Result<CoefficientFit> {
    if data.dim() != density.dim {
        return Err(FdaError::DimensionMismatch {
            expected: data.dim(),
            got: density.dim,
        });
    }
    let design = data.pooled_design()?;
    let weights = design::weights(&design, density, config)?;
    let model = fourier_coefficients_with(data, &design, density, level, &weights)?;
    Ok(CoefficientFit { model, weights })
}

/// Same as [`fourier_coefficients`] with precomputed weights.
pub fn fourier_coefficients_with(
    data: &FunctionalDataset,
    design: &PooledDesign,
    density: &DesignDensity,
    level: usize,
    weights: &DesignWeights,
) -> Result<FourierModel> {
    let y = data.pooled_responses();
    let factors = weighted_responses(design, &y, weights, density)?;
    coefficients_from_factors(design, &factors, level)
}

/// `t -> V_L(t)` with the estimated coefficients.
#[derive(Clone, Debug)]
pub struct MeanEstimator {
    model: FourierModel,
}

impl MeanEstimator {
    pub fn eval(&self, t: &[f64]) -> f64 {
        self.model.eval(t).unwrap_or(f64::NAN)
    }

    pub fn eval_many(&self, points: &[f64]) -> Result<Vec<f64>> {
        vp_eval_many(&self.model, points)
    }

    pub fn model(&self) -> &FourierModel {
        &self.model
    }
}

pub fn mean_estimator(model: FourierModel) -> MeanEstimator {
    MeanEstimator { model }
}

/// Triangular partial sum `S_L` on the same coefficients, the naive competitor.
pub fn naive_partial_sum(model: &FourierModel, t: &[f64]) -> Result<f64> {
    partial_sum_eval(model.coefficients(), model.level(), t)
}

/// `C*` in `L* = floor(C* M_bar^{1/(2 alpha + D)})`.
pub fn optimal_constant(alpha: f64, c_vp: f64, k1: f64, dim: usize, rho: f64) -> f64 {
    let fact: f64 = (1..=dim + 1).map(|i| i as f64).product();
    let theta = theta_leading_constant(dim) * fact;
    let base = 2.0 * alpha * c_vp * fact / (dim as f64 * k1 * rho * theta);
    base.powf(1.0 / (2.0 * alpha + dim as f64))
}

/// `max(1, floor(C* M_bar^{1/(2 alpha + D)}))`.
pub fn optimal_level(alpha: f64, c_vp: f64, k1: f64, dim: usize, m_bar: f64, rho: f64) -> usize {
    let c = optimal_constant(alpha, c_vp, k1, dim, rho);
    let l = (c * m_bar.powf(1.0 / (2.0 * alpha + dim as f64))).floor();
    if l.is_finite() && l >= 1.0 {
        l as usize
    } else {
        1
    }
}

/// Pilot level `max(1, ceil(M_bar^{1/(2+D)}))`.
pub fn pilot_level(m_bar: usize, dim: usize) -> usize {
    ((m_bar as f64).powf(1.0 / (2.0 + dim as f64)).ceil() as usize).max(1)
}

/// Pilot fit and its residuals `Y - mu_0(T)` in pooled order.
pub fn pilot_residuals(
    data: &FunctionalDataset,
    design: &PooledDesign,
    density: &DesignDensity,
    weights: &DesignWeights,
    pilot: Option<usize>,
) -> Result<(FourierModel, Vec<f64>)> {
    let l0 = pilot.unwrap_or_else(|| pilot_level(data.m_bar(), data.dim()));
    let model = fourier_coefficients_with(data, design, density, l0, weights)?;
    let fitted = vp_eval_many(&model, design.points())?;
    let y = data.pooled_responses();
    let r = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
    Ok((model, r))
}

/// `K_1 = (1/M_bar) sum r^2 / f_T(T)^2` from pilot residuals.
pub fn estimate_k1(
    data: &FunctionalDataset,
    density: &DesignDensity,
    pilot: Option<usize>,
    config: &WeightConfig,
) -> Result<f64> {
    let design = data.pooled_design()?;
    let weights = design::weights(&design, density, config)?;
    estimate_k1_with(data, &design, density, &weights, pilot)
}

pub fn estimate_k1_with(
    data: &FunctionalDataset,
    design: &PooledDesign,
    density: &DesignDensity,
    weights: &DesignWeights,
    pilot: Option<usize>,
) -> Result<f64> {
    let (_, r) = pilot_residuals(data, design, density, weights, pilot)?;
    let s: f64 = r
        .iter()
        .enumerate()
        .map(|(j, r)| {
            let f = density.pdf(design.point(j));
            r * r / (f * f)
        })
        .sum();
    Ok(s / design.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Sparse,
    Dense,
    Boundary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub sparse_term: f64,
    pub dense_term: f64,
    pub label: Regime,
}

/// Compares `M_bar^{-2 alpha/(2 alpha + D)}` with `sum M_i(M_i-1) / (M_bar(M_bar-1))`.
pub fn regime(data: &FunctionalDataset, alpha: f64) -> Result<RegimeReport> {
    if !(alpha > 0.0) {
        return Err(FdaError::invalid("alpha", "must be positive"));
    }
    let m = data.m_bar() as f64;
    let d = data.dim() as f64;
    Ok(regime_from_terms(
        m.powf(-2.0 * alpha / (2.0 * alpha + d)),
        data.pair_count() / (m * (m - 1.0)),
    ))
}

pub fn regime_from_terms(sparse_term: f64, dense_term: f64) -> RegimeReport {
    let ratio = sparse_term / dense_term;
    let label = if (0.5..=2.0).contains(&ratio) {
        Regime::Boundary
    } else if ratio > 2.0 {
        Regime::Sparse
    } else {
        Regime::Dense
    };
    RegimeReport {
        sparse_term,
        dense_term,
        label,
    }
}

/// Result of [`fit_mean`]: model, weights and the resolved constants.
#[derive(Clone, Debug)]
pub struct MeanFit {
    pub model: FourierModel,
    pub weights: DesignWeights,
    pub level: usize,
    pub k1: Option<f64>,
    pub rho: Option<f64>,
}

/// Resolves the level (possibly through a plug-in `K_1`) and fits.
pub fn fit_mean(data: &FunctionalDataset, config: &EstimationConfig) -> Result<MeanFit> {
    config.validate()?;
    let design = data.pooled_design()?;
    let weights = design::weights(&design, &config.density, &config.weights)?;
    let (level, k1, rho) = match &config.level {
        LevelChoice::Fixed(l) => (*l, None, None),
        LevelChoice::Optimal(o) => {
            let k1 = match o.k1 {
                K1Choice::Value(v) => v,
                K1Choice::Named(_) => estimate_k1_with(data, &design, &config.density, &weights, None)?,
            };
            if !(k1 > 0.0) {
                return Err(FdaError::Estimation(format!("plug-in K1 = {k1} is not positive")));
            }
            let rho = o.rho.unwrap_or_else(|| default_rho(data.dim()));
            let l = optimal_level(o.alpha, o.c_vp, k1, data.dim(), data.m_bar() as f64, rho);
            (l, Some(k1), Some(rho))
        }
    };
    let model = fourier_coefficients_with(data, &design, &config.density, level, &weights)?;
    Ok(MeanFit {
        model,
        weights,
        level,
        k1,
        rho,
    })
}

/// Monte Carlo estimate of `varrho(D) = E[(1 + c - d)^2]` at interior points of
/// uniform designs of size `n`.
pub fn calibrate_rho(dim: usize, n: usize, reps: usize, mc_samples: Option<usize>, seed: u64) -> Result<f64> {
    let density = DesignDensity::uniform(dim);
    let margin = 2.0 * (n as f64).powf(-1.0 / dim as f64);
    let mut sum = 0.0;
    let mut count = 0usize;
    for rep in 0..reps {
        let mut rng = crate::rng::stream(seed, crate::rng::stage::REPLICATION, rep as u64);
        let mut pts = vec![0.0; n * dim];
        density.sample(&mut rng, &mut pts);
        let design = PooledDesign::from_points(dim, pts)?;
        let config = WeightConfig {
            method: design::VolumeMethod::Auto,
            mc_samples,
            seed: crate::rng::derive_seed(seed, crate::rng::stage::VOLUMES, rep as u64),
        };
        let w = design::weights(&design, &density, &config)?;
        for j in 0..n {
            if design.point(j).iter().all(|&x| x > margin && x < 1.0 - margin) {
                let v = 1.0 + w.volumes[j] - w.degrees[j] as f64;
                sum += v * v;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(FdaError::Estimation("no interior points for calibration".into()));
    }
    Ok(sum / count as f64)
}

/// Serialized fitted model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    #[serde(rename = "D")]
    pub dim: usize,
    #[serde(rename = "L")]
    pub level: usize,
    pub index_order: String,
    pub coefficients: Vec<f64>,
    pub weights_meta: Option<WeightsMeta>,
    #[serde(default)]
    pub config: serde_json::Value,
}

impl ModelFile {
    pub fn new(model: &FourierModel, weights_meta: Option<WeightsMeta>, config: serde_json::Value) -> Self {
        ModelFile {
            dim: model.dim(),
            level: model.level(),
            index_order: "lex".into(),
            coefficients: model.values().to_vec(),
            weights_meta,
            config,
        }
    }

    pub fn to_model(&self) -> Result<FourierModel> {
        if self.index_order != "lex" {
            return Err(FdaError::invalid("index_order", "only \"lex\" is supported"));
        }
        FourierModel::new(self.dim, self.level, self.coefficients.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fourier::basis_eval;
    use crate::fourier::MultiIndex;
    use crate::simulate::{simulate, CovarianceSpec, Curve, MLaw, MeanSpec, NoiseSpec, SimulationSpec, TrigTerm};

    fn spec(mean: MeanSpec, cov: CovarianceSpec, noise: NoiseSpec, n: usize, m: usize) -> SimulationSpec {
        SimulationSpec {
            dim: 1,
            n_curves: n,
            m_law: MLaw::Fixed { m },
            mean,
            covariance: cov,
            noise,
            density: DesignDensity::uniform(1),
            truth: false,
        }
    }

    #[test]
    fn constant_recovered_exactly() {
        let ds = simulate(
            &spec(MeanSpec::Constant { value: 2.5 }, CovarianceSpec::Zero, NoiseSpec::none(), 10, 7),
            1,
        )
        .unwrap();
        let fit = fourier_coefficients(&ds, &DesignDensity::uniform(1), 3, &WeightConfig::default()).unwrap();
        assert!((fit.model.values()[0] - 2.5).abs() < 1e-12);
        assert_eq!(fit.model.values().len(), 11);
    }

    #[test]
    fn first_sine_coefficient_unbiased() {
        let mean = MeanSpec::TrigPolynomial {
            terms: vec![TrigTerm { k: vec![1], a: 1.0 }],
        };
        let sp = spec(mean, CovarianceSpec::Zero, NoiseSpec::none(), 500, 1);
        let reps = 1000;
        let (mut s1, mut s1sq, mut s2, mut s2sq) = (0.0, 0.0, 0.0, 0.0);
        for r in 0..reps {
            let ds = simulate(&sp, 1000 + r).unwrap();
            let fit = fourier_coefficients(&ds, &DesignDensity::uniform(1), 1, &WeightConfig::default()).unwrap();
            let (a1, a2) = (fit.model.values()[1], fit.model.values()[2]);
            s1 += a1;
            s1sq += a1 * a1;
            s2 += a2;
            s2sq += a2 * a2;
        }
        let n = reps as f64;
        let (m1, m2) = (s1 / n, s2 / n);
        let se1 = ((s1sq / n - m1 * m1) / n).sqrt();
        let se2 = ((s2sq / n - m2 * m2) / n).sqrt();
        assert!((m1 - 1.0).abs() <= 3.0 * se1, "{m1} {se1}");
        assert!(m2.abs() <= 3.0 * se2, "{m2} {se2}");
    }

    #[test]
    fn nonpositive_density_aborts() {
        let ds = FunctionalDataset::new(
            1,
            vec![Curve {
                t: vec![0.0, 0.3, 0.6, 0.9],
                y: vec![1.0; 4],
            }],
        )
        .unwrap();
        let beta = DesignDensity::new(1, crate::design::DensityKind::ProductBeta { a: 2.0, b: 2.0 }).unwrap();
        assert!(matches!(
            fourier_coefficients(&ds, &beta, 1, &WeightConfig::default()),
            Err(FdaError::NonPositiveDensity(_))
        ));
    }

    #[test]
    fn optimal_level_examples() {
        let c = optimal_constant(1.0, 1.0, 1.0, 1, 2.5);
        assert!((c - (4.0f64 / 15.0).powf(1.0 / 3.0)).abs() < 1e-12);
        assert_eq!(optimal_level(1.0, 1.0, 1.0, 1, 1000.0, 2.5), 6);
        let l1 = optimal_level(1.0, 1.0, 1.0, 1, 8e4, 2.5);
        let l2 = optimal_level(1.0, 1.0, 1.0, 1, 8e4 * 8.0, 2.5);
        assert!((l2 as i64 - 2 * l1 as i64).abs() <= 1);
        assert_eq!(optimal_level(1.0, 1.0, 1e12, 1, 1000.0, 2.5), 1);
    }

    #[test]
    fn regime_examples() {
        let ds = simulate(&spec(MeanSpec::Zero, CovarianceSpec::Zero, NoiseSpec::none(), 50, 1), 1).unwrap();
        assert_eq!(regime(&ds, 1.0).unwrap().label, Regime::Sparse);
        let ds = simulate(&spec(MeanSpec::Zero, CovarianceSpec::Zero, NoiseSpec::none(), 10, 1000), 1).unwrap();
        let r = regime(&ds, 1.0).unwrap();
        assert!((r.dense_term - 9990.0 * 1000.0 / (10000.0 * 9999.0)).abs() < 1e-12);
        assert!((r.sparse_term - 10000f64.powf(-2.0 / 3.0)).abs() < 1e-12);
        assert_eq!(r.label, Regime::Dense);
        assert_eq!(regime_from_terms(1.0, 0.6).label, Regime::Boundary);
        assert_eq!(regime_from_terms(1.0, 1.9).label, Regime::Boundary);
        assert_eq!(regime_from_terms(1.0, 2.1).label, Regime::Dense);
    }

    #[test]
    fn k1_white_noise() {
        let ds = simulate(&spec(MeanSpec::Zero, CovarianceSpec::Zero, NoiseSpec::gaussian(1.0), 10_000, 1), 4).unwrap();
        let k1 = estimate_k1(&ds, &DesignDensity::uniform(1), None, &WeightConfig::default()).unwrap();
        assert!((k1 - 1.0).abs() < 0.05, "{k1}");
        let ds = simulate(&spec(MeanSpec::Constant { value: 1.0 }, CovarianceSpec::Zero, NoiseSpec::none(), 100, 5), 4).unwrap();
        let k1 = estimate_k1(&ds, &DesignDensity::uniform(1), None, &WeightConfig::default()).unwrap();
        assert!(k1 < 1e-2, "{k1}");
    }

    #[test]
    fn k1_fbm_diagonal() {
        let sp = spec(
            MeanSpec::Zero,
            CovarianceSpec::Fbm {
                hurst: 0.5,
                variance: 1.0,
            },
            NoiseSpec::gaussian(0.5),
            1000,
            10,
        );
        let reps = 50;
        let mut total = 0.0;
        for r in 0..reps {
            let ds = simulate(&sp, 77 + r).unwrap();
            total += estimate_k1(&ds, &DesignDensity::uniform(1), None, &WeightConfig::default()).unwrap();
        }
        let k1 = total / reps as f64;
        assert!((k1 - 0.75).abs() < 0.08, "{k1}");
    }

    #[test]
    fn noiseless_trig_polynomial_reproduced() {
        // mu in the span of |k| <= 2L with a dense design: VP estimate is close
        let terms = vec![TrigTerm { k: vec![0], a: 0.5 }, TrigTerm { k: vec![3], a: -1.0 }];
        let mean = MeanSpec::TrigPolynomial { terms };
        let ds = simulate(&spec(mean.clone(), CovarianceSpec::Zero, NoiseSpec::none(), 1, 20_000), 3).unwrap();
        let fit = fourier_coefficients(&ds, &DesignDensity::uniform(1), 2, &WeightConfig::default()).unwrap();
        let est = mean_estimator(fit.model);
        let err = crate::simulate::empirical_l2_error(|t| est.eval(t), |t| mean.eval(t), 1, 512);
        assert!(err < 1e-6, "{err}");
        let grid = crate::simulate::midpoint_grid(1, 16);
        let many = est.eval_many(&grid).unwrap();
        for (i, v) in many.iter().enumerate() {
            assert!((v - est.eval(&grid[i..i + 1])).abs() < 1e-13);
        }
        let exact = FourierModel::from_fn(1, 2, |k| match k[0] {
            0 => 0.5,
            3 => -1.0,
            _ => 0.0,
        })
        .unwrap();
        let t = [0.37];
        let want = 0.5 - basis_eval(&MultiIndex::new(vec![3]), &t).unwrap();
        assert!((mean_estimator(exact.clone()).eval(&t) - want).abs() < 1e-12);
        assert!((naive_partial_sum(&exact, &t).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn model_file_round_trip() {
        let m = FourierModel::from_fn(2, 2, |k| k[0] as f64 - k[1] as f64).unwrap();
        let f = ModelFile::new(&m, None, serde_json::json!({"L": 2}));
        let back: ModelFile = serde_json::from_str(&serde_json::to_string(&f).unwrap()).unwrap();
        assert_eq!(back.to_model().unwrap(), m);
    }

    #[test]
    fn config_parsing() {
        let cfg: EstimationConfig = serde_json::from_str(
            r#"{"level": {"optimal": {"alpha": 1.0, "K1": "plug-in"}}, "density": {"dim": 1, "kind": "uniform"}}"#,
        )
        .unwrap();
        cfg.validate().unwrap();
        let cfg: EstimationConfig =
            serde_json::from_str(r#"{"level": {"L": 4}, "density": {"dim": 1, "kind": "uniform"}}"#).unwrap();
        assert_eq!(cfg.level, LevelChoice::Fixed(4));
        let bad: EstimationConfig = serde_json::from_str(
            r#"{"level": {"optimal": {"alpha": 1.0, "K1": "guess"}}, "density": {"dim": 1, "kind": "uniform"}}"#,
        )
        .unwrap();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn rho_calibration_one_dimension() {
        let r = calibrate_rho(1, 200, 300, None, 5).unwrap();
        assert!((r - 2.5).abs() < 0.15, "{r}");
    }
}
