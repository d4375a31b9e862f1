//! Synthetic functional data: `Y_{i,m} = X_i(T_{i,m}) + sigma(T_{i,m}) e_{i,m}`.
//!
//! Random functions are only materialized at their own design points. Every
//! curve draws from its own streams (design, path, noise), so changing `N`
//! or one curve's size leaves the other curves untouched.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{DesignDensity, PooledDesign};
use crate::error::{FdaError, Result};
use crate::fourier::{basis_eval, MultiIndex};
use crate::rng::{self, stage};
use crate::util::ordered_sum;

/// One term `a * phi_k` of a trigonometric polynomial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigTerm {
    pub k: Vec<u32>,
    pub a: f64,
}

fn default_amplitude() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeanSpec {
    Zero,
    Constant {
        value: f64,
    },
    /// `sum a phi_k` over the listed terms.
    TrigPolynomial {
        terms: Vec<TrigTerm>,
    },
    /// `amplitude * sum_{j=1}^{j_max} 2^{-j alpha} prod_d cos(2 pi 2^j t_d)`.
    Weierstrass {
        alpha: f64,
        j_max: u32,
        #[serde(default = "default_amplitude")]
        amplitude: f64,
    },
}

impl MeanSpec {
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            MeanSpec::Zero => Ok(()),
            MeanSpec::Constant { value } => {
                if value.is_finite() {
                    Ok(())
                } else {
                    Err(FdaError::invalid("mean.value", "must be finite"))
                }
            }
            MeanSpec::TrigPolynomial { terms } => {
                for term in terms {
                    if term.k.len() != dim {
                        return Err(FdaError::invalid(
                            "mean.terms.k",
                            format!("multi-index {:?} does not have {dim} components", term.k),
                        ));
                    }
                    if !term.a.is_finite() {
                        return Err(FdaError::invalid("mean.terms.a", "must be finite"));
                    }
                }
                Ok(())
            }
            MeanSpec::Weierstrass {
                alpha,
                j_max,
                amplitude,
            } => {
                if !(*alpha > 0.0 && *alpha <= 1.0) {
                    return Err(FdaError::invalid("mean.alpha", format!("{alpha} is outside (0, 1]")));
                }
                if *j_max == 0 || *j_max > 40 {
                    return Err(FdaError::invalid("mean.j_max", "must be in 1..=40"));
                }
                if !amplitude.is_finite() {
                    return Err(FdaError::invalid("mean.amplitude", "must be finite"));
                }
                Ok(())
            }
        }
    }

    pub fn eval(&self, t: &[f64]) -> f64 {
        match self {
            MeanSpec::Zero => 0.0,
            MeanSpec::Constant { value } => *value,
            MeanSpec::TrigPolynomial { terms } => terms
                .iter()
                .map(|term| term.a * basis_eval(&MultiIndex::new(term.k.clone()), t).unwrap_or(0.0))
                .sum(),
            MeanSpec::Weierstrass {
                alpha,
                j_max,
                amplitude,
            } => {
                let mut s = 0.0;
                for j in 1..=*j_max {
                    let freq = std::f64::consts::TAU * 2f64.powi(j as i32);
                    let prod: f64 = t.iter().map(|&u| (freq * u).cos()).product();
                    s += 2f64.powf(-(j as f64) * alpha) * prod;
                }
                amplitude * s
            }
        }
    }
}

fn default_variance() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CovarianceSpec {
    Zero,
    /// `v exp(-|s-t| / scale)`.
    Exponential {
        scale: f64,
        #[serde(default = "default_variance")]
        variance: f64,
    },
    /// `v (1 + sqrt3 r / scale) exp(-sqrt3 r / scale)`.
    Matern32 {
        scale: f64,
        #[serde(default = "default_variance")]
        variance: f64,
    },
    /// `v/2 (|s|^{2H} + |t|^{2H} - |s-t|^{2H})`.
    Fbm {
        hurst: f64,
        #[serde(default = "default_variance")]
        variance: f64,
    },
}

fn norm(t: &[f64]) -> f64 {
    t.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn distance(s: &[f64], t: &[f64]) -> f64 {
    s.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

impl CovarianceSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(FdaError::invalid(name, format!("{x} must be positive")))
            }
        };
        match *self {
            CovarianceSpec::Zero => Ok(()),
            CovarianceSpec::Exponential { scale, variance } | CovarianceSpec::Matern32 { scale, variance } => {
                positive("covariance.scale", scale)?;
                positive("covariance.variance", variance)
            }
            CovarianceSpec::Fbm { hurst, variance } => {
                if !(hurst > 0.0 && hurst < 1.0) {
                    return Err(FdaError::invalid("covariance.hurst", format!("{hurst} is outside (0, 1)")));
                }
                positive("covariance.variance", variance)
            }
        }
    }

    pub fn eval(&self, s: &[f64], t: &[f64]) -> f64 {
        match *self {
            CovarianceSpec::Zero => 0.0,
            CovarianceSpec::Exponential { scale, variance } => variance * (-distance(s, t) / scale).exp(),
            CovarianceSpec::Matern32 { scale, variance } => {
                let r = 3f64.sqrt() * distance(s, t) / scale;
                variance * (1.0 + r) * (-r).exp()
            }
            CovarianceSpec::Fbm { hurst, variance } => {
                let h2 = 2.0 * hurst;
                0.5 * variance * (norm(s).powf(h2) + norm(t).powf(h2) - distance(s, t).powf(h2))
            }
        }
    }

    /// Hölder exponent of `t -> gamma(s, t)`.
    pub fn holder_exponent(&self) -> Option<f64> {
        match *self {
            CovarianceSpec::Zero => None,
            CovarianceSpec::Exponential { .. } => Some(0.5),
            CovarianceSpec::Matern32 { .. } => Some(1.0),
            CovarianceSpec::Fbm { hurst, .. } => Some(hurst),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, CovarianceSpec::Zero)
    }
}

/// Noise standard deviation `sigma(t)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SigmaSpec {
    Constant { value: f64 },
    /// `intercept + slope * t_1`.
    Linear { intercept: f64, slope: f64 },
}

impl SigmaSpec {
    pub fn eval(&self, t: &[f64]) -> f64 {
        match *self {
            SigmaSpec::Constant { value } => value,
            SigmaSpec::Linear { intercept, slope } => intercept + slope * t[0],
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(*self, SigmaSpec::Constant { value } if value == 0.0)
    }
}

/// Unit-variance law of the base error `e`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseLaw {
    Gaussian,
    Rademacher,
    /// Student t scaled to unit variance; heavy tails, not sub-Gaussian.
    StudentT { df: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub sigma: SigmaSpec,
    #[serde(default = "NoiseSpec::default_law")]
    pub law: NoiseLaw,
}

impl NoiseSpec {
    fn default_law() -> NoiseLaw {
        NoiseLaw::Gaussian
    }

    pub fn none() -> Self {
        NoiseSpec {
            sigma: SigmaSpec::Constant { value: 0.0 },
            law: NoiseLaw::Gaussian,
        }
    }

    pub fn gaussian(sigma: f64) -> Self {
        NoiseSpec {
            sigma: SigmaSpec::Constant { value: sigma },
            law: NoiseLaw::Gaussian,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.sigma {
            SigmaSpec::Constant { value } => {
                if !(value >= 0.0 && value.is_finite()) {
                    return Err(FdaError::invalid("noise.sigma.value", "must be finite and >= 0"));
                }
            }
            SigmaSpec::Linear { intercept, slope } => {
                if !(intercept >= 0.0 && intercept + slope >= 0.0 && slope.is_finite()) {
                    return Err(FdaError::invalid("noise.sigma", "sigma(t) must be >= 0 on [0,1]"));
                }
            }
        }
        if let NoiseLaw::StudentT { df } = self.law {
            if !(df >= 4.0) {
                return Err(FdaError::invalid("noise.law.df", format!("{df} must be >= 4")));
            }
        }
        Ok(())
    }

    /// Whether the law has sub-Gaussian tails.
    pub fn sub_gaussian(&self) -> bool {
        !matches!(self.law, NoiseLaw::StudentT { .. })
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.law {
            NoiseLaw::Gaussian => StandardNormal.sample(rng),
            NoiseLaw::Rademacher => {
                if rng.gen::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            NoiseLaw::StudentT { df } => {
                let x: f64 = StudentT::new(df).expect("validated df").sample(rng);
                x * ((df - 2.0) / df).sqrt()
            }
        }
    }
}

/// Law of the per-curve observation counts `M_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MLaw {
    Fixed { m: usize },
    /// Uniform on `{min, ..., max}`.
    Uniform { min: usize, max: usize },
}

impl MLaw {
    pub fn validate(&self) -> Result<()> {
        match *self {
            MLaw::Fixed { m } if m >= 1 => Ok(()),
            MLaw::Uniform { min, max } if min >= 1 && min <= max => Ok(()),
            _ => Err(FdaError::invalid("m_law", "counts must be >= 1 with min <= max")),
        }
    }

    pub fn sample_sizes(&self, n_curves: usize, seed: u64) -> Vec<usize> {
        match *self {
            MLaw::Fixed { m } => vec![m; n_curves],
            MLaw::Uniform { min, max } => (0..n_curves)
                .map(|i| {
                    let mut rng = rng::stream(seed, stage::CURVE_SIZES, i as u64);
                    Uniform::new_inclusive(min, max).sample(&mut rng)
                })
                .collect(),
        }
    }
}

/// Everything needed to generate a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    pub dim: usize,
    pub n_curves: usize,
    pub m_law: MLaw,
    pub mean: MeanSpec,
    pub covariance: CovarianceSpec,
    pub noise: NoiseSpec,
    pub density: DesignDensity,
    #[serde(default = "default_truth")]
    pub truth: bool,
}

fn default_truth() -> bool {
    true
}

impl SimulationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim > 3 {
            return Err(FdaError::invalid("dim", "must be 1, 2 or 3"));
        }
        if self.n_curves == 0 {
            return Err(FdaError::invalid("n_curves", "must be at least 1"));
        }
        if self.density.dim != self.dim {
            return Err(FdaError::invalid("density.dim", "must equal dim"));
        }
        self.m_law.validate()?;
        self.mean.validate(self.dim)?;
        self.covariance.validate()?;
        self.noise.validate()
    }
}

/// One subject: `M_i` locations (flat, `dim` per point) and responses.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub t: Vec<f64>,
    pub y: Vec<f64>,
}

impl Curve {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Latent values and noise at the design points, plus the mean on a dense grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub grid_per_axis: usize,
    pub mu: Vec<f64>,
    pub latent: Vec<Vec<f64>>,
    pub noise: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct DatasetMeta {
    pub seed: Option<u64>,
    pub spec: Option<SimulationSpec>,
    #[serde(default)]
    pub flags: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FunctionalDataset {
    dim: usize,
    curves: Vec<Curve>,
    pub truth: Option<Truth>,
    pub meta: DatasetMeta,
}

impl FunctionalDataset {
    pub fn new(dim: usize, curves: Vec<Curve>) -> Result<Self> {
        if dim == 0 {
            return Err(FdaError::invalid("D", "dimension must be at least 1"));
        }
        for c in &curves {
            if c.t.len() != c.y.len() * dim {
                return Err(FdaError::LengthMismatch {
                    expected: c.y.len() * dim,
                    got: c.t.len(),
                });
            }
            if let Some(p) = c.t.chunks_exact(dim).find(|p| p.iter().any(|x| !(0.0..=1.0).contains(x))) {
                return Err(FdaError::OutOfDomain(p.to_vec()));
            }
            if c.y.iter().any(|y| !y.is_finite()) {
                return Err(FdaError::Numerical("non-finite response".into()));
            }
        }
        let total: usize = curves.iter().map(Curve::len).sum();
        if total < 4 {
            return Err(FdaError::TooFewPoints { needed: 4, got: total });
        }
        Ok(FunctionalDataset {
            dim,
            curves,
            truth: None,
            meta: DatasetMeta::default(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn curves(&self) -> &[Curve] {
        &self.curves
    }

    pub fn n_curves(&self) -> usize {
        self.curves.len()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.curves.iter().map(Curve::len).collect()
    }

    /// `M_bar = sum_i M_i`.
    pub fn m_bar(&self) -> usize {
        self.curves.iter().map(Curve::len).sum()
    }

    /// `sum_i M_i (M_i - 1)`.
    pub fn pair_count(&self) -> f64 {
        self.curves.iter().map(|c| (c.len() * c.len().saturating_sub(1)) as f64).sum()
    }

    /// Pooled locations with `(i, m)` identity, curve-major order.
    pub fn pooled_design(&self) -> Result<PooledDesign> {
        let mut points = Vec::with_capacity(self.m_bar() * self.dim);
        let mut ids = Vec::with_capacity(self.m_bar());
        for (i, c) in self.curves.iter().enumerate() {
            points.extend_from_slice(&c.t);
            ids.extend((0..c.len()).map(|m| (i, m)));
        }
        PooledDesign::new(self.dim, points, ids)
    }

    /// Responses in the order of [`pooled_design`](Self::pooled_design).
    pub fn pooled_responses(&self) -> Vec<f64> {
        self.curves.iter().flat_map(|c| c.y.iter().copied()).collect()
    }

    /// Subset keeping the listed `(curve, positions)`; curves left empty are dropped.
    pub fn subset(&self, keep: &[(usize, Vec<usize>)]) -> Result<FunctionalDataset> {
        let d = self.dim;
        let curves = keep
            .iter()
            .filter(|(_, ms)| !ms.is_empty())
            .map(|(i, ms)| {
                let c = &self.curves[*i];
                Curve {
                    t: ms.iter().flat_map(|&m| c.t[m * d..(m + 1) * d].iter().copied()).collect(),
                    y: ms.iter().map(|&m| c.y[m]).collect(),
                }
            })
            .collect();
        FunctionalDataset::new(d, curves)
    }

    /// Writes `curve,m,t_1..t_D,y`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header: Vec<String> = (1..=self.dim).map(|d| format!("t_{d}")).collect();
        writeln!(w, "curve,m,{},y", header.join(","))?;
        for (i, c) in self.curves.iter().enumerate() {
            for m in 0..c.len() {
                let t: Vec<String> = c.t[m * self.dim..(m + 1) * self.dim].iter().map(|x| x.to_string()).collect();
                writeln!(w, "{i},{m},{},{}", t.join(","), c.y[m])?;
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        let curves: Vec<serde_json::Value> = self
            .curves
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let t: Vec<&[f64]> = c.t.chunks_exact(self.dim).collect();
                serde_json::json!({"i": i, "t": t, "y": c.y})
            })
            .collect();
        let mut out = serde_json::json!({
            "meta": {
                "D": self.dim,
                "N": self.curves.len(),
                "seed": self.meta.seed,
                "specs": self.meta.spec,
                "flags": self.meta.flags,
            },
            "curves": curves,
        });
        if let Some(truth) = &self.truth {
            out["truth"] = serde_json::to_value(truth).expect("plain data");
        }
        out
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let bad = |what: &str| FdaError::invalid("dataset", format!("malformed dataset: {what}"));
        #[derive(Deserialize)]
        struct RawMeta {
            #[serde(rename = "D")]
            dim: usize,
            seed: Option<u64>,
            specs: Option<SimulationSpec>,
            #[serde(default)]
            flags: Vec<String>,
        }
        #[derive(Deserialize)]
        struct RawCurve {
            t: Vec<Vec<f64>>,
            y: Vec<f64>,
        }
        let meta: RawMeta = serde_json::from_value(value.get("meta").cloned().ok_or_else(|| bad("missing meta"))?)
            .map_err(|e| bad(&e.to_string()))?;
        let raw: Vec<RawCurve> =
            serde_json::from_value(value.get("curves").cloned().ok_or_else(|| bad("missing curves"))?)
                .map_err(|e| bad(&e.to_string()))?;
        let mut curves = Vec::with_capacity(raw.len());
        for c in raw {
            if c.t.iter().any(|p| p.len() != meta.dim) {
                return Err(bad("location with wrong dimension"));
            }
            curves.push(Curve {
                t: c.t.into_iter().flatten().collect(),
                y: c.y,
            });
        }
        let mut ds = FunctionalDataset::new(meta.dim, curves)?;
        ds.meta = DatasetMeta {
            seed: meta.seed,
            spec: meta.specs,
            flags: meta.flags,
        };
        if let Some(t) = value.get("truth") {
            ds.truth = Some(serde_json::from_value(t.clone()).map_err(|e| bad(&e.to_string()))?);
        }
        Ok(ds)
    }
}

/// Per-curve i.i.d. locations from `density`.
pub fn sample_design(sizes: &[usize], density: &DesignDensity, seed: u64) -> Vec<Vec<f64>> {
    let dim = density.dim;
    sizes
        .par_iter()
        .enumerate()
        .map(|(i, &m)| {
            let mut rng = rng::stream(seed, stage::DESIGN, i as u64);
            let mut t = vec![0.0; m * dim];
            for p in t.chunks_exact_mut(dim) {
                density.sample(&mut rng, p);
            }
            t
        })
        .collect()
}

const JITTER_LADDER: [f64; 3] = [1e-10, 1e-8, 1e-6];

/// Lower Cholesky factor of `gram + jitter I`, escalating the jitter on failure.
pub fn factor_gram(gram: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = gram.nrows();
    let scale = (0..n).map(|i| gram[(i, i)]).fold(0.0f64, f64::max).max(1.0);
    for &jitter in &JITTER_LADDER {
        let mut g = gram.clone();
        for i in 0..n {
            g[(i, i)] += jitter * scale;
        }
        if let Some(ch) = g.cholesky() {
            return Ok(ch.l());
        }
    }
    Err(FdaError::DegenerateCovariance {
        jitter: JITTER_LADDER[2],
    })
}

/// Latent values `X_i(T_{i,m})`, Gaussian per curve with mean `mu` and covariance `gamma`.
pub fn sample_paths(
    dim: usize,
    mean: &MeanSpec,
    cov: &CovarianceSpec,
    designs: &[Vec<f64>],
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    designs
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let m = t.len() / dim;
            let mut x: Vec<f64> = t.chunks_exact(dim).map(|p| mean.eval(p)).collect();
            if cov.is_zero() || m == 0 {
                return Ok(x);
            }
            let gram = DMatrix::from_fn(m, m, |a, b| cov.eval(&t[a * dim..(a + 1) * dim], &t[b * dim..(b + 1) * dim]));
            let l = factor_gram(gram)?;
            let mut rng = rng::stream(seed, stage::PATHS, i as u64);
            let z = DVector::from_fn(m, |_, _| StandardNormal.sample(&mut rng));
            let path = l * z;
            for (xv, pv) in x.iter_mut().zip(path.iter()) {
                *xv += pv;
            }
            Ok(x)
        })
        .collect()
}

/// Adds `sigma(T) e` to the latent values. Returns responses and the noise as stored.
pub fn observe(
    dim: usize,
    designs: &[Vec<f64>],
    latent: &[Vec<f64>],
    noise: &NoiseSpec,
    seed: u64,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    designs
        .par_iter()
        .zip(latent)
        .enumerate()
        .map(|(i, (t, x))| {
            let mut rng = rng::stream(seed, stage::NOISE, i as u64);
            let y: Vec<f64> = t
                .chunks_exact(dim)
                .zip(x)
                .map(|(p, &xv)| {
                    let s = noise.sigma.eval(p);
                    let e = noise.draw(&mut rng);
                    xv + s * e
                })
                .collect();
            // stored so that y - x - eps == 0 exactly
            let eps = y.iter().zip(x).map(|(a, b)| a - b).collect();
            (y, eps)
        })
        .unzip()
}

/// Default evaluation grid per axis for L2 errors.
pub fn default_grid(dim: usize) -> usize {
    match dim {
        1 => 512,
        2 => 64,
        _ => 16,
    }
}

/// Midpoints of a regular grid with `per_axis` cells per axis, first axis fastest.
pub fn midpoint_grid(dim: usize, per_axis: usize) -> Vec<f64> {
    let total = per_axis.pow(dim as u32);
    let mut out = Vec::with_capacity(total * dim);
    for flat in 0..total {
        let mut r = flat;
        for _ in 0..dim {
            out.push(((r % per_axis) as f64 + 0.5) / per_axis as f64);
            r /= per_axis;
        }
    }
    out
}

/// Runs the whole generator.
pub fn simulate(spec: &SimulationSpec, seed: u64) -> Result<FunctionalDataset> {
    spec.validate()?;
    let dim = spec.dim;
    let sizes = spec.m_law.sample_sizes(spec.n_curves, seed);
    let designs = sample_design(&sizes, &spec.density, seed);
    let latent = sample_paths(dim, &spec.mean, &spec.covariance, &designs, seed)?;
    let (y, eps) = observe(dim, &designs, &latent, &spec.noise, seed);
    let curves = designs.into_iter().zip(y).map(|(t, y)| Curve { t, y }).collect();
    let mut ds = FunctionalDataset::new(dim, curves)?;
    if spec.truth {
        let g = default_grid(dim);
        let grid = midpoint_grid(dim, g);
        ds.truth = Some(Truth {
            grid_per_axis: g,
            mu: grid.chunks_exact(dim).map(|p| spec.mean.eval(p)).collect(),
            latent,
            noise: eps,
        });
    }
    let mut flags = Vec::new();
    if !spec.noise.sub_gaussian() {
        flags.push("outside D6: noise law is not sub-Gaussian".to_string());
    }
    ds.meta = DatasetMeta {
        seed: Some(seed),
        spec: Some(spec.clone()),
        flags,
    };
    Ok(ds)
}

/// Midpoint-rule approximation of `||est - truth||_2^2` on `[0,1]^dim`.
pub fn empirical_l2_error<F, G>(estimate: F, truth: G, dim: usize, per_axis: usize) -> f64
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> f64 + Sync,
{
    let grid = midpoint_grid(dim, per_axis);
    let total = grid.len() / dim;
    let sum = ordered_sum(total, |i| {
        let p = &grid[i * dim..(i + 1) * dim];
        let d = estimate(p) - truth(p);
        d * d
    });
    sum / total as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::DensityKind;

    fn spec_1d(mean: MeanSpec, cov: CovarianceSpec, noise: NoiseSpec, n: usize, m: usize) -> SimulationSpec {
        SimulationSpec {
            dim: 1,
            n_curves: n,
            m_law: MLaw::Fixed { m },
            mean,
            covariance: cov,
            noise,
            density: DesignDensity::uniform(1),
            truth: true,
        }
    }

    #[test]
    fn design_counts_and_domain() {
        let d = sample_design(&[7], &DesignDensity::uniform(2), 1);
        assert_eq!(d[0].len(), 14);
        assert!(d[0].iter().all(|x| (0.0..=1.0).contains(x)));
    }

    #[test]
    fn beta_design_mean() {
        let density = DesignDensity::new(2, DensityKind::ProductBeta { a: 2.0, b: 2.0 }).unwrap();
        let d = sample_design(&vec![100; 1000], &density, 3);
        let pooled: Vec<f64> = d.concat();
        for axis in 0..2 {
            let m: f64 = pooled.iter().skip(axis).step_by(2).sum::<f64>() / 1e5;
            assert!((m - 0.5).abs() < 0.005);
        }
    }

    #[test]
    fn determinism_and_stream_isolation() {
        let spec = spec_1d(
            MeanSpec::Weierstrass {
                alpha: 0.5,
                j_max: 8,
                amplitude: 1.0,
            },
            CovarianceSpec::Fbm {
                hurst: 0.5,
                variance: 1.0,
            },
            NoiseSpec::gaussian(0.3),
            20,
            6,
        );
        let a = simulate(&spec, 42).unwrap();
        let b = simulate(&spec, 42).unwrap();
        assert_eq!(a, b);
        let mut more = spec.clone();
        more.n_curves = 25;
        let c = simulate(&more, 42).unwrap();
        assert_eq!(&c.curves()[..20], a.curves());
    }

    #[test]
    fn zero_covariance_reproduces_mean() {
        let mean = MeanSpec::Weierstrass {
            alpha: 0.3,
            j_max: 10,
            amplitude: 2.0,
        };
        let spec = spec_1d(mean.clone(), CovarianceSpec::Zero, NoiseSpec::none(), 5, 10);
        let ds = simulate(&spec, 1).unwrap();
        for c in ds.curves() {
            for (t, y) in c.t.iter().zip(&c.y) {
                assert!((mean.eval(&[*t]) - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn weierstrass_formula() {
        let mean = MeanSpec::Weierstrass {
            alpha: 0.5,
            j_max: 3,
            amplitude: 1.0,
        };
        let t = [0.1, 0.35];
        let mut want = 0.0;
        for j in 1..=3 {
            let f = std::f64::consts::TAU * 2f64.powi(j);
            want += 2f64.powf(-0.5 * j as f64) * ((f * 0.1).cos() * (f * 0.35).cos());
        }
        assert_eq!(mean.eval(&t), want);
    }

    #[test]
    fn fbm_covariance_recovered() {
        let cov = CovarianceSpec::Fbm {
            hurst: 0.5,
            variance: 1.0,
        };
        assert!((cov.eval(&[0.25], &[0.75]) - 0.25).abs() < 1e-15);
        let designs: Vec<Vec<f64>> = vec![vec![0.25, 0.75]; 20_000];
        let x = sample_paths(1, &MeanSpec::Zero, &cov, &designs, 9).unwrap();
        let c = x.iter().map(|v| v[0] * v[1]).sum::<f64>() / 20_000.0;
        assert!((c - 0.25).abs() < 0.01, "{c}");
    }

    #[test]
    fn covariance_symmetric_and_psd() {
        let mut rng = rng::stream(4, 0, 0);
        let pts: Vec<f64> = (0..40).map(|_| rng.gen()).collect();
        for cov in [
            CovarianceSpec::Exponential {
                scale: 0.3,
                variance: 1.0,
            },
            CovarianceSpec::Matern32 {
                scale: 0.2,
                variance: 2.0,
            },
            CovarianceSpec::Fbm {
                hurst: 0.7,
                variance: 1.0,
            },
        ] {
            let g = DMatrix::from_fn(20, 20, |a, b| cov.eval(&pts[2 * a..2 * a + 2], &pts[2 * b..2 * b + 2]));
            assert!((&g - g.transpose()).amax() < 1e-15);
            let ev = g.symmetric_eigenvalues();
            assert!(ev.min() >= -1e-8);
        }
    }

    #[test]
    fn degenerate_gram_reported() {
        let gram = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(factor_gram(gram), Err(FdaError::DegenerateCovariance { .. })));
        // rank one Gram matrix is rescued by jitter
        let gram = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(factor_gram(gram).is_ok());
    }

    #[test]
    fn noise_variance_and_truth_invariant() {
        let spec = spec_1d(MeanSpec::Zero, CovarianceSpec::Zero, NoiseSpec::gaussian(1.0), 1000, 100);
        let ds = simulate(&spec, 5).unwrap();
        let truth = ds.truth.as_ref().unwrap();
        let mut s = 0.0;
        let mut s2 = 0.0;
        for (i, c) in ds.curves().iter().enumerate() {
            for m in 0..c.len() {
                assert_eq!(c.y[m] - truth.latent[i][m] - truth.noise[i][m], 0.0);
                let r = c.y[m] - truth.latent[i][m];
                s += r;
                s2 += r * r;
            }
        }
        let var = s2 / 1e5 - (s / 1e5).powi(2);
        assert!((var - 1.0).abs() < 0.02, "{var}");
    }

    #[test]
    fn unit_variance_laws() {
        for law in [NoiseLaw::Rademacher, NoiseLaw::StudentT { df: 6.0 }] {
            let noise = NoiseSpec {
                sigma: SigmaSpec::Constant { value: 1.0 },
                law,
            };
            let mut rng = rng::stream(1, 0, 0);
            let v: f64 = (0..200_000).map(|_| noise.draw(&mut rng).powi(2)).sum::<f64>() / 2e5;
            assert!((v - 1.0).abs() < 0.03, "{v}");
        }
    }

    #[test]
    fn heteroscedastic_slope() {
        let noise = NoiseSpec {
            sigma: SigmaSpec::Linear {
                intercept: 0.5,
                slope: 0.5,
            },
            law: NoiseLaw::Gaussian,
        };
        let spec = spec_1d(MeanSpec::Zero, CovarianceSpec::Zero, noise.clone(), 2000, 100);
        let ds = simulate(&spec, 8).unwrap();
        // regress r^2 on sigma^2(T) through the origin
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for c in ds.curves() {
            for (t, y) in c.t.iter().zip(&c.y) {
                let s2 = noise.sigma.eval(&[*t]).powi(2);
                sxy += s2 * y * y;
                sxx += s2 * s2;
            }
        }
        assert!((sxy / sxx - 1.0).abs() < 0.05);
    }

    #[test]
    fn student_t_flagged() {
        let noise = NoiseSpec {
            sigma: SigmaSpec::Constant { value: 1.0 },
            law: NoiseLaw::StudentT { df: 5.0 },
        };
        let ds = simulate(&spec_1d(MeanSpec::Zero, CovarianceSpec::Zero, noise, 3, 3), 1).unwrap();
        assert!(ds.meta.flags.iter().any(|f| f.contains("outside D6")));
    }

    #[test]
    fn l2_error_examples() {
        assert_eq!(empirical_l2_error(|t| t[0], |t| t[0], 1, 512), 0.0);
        assert!((empirical_l2_error(|_| 0.0, |_| 1.5, 2, 64) - 2.25).abs() < 1e-12);
        let phi1 = |t: &[f64]| basis_eval(&MultiIndex::new(vec![1]), t).unwrap();
        assert!((empirical_l2_error(|_| 0.0, phi1, 1, 512) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn json_round_trip() {
        let spec = spec_1d(MeanSpec::Constant { value: 1.0 }, CovarianceSpec::Zero, NoiseSpec::gaussian(0.1), 4, 3);
        let ds = simulate(&spec, 3).unwrap();
        let back = FunctionalDataset::from_json(&ds.to_json()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn validation_names_fields() {
        let bad = MeanSpec::Weierstrass {
            alpha: 1.5,
            j_max: 5,
            amplitude: 1.0,
        };
        match bad.validate(1) {
            Err(FdaError::InvalidParameter { name, .. }) => assert_eq!(name, "mean.alpha"),
            other => panic!("{other:?}"),
        }
    }
}
