//! Command implementations behind the `fdavp` binary.

pub mod bench;
pub mod config;
pub mod error;

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use fdavp_core::estimate::{self, fit_mean, K1Choice, ModelFile};
use fdavp_core::fourier::vp_eval_many;
use fdavp_core::inference::{
    pointwise_band, rates, sigma_matrix_oracle, sigma_matrix_plugin, subsampling_bands, undersmoothed_level,
    uniform_band_gaussian, BandMethod, BandResult, GaussianBandConfig, OracleInputs, SigmaMatrix, SigmaMode,
    SubsamplingConfig,
};
use fdavp_core::regularity::regularity_report;
use fdavp_core::rng::{derive_seed, stage};
use fdavp_core::simulate::{midpoint_grid, simulate, FunctionalDataset};
use fdavp_core::design::{DesignDensity, WeightConfig};
use fdavp_core::fourier::FourierModel;
use serde_json::{json, Value};

pub use config::ExperimentConfig;
use config::{require, Centering, InferConfig};
pub use error::{CliError, CliResult};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Estimate,
    Infer,
    Regularity,
    Bench,
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub config: PathBuf,
    pub out: PathBuf,
    pub data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

/// `{name, version}` stamped into every artifact.
pub fn tool_stamp() -> Value {
    json!({"name": "fdavp", "version": VERSION})
}

/// Runs `cmd` on a pool of `opts.threads` workers (all cores when unset).
pub fn run(cmd: Command, opts: &RunOptions) -> CliResult<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = opts.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Config(format!("cannot build thread pool: {e}")))?;
    let cfg = ExperimentConfig::load(&opts.config)?;
    let seed = opts.seed.or(cfg.seed).unwrap_or(0);
    pool.install(|| match cmd {
        Command::Simulate => cmd_simulate(&cfg, seed, &opts.out),
        Command::Estimate => cmd_estimate(&cfg, seed, need(&opts.data, "--data")?, &opts.out),
        Command::Infer => cmd_infer(&cfg, seed, need(&opts.data, "--data")?, opts.model.as_deref(), &opts.out),
        Command::Regularity => cmd_regularity(&cfg, seed, need(&opts.data, "--data")?, &opts.out),
        Command::Bench => bench::cmd_bench(&cfg, seed, &opts.out).map(|_| ()),
    })
}

fn need<'a>(p: &'a Option<PathBuf>, flag: &str) -> CliResult<&'a Path> {
    p.as_deref()
        .ok_or_else(|| CliError::Config(format!("this command needs {flag}")))
}

pub(crate) fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub(crate) fn write_json(path: &Path, value: &Value) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_text(path, &text)
}

fn read_json(path: &Path) -> CliResult<Value> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Io(format!("{}: not valid JSON: {e}", path.display())))
}

fn write_band(path: &Path, band: &BandResult) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    band.write_csv(BufWriter::new(f)).map_err(|e| CliError::io(path, e))
}

/// `out` with `suffix` appended to the file name.
fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn load_dataset(path: &Path) -> CliResult<FunctionalDataset> {
    let v = read_json(path)?;
    FunctionalDataset::from_json(&v).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn cmd_simulate(cfg: &ExperimentConfig, seed: u64, out: &Path) -> CliResult<()> {
    let spec = require(&cfg.simulate, "simulate")?;
    spec.validate().map_err(|e| CliError::from_core("simulate", e))?;
    let data = simulate(spec, seed).map_err(|e| CliError::from_core("simulate", e))?;
    let mut v = data.to_json();
    v["tool"] = tool_stamp();
    v["config"] = cfg.resolved(seed);
    write_json(out, &v)
}

pub fn cmd_estimate(cfg: &ExperimentConfig, seed: u64, data_path: &Path, out: &Path) -> CliResult<()> {
    let mut est = require(&cfg.estimate, "estimate")?.clone();
    est.weights.seed = seed;
    let data = load_dataset(data_path)?;
    check_dim(&est.density, &data, "estimate.density")?;
    let fit = fit_mean(&data, &est).map_err(|e| CliError::from_core("estimate", e))?;
    let mut resolved = cfg.clone();
    resolved.estimate = Some(est);
    let resolved = resolved.resolved(seed);
    let model_file = ModelFile::new(&fit.model, Some(fit.weights.meta.clone()), resolved.clone());
    let mut v = json!({
        "tool": tool_stamp(),
        "seed": seed,
        "config": resolved,
        "data": data_path.display().to_string(),
        "L": fit.level,
        "K1": fit.k1,
        "rho": fit.rho,
        "model": model_file,
    });
    if let Some(truth) = &data.truth {
        let grid = midpoint_grid(data.dim(), truth.grid_per_axis);
        let fitted = vp_eval_many(&fit.model, &grid).map_err(|e| CliError::from_core("estimate", e))?;
        let err = fitted.iter().zip(&truth.mu).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / fitted.len() as f64;
        v["risk"] = json!({"l2_error": err, "grid_per_axis": truth.grid_per_axis});
    }
    write_json(out, &v)
}

fn check_dim(density: &DesignDensity, data: &FunctionalDataset, field: &str) -> CliResult<()> {
    if density.dim != data.dim() {
        return Err(CliError::Config(format!(
            "{field}: dimension {} does not match the dataset's {}",
            density.dim,
            data.dim()
        )));
    }
    Ok(())
}

/// Reads the fitted model out of an `estimate` output (or a bare model file).
pub fn load_model(path: &Path) -> CliResult<FourierModel> {
    let v = read_json(path)?;
    let m = v.get("model").cloned().unwrap_or(v);
    let file: ModelFile =
        serde_json::from_value(m).map_err(|e| CliError::Config(format!("{}: not a model file: {e}", path.display())))?;
    file.to_model().map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn sigma_for(
    infer: &InferConfig,
    data: &FunctionalDataset,
    level: usize,
    weights: &WeightConfig,
) -> CliResult<SigmaMatrix> {
    let g = &infer.gaussian;
    let r = match g.sigma {
        SigmaMode::PlugIn => sigma_matrix_plugin(data, &infer.density, level, weights, g.rho, g.quadrature),
        SigmaMode::Oracle => {
            let spec = data.meta.spec.as_ref().ok_or_else(|| {
                CliError::Config("infer.gaussian.sigma: oracle needs a simulated dataset carrying its specs".into())
            })?;
            let sigma2 = |t: &[f64]| spec.noise.sigma.eval(t).powi(2);
            let gamma = |s: &[f64], t: &[f64]| spec.covariance.eval(s, t);
            let inputs = OracleInputs {
                sigma2: &sigma2,
                gamma: &gamma,
                gamma_is_zero: spec.covariance.is_zero(),
            };
            sigma_matrix_oracle(&data.sizes(), &infer.density, level, &inputs, g.rho, g.quadrature)
        }
    };
    r.map_err(|e| CliError::from_core("infer", e))
}

pub fn cmd_infer(
    cfg: &ExperimentConfig,
    seed: u64,
    data_path: &Path,
    model_path: Option<&Path>,
    out: &Path,
) -> CliResult<()> {
    let infer = require(&cfg.infer, "infer")?;
    if !(0.0..1.0).contains(&infer.level) {
        return Err(CliError::Config("infer.level: must be in [0, 1)".into()));
    }
    let data = load_dataset(data_path)?;
    check_dim(&infer.density, &data, "infer.density")?;
    let weights = WeightConfig {
        seed,
        ..infer.weights.clone()
    };
    let sizes = data.sizes();
    let per_axis = infer.grid.unwrap_or_else(|| fdavp_core::simulate::default_grid(data.dim()));
    let (band, pointwise, extra) = match infer.method {
        BandMethod::Gaussian => {
            let (model, undersmoothed) = match &infer.gaussian.centering {
                Centering::Vp => {
                    let p = model_path.ok_or_else(|| CliError::Config("gaussian bands need --model".into()))?;
                    (load_model(p)?, false)
                }
                Centering::Mean { alpha } => {
                    if !(*alpha > 0.0) {
                        return Err(CliError::Config("infer.gaussian.centering.mean.alpha: must be positive".into()));
                    }
                    let level = undersmoothed_level(data.m_bar() as f64, *alpha, data.dim());
                    let design = data.pooled_design().map_err(|e| CliError::from_core("infer", e))?;
                    let w = fdavp_core::design::weights(&design, &infer.density, &weights)
                        .map_err(|e| CliError::from_core("infer", e))?;
                    let m = estimate::fourier_coefficients_with(&data, &design, &infer.density, level, &w)
                        .map_err(|e| CliError::from_core("infer", e))?;
                    (m, true)
                }
            };
            if model.dim() != data.dim() {
                return Err(CliError::Config("model and dataset dimensions differ".into()));
            }
            let sigma = sigma_for(infer, &data, model.level(), &weights)?;
            let band_cfg = GaussianBandConfig {
                level: infer.level,
                grid: Some(per_axis),
                n_draws: infer.gaussian.n_draws,
                seed: derive_seed(seed, stage::GAUSSIAN_DRAWS, 0),
                refinement: infer.gaussian.refinement,
            };
            let mut band =
                uniform_band_gaussian(&model, &sigma, &band_cfg, &sizes).map_err(|e| CliError::from_core("infer", e))?;
            if undersmoothed {
                band.undersmoothed = true;
                band.flags.push("centred at the mean function (undersmoothed level)".into());
            }
            let pw = pointwise_band(&model, &sigma, infer.level, per_axis, &sizes)
                .map_err(|e| CliError::from_core("infer", e))?;
            let (r1, r2) = rates(&sizes, data.dim(), model.level());
            let extra = json!({
                "sigma_mode": sigma.mode,
                "rho": sigma.rho,
                "psd_projection": sigma.projection,
                "r1": r1,
                "r2": r2,
            });
            (band, pw, extra)
        }
        BandMethod::Subsampling => {
            let s = require(&infer.subsampling, "infer.subsampling")?;
            let sc = SubsamplingConfig {
                alpha: s.alpha,
                c_vp: s.c_vp,
                k1: s.k1,
                rho: s.rho,
                level: infer.level,
                n_subsamples: s.n_subsamples,
                vartheta: s.vartheta.clone(),
                scheme: s.scheme,
                grid: Some(per_axis),
                seed,
            };
            let res = subsampling_bands(&data, &infer.density, &sc).map_err(|e| CliError::from_core("infer", e))?;
            let mut pw = res.band.clone();
            pw.lower = res.pointwise_lower.clone();
            pw.upper = res.pointwise_upper.clone();
            pw.flags = vec!["pointwise".into()];
            let extra = json!({"tau_full": res.tau_full, "n_subsamples": s.n_subsamples});
            (res.band, pw, extra)
        }
    };
    write_band(out, &band)?;
    let pw_path = sibling(out, ".pointwise.csv");
    write_band(&pw_path, &pointwise)?;
    let side = json!({
        "tool": tool_stamp(),
        "seed": seed,
        "config": cfg.resolved(seed),
        "data": data_path.display().to_string(),
        "model": model_path.map(|p| p.display().to_string()),
        "band": band.sidecar(),
        "method_details": extra,
        "pointwise_csv": pw_path.display().to_string(),
    });
    write_json(&sibling(out, ".json"), &side)
}

pub fn cmd_regularity(cfg: &ExperimentConfig, seed: u64, data_path: &Path, out: &Path) -> CliResult<()> {
    let block = require(&cfg.regularity, "regularity")?;
    let data = load_dataset(data_path)?;
    let k1 = match &block.k1 {
        None => None,
        Some(K1Choice::Value(v)) if *v > 0.0 => Some(*v),
        Some(K1Choice::Named(s)) if s == "plug-in" => {
            let density = block.density.clone().unwrap_or_else(|| DesignDensity::uniform(data.dim()));
            check_dim(&density, &data, "regularity.density")?;
            let v = estimate::estimate_k1(&data, &density, None, &WeightConfig::with_seed(seed))
                .map_err(|e| CliError::from_core("regularity", e))?;
            Some(v)
        }
        Some(other) => {
            return Err(CliError::Config(format!(
                "regularity.K1: expected a positive number or \"plug-in\", got {other:?}"
            )))
        }
    };
    let est = regularity_report(&data, &block.tuning(), k1, block.c_vp).map_err(|e| CliError::from_core("regularity", e))?;
    let mut v = serde_json::to_value(&est).expect("plain data");
    v["tool"] = tool_stamp();
    v["seed"] = seed.into();
    v["config"] = cfg.resolved(seed);
    v["data"] = data_path.display().to_string().into();
    v["K1"] = json!(k1);
    write_json(out, &v)
}
