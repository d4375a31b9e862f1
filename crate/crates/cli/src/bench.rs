//! Replication runner: one CSV per replication, then an aggregate table and a summary.
//!
//! Replication `r` uses the seed `derive_seed(root, REPLICATION, r)` at every
//! sweep point, so sweep points share their random inputs. Files that already
//! hold a complete row are kept, which makes an interrupted run resumable.

use std::fs;
use std::path::{Path, PathBuf};

use fdavp_core::experiments::Experiment;
use fdavp_core::rng::{derive_seed, stage};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::config::{require, ExperimentConfig};
use crate::error::{CliError, CliResult};
use crate::{tool_stamp, write_json, write_text};

/// Seed of replication `r` under root seed `root`.
pub fn replication_seed(root: u64, r: usize) -> u64 {
    derive_seed(root, stage::REPLICATION, r as u64)
}

/// File name of replication `r` at sweep point `p`.
pub fn replication_file(p: usize, r: usize, seed: u64) -> String {
    format!("p{p:03}_r{r:05}_{seed:016x}.csv")
}

#[derive(Clone, Debug, Serialize)]
pub struct PointSummary {
    pub value: f64,
    pub reps: usize,
    pub mean: Map<String, Value>,
    pub se: Map<String, Value>,
}

/// Mean and standard error (`sd / sqrt(n)`, `sd` with `n - 1`).
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Least-squares slope and intercept of `ln y` on `ln x`.
pub fn log_log_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    if x.len() < 2 || x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

fn fmt(v: f64) -> String {
    format!("{v:?}")
}

fn read_row(path: &Path, header: &str) -> Option<Vec<f64>> {
    let text = fs::read_to_string(path).ok()?;
    let mut lines = text.lines();
    if lines.next()? != header {
        return None;
    }
    let row = lines.next()?;
    row.split(',').map(|s| s.parse::<f64>().ok()).collect()
}

/// Runs the bench block into `out_dir` and returns the summary.
pub fn cmd_bench(cfg: &ExperimentConfig, seed: u64, out_dir: &Path) -> CliResult<Value> {
    let bench = require(&cfg.bench, "bench")?;
    if bench.replications == 0 {
        return Err(CliError::Config("bench.replications: must be at least 1".into()));
    }
    let (var_name, points): (&str, Vec<(f64, Experiment)>) = match &bench.sweep {
        Some(s) => {
            if s.values.is_empty() {
                return Err(CliError::Config("bench.sweep.values: must not be empty".into()));
            }
            let pts = s
                .values
                .iter()
                .map(|&v| {
                    bench
                        .experiment
                        .with_sweep(s.variable, v)
                        .map(|e| (v, e))
                        .map_err(|e| CliError::from_core("bench.sweep", e))
                })
                .collect::<CliResult<_>>()?;
            (s.variable.name(), pts)
        }
        None => {
            bench
                .experiment
                .validate()
                .map_err(|e| CliError::from_core("bench.experiment", e))?;
            ("point", vec![(0.0, bench.experiment.clone())])
        }
    };
    let metrics = points[0].1.metric_names();
    let header = format!("point,{var_name},replication,seed,{}", metrics.join(","));
    let rep_dir = out_dir.join("replications");
    fs::create_dir_all(&rep_dir).map_err(|e| CliError::io(&rep_dir, e))?;

    let jobs: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|p| (0..bench.replications).map(move |r| (p, r)))
        .collect();
    let file_of = |p: usize, r: usize| -> PathBuf { rep_dir.join(replication_file(p, r, replication_seed(seed, r))) };
    let done: Vec<CliResult<bool>> = jobs
        .par_iter()
        .map(|&(p, r)| {
            let path = file_of(p, r);
            if read_row(&path, &header).is_some() {
                return Ok(false);
            }
            let s = replication_seed(seed, r);
            let m = points[p].1.run(s).map_err(|e| CliError::from_core("bench", e))?;
            let mut line = format!("{p},{},{r},{s}", fmt(points[p].0));
            for (_, v) in &m {
                line.push(',');
                line.push_str(&fmt(*v));
            }
            let tmp = path.with_extension("csv.tmp");
            write_text(&tmp, &format!("{header}\n{line}\n"))?;
            fs::rename(&tmp, &path).map_err(|e| CliError::io(&path, e))?;
            Ok(true)
        })
        .collect();
    let mut computed = 0;
    for d in done {
        computed += usize::from(d?);
    }

    // aggregate from the files themselves
    let mut summaries = Vec::with_capacity(points.len());
    let mut agg = format!("{var_name},reps");
    for m in &metrics {
        agg.push_str(&format!(",mean_{m},se_{m}"));
    }
    agg.push('\n');
    for (p, (value, _)) in points.iter().enumerate() {
        let rows: Vec<Vec<f64>> = (0..bench.replications)
            .map(|r| {
                let path = file_of(p, r);
                read_row(&path, &header).ok_or_else(|| CliError::Io(format!("{}: unreadable replication", path.display())))
            })
            .collect::<CliResult<_>>()?;
        let mut mean = Map::new();
        let mut se = Map::new();
        agg.push_str(&format!("{},{}", fmt(*value), rows.len()));
        for (k, m) in metrics.iter().enumerate() {
            let col: Vec<f64> = rows.iter().map(|row| row[4 + k]).collect();
            let (mu, s) = mean_se(&col);
            agg.push_str(&format!(",{},{}", fmt(mu), fmt(s)));
            mean.insert(m.clone(), json!(mu));
            se.insert(m.clone(), json!(s));
        }
        agg.push('\n');
        summaries.push(PointSummary {
            value: *value,
            reps: rows.len(),
            mean,
            se,
        });
    }
    write_text(&out_dir.join("aggregate.csv"), &agg)?;

    let mut slopes = Map::new();
    if bench.sweep.is_some() {
        let x: Vec<f64> = summaries.iter().map(|s| s.value).collect();
        for m in &metrics {
            let y: Vec<f64> = summaries.iter().map(|s| s.mean[m].as_f64().unwrap_or(f64::NAN)).collect();
            if let Some((slope, intercept)) = log_log_fit(&x, &y) {
                slopes.insert(m.clone(), json!({"slope": slope, "intercept": intercept}));
            }
            if m == "sq_error" {
                let rmse: Vec<f64> = y.iter().map(|v| v.sqrt()).collect();
                if let Some((slope, intercept)) = log_log_fit(&x, &rmse) {
                    slopes.insert("rmse".into(), json!({"slope": slope, "intercept": intercept}));
                }
            }
        }
    }
    let summary = json!({
        "tool": tool_stamp(),
        "seed": seed,
        "config": cfg.resolved(seed),
        "variable": var_name,
        "metrics": metrics,
        "points": summaries,
        "slopes": slopes,
        "computed": computed,
        "resumed": jobs.len() - computed,
    });
    write_json(&out_dir.join("summary.json"), &summary)?;
    Ok(summary)
}
