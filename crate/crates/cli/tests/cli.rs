use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fdavp_core::estimate::optimal_level;
use serde_json::{json, Value};

fn fdavp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fdavp"))
        .args(args)
        .env_remove("FDAVP_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn read(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn spec(n: usize, m: usize, mean: Value, cov: Value, sigma: f64) -> Value {
    json!({
        "dim": 1, "n_curves": n, "m_law": {"kind": "fixed", "m": m},
        "mean": mean, "covariance": cov,
        "noise": {"sigma": {"kind": "constant", "value": sigma}},
        "density": {"dim": 1, "kind": "uniform"}
    })
}

fn zero() -> Value {
    json!({"kind": "zero"})
}

fn trig() -> Value {
    json!({"kind": "trig_polynomial", "terms": [{"k": [1], "a": 1.0}, {"k": [3], "a": -0.5}]})
}

fn simulate(dir: &Path, cfg: &Value, name: &str, seed: &str) -> PathBuf {
    let c = write(dir, &format!("{name}.cfg.json"), cfg);
    let out = dir.join(format!("{name}.json"));
    ok(&fdavp(&["simulate", "--config", s(&c), "--out", s(&out), "--seed", seed]));
    out
}

#[test]
fn minimal_simulation_has_fifty_zero_observations() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulate(dir.path(), &json!({"simulate": spec(10, 5, zero(), zero(), 0.0)}), "d", "1");
    let v = read(&out);
    let curves = v["curves"].as_array().unwrap();
    let ys: Vec<f64> = curves
        .iter()
        .flat_map(|c| c["y"].as_array().unwrap().iter().map(|y| y.as_f64().unwrap()))
        .collect();
    assert_eq!(ys.len(), 50);
    assert!(ys.iter().all(|&y| y == 0.0));
    assert_eq!(v["tool"]["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(v["config"]["seed"], 1);
}

#[test]
fn same_seed_gives_identical_bytes_and_sidecar_reproduces() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({"simulate": spec(20, 8, trig(), json!({"kind": "fbm", "hurst": 0.5}), 0.3)});
    let a = simulate(dir.path(), &cfg, "a", "42");
    let b = simulate(dir.path(), &cfg, "b", "42");
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let c = simulate(dir.path(), &cfg, "c", "43");
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());

    // the embedded config alone regenerates the artifact
    let resolved = write(dir.path(), "resolved.json", &read(&a)["config"]);
    let again = dir.path().join("again.json");
    ok(&fdavp(&["simulate", "--config", s(&resolved), "--out", s(&again)]));
    assert_eq!(fs::read(&a).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn schema_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let bad = json!({"simulate": spec(5, 5, json!({"kind": "weierstrass", "alpha": 1.5, "j_max": 10}), zero(), 0.0)});
    let c = write(dir.path(), "bad.json", &bad);
    let out = fdavp(&["simulate", "--config", s(&c), "--out", s(&dir.path().join("x.json"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("alpha"), "{err}");

    let mut unknown = json!({"simulate": spec(5, 5, zero(), zero(), 0.0)});
    unknown["simulate"]["colour"] = json!(1);
    let c = write(dir.path(), "unknown.json", &unknown);
    let out = fdavp(&["simulate", "--config", s(&c), "--out", s(&dir.path().join("x.json"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("colour") && err.contains("line"), "{err}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = fdavp(&["simulate", "--config", s(&dir.path().join("missing.json")), "--out", "x"]);
    assert_eq!(out.status.code(), Some(4));

    let c = write(dir.path(), "empty.json", &json!({}));
    let out = fdavp(&["simulate", "--config", s(&c), "--out", s(&dir.path().join("x.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("simulate"));
}

#[test]
fn estimate_recovers_noiseless_trig_polynomial() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), &json!({"simulate": spec(100, 20, trig(), zero(), 0.0)}), "d", "5");
    let c = write(
        dir.path(),
        "est.json",
        &json!({"estimate": {"level": {"L": 2}, "density": {"dim": 1, "kind": "uniform"}}}),
    );
    let model = dir.path().join("model.json");
    ok(&fdavp(&["estimate", "--config", s(&c), "--data", s(&data), "--out", s(&model), "--seed", "3"]));
    let v = read(&model);
    assert!(v["risk"]["l2_error"].as_f64().unwrap() < 1e-6, "{}", v["risk"]);
    assert_eq!(v["model"]["L"], 2);
    assert_eq!(v["model"]["index_order"], "lex");
    assert_eq!(v["seed"], 3);

    let resolved = write(dir.path(), "resolved.json", &v["config"]);
    let again = dir.path().join("again.json");
    ok(&fdavp(&["estimate", "--config", s(&resolved), "--data", s(&data), "--out", s(&again)]));
    assert_eq!(fs::read(&model).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn optimal_level_is_echoed_and_plug_in_runs() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(
        dir.path(),
        &json!({"simulate": spec(40, 25, trig(), json!({"kind": "fbm", "hurst": 0.5}), 0.5)}),
        "d",
        "9",
    );
    let c = write(
        dir.path(),
        "est.json",
        &json!({"estimate": {"level": {"optimal": {"alpha": 1.0, "c_vp": 1.0, "K1": 0.75}}, "density": {"dim": 1, "kind": "uniform"}}}),
    );
    let model = dir.path().join("model.json");
    ok(&fdavp(&["estimate", "--config", s(&c), "--data", s(&data), "--out", s(&model)]));
    let v = read(&model);
    assert_eq!(v["L"].as_u64().unwrap() as usize, optimal_level(1.0, 1.0, 0.75, 1, 1000.0, 2.5));

    let c = write(
        dir.path(),
        "plug.json",
        &json!({"estimate": {"level": {"optimal": {"alpha": 1.0, "K1": "plug-in"}}, "density": {"dim": 1, "kind": "uniform"}}}),
    );
    ok(&fdavp(&["estimate", "--config", s(&c), "--data", s(&data), "--out", s(&model)]));
    assert!(read(&model)["K1"].as_f64().unwrap() > 0.0);
}

#[test]
fn infer_writes_band_pointwise_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(
        dir.path(),
        &json!({"simulate": spec(30, 20, trig(), json!({"kind": "fbm", "hurst": 0.5}), 0.5)}),
        "d",
        "2",
    );
    let mut cfg = json!({
        "estimate": {"level": {"L": 3}, "density": {"dim": 1, "kind": "uniform"}},
        "infer": {"method": "gaussian", "level": 0.95, "grid": 64,
                  "density": {"dim": 1, "kind": "uniform"},
                  "gaussian": {"n_draws": 300, "sigma": "oracle"}}
    });
    let c = write(dir.path(), "cfg.json", &cfg);
    let model = dir.path().join("model.json");
    ok(&fdavp(&["estimate", "--config", s(&c), "--data", s(&data), "--out", s(&model)]));
    let band = dir.path().join("band.csv");
    ok(&fdavp(&["infer", "--config", s(&c), "--data", s(&data), "--model", s(&model), "--out", s(&band)]));
    let text = fs::read_to_string(&band).unwrap();
    assert!(text.starts_with("t_1,center,lower,upper"));
    assert_eq!(text.lines().count(), 65);
    let side = read(&dir.path().join("band.csv.json"));
    assert_eq!(side["band"]["method"], "gaussian");
    assert_eq!(side["method_details"]["sigma_mode"], "oracle");
    assert!(side["tool"]["version"].is_string());
    assert!(side["config"]["infer"].is_object());
    assert!(dir.path().join("band.csv.pointwise.csv").exists());

    // pointwise intervals sit inside the band
    let rows = |p: &Path| -> Vec<Vec<f64>> {
        fs::read_to_string(p)
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
            .collect()
    };
    for (u, p) in rows(&band).iter().zip(rows(&dir.path().join("band.csv.pointwise.csv"))) {
        assert!(u[2] <= p[2] + 1e-12 && p[3] <= u[3] + 1e-12);
    }

    cfg["infer"] = json!({"method": "subsampling", "level": 0.9, "grid": 32,
        "density": {"dim": 1, "kind": "uniform"},
        "subsampling": {"alpha": 1.0, "K1": 0.75, "n_subsamples": 20}});
    let c = write(dir.path(), "sub.json", &cfg);
    ok(&fdavp(&["infer", "--config", s(&c), "--data", s(&data), "--out", s(&band)]));
    assert_eq!(read(&dir.path().join("band.csv.json"))["band"]["method"], "subsampling");

    // gaussian without a model
    cfg["infer"]["method"] = json!("gaussian");
    let c = write(dir.path(), "nomodel.json", &cfg);
    let out = fdavp(&["infer", "--config", s(&c), "--data", s(&data), "--out", s(&band)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn regularity_report_has_all_fields() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(
        dir.path(),
        &json!({"simulate": spec(100, 40, json!({"kind": "weierstrass", "alpha": 0.5, "j_max": 15}), zero(), 0.0)}),
        "d",
        "4",
    );
    let c = write(dir.path(), "cfg.json", &json!({"regularity": {"K1": 1.0}}));
    let out = dir.path().join("reg.json");
    ok(&fdavp(&["regularity", "--config", s(&c), "--data", s(&data), "--out", s(&out)]));
    let v = read(&out);
    for key in ["K", "J", "tau", "tau_prime", "g_hat", "H_grid", "j0_hat", "alpha_hat", "C_hat", "L_hat", "flags"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert_eq!(v["config"]["regularity"]["tau_prime"], 0.5);
    let h = v["H_grid"].as_array().unwrap();
    assert_eq!(h.len(), v["J"].as_u64().unwrap() as usize);
    for p in h {
        assert!(p["Hhat"].as_f64().unwrap() <= p["Hj"].as_f64().unwrap());
    }
}

fn bench_cfg() -> Value {
    json!({"seed": 11, "bench": {"replications": 6,
        "sweep": {"variable": "n", "values": [50, 100, 200]},
        "experiment": {"kind": "integration_rmse", "dim": 1, "n": 50}}})
}

fn rep_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir.join("replications"))
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn bench_aggregates_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let c = write(dir.path(), "bench.json", &bench_cfg());
    let out = dir.path().join("run");
    ok(&fdavp(&["bench", "--config", s(&c), "--out", s(&out)]));
    let files = rep_files(&out);
    assert_eq!(files.len(), 18);
    let agg = fs::read_to_string(out.join("aggregate.csv")).unwrap();
    assert_eq!(agg.lines().count(), 4);
    assert!(agg.starts_with("n,reps,mean_error,se_error,mean_sq_error,se_sq_error"));
    let summary = read(&out.join("summary.json"));
    assert_eq!(summary["computed"], 18);
    assert!(summary["slopes"]["rmse"]["slope"].is_f64());

    // recompute the aggregate from the replication files
    for (p, point) in summary["points"].as_array().unwrap().iter().enumerate() {
        let xs: Vec<f64> = files
            .iter()
            .filter(|(n, _)| n.starts_with(&format!("p{p:03}_")))
            .map(|(_, b)| {
                let t = String::from_utf8_lossy(b).into_owned();
                t.lines().nth(1).unwrap().split(',').nth(5).unwrap().parse::<f64>().unwrap()
            })
            .collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!((mean - point["mean"]["sq_error"].as_f64().unwrap()).abs() <= 1e-12);
    }

    // interrupted run: drop two files and rerun
    fs::remove_file(out.join("replications").join(&files[0].0)).unwrap();
    fs::remove_file(out.join("replications").join(&files[7].0)).unwrap();
    ok(&fdavp(&["bench", "--config", s(&c), "--out", s(&out)]));
    let summary2 = read(&out.join("summary.json"));
    assert_eq!(summary2["computed"], 2);
    assert_eq!(summary2["resumed"], 16);
    assert_eq!(rep_files(&out), files);
    assert_eq!(summary2["points"], summary["points"]);
}

#[test]
fn bench_is_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = bench_cfg();
    cfg["bench"] = json!({"replications": 4, "experiment": {"kind": "risk", "alpha": 1.0,
        "simulation": spec(30, 10, trig(), json!({"kind": "exponential", "scale": 0.2}), 0.5)}});
    let c = write(dir.path(), "bench.json", &cfg);
    let one = dir.path().join("one");
    let three = dir.path().join("three");
    ok(&fdavp(&["bench", "--config", s(&c), "--out", s(&one), "--threads", "1"]));
    let out = Command::new(env!("CARGO_BIN_EXE_fdavp"))
        .args(["bench", "--config", s(&c), "--out", s(&three)])
        .env("FDAVP_THREADS", "3")
        .output()
        .unwrap();
    ok(&out);
    assert_eq!(rep_files(&one), rep_files(&three));
    assert_eq!(
        fs::read(one.join("aggregate.csv")).unwrap(),
        fs::read(three.join("aggregate.csv")).unwrap()
    );
}
