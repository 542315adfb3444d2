use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ezddc::estimation::{EstimateResult, EstimationConfig, ParamName};
use ezddc::{Family, StructuralParams};

const BIN: &str = env!("CARGO_BIN_EXE_ezddc");

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn toy() -> String {
    configs().join("toy_cara.json").display().to_string()
}

fn write_model(dir: &Path, name: &str, edit: impl FnOnce(&mut serde_json::Value)) -> String {
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(toy()).unwrap()).unwrap();
    edit(&mut v);
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string(&v).unwrap()).unwrap();
    p.display().to_string()
}

#[test]
fn solve_writes_one_row_per_state() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let o = run(&["solve", "--config", &toy(), "--draws", "300", "--out", &out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("value_function.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "x_bin,value");
    assert_eq!(lines.len(), 4);
    assert!(!csv.contains('\r'));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["started_unix"], 1700000000);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn upper_and_lower_starts_agree() {
    let dir = tempfile::tempdir().unwrap();
    let mut values = Vec::new();
    for start in ["upper", "lower"] {
        let out = dir.path().join(start).display().to_string();
        let o = run(&["solve", "--config", &toy(), "--draws", "300", "--start", start, "--out", &out]);
        assert_eq!(code(&o), 0);
        let csv = fs::read_to_string(dir.path().join(start).join("value_function.csv")).unwrap();
        values.push(
            csv.lines()
                .skip(1)
                .map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap())
                .collect::<Vec<_>>(),
        );
    }
    for (a, b) in values[0].iter().zip(&values[1]) {
        assert!((a - b).abs() < 1e-8);
    }
}

#[test]
fn missing_transition_row_names_the_state() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_model(dir.path(), "bad.json", |v| {
        v["transition"]["rows"].as_array_mut().unwrap().pop();
    });
    let o = run(&["solve", "--config", &bad, "--out", &dir.path().display().to_string()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("state 2"), "{}", stderr(&o));
}

#[test]
fn simulate_is_shaped_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(k.to_string()).display().to_string();
        let o = run(&[
            "simulate", "--config", &toy(), "--buses", "2", "--months", "3", "--seed", "4", "--draws", "300", "--out", &out,
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        bytes.push(fs::read(dir.path().join(k.to_string()).join("panel.csv")).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
    assert_eq!(String::from_utf8(bytes[0].clone()).unwrap().lines().count(), 7);
}

fn estimate_file(dir: &Path, name: &str, free: &[ParamName], loglik: f64) -> String {
    let cfg = EstimationConfig {
        free_params: free.to_vec(),
        ..EstimationConfig::default()
    };
    let r = EstimateResult {
        specification: None,
        family: Family::CaraEz,
        free_params: free.to_vec(),
        theta_hat: StructuralParams::default(),
        estimates: vec![0.1; free.len()],
        std_errors: vec![Some(0.01); free.len()],
        transformed_estimates: vec![0.1; free.len()],
        transformed_std_errors: vec![Some(0.01); free.len()],
        loglik,
        n_obs: 100,
        converged: true,
        eval_count: 1,
        seed: 0,
        draws_fingerprint: String::new(),
        config: cfg,
    };
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string(&r).unwrap()).unwrap();
    p.display().to_string()
}

#[test]
fn lr_test_reports_statistic_and_rejects_non_nested_pairs() {
    use ParamName::*;
    let dir = tempfile::tempdir().unwrap();
    let u = estimate_file(dir.path(), "u.json", &[ThetaD, ThetaX, Sigma, Alpha, Rho], -299.4404);
    let r = estimate_file(dir.path(), "r.json", &[ThetaD, ThetaX, Sigma, Alpha], -300.8139);
    let o = run(&["lr-test", &u, &r]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("statistic 2.7470") && text.contains("df 1") && text.contains("p-value 0.097"), "{text}");

    let o = run(&["lr-test", &u, &u]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("statistic 0.0000  df 0  p-value 1.0000"));

    let a = estimate_file(dir.path(), "a.json", &[ThetaD, ThetaX, Sigma], -10.0);
    let b = estimate_file(dir.path(), "b.json", &[ThetaX, Sigma, Alpha], -11.0);
    assert_eq!(code(&run(&["lr-test", &a, &b])), 1);
}

#[test]
fn check_contraction_reports_the_applicable_bound() {
    let dir = tempfile::tempdir().unwrap();
    let sep = write_model(dir.path(), "sep.json", |v| {
        v["preferences"]["alpha"] = 0.4.into();
        v["preferences"]["rho"] = 0.4.into();
    });
    let o = run(&["check-contraction", "--config", &sep, "--draws", "300"]);
    assert_eq!(code(&o), 0);
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["analytic_bound"], 0.9);
    assert_eq!(r["unique"], true);

    let early = write_model(dir.path(), "early.json", |v| {
        v["preferences"]["alpha"] = 0.5.into();
        v["preferences"]["rho"] = 0.2.into();
    });
    let o = run(&["check-contraction", "--config", &early, "--draws", "300"]);
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(r["analytic_bound"].is_null());
    assert!(r["analytic_note"].as_str().unwrap().contains("no analytic bound"));
    // the upper value bound sits at the aggregator supremum, where the
    // derivative of the aggregated continuation diverges
    assert_eq!(r["m_numeric_bounded"], false);
    assert_eq!(r["unique"], true);
}

#[test]
fn counterfactual_identities() {
    let dir = tempfile::tempdir().unwrap();
    let degenerate = write_model(dir.path(), "deg.json", |v| {
        v["transition"]["rows"] = serde_json::json!([[0.0, 1.0], [0.0, 1.0], [0.0, 1.0]]);
    });
    let o = run(&["counterfactual", "--config", &degenerate, "--draws", "300", "--scale-dollars", "40"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((r["c_payment"].as_f64().unwrap() - 3.0).abs() < 1e-6);
    assert_eq!(r["scale_to_dollars"], 40.0);

    let no_revenue = write_model(dir.path(), "zero.json", |v| {
        v["payoff"]["theta_d"] = 0.0.into();
    });
    let o = run(&["counterfactual", "--config", &no_revenue, "--draws", "300"]);
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["c_payment"], 0.0);

    let o = run(&["counterfactual", "--config", &toy(), "--compare", &toy(), "--draws", "300"]);
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["ratio"], 1.0);
}

#[test]
fn bias_figure_has_one_row_per_alpha_and_state() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let o = run(&["replicate-bias-figure", "--draws", "1000", "--ccp-draws", "10000", "--step", "0.1", "--out", &out]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("bias_figure.csv")).unwrap();
    assert!(csv.starts_with("alpha,state,ccp_separable,ccp_nonseparable\n"));
    assert_eq!(csv.lines().count(), 1 + 7 * 3);
}

fn toy_estimation_config(dir: &Path) -> String {
    let cfg = serde_json::json!({
        "grid": { "n_bins": 3, "bin_width_miles": 3000.0 },
        "rc_fixed": 3.0,
        "initial": { "theta_d": 3.0, "theta_x": 0.5, "sigma": 2.0, "alpha": 0.3, "rho": 0.3 },
        "optimizer": { "max_evals": 150, "initial_simplex_scale": 0.2, "f_tol": 0.001, "restart": false },
        "solver": { "n_sim_eps": 200, "tol_sup_norm": 1e-8 },
        "ccp_draws": 2000
    });
    let p = dir.join("est.json");
    fs::write(&p, cfg.to_string()).unwrap();
    p.display().to_string()
}

#[test]
fn estimate_runs_requested_specifications() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    let o = run(&[
        "simulate", "--config", &toy(), "--buses", "30", "--months", "40", "--seed", "2", "--draws", "500", "--out",
        &sim.display().to_string(),
    ]);
    assert_eq!(code(&o), 0);
    let cfg = toy_estimation_config(dir.path());
    let out = dir.path().join("est");
    let o = run(&[
        "estimate",
        "--data",
        &sim.join("panel.csv").display().to_string(),
        "--config",
        &cfg,
        "--spec",
        "separable,rust-orig",
        "--out",
        &out.display().to_string(),
    ]);
    assert!(code(&o) == 0 || code(&o) == 2, "{}", stderr(&o));
    let sep: EstimateResult = serde_json::from_str(&fs::read_to_string(out.join("estimate_separable.json")).unwrap()).unwrap();
    assert!(!sep.free_params.contains(&ParamName::Rho));
    assert_eq!(sep.theta_hat.alpha, sep.theta_hat.rho);
    let orig: EstimateResult = serde_json::from_str(&fs::read_to_string(out.join("estimate_rust-orig.json")).unwrap()).unwrap();
    assert!(!orig.free_params.contains(&ParamName::ThetaD));
    assert_eq!(orig.theta_hat.theta_d, 0.0);
}

#[test]
fn estimate_rejects_inconsistent_panels() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.csv");
    fs::write(&data, "bus_id,month,x_bin,decision,delta_bin\n1,1,0,0,1\n1,2,2,0,0\n1,3,2,3,0\n").unwrap();
    let cfg = toy_estimation_config(dir.path());
    let o = run(&["estimate", "--data", &data.display().to_string(), "--config", &cfg, "--out", &dir.path().display().to_string()]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(err.contains("row 1") && err.contains("row 2"), "{err}");
}

#[test]
fn unknown_specification_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    fs::write(&data, "bus_id,month,x_bin,decision,delta_bin\n1,1,0,0,1\n").unwrap();
    let o = run(&["estimate", "--data", &data.display().to_string(), "--spec", "bogus"]);
    assert_eq!(code(&o), 1);
}
