use std::path::PathBuf;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use serde_json::Value;

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("critsys-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_critsys"))
        .args(args)
        .env_remove("CRITSYS_OUT")
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

#[test]
fn symmetric_coupling_prints_the_closed_form_root() {
    let v = json(&run(&[
        "coupling", "--N", "6", "--mu1", "1", "--mu2", "1", "--beta", "1",
    ]));
    let sol = &v["result"]["solution"];
    assert!((sol["k"].as_f64().unwrap() - 0.25).abs() < 1e-12);
    assert!((sol["l"].as_f64().unwrap() - 0.25).abs() < 1e-12);
    assert_eq!(v["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(v["config"]["N"], 6);
}

#[test]
fn coupling_without_beta_reports_beta0() {
    let v = json(&run(&["coupling", "--N", "6", "--mu1", "2", "--mu2", "2"]));
    assert_eq!(v["result"]["beta0"].as_f64(), Some(1.0));
    assert!(v["result"].get("solution").is_none());
}

#[test]
fn dimension_four_is_a_config_error() {
    let out = run(&[
        "coupling", "--N", "4", "--mu1", "1", "--mu2", "1", "--beta", "1",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["errors"][0]["kind"], "config");
    assert!(err["errors"][0]["message"]
        .as_str()
        .unwrap()
        .contains("N >= 5"));
}

#[test]
fn bad_flags_and_unknown_config_fields_exit_with_one() {
    assert_eq!(run(&["coupling", "--no-such-flag"]).status.code(), Some(1));
    let dir = scratch("badcfg");
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("c.json");
    std::fs::write(&cfg, r#"{"N": 6, "colour": 1}"#).unwrap();
    assert_eq!(
        run(&["coupling", "--config", cfg.to_str().unwrap()])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn flags_override_the_file_and_the_environment_overrides_out() {
    let dir = scratch("override");
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("c.json");
    std::fs::write(
        &cfg,
        r#"{"N": 5, "mu1": 1.0, "mu2": 2.0, "beta": 3.0, "out": "unused"}"#,
    )
    .unwrap();
    let env_out = dir.join("from-env");
    let out = Command::new(env!("CARGO_BIN_EXE_critsys"))
        .args(["coupling", "--config", cfg.to_str().unwrap(), "--mu2", "1"])
        .env("CRITSYS_OUT", &env_out)
        .output()
        .unwrap();
    let v = json(&out);
    assert_eq!(v["config"]["N"], 5);
    assert_eq!(v["config"]["mu2"].as_f64(), Some(1.0));
    assert_eq!(v["config"]["out"].as_str(), env_out.to_str());
    assert!(env_out.join("branch.csv").exists());
    assert!(env_out.join("coupling.json").exists());
}

#[test]
fn symmetric_solve_is_proportional_and_reproducible() {
    let dir = scratch("solve");
    let first = dir.join("a/nested");
    let second = dir.join("b");
    let args = |out: &PathBuf| {
        vec![
            "solve",
            "--N",
            "6",
            "--beta",
            "1",
            "--intervals",
            "256",
            "--out",
            out.to_str().unwrap(),
        ]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>()
    };
    let a = args(&first);
    let v = json(&run(&a.iter().map(String::as_str).collect::<Vec<_>>()));
    let report = &v["result"]["report"];
    assert!(report["ratio_deviation"].as_f64().unwrap() < 0.01);
    assert_eq!(report["resolved"], true);
    let b = args(&second);
    json(&run(&b.iter().map(String::as_str).collect::<Vec<_>>()));
    let csv_a = std::fs::read(first.join("pair.csv")).unwrap();
    assert!(csv_a.starts_with(b"r,u,v\n"));
    assert_eq!(csv_a, std::fs::read(second.join("pair.csv")).unwrap());
    let report_a: Value =
        serde_json::from_slice(&std::fs::read(first.join("report.json")).unwrap()).unwrap();
    assert_eq!(report_a["result"]["report"], *report);
}

#[test]
fn subcritical_mode_writes_one_stage_per_eps() {
    let dir = scratch("sub");
    let v = json(&run(&[
        "solve",
        "--N",
        "6",
        "--beta",
        "1",
        "--intervals",
        "256",
        "--mode",
        "subcritical",
        "--eps",
        "0.3,0.1,0.03",
        "--out",
        dir.to_str().unwrap(),
    ]));
    let stages = v["result"]["stages"].as_array().unwrap();
    assert_eq!(stages.len(), 3);
    for i in 0..3 {
        assert!(dir.join(format!("stage_{i}.csv")).exists());
    }
    let b: Vec<f64> = stages
        .iter()
        .map(|s| s["report"]["B"].as_f64().unwrap())
        .collect();
    assert!(b.windows(2).all(|w| w[1] < w[0]), "{b:?}");
}

#[test]
fn non_convergence_exits_with_three() {
    let dir = scratch("nonconv");
    let out = run(&[
        "solve",
        "--beta",
        "-0.5",
        "--max-iter",
        "2",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["errors"][0]["kind"], "solver");
}

#[test]
fn quick_check_covers_the_algebra_fast() {
    let t = Instant::now();
    let out = run(&["check", "--quick"]);
    assert!(t.elapsed() < Duration::from_secs(5));
    assert!(out.status.success());
    let table = String::from_utf8(out.stdout).unwrap();
    assert_eq!(table.lines().count(), 5);
    assert!(table.lines().all(|l| l.starts_with("PASS  algebra")));
}

#[test]
fn full_check_passes_on_several_jobs() {
    let out = run(&["check", "--jobs", "3"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 10);
}

#[test]
fn sweep_emits_the_phase_separation_table() {
    let dir = scratch("sweep");
    let v = json(&run(&[
        "sweep",
        "--betas",
        "-1,-10",
        "--lambda-frac",
        "-0.99",
        "--intervals",
        "128",
        "--out",
        dir.to_str().unwrap(),
    ]));
    let csv = std::fs::read_to_string(dir.join("sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("beta,B_beta,overlap,beta_overlap,support_u,support_v,signchange_residual")
    );
    assert_eq!(lines.count(), 2);
    assert!(v["result"]["tail_ratio"].as_f64().unwrap() < 1.0);
    assert!(v["result"]["sign_changing"]["residual"].is_number());
}

#[test]
fn smallball_reports_a_slope() {
    let dir = scratch("ball");
    let v = json(&run(&[
        "smallball",
        "--N",
        "6",
        "--beta",
        "-1",
        "--lambda1",
        "-10",
        "--lambda2",
        "-10",
        "--radii",
        "0.4,0.3,0.2",
        "--intervals",
        "128",
        "--jobs",
        "2",
        "--out",
        dir.to_str().unwrap(),
    ]));
    assert!(v["result"]["fit"]["slope"].is_number());
    let csv = std::fs::read_to_string(dir.join("smallball.csv")).unwrap();
    assert!(csv.starts_with("radius,J_R,J_R_coarse,J_R_fine,deficit,used_in_fit\n"));
    assert_eq!(csv.lines().count(), 4);
}
