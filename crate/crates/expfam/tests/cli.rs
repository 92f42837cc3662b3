//! End-to-end checks of the `expfam` binary: command outputs, seed echoing,
//! and error exit codes.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_expfam")
}

fn workdir(tag: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("expfam-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn write_bernoulli_data(path: &PathBuf) {
    let mut text = String::from("t1,t2,t3\n");
    // deterministic pseudo-data: three biased coins
    let mut state = 12345u64;
    let mut next = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 33) as f64 / (1u64 << 31) as f64
    };
    for _ in 0..150 {
        let row: Vec<&str> = [0.7, 0.5, 0.2]
            .iter()
            .map(|&p| if next() < p { "1" } else { "0" })
            .collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    std::fs::write(path, text).unwrap();
}

#[test]
fn fit_writes_valid_report() {
    let dir = workdir("fit");
    let data = dir.join("data.csv");
    write_bernoulli_data(&data);
    let out = dir.join("fit.json");
    let status = Command::new(bin())
        .args([
            "--seed",
            "1",
            "--quiet",
            "fit",
            "--family",
            r#"{"kind":"bernoulli"}"#,
            "--data",
            data.to_str().unwrap(),
            "--lambda",
            "0.05",
            "--out",
            out.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["schema"], "expfam-fit/1");
    assert_eq!(report["estimate"].as_array().unwrap().len(), 3);
    assert!(report["converged"].as_bool().unwrap());
    assert!(report["kkt_residual"].as_f64().unwrap() <= 1e-6);
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn two_stage_reports_support_and_tau() {
    let dir = workdir("twostage");
    let data = dir.join("data.csv");
    write_bernoulli_data(&data);
    let out = dir.join("ts.json");
    let status = Command::new(bin())
        .args([
            "--seed",
            "1",
            "--quiet",
            "two-stage",
            "--family",
            r#"{"kind":"bernoulli"}"#,
            "--data",
            data.to_str().unwrap(),
            "--lambda",
            "0.02",
            "--tau",
            "0.3",
            "--out",
            out.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["schema"], "expfam-two-stage/1");
    assert_eq!(report["tau"].as_f64().unwrap(), 0.3);
    // every stage-2 coordinate outside the support must be zero
    let support: Vec<usize> = report["support"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap() as usize)
        .collect();
    for (i, v) in report["stage2_estimate"].as_array().unwrap().iter().enumerate() {
        if !support.contains(&i) {
            assert_eq!(v.as_f64().unwrap(), 0.0);
        }
    }
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn alpha_report_contains_per_direction_ratios() {
    let dir = workdir("alpha");
    let out = dir.join("alpha.json");
    let status = Command::new(bin())
        .args([
            "--seed",
            "5",
            "--quiet",
            "alpha",
            "--family",
            r#"{"kind":"bernoulli"}"#,
            "--theta",
            "0,0,0",
            "--mode",
            "moment",
            "--k-max",
            "8",
            "--directions",
            "25",
            "--out",
            out.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let dirs = report["directions"].as_array().unwrap();
    assert_eq!(dirs.len(), 25);
    assert!(!dirs[0]["ratios"].as_array().unwrap().is_empty());
    let alpha = report["alpha"].as_f64().unwrap();
    // moment-mode kurtosis floor
    assert!(alpha >= 1.0 / 12.0_f64.sqrt() - 1e-9);
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn re_command_matches_analytic_example() {
    let dir = workdir("re");
    let fisher = dir.join("fisher.csv");
    std::fs::write(&fisher, "4,0\n0,1\n").unwrap();
    let out = dir.join("re.json");
    let status = Command::new(bin())
        .args([
            "--seed",
            "3",
            "--quiet",
            "re",
            "--fisher",
            fisher.to_str().unwrap(),
            "--support",
            "0",
            "--budget",
            "100",
            "--out",
            out.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!((report["kappa_min"].as_f64().unwrap() - 2.0).abs() <= 1e-6);
    assert!((report["kappa_max"].as_f64().unwrap() - 2.0).abs() <= 1e-6);
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn verify_convexity_reports_no_violations_for_gaussian() {
    let dir = workdir("vc");
    let out = dir.join("vc.json");
    let status = Command::new(bin())
        .args([
            "--seed",
            "9",
            "--quiet",
            "verify-convexity",
            "--family",
            r#"{"kind":"unit_var_gaussian"}"#,
            "--theta-star",
            "0.5,-0.2,0.1",
            "--cases",
            "60",
            "--out",
            out.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["violations"].as_u64().unwrap(), 0);
    assert_eq!(report["applicable_cases"].as_u64().unwrap(), 60);
    let hist: Vec<u64> = report["ratio_histogram"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    assert_eq!(hist.iter().sum::<u64>(), 60);
    // gaussian ratios concentrate at one half (bin boundary 0.5 can round
    // either way)
    assert_eq!(hist[4] + hist[5], 60);
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn bad_inputs_exit_nonzero_with_stderr() {
    let dir = workdir("err");
    // malformed family JSON -> runtime error, exit 1
    let out = Command::new(bin())
        .args([
            "--quiet",
            "alpha",
            "--family",
            "{not json}",
            "--theta",
            "0",
            "--out",
            dir.join("x.json").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));

    // missing required flag -> clap usage error, exit 2
    let out = Command::new(bin()).args(["fit"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn missing_seed_is_echoed_on_stderr() {
    let dir = workdir("seed");
    let out = dir.join("alpha.json");
    let output = Command::new(bin())
        .args([
            "alpha",
            "--family",
            r#"{"kind":"bernoulli"}"#,
            "--theta",
            "0,0",
            "--directions",
            "5",
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("seed:"), "stderr was: {stderr}");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(report["seed"].as_u64().is_some());
    let _ = std::fs::remove_dir_all(&dir);
}
