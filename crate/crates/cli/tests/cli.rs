use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run_with(sub: &str, config: &Path, out: &Path, extra: &[&str]) -> i32 {
    let status = Command::new(env!("CARGO_BIN_EXE_harnack-lab"))
        .arg(sub)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .env_remove("HARNACK_LAB_OUT")
        .output()
        .expect("binary runs");
    status.status.code().expect("exit code")
}

fn run(sub: &str, fixture_name: &str) -> (i32, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let code = run_with(sub, &fixture(fixture_name), dir.path(), &[]);
    (code, dir)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn four_families_pass() {
    let (code, dir) = run("check-conditions", "families.toml");
    assert_eq!(code, 0);
    let manifest = read_json(&dir.path().join("manifest.json"));
    assert_eq!(manifest["exit_code"], 0);
    assert_eq!(manifest["summary"]["triples"].as_array().unwrap().len(), 4);
    assert!(manifest["versions"]["harnack_core"].is_string());
    assert!(manifest["wall_time_s"].as_f64().unwrap() >= 0.0);
    assert!(manifest["config_text"].as_str().unwrap().contains("linear_li_xu"));
}

#[test]
fn small_mu_fails_with_negative_row() {
    let (code, dir) = run("check-conditions", "linear_mu_small.toml");
    assert_eq!(code, 1);
    let rows = csv_rows(&dir.path().join("conditions_0_linear_li_xu.csv"));
    let negative = rows.iter().any(|r| r[1..5].iter().any(|v| v.parse::<f64>().unwrap() < -1e-9));
    assert!(negative);
}

#[test]
fn malformed_config_exits_2() {
    let (code, dir) = run("check-conditions", "malformed.toml");
    assert_eq!(code, 2);
    let manifest = read_json(&dir.path().join("manifest.json"));
    assert!(manifest["error"].as_str().unwrap().contains("parsing"));
}

#[test]
fn missing_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_with("solve", &dir.path().join("absent.toml"), dir.path(), &[]), 2);
}

#[test]
fn heat_solve_writes_dump_and_sample() {
    let (code, dir) = run("solve", "solve_heat.toml");
    assert_eq!(code, 0);
    assert!(dir.path().join("solution.bin").metadata().unwrap().len() > 0);
    let rows = csv_rows(&dir.path().join("solution_sample.csv"));
    let last_t: f64 = rows.last().unwrap()[0].parse().unwrap();
    assert_eq!(last_t, 1.0);
}

#[test]
fn riccati_blow_up_exits_3_with_horizon() {
    let (code, dir) = run("solve", "solve_blowup.toml");
    assert_eq!(code, 3);
    let status = read_json(&dir.path().join("status.json"));
    assert_eq!(status["status"], "blow_up");
    let horizon = status["horizon"].as_f64().unwrap();
    assert!(horizon > 0.99 && horizon < 1.01, "{horizon}");
}

#[test]
fn log_source_matches_double_exponential() {
    let (code, dir) = run("solve", "solve_log.toml");
    assert_eq!(code, 0);
    let status = read_json(&dir.path().join("status.json"));
    let exact = std::f64::consts::E.exp();
    for key in ["final_min", "final_max"] {
        let v = status[key].as_f64().unwrap();
        assert!(((v - exact) / exact).abs() < 1e-6, "{key} = {v}");
    }
}

#[test]
fn torus_heat_verifies_with_constant_free_rhs() {
    let (code, dir) = run("verify", "verify_torus_heat.toml");
    assert_eq!(code, 0);
    let rows = csv_rows(&dir.path().join("estimate_global_heat_0_li_yau.csv"));
    assert!(!rows.is_empty());
    for r in &rows {
        let t: f64 = r[0].parse().unwrap();
        let rhs: f64 = r[3].parse().unwrap();
        assert!((rhs - 4.0 / t).abs() <= 1e-12 * rhs);
    }
    let closed = read_json(&dir.path().join("estimate_closed_manifold.json"));
    assert_eq!(closed["violations"], 0);
}

#[test]
fn sphere_fit_writes_constant() {
    let (code, dir) = run("verify", "verify_sphere_fit.toml");
    assert_eq!(code, 0);
    let fits = read_json(&dir.path().join("c_fit.json"));
    let c = fits[0]["c_fit"].as_f64().unwrap();
    assert!(c.is_finite() && c >= 0.0);
}

#[test]
fn wrong_source_is_a_hypothesis_error() {
    let (code, dir) = run("verify", "verify_wrong_source.toml");
    assert_eq!(code, 2);
    let manifest = read_json(&dir.path().join("manifest.json"));
    assert!(manifest["error"].as_str().unwrap().contains("hypothesis"));
}

#[test]
fn constant_solution_has_no_harnack_violations() {
    let (code, dir) = run("harnack", "harnack_constant.toml");
    assert_eq!(code, 0);
    let report = read_json(&dir.path().join("harnack_0_li_yau_earlier_bounded.json"));
    assert_eq!(report["violations"], 0);
    assert!(report["worst_margin"].as_f64().unwrap() >= 0.0);
}

#[test]
fn torus_heat_harnack_grid() {
    let (code, dir) = run("harnack", "harnack_torus.toml");
    assert_eq!(code, 0);
    for direction in ["earlier_bounded", "later_bounded"] {
        let report = read_json(&dir.path().join(format!("harnack_0_li_yau_{direction}.json")));
        assert_eq!(report["violations"], 0);
        // 10 nodes and 5 slices: 100 node pairs for each of the 10 ordered slice pairs.
        assert_eq!(report["pairs"], 1000);
    }
}

#[test]
fn harnack_tightness_is_stable_under_refinement() {
    let text = std::fs::read_to_string(fixture("harnack_torus.toml")).unwrap();
    let worst = |points: usize| {
        let dir = tempfile::tempdir().unwrap();
        let config = dir.path().join("cfg.toml");
        std::fs::write(&config, text.replace("points = 128", &format!("points = {points}"))).unwrap();
        assert_eq!(run_with("harnack", &config, dir.path(), &[]), 0);
        read_json(&dir.path().join("harnack_0_li_yau_earlier_bounded.json"))["worst_margin"]
            .as_f64()
            .unwrap()
    };
    let (coarse, fine) = (worst(128), worst(256));
    assert!(((coarse - fine) / fine).abs() < 0.05, "{coarse} vs {fine}");
}

#[test]
fn sweep_over_mu() {
    let (code, dir) = run("sweep", "sweep_mu.toml");
    assert_eq!(code, 0);
    let pass: Vec<String> = csv_rows(&dir.path().join("sweep.csv")).into_iter().map(|r| r[5].clone()).collect();
    assert_eq!(pass, ["0", "0", "1", "1"]);
}

#[test]
fn sweep_over_theta() {
    let (code, dir) = run("sweep", "sweep_theta.toml");
    assert_eq!(code, 0);
    let pass: Vec<String> = csv_rows(&dir.path().join("sweep.csv")).into_iter().map(|r| r[5].clone()).collect();
    assert_eq!(pass, ["1", "1", "1", "0"]);
}

#[test]
fn empty_sweep_is_header_only() {
    let (code, dir) = run("sweep", "sweep_empty.toml");
    assert_eq!(code, 0);
    let text = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("mu,theta,alpha,k,grid,pass"));
}

#[test]
fn sweep_cell_errors_are_recorded_in_row() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("cfg.toml");
    let text = std::fs::read_to_string(fixture("sweep_mu.toml")).unwrap().replace("mu = [0.1", "k = [-1.0, 1.0]\n#");
    std::fs::write(&config, text).unwrap();
    assert_eq!(run_with("sweep", &config, dir.path(), &[]), 0);
    let rows = csv_rows(&dir.path().join("sweep.csv"));
    assert_eq!(rows.len(), 2);
    assert!(!rows[0].last().unwrap().is_empty());
    assert_eq!(rows[1][5], "1");
}

#[test]
fn outputs_are_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (dir, jobs) in [(&a, "1"), (&b, "4")] {
        assert_eq!(run_with("sweep", &fixture("sweep_theta.toml"), dir.path(), &["--jobs", jobs]), 0);
        assert_eq!(run_with("verify", &fixture("verify_torus_heat.toml"), dir.path(), &["--seed", "5"]), 0);
    }
    for name in ["sweep.csv", "estimate_global_heat_0_li_yau.csv", "estimate_closed_manifold.csv"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name}");
    }
}

#[test]
fn env_var_overrides_out_flag() {
    let flag_dir = tempfile::tempdir().unwrap();
    let env_dir = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_harnack-lab"))
        .args(["check-conditions", "--config"])
        .arg(fixture("families.toml"))
        .arg("--out")
        .arg(flag_dir.path())
        .env("HARNACK_LAB_OUT", env_dir.path())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(env_dir.path().join("manifest.json").exists());
    assert!(!flag_dir.path().join("manifest.json").exists());
}

#[test]
fn tol_flag_is_applied() {
    // A huge tolerance lets the failing μ pass.
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_with("check-conditions", &fixture("linear_mu_small.toml"), dir.path(), &["--tol", "1e6"]), 0);
}
