use std::path::Path;
use std::process::{Command, Output};

use meanfield::experiments::{derive_seed, StudyKind};

fn meanfield(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_meanfield"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn validate_is_bit_identical_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let mut bodies = Vec::new();
    for threads in ["1", "4"] {
        let out = tmp.path().join(format!("t{threads}"));
        let o = meanfield(&["validate", "--out", out.to_str().unwrap(), "--threads", threads]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(manifest(&out)["threads"], threads.parse::<u64>().unwrap());
        bodies.push(std::fs::read(out.join("validation.csv")).unwrap());
    }
    assert_eq!(bodies[0], bodies[1]);
}

#[test]
fn corrupted_gradient_fails_validation() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[study]\nfault = \"gradient_sign_flip\"\n");
    let out = tmp.path().join("out");
    let o = meanfield(&["validate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let csv = std::fs::read_to_string(out.join("validation.csv")).unwrap();
    let line = csv.lines().find(|l| l.starts_with("gradient_identity,")).unwrap();
    assert!(line.ends_with(",false"), "{line}");
    assert_eq!(manifest(&out)["passed"], false);
}

#[test]
fn loose_solver_tolerance_leaves_constancy_isolated() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "[solver]\ntol = 1e-1\n\n[study.tolerances]\nlipschitz_probe = 2.5\n",
    );
    let out = tmp.path().join("out");
    let o = meanfield(&["validate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let m = manifest(&out);
    assert_eq!(m["overrides"]["lipschitz_probe"], 2.5);
    assert!(m["isolated"]["hamiltonian_constancy"].as_str().unwrap().contains("1e-12"));
    assert_eq!(m["config"]["solver"]["tol"], 0.1);
}

#[test]
fn seed_flag_overrides_base_seed_in_rows_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"
        [model]
        name = "constant_drive"
        lambda = 0.5

        [time]
        horizon = 1.0
        steps = 4

        [population]
        bound = 3.0
        atoms = [{ x = [0.0], y = [1.0], w = 0.5 }, { x = [1.0], y = [2.0], w = 0.5 }]

        [study]
        n_list = [8, 16]
        trials = 3
        base_seed = 1
        "#,
    );
    let out = tmp.path().join("out");
    let o = meanfield(&["converge-study", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "99"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(manifest(&out)["seeds"]["base_seed"], 99);
    let csv = std::fs::read_to_string(out.join("convergence.csv")).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 6);
    for r in rows {
        let (n, trial, seed): (u64, u64, u64) = (r[0].parse().unwrap(), r[1].parse().unwrap(), r[2].parse().unwrap());
        assert_eq!(seed, derive_seed(99, StudyKind::Convergence, n, trial));
    }
    assert!(out.join("convergence_summary.csv").exists());
}

#[test]
fn train_writes_control_and_history() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"
        [model]
        name = "constant_drive"
        lambda = 0.5

        [time]
        horizon = 1.0
        steps = 10

        [population]
        bound = 1.0
        atoms = [{ x = [0.0], y = [1.0], w = 1.0 }]

        [solver]
        damping = 1.0
        "#,
    );
    let out = tmp.path().join("out");
    let o = meanfield(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let control = std::fs::read_to_string(out.join("control.csv")).unwrap();
    assert!(control.starts_with("t,theta_1\n"));
    for line in control.lines().skip(1) {
        let theta: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!((theta - 0.5).abs() < 1e-8);
    }
    let m = manifest(&out);
    assert_eq!(m["converged"], true);
    assert!((m["loss"].as_f64().unwrap() - 0.25).abs() < 1e-8);
}

#[test]
fn missing_section_is_an_error_exit() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = meanfield(&["train", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing [model] section"));
}
