//! End-to-end tests of the command-line interface: real process, real
//! files, real exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn sme(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sme"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.toml");
    std::fs::write(&path, body).unwrap();
    path.display().to_string()
}

#[test]
fn simulate_writes_schema_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let out1 = dir.path().join("a");
    let out2 = dir.path().join("b");
    for out in [&out1, &out2] {
        let r = sme(&[
            "simulate",
            "--theta",
            "0",
            "--n",
            "10",
            "--out",
            &out.display().to_string(),
        ]);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    }
    let a = std::fs::read(out1.join("path.csv")).unwrap();
    let b = std::fs::read(out2.join("path.csv")).unwrap();
    assert_eq!(a, b, "same seed, same bytes");
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 11);
    assert!(text.starts_with("n,s_1\n"));
}

#[test]
fn simulate_rejects_zero_steps() {
    let dir = tempfile::tempdir().unwrap();
    let r = sme(&[
        "simulate",
        "--theta",
        "0",
        "--n",
        "0",
        "--out",
        &dir.path().display().to_string(),
    ]);
    assert!(!r.status.success());
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("N must be >= 1"), "stderr: {err}");
}

#[test]
fn simulate_adoption_has_three_state_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[model]\nid = \"adoption\"\n");
    let out = dir.path().join("out");
    let r = sme(&[
        "simulate",
        "--config",
        &cfg,
        "--theta",
        "0.5,0.1,0.1",
        "--n",
        "5",
        "--out",
        &out.display().to_string(),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let text = std::fs::read_to_string(out.join("path.csv")).unwrap();
    assert!(text.starts_with("n,s_1,s_2,s_3\n"));
}

#[test]
fn estimate_singleton_theta_box_returns_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"
[model]
id = "threshold-ergodic"

[theta_box]
lower = [0.25]
upper = [0.25]

[estimation]
theta0 = [0.25]
n_data = 2000
"#,
    );
    let out = dir.path().join("out");
    let r = sme(["estimate", "--config", &cfg, "--out", &out.display().to_string()].as_ref());
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let results = std::fs::read_to_string(out.join("results.csv")).unwrap();
    let mut lines = results.lines();
    assert_eq!(lines.next().unwrap(), "N,theta_1,objective");
    let row = lines.next().unwrap();
    assert!(row.starts_with("2000,2.5"), "row: {row}");
    assert_eq!(lines.next(), None);
}

#[test]
fn estimate_default_config_recovers_theta0() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let r = sme(["estimate", "--out", &out.display().to_string()].as_ref());
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let results = std::fs::read_to_string(out.join("results.csv")).unwrap();
    let row = results.lines().nth(1).unwrap();
    let theta: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
    assert!((theta - 0.1).abs() <= 0.02, "theta_hat = {theta}");
}

#[test]
fn estimate_volatility_preset_scores_perfect_match_as_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"
[model]
id = "threshold"

[estimation]
volatility_sigma = [8.86, 3.31, 31.41]
"#,
    );
    let out = dir.path().join("out");
    let r = sme(["estimate", "--config", &cfg, "--out", &out.display().to_string()].as_ref());
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let results = std::fs::read_to_string(out.join("results.csv")).unwrap();
    let row = results.lines().nth(1).unwrap();
    assert_eq!(row.split(',').next_back().unwrap(), "0");
}

#[test]
fn estimate_reads_csv_data_and_validates_columns() {
    let dir = tempfile::tempdir().unwrap();
    // generate data through simulate, then feed it back as a CSV series
    let gen = dir.path().join("gen");
    let r = sme(&[
        "simulate",
        "--theta",
        "0.1",
        "--n",
        "4000",
        "--out",
        &gen.display().to_string(),
    ]);
    assert!(r.status.success());
    let data_path = gen.join("path.csv").display().to_string();
    let cfg = write_config(
        dir.path(),
        &format!(
            r#"
[model]
id = "threshold-ergodic"

[estimation]
statistics = "primitives"
data_csv = "{data_path}"
n_data = 4000
"#
        ),
    );
    let out = dir.path().join("out");
    let r = sme(["estimate", "--config", &cfg, "--out", &out.display().to_string()].as_ref());
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));

    // a data file with the wrong column set is a structured failure
    std::fs::write(dir.path().join("bad.csv"), "s_2\n1.0\n").unwrap();
    let bad_cfg = write_config(
        dir.path(),
        &format!(
            r#"
[model]
id = "threshold-ergodic"

[estimation]
data_csv = "{}"
n_data = 1
"#,
            dir.path().join("bad.csv").display()
        ),
    );
    let r = sme(["estimate", "--config", &bad_cfg, "--out", &out.display().to_string()].as_ref());
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("observable mask"));
}

#[test]
fn estimate_missing_data_source_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[model]\nid = \"threshold-ergodic\"\n");
    let r = sme(["estimate", "--config", &cfg, "--out", &dir.path().display().to_string()]
        .as_ref());
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("missing data source"));
}

#[test]
fn diagnose_unknown_study_lists_valid_ids() {
    let dir = tempfile::tempdir().unwrap();
    let r = sme(&[
        "diagnose",
        "--study",
        "nonsense",
        "--out",
        &dir.path().display().to_string(),
    ]);
    assert!(!r.status.success());
    let err = String::from_utf8_lossy(&r.stderr);
    assert!(err.contains("ulln") && err.contains("sandwich"), "{err}");
}

#[test]
fn diagnose_monotone_fails_on_decreasing_map_with_witness() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[model]\nid = \"decreasing\"\n[diagnostics]\nmonotone_pairs = 2000\n",
    );
    let out = dir.path().join("out");
    let r = sme(["diagnose", "--study", "monotone", "--config", &cfg, "--out",
        &out.display().to_string()].as_ref());
    assert_eq!(r.status.code(), Some(2), "designed failure exits 2");
    let verdicts = std::fs::read_to_string(out.join("monotone_verdicts.txt")).unwrap();
    assert!(verdicts.contains("FAIL"));
    assert!(verdicts.contains("witness"));
}

#[test]
fn diagnose_dominance_passes_on_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[model]\nid = \"threshold\"\n[diagnostics]\nn_samples = 3000\n",
    );
    let out = dir.path().join("out");
    let r = sme(["diagnose", "--study", "dominance", "--config", &cfg, "--out",
        &out.display().to_string()].as_ref());
    assert_eq!(r.status.code(), Some(0));
    let text = std::fs::read_to_string(out.join("dominance_verdicts.txt")).unwrap();
    assert!(text.contains("overall: PASS"));
}

#[test]
fn approx_study_on_log_growth_reports_zero_distance_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"
[model]
id = "log-growth"

# clamping never binds on this parameter range, so the transition is
# genuinely affine in the state and the interpolant must reproduce it
[theta_box]
lower = [0.2, 0.05]
upper = [0.4, 0.15]

[estimation]
search_levels = 2
theta0 = [0.3, 0.1]

[diagnostics]
resolutions = [5, 9]
mc_draws = 100

[oracle]
n_steps = 4000
burn = 500
replications = 2
"#,
    );
    let out = dir.path().join("out");
    let r = sme(["approx-study", "--config", &cfg, "--out", &out.display().to_string()]
        .as_ref());
    assert_eq!(
        r.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&r.stderr)
    );
    let evidence = std::fs::read_to_string(out.join("approx_evidence.csv")).unwrap();
    // affine map: the interpolant reproduces the base exactly, so every
    // distance row is at rounding scale
    for line in evidence.lines().skip(1) {
        let d: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert!(d < 1e-12, "d_j = {d}");
    }
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[model]\nid = \"threshold\"\n[estimation]\nhorizonn = 1\n",
    );
    let r = sme(["estimate", "--config", &cfg, "--out", &dir.path().display().to_string()]
        .as_ref());
    assert!(!r.status.success());
    assert!(String::from_utf8_lossy(&r.stderr).contains("horizonn"));
}

#[test]
fn seed_override_changes_outputs_and_lands_in_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out1 = dir.path().join("a");
    let out2 = dir.path().join("b");
    let out3 = dir.path().join("c");
    for (out, seed) in [(&out1, "7"), (&out2, "8"), (&out3, "7")] {
        let r = sme(&[
            "simulate",
            "--theta",
            "0.1",
            "--n",
            "50",
            "--seed",
            seed,
            "--out",
            &out.display().to_string(),
        ]);
        assert!(r.status.success());
    }
    let a = std::fs::read(out1.join("path.csv")).unwrap();
    let b = std::fs::read(out2.join("path.csv")).unwrap();
    let c = std::fs::read(out3.join("path.csv")).unwrap();
    assert_ne!(a, b);
    assert_eq!(a, c);
    // the override is baked into the manifest, so a rerun needs no flag
    let out4 = dir.path().join("d");
    let r = sme(&[
        "simulate",
        "--config",
        &out1.join("manifest.toml").display().to_string(),
        "--out",
        &out4.display().to_string(),
    ]);
    assert!(r.status.success());
    let d = std::fs::read(out4.join("path.csv")).unwrap();
    assert_eq!(a, d);
}
