use std::path::{Path, PathBuf};
use std::process::Command;

use fronthaul_core::survivability::RisMode;
use fronthaul_sim::{cmd_converge, cmd_sweep, cmd_validate, CliError, RunOptions};

const BIN: &str = env!("CARGO_BIN_EXE_fronthaul-sim");

fn coeffs_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../config/pathloss_28ghz.toml")
}

fn small_config(extra: &str) -> String {
    format!(
        r#"
seed = 5
realizations = 3

[coefficients]
file = "{}"

[system]
n_ap = 4
n_cpu = 4
m_ris = 16

[controller]
outer_iters = 20
phase_iters = 10

[converge]
d_ap = 50.0
d_cpu = 200.0
d_ris_cpu = 5.0
n_used = 50

[sweep]
modes = ["optimized", "random_phases", "off"]

[[sweep.scenarios]]
name = "near"
d_cpu = 175.0
n_used = 50

[[sweep.scenarios]]
name = "far"
d_cpu = 200.0
n_used = 50
{extra}
"#,
        coeffs_path().display()
    )
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn opts(config: &Path, out: &Path) -> RunOptions {
    RunOptions {
        config: config.to_path_buf(),
        out: out.to_path_buf(),
        ..RunOptions::default()
    }
}

fn config_errors(r: Result<(), CliError>) -> Vec<String> {
    match r {
        Err(CliError::Config(v)) => v,
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn shipped_configs_validate() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../config");
    for name in ["sweep.toml", "converge.toml"] {
        cmd_validate(&root.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn defaults_are_valid() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("[coefficients]\nfile = \"{}\"\n", coeffs_path().display());
    cmd_validate(&write_config(dir.path(), "min.toml", &text)).unwrap();
}

#[test]
fn negative_distance_is_reported_with_its_field() {
    let dir = tempfile::tempdir().unwrap();
    let text = small_config("").replace("d_cpu = 200.0\nd_ris_cpu", "d_cpu = -1.0\nd_ris_cpu");
    let errs = config_errors(cmd_validate(&write_config(dir.path(), "c.toml", &text)));
    assert!(errs.iter().any(|e| e.starts_with("converge.d_cpu")), "{errs:?}");
}

#[test]
fn non_square_ris_with_steering_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let text = small_config("").replace("m_ris = 16", "m_ris = 1000");
    let errs = config_errors(cmd_validate(&write_config(dir.path(), "c.toml", &text)));
    assert!(errs.iter().any(|e| e.starts_with("system.m_ris")), "{errs:?}");
    let text = text.replace("m_ris = 1000", "m_ris = 1000\ngeometric_steering = false");
    cmd_validate(&write_config(dir.path(), "d.toml", &text)).unwrap();
}

#[test]
fn missing_and_unknown_fields_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let text = small_config("").replace("n_used = 50\n\n[sweep]", "\n[sweep]");
    let errs = config_errors(cmd_validate(&write_config(dir.path(), "c.toml", &text)));
    assert!(errs.iter().any(|e| e.contains("n_used")), "{errs:?}");
    let text = small_config("").replace("phase_iters = 10", "phase_iters = 10\nstep = 3");
    let errs = config_errors(cmd_validate(&write_config(dir.path(), "d.toml", &text)));
    assert!(errs.iter().any(|e| e.contains("step")), "{errs:?}");
}

#[test]
fn duplicate_scenario_names_and_missing_coefficients() {
    let dir = tempfile::tempdir().unwrap();
    let text = small_config("").replace("name = \"far\"", "name = \"near\"");
    let errs = config_errors(cmd_validate(&write_config(dir.path(), "c.toml", &text)));
    assert!(errs.iter().any(|e| e.contains("duplicate")), "{errs:?}");
    let text = small_config("").replace(&coeffs_path().display().to_string(), "nowhere.toml");
    let errs = config_errors(cmd_validate(&write_config(dir.path(), "d.toml", &text)));
    assert!(errs.iter().any(|e| e.starts_with("coefficients.file")), "{errs:?}");
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = write_config(dir.path(), "good.toml", &small_config(""));
    let bad = write_config(
        dir.path(),
        "bad.toml",
        &small_config("").replace("m_ris = 16", "m_ris = 0"),
    );
    let code = |args: &[&str]| Command::new(BIN).args(args).output().unwrap().status.code();
    assert_eq!(code(&["validate", "--config", good.to_str().unwrap()]), Some(0));
    assert_eq!(code(&["validate", "--config", bad.to_str().unwrap()]), Some(1));
    assert_eq!(code(&["validate", "--config", "/nonexistent.toml"]), Some(1));
    assert_eq!(code(&["sweep", "--config", good.to_str().unwrap()]), Some(1));
    let out = dir.path().join("out");
    assert_eq!(
        code(&[
            "sweep",
            "--config",
            good.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--modes",
            "off",
            "--realizations",
            "2",
            "--jobs",
            "1"
        ]),
        Some(0)
    );
    assert!(out.join("summary.json").is_file());
    // the output path is an existing file, so nothing can be written below it
    let blocked = dir.path().join("good.toml");
    let blocked_out = blocked.join("x");
    assert_eq!(
        code(&[
            "converge",
            "--config",
            good.to_str().unwrap(),
            "--out",
            blocked_out.to_str().unwrap()
        ]),
        Some(2)
    );
}

#[test]
fn coefficient_path_env_override() {
    let dir = tempfile::tempdir().unwrap();
    let text = small_config("").replace(&coeffs_path().display().to_string(), "missing.toml");
    let cfg = write_config(dir.path(), "c.toml", &text);
    let run = |env: Option<&Path>| {
        let mut cmd = Command::new(BIN);
        cmd.args(["validate", "--config", cfg.to_str().unwrap()]);
        match env {
            Some(p) => cmd.env("FRONTHAUL_COEFFS", p),
            None => cmd.env_remove("FRONTHAUL_COEFFS"),
        };
        cmd.output().unwrap().status.code()
    };
    assert_eq!(run(None), Some(1));
    assert_eq!(run(Some(&coeffs_path())), Some(0));
}

#[test]
fn converge_writes_trace_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &small_config(""));
    let out = dir.path().join("conv");
    let report = cmd_converge(&opts(&cfg, &out)).unwrap();
    let trace = std::fs::read_to_string(&report.trace_path).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next(), Some("iter,r1,r2,r2_tilde,lambda,lagrangian"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 20);
    assert_eq!(rows.len(), report.rows);
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row.len(), 6);
        assert_eq!(row[0], i as f64);
        assert!(row[4] >= 1.0);
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "converge");
    assert_eq!(manifest["master_seed"], 5);

    let again = cmd_converge(&opts(&cfg, &dir.path().join("conv2"))).unwrap();
    assert_eq!(trace, std::fs::read_to_string(again.trace_path).unwrap());
}

#[test]
fn sweep_fans_out_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &small_config(""));
    let a = dir.path().join("a");
    let report = cmd_sweep(&opts(&cfg, &a)).unwrap();
    assert!(report.failures.is_empty());
    for scenario in ["near", "far"] {
        assert!(a.join(scenario).join("realizations.csv").is_file());
        for mode in RisMode::ALL {
            let curve = std::fs::read_to_string(a.join(scenario).join(format!("curve_{mode}.csv"))).unwrap();
            assert_eq!(curve.lines().count(), 1 + 3);
        }
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report.summary_path).unwrap()).unwrap();
    assert_eq!(summary["scenarios"].as_array().unwrap().len(), 2);
    assert!(a.join("manifest.json").is_file());

    let b = dir.path().join("b");
    cmd_sweep(&opts(&cfg, &b)).unwrap();
    for scenario in ["near", "far"] {
        let mut files: Vec<_> = std::fs::read_dir(a.join(scenario))
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        files.sort();
        for f in files {
            let x = std::fs::read(a.join(scenario).join(&f)).unwrap();
            let y = std::fs::read(b.join(scenario).join(&f)).unwrap();
            assert_eq!(x, y, "{scenario}/{f:?} differs");
        }
    }
}

#[test]
fn sweep_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &small_config(""));
    let out = dir.path().join("o");
    let report = cmd_sweep(&RunOptions {
        realizations: Some(5),
        modes: Some(vec![RisMode::Off]),
        seed: Some(11),
        ..opts(&cfg, &out)
    })
    .unwrap();
    let curve = std::fs::read_to_string(out.join("near").join("curve_off.csv")).unwrap();
    assert_eq!(curve.lines().count(), 1 + 5);
    assert!(!out.join("near").join("curve_optimized.csv").exists());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(report.summary_path).unwrap()).unwrap();
    assert_eq!(summary["master_seed"], 11);
    assert_eq!(summary["realizations"], 5);
}
