use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;
use tempfile::TempDir;
use timebin_cli::{load_config, CliError, Overrides, BUNDLE_FILE, COUNTS_FILE, OUT_DIR_ENV};
use timebin_core::{DarkCountProb, LossChain, PortConvention, ScenarioKind, PAPER_CALIBRATED};

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn simulate(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_simulate"))
        .args(args)
        .env_remove(OUT_DIR_ENV)
        .output()
        .unwrap()
}

fn bundle(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join(BUNDLE_FILE)).unwrap()).unwrap()
}

#[test]
fn minimal_chsh_config_gets_default_shots() {
    let tmp = TempDir::new().unwrap();
    let path = write(tmp.path(), "chsh.toml", "scenario = \"chsh\"\n");
    let cfg = load_config(&path, &Overrides::default()).unwrap();
    assert_eq!(cfg.spec.kind, ScenarioKind::Chsh);
    assert_eq!(cfg.spec.shots, 100_000);
}

#[test]
fn out_of_range_efficiency_names_the_field() {
    let tmp = TempDir::new().unwrap();
    let path = write(
        tmp.path(),
        "bad.toml",
        r#"
scenario = "chsh"

[losses]
preparation = 0.9
retrieval = 1.3
fiber_coupling = 0.69
aom_deflection = 0.77
mz_transmission = 0.47
detector_efficiency = 0.6
"#,
    );
    let err = load_config(&path, &Overrides::default()).unwrap_err();
    match &err {
        CliError::Invalid { field, .. } => assert_eq!(field, "losses.retrieval"),
        other => panic!("{other:?}"),
    }
    assert_eq!(err.exit_code(), 1);
    assert!(err.to_string().contains("losses.retrieval"));
}

#[test]
fn unknown_inline_noise_key_names_the_key() {
    let tmp = TempDir::new().unwrap();
    let path = write(tmp.path(), "bad.toml", "scenario = \"chsh\"\n[noise]\ndephasing = 0.1\n");
    let err = load_config(&path, &Overrides::default()).unwrap_err();
    assert!(err.to_string().contains("dephasing"), "{err}");
}

#[test]
fn paper_calibrated_preset_is_populated() {
    let tmp = TempDir::new().unwrap();
    let path = write(tmp.path(), "cal.toml", "scenario = \"entangle-scan\"\nnoise = \"paper-calibrated\"\n");
    let cfg = load_config(&path, &Overrides::default()).unwrap();
    assert_eq!(cfg.spec.noise.rydberg_dephasing, PAPER_CALIBRATED.rydberg_dephasing);
    assert_eq!(cfg.spec.losses, LossChain::experimental());
    assert_eq!(
        cfg.spec.detector.dark_count_prob,
        DarkCountProb::PerDetector([
            PAPER_CALIBRATED.dark_spd12,
            PAPER_CALIBRATED.dark_spd12,
            PAPER_CALIBRATED.dark_spd34,
            PAPER_CALIBRATED.dark_spd34
        ])
    );
    assert_eq!(cfg.spec.detector.afterpulse_prob, PAPER_CALIBRATED.afterpulse);
    assert_eq!(cfg.spec.detector.port_convention, PortConvention::SwapSecond);
}

#[test]
fn echoed_config_reruns_to_identical_counts() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(
        tmp.path(),
        "scan.toml",
        "noise = \"paper-calibrated\"\nmaster_seed = 11\ngrid = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]\n",
    );
    let first = tmp.path().join("first");
    let out = simulate(&[
        "entangle-scan",
        "--config",
        cfg.to_str().unwrap(),
        "--shots",
        "20000",
        "--out",
        first.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let echo = write(tmp.path(), "echo.json", &bundle(&first)["config"].to_string());
    let second = tmp.path().join("second");
    let out = simulate(&["entangle-scan", "--config", echo.to_str().unwrap(), "--out", second.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let a = fs::read(first.join(COUNTS_FILE)).unwrap();
    assert_eq!(a, fs::read(second.join(COUNTS_FILE)).unwrap());
    assert_eq!(bundle(&first)["derived"], bundle(&second)["derived"]);
    let header = String::from_utf8(a).unwrap();
    assert!(header.starts_with("point,grid_value,"));
}

#[test]
fn ideal_prep_verify_has_unit_visibility() {
    let tmp = TempDir::new().unwrap();
    let out = simulate(&["prep-verify", "--seed", "3", "--shots", "20000", "--out", tmp.path().to_str().unwrap()]);
    assert!(out.status.success());
    let b = bundle(tmp.path());
    assert_eq!(b["derived"]["scenario"], "prep-verify");
    assert!(b["derived"]["fringe"]["visibility"].as_f64().unwrap() > 0.999);
    assert_eq!(b["counts"].as_array().unwrap().len(), 24);
}

#[test]
fn ideal_chsh_reaches_tsirelson_bound() {
    let tmp = TempDir::new().unwrap();
    let out = simulate(&["chsh", "--seed", "5", "--out", tmp.path().to_str().unwrap()]);
    assert!(out.status.success());
    let bell = &bundle(tmp.path())["derived"]["bell"];
    let (s, sigma) = (bell["s"].as_f64().unwrap(), bell["sigma_s"].as_f64().unwrap());
    assert!((s - 2.0 * 2f64.sqrt()).abs() < 5.0 * sigma.max(1e-3), "S = {s} ± {sigma}");
    let correlations = bell["correlations"].as_array().unwrap();
    assert_eq!(correlations.len(), 4);
    for c in correlations {
        for key in ["alpha_deg", "beta_deg", "e", "sigma", "coincidences"] {
            assert!(c.get(key).is_some(), "missing {key}");
        }
    }
}

#[test]
fn bundles_report_every_figure_quantity() {
    let tmp = TempDir::new().unwrap();
    let expected: [(&str, &[&str]); 5] = [
        ("rabi-scan", &["fits"]),
        ("prep-verify", &["fringe"]),
        ("entangle-scan", &["v1", "v2", "fidelity", "fidelity_err"]),
        ("chsh", &["bell"]),
        ("efficiency-budget", &["efficiency"]),
    ];
    for (scenario, keys) in expected {
        let dir = tmp.path().join(scenario);
        let out = simulate(&[scenario, "--shots", "4000", "--out", dir.to_str().unwrap()]);
        assert!(out.status.success(), "{scenario}: {}", String::from_utf8_lossy(&out.stderr));
        let b = bundle(&dir);
        for key in keys {
            assert!(b["derived"].get(key).is_some(), "{scenario} lacks {key}");
        }
        for key in ["version", "elapsed_s", "started_unix_s"] {
            assert!(b["runtime"].get(key).is_some());
        }
        assert!(dir.join(COUNTS_FILE).exists());
    }
}

#[test]
fn out_dir_defaults_to_environment() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("from-env");
    let out = Command::new(env!("CARGO_BIN_EXE_simulate"))
        .args(["efficiency-budget", "--shots", "1000"])
        .env(OUT_DIR_ENV, &dir)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.join(BUNDLE_FILE).exists());
}

#[test]
fn exit_codes_separate_config_from_runtime_errors() {
    let tmp = TempDir::new().unwrap();
    let out_dir = tmp.path().join("out");
    let out_dir = out_dir.to_str().unwrap();

    let missing = simulate(&["chsh", "--config", "/nonexistent/config.toml", "--out", out_dir]);
    assert_eq!(missing.status.code(), Some(1));

    let bad = write(tmp.path(), "bad.toml", "scenario = \"chsh\"\nshots = 0\n");
    assert_eq!(simulate(&["chsh", "--config", bad.to_str().unwrap(), "--out", out_dir]).status.code(), Some(1));

    assert_eq!(simulate(&["teleport", "--out", out_dir]).status.code(), Some(1));

    // Output location is a regular file, so writing fails after the run.
    let blocker = write(tmp.path(), "blocker", "");
    let out = simulate(&["efficiency-budget", "--shots", "100", "--out", blocker.join("sub").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    assert_eq!(simulate(&["efficiency-budget", "--shots", "100", "--out", out_dir]).status.code(), Some(0));
}

#[test]
fn shipped_configs_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        load_config(&path, &Overrides::default()).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        n += 1;
    }
    assert!(n >= 4);
}
