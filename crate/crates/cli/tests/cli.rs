use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"{
    "trials": 2,
    "folds": 4,
    "latent": {"dim": 4, "kernel_size": 3},
    "generation": {"grid_dim": 16, "radius_range": [3.0, 6.0],
                   "n_train": 10, "n_calib": 30, "n_id_test": 30, "n_shift_test": 30}
}"#;

fn wcpvol(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wcpvol"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("config.json");
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn run_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out_dir = dir.path().join("out");
    let o = wcpvol(&["run", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["results.json", "results.csv", "weights.csv"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(out_dir.join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 6);
}

#[test]
fn seed_override_changes_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let run = |seed: &str, name: &str| {
        let out = dir.path().join(name);
        let o = wcpvol(&["run", &cfg, "--seed", seed, "--out", out.to_str().unwrap()]);
        assert!(o.status.success());
        let mut v: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out.join("results.json")).unwrap())
                .unwrap();
        // the only field that depends on --out
        v["config"]["output_dir"] = serde_json::Value::Null;
        v
    };
    let a = run("1", "a");
    assert_eq!(a, run("1", "b"));
    assert_ne!(a, run("2", "c"));
    assert_eq!(a["config"]["seed"], 1);
}

#[test]
fn generate_fit_and_export_weights() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let data = dir.path().join("data");
    let o = wcpvol(&["generate", &cfg, "--out", data.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(data.join("metadata.json").exists());
    assert_eq!(
        std::fs::metadata(data.join("sample_00000.bin"))
            .unwrap()
            .len(),
        16 * 16 * 16 * 5
    );

    let fit = dir.path().join("fit");
    let o = wcpvol(&["fit", &cfg, "--out", fit.to_str().unwrap()]);
    assert!(o.status.success());
    let th: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fit.join("thresholds.json")).unwrap())
            .unwrap();
    assert!(th["t_upper"].as_f64().unwrap() <= th["t_lower"].as_f64().unwrap());
    assert!(fit.join("filter_bank.json").exists());

    let w = dir.path().join("w");
    let o = wcpvol(&["export-weights", &cfg, "--out", w.to_str().unwrap()]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(w.join("weights.csv")).unwrap();
    assert!(text.starts_with("variant,setting,sample_id,covariate_value,weight\n"));
    assert_eq!(text.lines().count(), 1 + 4 * 30);
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    for bad in [
        "{not json",
        r#"{"alpha": 0}"#,
        r#"{"bogus": 1}"#,
        r#"{"variants": ["standard"], "trials": 0}"#,
    ] {
        let cfg = write_config(dir.path(), bad);
        let o = wcpvol(&["run", &cfg]);
        assert_eq!(o.status.code(), Some(1), "{bad}");
    }
    let o = wcpvol(&["run", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let o = wcpvol(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));

    let cfg = write_config(dir.path(), r#"{"variants": ["standard"], "trials": 1}"#);
    let o = wcpvol(&["export-weights", &cfg]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn runtime_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let o = wcpvol(&["generate", &cfg, "--out", blocker.to_str().unwrap()]);
    assert_eq!(
        o.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}
