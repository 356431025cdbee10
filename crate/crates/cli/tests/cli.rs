use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;
use yflash_core::calibrate::synthesize;
use yflash_core::{DeviceParams, Table};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_yflash-sim"))
}

fn run(dir: &Path, recipe: &str, config: &str, extra: &[&str]) -> Output {
    let cfg = dir.join(format!("{recipe}.json"));
    std::fs::write(&cfg, config).unwrap();
    bin()
        .arg(recipe)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .arg("--quiet")
        .args(extra)
        .output()
        .unwrap()
}

fn error_record(o: &Output) -> Value {
    let text = String::from_utf8(o.stderr.clone()).unwrap();
    serde_json::from_str(text.trim()).unwrap_or_else(|e| panic!("{e}: {text}"))
}

fn table(path: PathBuf) -> Table {
    Table::load(&path).unwrap()
}

fn recipes_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../recipes")
}

#[test]
fn empty_config_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let o = run(dir.path(), "sweep", "", &[]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_record(&o)["error"]["kind"], "config");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let o = run(dir.path(), "sweep", r#"{"sweep": {"step": 0.01}}"#, &[]);
    assert_eq!(o.status.code(), Some(2));
    let msg = error_record(&o)["error"]["message"].as_str().unwrap().to_string();
    assert!(msg.contains("step"), "{msg}");
}

#[test]
fn recipe_mismatch_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let o = run(dir.path(), "sweep", r#"{"recipe": "program"}"#, &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn out_of_range_bias_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let o = run(dir.path(), "program", r#"{"program": {"voltage": 3.0}}"#, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn exhausted_budget_is_a_numerical_failure() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"{"program": {"width": 1e-6, "edge": 1e-7, "pulses": 2, "stop_at": 1e-9}}"#;
    let o = run(dir.path(), "program", cfg, &[]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(error_record(&o)["error"]["kind"], "numerical");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn missing_files_are_io_failures() {
    let o = bin().args(["sweep", "--config", "/nonexistent/cfg.json"]).output().unwrap();
    assert_eq!(o.status.code(), Some(4));
    assert_eq!(error_record(&o)["error"]["kind"], "io");

    let dir = TempDir::new().unwrap();
    let o = run(dir.path(), "calibrate", r#"{"calibrate": {"data": "missing.csv"}}"#, &[]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn bad_thread_count_is_rejected() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, "{}").unwrap();
    let o = bin()
        .args(["sweep", "--check", "--config"])
        .arg(&cfg)
        .env("YFLASH_SIM_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_reads_the_pristine_level() {
    let dir = TempDir::new().unwrap();
    let o = run(dir.path(), "sweep", "{}", &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let t = table(dir.path().join("out/sweep.csv"));
    let v = t.column("v_V").unwrap();
    let i = t.column("i_sr_A").unwrap();
    assert_eq!(v.len(), 201);
    assert_eq!((v[0], v[200]), (0.0, 2.0));
    assert!((i[200] / 4.34e-6 - 1.0).abs() < 0.05, "{}", i[200]);
    assert_eq!(i[0], 0.0);
}

#[test]
fn program_recipe_gives_ten_states() {
    let dir = TempDir::new().unwrap();
    let cfg = std::fs::read_to_string(recipes_dir().join("fig3_program.json")).unwrap();
    let o = run(dir.path(), "program", &cfg, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let t = table(dir.path().join("out/program.csv"));
    assert_eq!(t.rows(), 10);
    assert_eq!(t.column("pulse_index").unwrap()[9], 9.0);
    let i = t.column("read_current_A").unwrap();
    assert!(i.windows(2).all(|w| w[1] < w[0]));
    // The resolved config is stored next to the outputs.
    let stored: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/config.json")).unwrap()).unwrap();
    assert_eq!(stored["program"]["width"], 4e-3);
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let cfg = r#"{"population": {"devices": 20, "operation": "program"}, "program": {"width": 2e-4}}"#;
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let o = run(a.path(), "mc", cfg, &["--seed", "11"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    // A different thread count must not change anything.
    let cfg_b = b.path().join("mc.json");
    std::fs::write(&cfg_b, cfg).unwrap();
    let o = bin()
        .args(["mc", "--quiet", "--seed", "11", "--config"])
        .arg(&cfg_b)
        .arg("--out")
        .arg(b.path().join("out"))
        .env("YFLASH_SIM_THREADS", "1")
        .output()
        .unwrap();
    assert!(o.status.success());
    for f in ["mc_times.csv", "mc_state.csv", "mc_summary.json"] {
        let x = std::fs::read(a.path().join("out").join(f)).unwrap();
        let y = std::fs::read(b.path().join("out").join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
    let summary: Value =
        serde_json::from_str(&std::fs::read_to_string(a.path().join("out/mc_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 11);
}

#[test]
fn seed_changes_the_population() {
    let cfg = r#"{"population": {"devices": 20, "operation": "program"}, "program": {"width": 2e-4}}"#;
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    assert!(run(a.path(), "mc", cfg, &["--seed", "1"]).status.success());
    assert!(run(b.path(), "mc", cfg, &["--seed", "2"]).status.success());
    let x = table(a.path().join("out/mc_state.csv"));
    let y = table(b.path().join("out/mc_state.csv"));
    assert_ne!(x.column("v_alpha_V"), y.column("v_alpha_V"));
}

#[test]
fn mc_state_feeds_array_recipes() {
    let dir = TempDir::new().unwrap();
    let cfg = r#"{"population": {"devices": 20, "operation": "program"}, "program": {"width": 2e-4}}"#;
    assert!(run(dir.path(), "mc", cfg, &[]).status.success());
    let o = run(dir.path(), "vmm", r#"{"array": {"state_file": "out/mc_state.csv"}}"#, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let t = table(dir.path().join("out/vmm.csv"));
    // One drain line of 20 pristine cells: every output is one read current.
    assert_eq!(t.rows(), 20);
    let i = t.column("current_A").unwrap();
    assert!(i.iter().all(|&x| x == i[0]));
}

#[test]
fn sneak_recipe_reports_a_large_ratio() {
    let dir = TempDir::new().unwrap();
    let o = run(dir.path(), "sneak", "{}", &[]);
    assert!(o.status.success());
    let r: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/sneak.json")).unwrap()).unwrap();
    assert!(r["ratio"].as_f64().unwrap() > 1e6);
    assert_eq!(r["worst_cell"], serde_json::json!([1, 1]));
}

#[test]
fn calibrate_recovers_generating_parameters() {
    let dir = TempDir::new().unwrap();
    let p = DeviceParams::default();
    let v: Vec<f64> = (1..=30).map(|k| 0.07 * k as f64).collect();
    let data = synthesize(&p, &p.read, 0.0, &v);
    Table::new()
        .with("v_V", data.voltage)
        .with("i_sr_A", data.current)
        .save(&dir.path().join("iv.csv"))
        .unwrap();
    let o = run(dir.path(), "calibrate", r#"{"calibrate": {"data": "iv.csv"}}"#, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/calibration.json")).unwrap()).unwrap();
    let fit = &r["params"];
    for (key, want) in [
        ("v_th", p.read.v_th),
        ("i_s0", p.read.i_s0),
        ("k_gain", p.read.k_gain),
        ("n_ideality", p.read.n_ideality),
    ] {
        let got = fit[key].as_f64().unwrap();
        assert!((got / want - 1.0).abs() < 0.01, "{key}: {got} vs {want}");
    }
}

#[test]
fn help_lists_recipes_and_keys() {
    let o = bin().arg("--help").output().unwrap();
    let text = String::from_utf8(o.stdout).unwrap();
    for r in ["sweep", "pulse_read", "program", "erase", "cycle", "mc", "vmm", "sneak", "calibrate"] {
        assert!(text.contains(&format!("- {r}:")), "{r}");
    }
    for key in [
        "device.read.v_th = 0.82",
        "device.c_gd = 1e-15",
        "program.voltage = 5.0",
        "erase.voltage = 8.0",
        "sweep.points = 201",
        "population.devices = 96",
        "experiment.read.v_read = 2.0",
    ] {
        assert!(text.contains(key), "{key}");
    }
}

#[test]
fn shipped_recipes_validate() {
    let mut n = 0;
    for entry in std::fs::read_dir(recipes_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_none_or(|e| e != "json") {
            continue;
        }
        let v: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        let recipe = v["recipe"].as_str().unwrap();
        let o = bin().arg(recipe).arg("--check").arg("--config").arg(&path).output().unwrap();
        assert!(o.status.success(), "{}: {}", path.display(), String::from_utf8_lossy(&o.stderr));
        n += 1;
    }
    assert!(n >= 7);
}
