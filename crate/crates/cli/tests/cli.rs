use std::path::Path;
use std::process::{Command, Output};

use mrm_core::config::ExperimentConfig;

fn fixture(name: &str) -> String {
    format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn mrm(outdir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mrm")).arg("--outdir").arg(outdir).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_writes_csv_and_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let o = mrm(dir.path(), &["run", &fixture("sga_small.toml")]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("sga_small.csv")).unwrap();
    assert!(csv.starts_with("n,half,x_0,x_1,y_0,y_1,signal_norm\n"));
    assert!(!csv.contains('\r'));
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("sga_small.json")).unwrap()).unwrap();
    assert_eq!(meta["meta"]["algorithm"], "sga");
    assert_eq!(meta["counters"]["oracle_calls"], 2000);
}

#[test]
fn rerun_from_metadata_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(mrm(dir.path(), &["run", &fixture("sga_small.toml")]).status.code(), Some(0));
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("sga_small.json")).unwrap()).unwrap();
    let cfg: ExperimentConfig = serde_json::from_value(meta["config"].clone()).unwrap();
    let replay = dir.path().join("replay");
    std::fs::create_dir_all(&replay).unwrap();
    let cpath = replay.join("cfg.toml");
    std::fs::write(&cpath, cfg.to_toml()).unwrap();
    assert_eq!(mrm(&replay, &["run", cpath.to_str().unwrap()]).status.code(), Some(0));
    let a = std::fs::read(dir.path().join("sga_small.csv")).unwrap();
    let b = std::fs::read(replay.join("sga_small.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn seed_override_changes_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(mrm(&a, &["run", &fixture("sga_small.toml")]).status.code(), Some(0));
    assert_eq!(mrm(&b, &["run", &fixture("sga_small.toml"), "--seed", "5"]).status.code(), Some(0));
    assert_ne!(std::fs::read(a.join("sga_small.csv")).unwrap(), std::fs::read(b.join("sga_small.csv")).unwrap());
}

#[test]
fn incompatible_preset_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = mrm(dir.path(), &["run", &fixture("ew_euclidean.toml")]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("ew") && e.contains("logit"), "{e}");
    assert!(!dir.path().join("ew_euclidean.csv").exists());
}

#[test]
fn missing_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(mrm(dir.path(), &["run", "/nonexistent/x.toml"]).status.code(), Some(2));
}

#[test]
fn dga_blowup_exits_3_with_clip_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = mrm(dir.path(), &["run", &fixture("dga_clip.toml")]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let e = stderr(&o);
    assert!(e.contains("overflow") && e.contains("clips"), "{e}");
    // the partial record is still written for inspection
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("dga_clip.json")).unwrap()).unwrap();
    assert!(meta["counters"]["clips"].as_u64().unwrap() > 0);
    assert_eq!(meta["failure"]["kind"], "overflow");
}

#[test]
fn sweep_aggregates_grid_and_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let o = mrm(dir.path(), &["sweep", &fixture("sga_small.toml"), "--grid", "p=0.6,1", "--seeds", "0..2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = std::fs::read_to_string(dir.path().join("sga_small_sweep.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "p,seed,status,steps,sup_dual_norm,x_0,x_1");
    assert_eq!(lines.len(), 5);
    assert!(lines[1..].iter().all(|l| l.contains(",ok,2000,")));
    let runs = std::fs::read_dir(dir.path()).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "json")).count();
    assert_eq!(runs, 4);
}

#[test]
fn sweep_rejects_unknown_grid_key() {
    let dir = tempfile::tempdir().unwrap();
    let o = mrm(dir.path(), &["sweep", &fixture("sga_small.toml"), "--grid", "mirror=1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn reproduce_unknown_figure_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(mrm(dir.path(), &["reproduce", "fig9"]).status.code(), Some(2));
}

#[test]
fn reproduce_fig2_reaches_boundary() {
    let dir = tempfile::tempdir().unwrap();
    let o = mrm(dir.path(), &["reproduce", "fig2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for alg in ["sga", "eg", "og"] {
        assert!(dir.path().join(format!("fig2_{alg}.csv")).exists());
    }
    let gp = std::fs::read_to_string(dir.path().join("fig2.gp")).unwrap();
    assert!(gp.contains("fig2_og.csv") && gp.contains("plot"));
    let diag: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("fig2_diagnostics.json")).unwrap()).unwrap();
    for d in diag.as_array().unwrap() {
        assert!(d["boundary_gap"].as_f64().unwrap() <= 1e-2, "{d}");
    }
}

#[test]
fn reproduce_fig1_reports_cycle() {
    let dir = tempfile::tempdir().unwrap();
    let o = mrm(dir.path(), &["reproduce", "fig1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(dir.path().join("fig1_cycle.csv").exists());
    let diag: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("fig1_diagnostics.json")).unwrap()).unwrap();
    assert_eq!(diag.as_array().unwrap().len(), 3);
    assert!(diag.as_array().unwrap().iter().all(|d| d["within_0_1"] == true));
}

#[test]
fn verify_single_suite_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = mrm(dir.path(), &["verify", "c3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("PASS c3"));
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("verify_c3.json")).unwrap()).unwrap();
    assert_eq!(rep["passed"], 1);
}

#[test]
fn verify_unknown_suite_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(mrm(dir.path(), &["verify", "c14"]).status.code(), Some(2));
}

#[test]
fn dynamics_writes_flow_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = mrm(dir.path(), &["dynamics", "--game", "decay:rate=1", "--mirror", "exp_orthant", "--y0", "-0.5", "--horizon", "2", "--output", "dgd"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let t = std::fs::read_to_string(dir.path().join("dgd.csv")).unwrap();
    let mut lines = t.lines();
    assert_eq!(lines.next(), Some("t,x_0,y_0"));
    let last: Vec<f64> = t.lines().last().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert!((last[0] - 2.0).abs() < 1e-9);
    assert!((last[1] - (-0.5f64 - 2.0).exp()).abs() < 1e-9);
}

#[test]
fn dynamics_rejects_bad_mirror() {
    let dir = tempfile::tempdir().unwrap();
    let o = mrm(dir.path(), &["dynamics", "--game", "prisoners_dilemma", "--mirror", "tanh_interval"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_thread_count_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_mrm")).env("MRM_THREADS", "zero").arg("--outdir").arg(dir.path()).args(["verify", "c2"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn shipped_configs_build() {
    let dir = format!("{}/../../configs", env!("CARGO_MANIFEST_DIR"));
    let mut n = 0;
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        let cfg = ExperimentConfig::from_toml(&std::fs::read_to_string(&p).unwrap()).unwrap();
        cfg.build().unwrap_or_else(|err| panic!("{}: {err}", p.display()));
        n += 1;
    }
    assert!(n >= 8);
}
