use std::path::Path;
use std::process::{Command, Output};

fn dualsys(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dualsys")).args(args).current_dir(cwd).env("RUST_LOG", "warn").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn gsb_prints_signed_score_and_fraction() {
    let dir = tempfile::tempdir().unwrap();
    let o = dualsys(&["gsb", "35", "12", "53"], dir.path());
    assert!(o.status.success());
    assert_eq!(stdout(&o).trim(), "+0.23 (23/100)");
    assert_eq!(stdout(&dualsys(&["gsb", "12", "35", "53"], dir.path())).trim(), "-0.23 (-23/100)");
    let o = dualsys(&["gsb", "0", "0", "0"], dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("undefined"));
}

#[test]
fn list_names_every_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let names: Vec<String> = stdout(&dualsys(&["list"], dir.path())).lines().map(String::from).collect();
    assert_eq!(names.len(), 11);
    assert!(names.contains(&"ablate-nopseudo".to_string()));
}

#[test]
fn unknown_experiment_and_bad_keys_fail() {
    let dir = tempfile::tempdir().unwrap();
    let o = dualsys(&["run", "train-everything"], dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown experiment"));

    std::fs::write(dir.path().join("bad.toml"), "[stages]\nmain_step = 3\n").unwrap();
    let o = dualsys(&["run", "plan", "--config", "bad.toml"], dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("main_step"));
}

#[test]
fn plan_run_writes_schedule_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = dualsys(&["run", "plan", "--seed", "9", "--backend", "mock", "--out", "p"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("p");
    let sched: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("schedule.json")).unwrap()).unwrap();
    assert_eq!(sched["shots"].as_array().unwrap().len(), 3);
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 9);
    assert_eq!(m["experiment"], "plan");
    assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn default_config_round_trips_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let toml = stdout(&dualsys(&["config"], dir.path()));
    std::fs::write(dir.path().join("c.toml"), &toml).unwrap();
    let o = dualsys(&["run", "plan", "--config", "c.toml", "--reflect", "off", "--out", "q"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(dir.path().join("q/config.toml")).unwrap(), toml);
}
