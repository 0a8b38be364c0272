use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
[domain]
length_x = 1.0
length_y = 1.0
cells_x = 8
cells_y = 8

[params]
r = 1.0
mu = 2.0
gamma = 1.5
epsilon = 0.05
gravity = 1.0

[initial]
preset = "gaussian-bump"
width = 0.15
swirl = 0.3

[run]
t_end = 0.05
dt_max = 0.005
record_every = 2
"#;

fn chemoflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chemoflow"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn run_writes_bundle_and_check_agrees() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let out = dir.path().join("bundle");
    let o = chemoflow(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["records.csv", "steps.csv", "summary.json", "final_state.json", "records.svg"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["schema"], 1);
    let o = chemoflow(&["check", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn no_svg_flag_and_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &CONFIG.replace("gaussian-bump", "random-positive"));
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    for (out, seed) in [(&a, "1"), (&b, "1"), (&c, "2")] {
        let o = chemoflow(&["run", &cfg, "--no-svg", "--seed", seed, "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0));
        assert!(!out.join("records.svg").exists());
    }
    let read = |p: &Path| std::fs::read(p.join("records.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
}

#[test]
fn invalid_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &CONFIG.replace("gamma = 1.5", "gamma = 1.0"));
    let o = chemoflow(&["run", &cfg, "--out", dir.path().join("x").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let typo = write_config(dir.path(), &CONFIG.replace("swirl", "swril"));
    assert_eq!(chemoflow(&["run", &typo]).status.code(), Some(1));
    assert_eq!(chemoflow(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn sweeps_and_mms_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let eps = dir.path().join("eps");
    let o = chemoflow(&["sweep-eps", &cfg, "--eps", "0.2,0.1,0.05", "--out", eps.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(eps.join("sweep.json").exists() && eps.join("sweep.csv").exists());
    let bad = chemoflow(&["sweep-eps", &cfg, "--eps", "0.1,0.1,0.1"]);
    assert_ne!(bad.status.code(), Some(0));

    let mu = dir.path().join("mu");
    let cache = dir.path().join("gn.json");
    let o = chemoflow(&[
        "sweep-mu",
        &cfg,
        "--mu",
        "1,100",
        "--gn-cache",
        cache.to_str().unwrap(),
        "--out",
        mu.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(cache.exists());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("Subcritical") && text.contains("Gated"), "{text}");

    let mms = dir.path().join("mms");
    let o = chemoflow(&["mms", &cfg, "--levels", "3", "--out", mms.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(mms.join("mms.json").exists());

    let gn = dir.path().join("gn");
    let o = chemoflow(&["gn-estimate", &cfg, "--threads", "2", "--out", gn.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(gn.join("gn_estimate.json").exists());
}
