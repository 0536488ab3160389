use std::path::Path;
use std::process::{Command, Output};

const PB_PLAN: &str = "[experiment]\nkind = \"pb-validate\"\nseed = 1\n[pb_validate]\ngrid_n = 32\ndensities = 3\n";
const LLN_PLAN: &str = "[experiment]\nkind = \"lln\"\nseed = 4\n[datum]\nprofile = \"uniform\"\n\
    [lln]\nobservable = \"mollifier\"\nladder = [64, 256]\nr = 0.2\ntrials = 8\ngrid_n = 128\n";

fn lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vpme-lab")).args(args).env_remove("VPME_THREADS").output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn same_seed_gives_identical_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "pb.toml", PB_PLAN);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        let o = lab(&["pb-validate", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(std::fs::read(a.join("summary.json")).unwrap(), std::fs::read(b.join("summary.json")).unwrap());
    let o = lab(&["pb-validate", "--config", &cfg, "--seed", "2", "--out", b.to_str().unwrap()]);
    assert!(o.status.success());
    assert_ne!(std::fs::read(a.join("summary.json")).unwrap(), std::fs::read(b.join("summary.json")).unwrap());
}

#[test]
fn missing_config_exits_2_with_path() {
    let o = lab(&["converge", "--config", "/nonexistent/plan.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/plan.toml"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(lab(&["converge", "--config", "x.toml", "--bogus"]).status.code(), Some(2));
    assert_eq!(lab(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn kind_mismatch_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "pb.toml", PB_PLAN);
    let o = lab(&["converge", "--config", &cfg, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("pb-validate"));
}

#[test]
fn invalid_plan_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bad.toml", &PB_PLAN.replace("grid_n = 32", "grid_n = 30"));
    let o = lab(&["pb-validate", "--config", &cfg, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn report_regenerates_plots() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "lln.toml", LLN_PLAN);
    let out = tmp.path().join("run");
    let o = lab(&["lln", "--config", &cfg, "--out", out.to_str().unwrap(), "--threads", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.join("plots").exists());
    let o = lab(&["report", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["lln_tail.svg", "lln_clt.svg"] {
        let svg = std::fs::read_to_string(out.join("plots").join(name)).unwrap();
        assert!(svg.starts_with("<svg"), "{name}");
    }
}

#[test]
fn report_without_run_fails_with_io_code() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(lab(&["report", "--out", tmp.path().to_str().unwrap()]).status.code(), Some(1));
}
