use std::path::Path;

use vpme_lab::experiments::converge::ConvergeResult;
use vpme_lab::experiments::flow_rate::{differences, flow_at, initial_data};
use vpme_lab::store::{Meta, Summary};
use vpme_lab::{run_plan, Plan, RunOptions};

fn converge_plan(ladder: &str) -> Plan {
    Plan::from_toml_str(&format!(
        "[experiment]\nkind = \"converge\"\nseed = 11\n\
         [converge]\nladder = {ladder}\nepsilon = 0.1\nr_scale = 0.5\ntrials = 3\nt_final = 0.05\n"
    ))
    .unwrap()
}

fn meta(dir: &Path) -> Meta {
    serde_json::from_slice(&std::fs::read(dir.join("meta.json")).unwrap()).unwrap()
}

#[test]
fn single_rung_ladder_is_flagged() {
    let tmp = tempfile::tempdir().unwrap();
    let plan = converge_plan("[16]");
    let outcome = run_plan(&plan, &RunOptions { out: tmp.path().into(), plot: false }).unwrap();
    assert_eq!(outcome.aborted, 0);
    assert!(!outcome.checks_passed);
    let s: Summary<ConvergeResult> =
        serde_json::from_slice(&std::fs::read(tmp.path().join("summary.json")).unwrap()).unwrap();
    assert!(s.result.slope.is_none());
    assert!(s.result.flags.iter().any(|f| f == "insufficient ladder"));
    assert!(s.result.flags.iter().any(|f| f == "slope undefined"));
    assert_eq!(s.result.rungs[0].completed, 3);
}

#[test]
fn rerun_resumes_from_cache() {
    let tmp = tempfile::tempdir().unwrap();
    let plan = converge_plan("[16, 32]");
    let opts = RunOptions { out: tmp.path().into(), plot: false };
    run_plan(&plan, &opts).unwrap();
    let first = std::fs::read(tmp.path().join("summary.json")).unwrap();
    assert_eq!(meta(tmp.path()).trials_computed, 6);
    // Drop one cached trial to simulate an interrupted run.
    let cache = tmp.path().join(".cache").join(plan.id());
    std::fs::remove_file(cache.join("N0000032-t0001.json")).unwrap();
    run_plan(&plan, &opts).unwrap();
    let m = meta(tmp.path());
    assert_eq!((m.trials_computed, m.trials_resumed), (1, 5));
    assert_eq!(std::fs::read(tmp.path().join("summary.json")).unwrap(), first);
}

fn flow_plan(profile: &str, reference: usize, t_final: f64) -> Plan {
    Plan::from_toml_str(&format!(
        "[experiment]\nkind = \"flow-rate\"\nseed = 2\n[datum]\nprofile = \"{profile}\"\n\
         [flow_rate]\nr_ladder = [0.125, 0.0625]\nreference = {reference}\nprobes = 16\nt_final = {t_final}\n"
    ))
    .unwrap()
}

#[test]
fn identical_scales_give_zero_difference() {
    let plan = flow_plan("cosine", 1024, 0.05);
    let fp = plan.flow_rate.as_ref().unwrap();
    let (reference, probes) = initial_data(&plan, fp).unwrap();
    let a = flow_at(&plan, fp, &reference, &probes, 0.125).unwrap();
    let b = flow_at(&plan, fp, &reference, &probes, 0.125).unwrap();
    let d = differences(2, &[a, b]).unwrap();
    assert_eq!(d[0].sup, 0.0);
    assert!(d[0].ratio.is_none());
}

#[test]
fn uniform_datum_sits_at_the_noise_floor() {
    // A lattice of 64 points per axis in each beam keeps the quiet ripple far below the signal.
    let uniform = flow_plan("uniform", 16_384, 0.25);
    let cosine = flow_plan("cosine", 16_384, 0.25);
    let sup = |plan: &Plan| {
        let fp = plan.flow_rate.as_ref().unwrap();
        let (reference, probes) = initial_data(plan, fp).unwrap();
        let rungs: Vec<_> = fp.r_ladder.iter().map(|&r| flow_at(plan, fp, &reference, &probes, r).unwrap()).collect();
        differences(2, &rungs).unwrap()[0].sup
    };
    let (u, c) = (sup(&uniform), sup(&cosine));
    assert!(u < 0.1 * c, "uniform {u:e} vs cosine {c:e}");
}
