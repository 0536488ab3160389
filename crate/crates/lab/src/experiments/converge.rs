//! Mean-field convergence: terminal sup distance between the coupled system and
//! the auxiliary particles driven by a large reference ensemble, down an `N` ladder.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use vpme_core::dynamics::run_pair;
use vpme_core::kdist::{audit_series, KineticDistanceParams};
use vpme_core::rng::derive_seed;

use crate::error::{LabError, Result};
use crate::experiments::{Outcome, RunContext};
use crate::plan::{ConvergePlan, Plan};
use crate::stats::{frequency_sigma, median_slope_bootstrap, non_increasing_within_3sigma, quantile, SlopeFit};
use crate::store::{num, Cached, RunDir, Summary, TRIALS};

pub const BOOTSTRAP_RESAMPLES: usize = 1000;
/// Minimum ladder length for a slope fit to be reported without a flag.
pub const MIN_LADDER: usize = 4;

/// Kinetic-distance audit attached to a trial.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub holds: bool,
    pub max_ratio: f64,
    pub terminal_j: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergeTrial {
    pub plan_id: String,
    pub n: usize,
    pub r: f64,
    pub trial: usize,
    pub seed: u64,
    /// Absent when the trial aborted.
    pub terminal: Option<Terminal>,
    pub series: Option<String>,
    pub audit: Option<AuditSummary>,
    pub aborted: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Terminal {
    pub sup_x: f64,
    pub sup_v: f64,
    /// `max(sup_x, sup_v)` at the final time.
    pub distance: f64,
    pub max_field: f64,
    pub max_field_diff: f64,
    pub solver_iterations: usize,
    pub max_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergeRung {
    pub n: usize,
    pub r: f64,
    pub threshold: f64,
    pub trials: usize,
    pub completed: usize,
    pub median: Option<f64>,
    /// Quantiles 0.1, 0.25, 0.75, 0.9 of the terminal distance.
    pub quantiles: Option<[f64; 4]>,
    pub exceedance: f64,
    pub exceedance_sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergeResult {
    pub grid_n: usize,
    pub rungs: Vec<ConvergeRung>,
    pub slope: Option<SlopeFit>,
    pub median_decreasing: bool,
    pub exceedance_monotone: bool,
    pub aborted: usize,
    pub flags: Vec<String>,
}

pub fn trial_id(n: usize, t: usize) -> String {
    format!("N{n:07}-t{t:04}")
}

fn run_trial(plan: &Plan, cp: &ConvergePlan, n: usize, t: usize, dir: &RunDir) -> Result<ConvergeTrial> {
    let datum = plan.datum.datum()?;
    let seed = derive_seed(plan.seed(), &[n as u64, t as u64]);
    let cfg = cp.simulation(datum, n, seed);
    let id = trial_id(n, t);
    let mut rec = ConvergeTrial {
        plan_id: plan.id(),
        n,
        r: cfg.r,
        trial: t,
        seed,
        terminal: None,
        series: None,
        audit: None,
        aborted: None,
    };
    let pair = match run_pair(&cfg) {
        Ok(p) => p,
        Err(e) => {
            rec.aborted = Some(e.to_string());
            return Ok(rec);
        }
    };
    let last = pair.terminal();
    rec.terminal = Some(Terminal {
        sup_x: last.sup_x,
        sup_v: last.sup_v,
        distance: last.sup_x.max(last.sup_v),
        max_field: pair.series.iter().map(|s| s.max_field).fold(0.0, f64::max),
        max_field_diff: pair.series.iter().map(|s| s.field_diff).fold(0.0, f64::max),
        solver_iterations: pair.solver_iterations,
        max_residual: pair.max_residual,
    });
    if let Some([a, b]) = cp.audit {
        if let Ok(params) = KineticDistanceParams::new(cfg.r, a, b) {
            let (j, audit) = audit_series(&params, &pair.series)?;
            rec.audit =
                Some(AuditSummary { holds: audit.holds, max_ratio: audit.max_ratio, terminal_j: *j.last().unwrap() });
        }
    }
    if cp.series {
        let name = RunDir::series_name(&id);
        let path = dir.path(&name);
        let file = std::fs::File::create(&path).map_err(LabError::io(&path))?;
        pair.write_series_csv(std::io::BufWriter::new(file))?;
        rec.series = Some(name);
    }
    Ok(rec)
}

/// Per-rung statistics, slope fit and flags from a full set of trials.
pub fn summarise(plan: &Plan, cp: &ConvergePlan, trials: &[ConvergeTrial]) -> ConvergeResult {
    let d = plan.datum.dim;
    let mut rungs = Vec::new();
    let mut samples = Vec::new();
    for &n in &cp.ladder {
        let all: Vec<&ConvergeTrial> = trials.iter().filter(|t| t.n == n).collect();
        let done: Vec<f64> = all.iter().filter_map(|t| t.terminal.map(|m| m.distance)).collect();
        let threshold = cp.threshold(n, d);
        let exceed = done.iter().filter(|&&x| x > threshold).count();
        let exceedance = if done.is_empty() { 0.0 } else { exceed as f64 / done.len() as f64 };
        let quantiles =
            if done.is_empty() { None } else { Some([0.1, 0.25, 0.75, 0.9].map(|q| quantile(&done, q).unwrap())) };
        rungs.push(ConvergeRung {
            n,
            r: cp.r_of(n, d),
            threshold,
            trials: all.len(),
            completed: done.len(),
            median: quantile(&done, 0.5),
            quantiles,
            exceedance,
            exceedance_sigma: frequency_sigma(exceedance, done.len()),
        });
        samples.push(done);
    }
    let xs: Vec<f64> = cp.ladder.iter().map(|&n| n as f64).collect();
    let slope = median_slope_bootstrap(&xs, &samples, BOOTSTRAP_RESAMPLES, derive_seed(plan.seed(), &[u64::MAX]));
    let medians: Vec<Option<f64>> = rungs.iter().map(|r| r.median).collect();
    let median_decreasing =
        medians.iter().all(Option::is_some) && medians.windows(2).all(|w| w[1].unwrap() < w[0].unwrap());
    let exceedance_monotone = non_increasing_within_3sigma(
        &rungs.iter().map(|r| r.exceedance).collect::<Vec<_>>(),
        &rungs.iter().map(|r| r.completed).collect::<Vec<_>>(),
    );
    let aborted = trials.iter().filter(|t| t.aborted.is_some()).count();
    let mut flags = Vec::new();
    if cp.ladder.len() < MIN_LADDER {
        flags.push("insufficient ladder".to_string());
    }
    if slope.is_none() {
        flags.push("slope undefined".to_string());
    }
    if aborted > 0 {
        flags.push("incomplete ladder".to_string());
    }
    if !median_decreasing && medians.iter().all(Option::is_some) {
        let first_rise = medians.windows(2).position(|w| w[1].unwrap() >= w[0].unwrap()).unwrap();
        flags.push(format!("non-monotone prefix up to N = {}", cp.ladder[first_rise + 1]));
    }
    ConvergeResult { grid_n: cp.grid_n(d), rungs, slope, median_decreasing, exceedance_monotone, aborted, flags }
}

pub fn run(plan: &Plan, ctx: &mut RunContext) -> Result<Outcome> {
    let cp = plan.converge.as_ref().expect("validated plan");
    let jobs: Vec<(usize, usize)> = cp.ladder.iter().flat_map(|&n| (0..cp.trials).map(move |t| (n, t))).collect();
    let dir = &ctx.dir;
    let results: Vec<Result<(ConvergeTrial, Option<f64>)>> = jobs
        .par_iter()
        .map(|&(n, t)| {
            let id = trial_id(n, t);
            if let Some(c) = dir.load_cached::<ConvergeTrial>(&id) {
                return Ok((c.record, None));
            }
            let start = Instant::now();
            let rec = run_trial(plan, cp, n, t, dir)?;
            let wall = start.elapsed().as_secs_f64();
            dir.store_cached(&id, &Cached { wall_seconds: wall, record: rec.clone() })?;
            Ok((rec, Some(wall)))
        })
        .collect();
    let mut trials = Vec::with_capacity(jobs.len());
    for (res, &(n, t)) in results.into_iter().zip(&jobs) {
        let (rec, wall) = res?;
        match wall {
            Some(w) => ctx.record_trial(trial_id(n, t), w),
            None => ctx.meta.trials_resumed += 1,
        }
        trials.push(rec);
    }
    let result = summarise(plan, cp, &trials);
    write_trials_csv(&ctx.dir, &trials)?;
    let aborted = result.aborted;
    let pass = result.median_decreasing && result.exceedance_monotone && result.slope.is_some_and(|s| s.ci_high < 0.0);
    let summary = Summary { kind: plan.kind(), plan_id: plan.id(), seed: plan.seed(), plan: plan.canonical(), result };
    ctx.dir.write_json(crate::store::SUMMARY, &summary)?;
    Ok(Outcome { aborted, checks_passed: pass })
}

pub fn write_trials_csv(dir: &RunDir, trials: &[ConvergeTrial]) -> Result<()> {
    dir.write_csv(
        TRIALS,
        &["N", "r", "trial", "seed", "supX", "supV", "distance", "maxField", "maxFieldDiff", "series", "aborted"],
        trials.iter().map(|t| {
            let m = t.terminal;
            let f = |g: fn(&Terminal) -> f64| m.as_ref().map(|m| num(g(m))).unwrap_or_default();
            vec![
                t.n.to_string(),
                num(t.r),
                t.trial.to_string(),
                t.seed.to_string(),
                f(|m| m.sup_x),
                f(|m| m.sup_v),
                f(|m| m.distance),
                f(|m| m.max_field),
                f(|m| m.max_field_diff),
                t.series.clone().unwrap_or_default(),
                t.aborted.clone().unwrap_or_default(),
            ]
        }),
    )
}
