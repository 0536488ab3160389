//! Law-of-large-numbers tails: failure frequencies against the Bernstein
//! envelope, pointwise CLT slopes and the exact-inequality suite.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use vpme_core::lln::{
    run_exact_suite, run_lln, run_lln_perturbed, ExactSuiteConfig, ExactSuiteReport, LlnConfig, TailReport,
};
use vpme_core::rng::derive_seed;

use crate::error::Result;
use crate::experiments::{Outcome, RunContext};
use crate::plan::{LlnPlan, Plan};
use crate::stats::{median, quantile};
use crate::store::{num, Cached, Summary, SUMMARY, TRIALS};

pub const LADDER_CSV: &str = "ladder.csv";
pub const PERTURBED_CSV: &str = "ladder_perturbed.csv";
pub const CLT_CSV: &str = "clt.csv";
pub const EXACT_CSV: &str = "exact.csv";

/// Distribution of the per-mesh-point log-log slopes of the trial standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CltSummary {
    pub points: usize,
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactSummary {
    pub trials: usize,
    pub holding: usize,
    pub min_empirical_margin: f64,
    pub min_mesh_margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LlnResult {
    pub grid_n: usize,
    /// The tail report with its per-trial records moved to `trials.csv`.
    pub report: TailReport,
    pub within_envelope: bool,
    pub failure_monotone: bool,
    pub vacuous_rungs: Vec<usize>,
    pub clt: Option<CltSummary>,
    pub perturbed: Option<TailReport>,
    pub perturbed_within_envelope: Option<bool>,
    pub exact: Option<ExactSummary>,
}

pub fn config(plan: &Plan, lp: &LlnPlan) -> Result<LlnConfig> {
    let mut cfg =
        LlnConfig::new(lp.observable(), plan.datum.datum()?, lp.ladder.clone(), lp.r, lp.grid_n(), plan.seed());
    cfg.delta = lp.delta;
    cfg.gamma = lp.gamma;
    cfg.trials = lp.trials;
    Ok(cfg)
}

/// Runs one rung at a time so completed rungs are reused; trial seeds depend only on `(N, trial)`.
fn run_ladder(ctx: &mut RunContext, cfg: &LlnConfig, perturbation: Option<f64>) -> Result<TailReport> {
    let mut merged: Option<TailReport> = None;
    for &n in &cfg.n_ladder {
        let id = match perturbation {
            None => format!("lln-N{n:07}"),
            Some(_) => format!("lln-perturbed-N{n:07}"),
        };
        let rung = match ctx.dir.load_cached::<TailReport>(&id) {
            Some(c) => {
                ctx.meta.trials_resumed += 1;
                c.record
            }
            None => {
                let one = LlnConfig { n_ladder: vec![n], ..cfg.clone() };
                let start = Instant::now();
                let rep = match perturbation {
                    None => run_lln(&one)?,
                    Some(size) => run_lln_perturbed(&one, size)?,
                };
                let wall = start.elapsed().as_secs_f64();
                ctx.dir.store_cached(&id, &Cached { wall_seconds: wall, record: rep.clone() })?;
                ctx.record_trial(id, wall);
                rep
            }
        };
        merged = Some(match merged {
            None => rung,
            Some(mut m) => {
                m.ladder.extend(rung.ladder);
                m.trials.extend(rung.trials);
                m
            }
        });
    }
    let mut rep = merged.expect("validated ladder is nonempty");
    rep.config = cfg.clone();
    Ok(rep)
}

fn clt_summary(rep: &TailReport) -> Option<CltSummary> {
    if rep.ladder.len() < 2 {
        return None;
    }
    let slopes = rep.clt_slopes();
    Some(CltSummary {
        points: slopes.len(),
        min: slopes.iter().copied().fold(f64::INFINITY, f64::min),
        median: median(&slopes)?,
        max: slopes.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

fn exact_summary(rep: &ExactSuiteReport) -> ExactSummary {
    ExactSummary {
        trials: rep.trials.len(),
        holding: rep.trials.iter().filter(|t| t.holds()).count(),
        min_empirical_margin: rep.trials.iter().map(|t| t.empirical_margin).fold(f64::INFINITY, f64::min),
        min_mesh_margin: rep.trials.iter().map(|t| t.mesh_margin).fold(f64::INFINITY, f64::min),
    }
}

pub fn run(plan: &Plan, ctx: &mut RunContext) -> Result<Outcome> {
    let lp = plan.lln.as_ref().expect("validated plan");
    let cfg = config(plan, lp)?;
    let mut report = run_ladder(ctx, &cfg, None)?;
    let perturbed = match lp.perturbation {
        Some(frac) => Some(run_ladder(ctx, &cfg, Some(frac * lp.r))?),
        None => None,
    };
    let exact = if lp.exact_trials > 0 {
        let ecfg = ExactSuiteConfig {
            datum: cfg.datum,
            r: lp.r,
            grid_n: cfg.grid_n,
            n_particles: lp.exact_particles,
            trials: lp.exact_trials,
            perturbation: lp.perturbation.unwrap_or(0.5),
            seed: derive_seed(plan.seed(), &[3]),
        };
        let rep = match ctx.dir.load_cached::<ExactSuiteReport>("exact") {
            Some(c) => {
                ctx.meta.trials_resumed += 1;
                c.record
            }
            None => {
                let start = Instant::now();
                let rep = run_exact_suite(&ecfg)?;
                let wall = start.elapsed().as_secs_f64();
                ctx.dir.store_cached("exact", &Cached { wall_seconds: wall, record: rep.clone() })?;
                ctx.record_trial("exact".into(), wall);
                rep
            }
        };
        write_exact_csv(ctx, &rep)?;
        Some(rep)
    } else {
        None
    };

    write_trials_csv(ctx, &report, perturbed.as_ref())?;
    write_ladder_csv(ctx, LADDER_CSV, &report)?;
    if let Some(p) = &perturbed {
        write_ladder_csv(ctx, PERTURBED_CSV, p)?;
    }
    write_clt_csv(ctx, &report)?;

    let clt = clt_summary(&report);
    let within_envelope = report.within_envelope();
    let failure_monotone = report.failure_monotone();
    let vacuous_rungs = report.ladder.iter().filter(|p| p.vacuous).map(|p| p.n).collect();
    report.trials.clear();
    let perturbed = perturbed.map(|mut p| {
        p.trials.clear();
        p
    });
    let perturbed_within_envelope = perturbed
        .as_ref()
        .map(|p| p.ladder.iter().filter(|q| q.bernstein_b < 1.0).all(|q| q.failure_b <= q.bernstein_b));
    let exact = exact.as_ref().map(exact_summary);
    let pass = within_envelope
        && perturbed_within_envelope.unwrap_or(true)
        && exact.as_ref().is_none_or(|e| e.holding == e.trials);
    let result = LlnResult {
        grid_n: cfg.grid_n,
        report,
        within_envelope,
        failure_monotone,
        vacuous_rungs,
        clt,
        perturbed,
        perturbed_within_envelope,
        exact,
    };
    let summary = Summary { kind: plan.kind(), plan_id: plan.id(), seed: plan.seed(), plan: plan.canonical(), result };
    ctx.dir.write_json(SUMMARY, &summary)?;
    Ok(Outcome { aborted: 0, checks_passed: pass })
}

fn write_trials_csv(ctx: &RunContext, rep: &TailReport, perturbed: Option<&TailReport>) -> Result<()> {
    let rows = rep
        .trials
        .iter()
        .map(|t| ("plain", t))
        .chain(perturbed.into_iter().flat_map(|p| p.trials.iter().map(|t| ("perturbed", t))));
    ctx.dir.write_csv(
        TRIALS,
        &[
            "experiment",
            "N",
            "trial",
            "supError",
            "meshError",
            "meshErrorH",
            "aHolds",
            "perturbation",
            "supErrorX",
            "bHolds",
        ],
        rows.map(|(which, t)| {
            vec![
                which.to_string(),
                t.n.to_string(),
                t.trial.to_string(),
                num(t.sup_error),
                num(t.mesh_error),
                num(t.mesh_error_h),
                t.a_holds.to_string(),
                num(t.perturbation),
                num(t.sup_error_x),
                t.b_holds.to_string(),
            ]
        }),
    )
}

fn write_ladder_csv(ctx: &RunContext, name: &str, rep: &TailReport) -> Result<()> {
    let path = ctx.dir.path(name);
    let file = std::fs::File::create(&path).map_err(crate::error::LabError::io(&path))?;
    rep.write_summary_csv(std::io::BufWriter::new(file))?;
    Ok(())
}

fn write_clt_csv(ctx: &RunContext, rep: &TailReport) -> Result<()> {
    ctx.dir.write_csv(
        CLT_CSV,
        &["N", "medianSd", "q10Sd", "q90Sd", "expectedScale"],
        rep.ladder.iter().map(|p| {
            vec![
                p.n.to_string(),
                num(median(&p.mesh_sd).unwrap_or(f64::NAN)),
                num(quantile(&p.mesh_sd, 0.1).unwrap_or(f64::NAN)),
                num(quantile(&p.mesh_sd, 0.9).unwrap_or(f64::NAN)),
                num((p.n as f64).powf(-0.5)),
            ]
        }),
    )
}

fn write_exact_csv(ctx: &RunContext, rep: &ExactSuiteReport) -> Result<()> {
    ctx.dir.write_csv(
        EXACT_CSV,
        &["trial", "observable", "distance", "empiricalMargin", "meshMargin", "meshLhs", "meshRhs", "holds"],
        rep.trials.iter().map(|t| {
            vec![
                t.trial.to_string(),
                serde_json::to_string(&t.observable).unwrap_or_default(),
                num(t.distance),
                num(t.empirical_margin),
                num(t.mesh_margin),
                num(t.mesh_lhs),
                num(t.mesh_rhs),
                t.holds().to_string(),
            ]
        }),
    )
}
