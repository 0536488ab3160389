//! A single paired run with its full time series.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use vpme_core::dynamics::{run_pair, SeriesRow, SimulationConfig};
use vpme_core::kdist::{audit_series, GronwallAudit, KineticDistanceParams};

use crate::error::{LabError, Result};
use crate::experiments::{Outcome, RunContext};
use crate::plan::Plan;
use crate::store::{RunDir, Summary, SUMMARY, TRIALS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulateResult {
    pub config: SimulationConfig,
    pub steps: usize,
    pub terminal: SeriesRow,
    pub solver_iterations: usize,
    pub max_residual: f64,
    pub series: String,
    pub audit: Option<GronwallAudit>,
}

pub fn run(plan: &Plan, ctx: &mut RunContext) -> Result<Outcome> {
    let sp = plan.simulate.as_ref().expect("validated plan");
    let cfg = sp.simulation(plan.datum.datum()?, plan.seed());
    let start = Instant::now();
    let pair = run_pair(&cfg)?;
    ctx.record_trial("run".into(), start.elapsed().as_secs_f64());
    let name = RunDir::series_name("run");
    let path = ctx.dir.path(&name);
    let file = std::fs::File::create(&path).map_err(LabError::io(&path))?;
    pair.write_series_csv(std::io::BufWriter::new(file))?;
    let path = ctx.dir.path(TRIALS);
    let file = std::fs::File::create(&path).map_err(LabError::io(&path))?;
    pair.coupled.write_csv(0, std::io::BufWriter::new(file), true)?;
    let audit = match sp.audit {
        Some([a, b]) => Some(audit_series(&KineticDistanceParams::new(cfg.r, a, b)?, &pair.series)?.1),
        None => None,
    };
    let pass = audit.as_ref().is_none_or(|a| a.holds);
    let result = SimulateResult {
        steps: cfg.steps(),
        terminal: pair.terminal(),
        solver_iterations: pair.solver_iterations,
        max_residual: pair.max_residual,
        series: name,
        audit,
        config: cfg,
    };
    let summary = Summary { kind: plan.kind(), plan_id: plan.id(), seed: plan.seed(), plan: plan.canonical(), result };
    ctx.dir.write_json(SUMMARY, &summary)?;
    Ok(Outcome { aborted: 0, checks_passed: pass })
}
