//! Experiment drivers. Each writes `summary.json` and its CSVs into the run
//! directory and reports how many trials aborted.

pub mod converge;
pub mod flow_rate;
pub mod lln;
pub mod pb_validate;
pub mod simulate;

use std::path::PathBuf;
use std::time::Instant;

use crate::error::Result;
use crate::plan::{ExperimentKind, Plan};
use crate::plot;
use crate::store::{unix_now, Meta, RunDir, META};

/// Result of a run as seen by the caller.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Outcome {
    pub aborted: usize,
    /// Whether the experiment's own pass/fail checks all passed.
    pub checks_passed: bool,
}

pub struct RunContext {
    pub dir: RunDir,
    pub meta: Meta,
}

impl RunContext {
    pub fn record_trial(&mut self, id: String, wall: f64) {
        self.meta.trials_computed += 1;
        self.meta.trial_wall_seconds.push((id, wall));
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out: PathBuf,
    pub plot: bool,
}

/// Validates `plan`, runs it into `opts.out`, writes the sidecar and, when asked, the plots.
pub fn run_plan(plan: &Plan, opts: &RunOptions) -> Result<Outcome> {
    plan.validate()?;
    let started = unix_now();
    let clock = Instant::now();
    let dir = RunDir::create(&opts.out, plan)?;
    let meta = Meta {
        kind: Some(plan.kind()),
        plan_id: plan.id(),
        started_unix: started,
        threads: rayon::current_num_threads(),
        ..Meta::default()
    };
    let mut ctx = RunContext { dir, meta };
    let outcome = match plan.kind() {
        ExperimentKind::Converge => converge::run(plan, &mut ctx)?,
        ExperimentKind::Lln => lln::run(plan, &mut ctx)?,
        ExperimentKind::FlowRate => flow_rate::run(plan, &mut ctx)?,
        ExperimentKind::PbValidate => pb_validate::run(plan, &mut ctx)?,
        ExperimentKind::Simulate => simulate::run(plan, &mut ctx)?,
    };
    if opts.plot {
        if let Err(e) = plot::render(plan.kind(), ctx.dir.root()) {
            ctx.meta.notes.push(format!("plotting failed: {e}"));
            eprintln!("warning: plotting failed: {e}");
        }
    }
    ctx.meta.finished_unix = unix_now();
    ctx.meta.wall_seconds = clock.elapsed().as_secs_f64();
    ctx.dir.write_json(META, &ctx.meta)?;
    Ok(outcome)
}
