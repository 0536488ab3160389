//! Convergence of the auxiliary flow as `r → 0`: one fixed reference ensemble,
//! one fixed probe set, a field per `r` on a shared grid and step size.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use vpme_core::dynamics::{run_flow, Sampling};
use vpme_core::ensemble::ParticleEnsemble;
use vpme_core::rng::derive_seed;

use crate::error::Result;
use crate::experiments::{Outcome, RunContext};
use crate::plan::{FlowRatePlan, Plan};
use crate::store::{num, Cached, Summary, SUMMARY, TRIALS};

pub const DIFFERENCES_CSV: &str = "differences.csv";

/// Final probe state at one scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowRung {
    pub r: f64,
    pub steps: usize,
    pub max_field: f64,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

/// Sup over probes between the flows at `r` and `r/2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowDifference {
    pub r_coarse: f64,
    pub r_fine: f64,
    pub sup_x: f64,
    pub sup_v: f64,
    /// `max(sup_x, sup_v)`.
    pub sup: f64,
    /// This difference over the previous one.
    pub ratio: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RungInfo {
    pub r: f64,
    pub steps: usize,
    pub max_field: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowRateResult {
    pub grid_n: usize,
    pub dt: f64,
    pub rungs: Vec<RungInfo>,
    pub differences: Vec<FlowDifference>,
    pub strictly_decreasing: bool,
    pub final_ratio: Option<f64>,
}

/// The reference ensemble and probe set shared by every rung.
pub fn initial_data(plan: &Plan, fp: &FlowRatePlan) -> Result<(ParticleEnsemble, ParticleEnsemble)> {
    let datum = plan.datum.datum()?;
    let sampling = Sampling::Quiet { beams_per_axis: fp.beams_per_axis };
    let reference = sampling.sample(&datum, fp.reference, derive_seed(plan.seed(), &[1]))?;
    let probes = ParticleEnsemble::sample_iid(&datum, fp.probes, derive_seed(plan.seed(), &[2]))?;
    Ok((reference, probes))
}

/// Evolves the probes at scale `r`.
pub fn flow_at(
    plan: &Plan,
    fp: &FlowRatePlan,
    reference: &ParticleEnsemble,
    probes: &ParticleEnsemble,
    r: f64,
) -> Result<FlowRung> {
    let cfg = fp.simulation(plan.datum.datum()?, r, plan.seed());
    let out = run_flow(reference, probes, &cfg)?;
    Ok(FlowRung { r, steps: cfg.steps(), max_field: out.max_field, x: out.probes.x, v: out.probes.v })
}

/// Sup-norm differences between successive rungs and their ratios.
pub fn differences(dim: usize, rungs: &[FlowRung]) -> Result<Vec<FlowDifference>> {
    let mut out: Vec<FlowDifference> = Vec::new();
    for w in rungs.windows(2) {
        let a = ParticleEnsemble::new(dim, 0, w[0].x.clone(), w[0].v.clone())?;
        let b = ParticleEnsemble::new(dim, 0, w[1].x.clone(), w[1].v.clone())?;
        let (sup_x, sup_v) = a.sup_distances(&b)?;
        let sup = sup_x.max(sup_v);
        let ratio = out.last().map(|p| sup / p.sup);
        out.push(FlowDifference { r_coarse: w[0].r, r_fine: w[1].r, sup_x, sup_v, sup, ratio });
    }
    Ok(out)
}

pub fn run(plan: &Plan, ctx: &mut RunContext) -> Result<Outcome> {
    let fp = plan.flow_rate.as_ref().expect("validated plan");
    let d = plan.datum.dim;
    let (reference, probes) = initial_data(plan, fp)?;
    let mut rungs = Vec::new();
    for &r in &fp.r_ladder {
        let id = format!("flow-r{:.0}", 1.0 / r);
        let rung = match ctx.dir.load_cached::<FlowRung>(&id) {
            Some(c) => {
                ctx.meta.trials_resumed += 1;
                c.record
            }
            None => {
                let start = Instant::now();
                let rung = flow_at(plan, fp, &reference, &probes, r)?;
                let wall = start.elapsed().as_secs_f64();
                ctx.dir.store_cached(&id, &Cached { wall_seconds: wall, record: rung.clone() })?;
                ctx.record_trial(id, wall);
                rung
            }
        };
        rungs.push(rung);
    }
    let diffs = differences(d, &rungs)?;
    let strictly_decreasing = diffs.windows(2).all(|w| w[1].sup < w[0].sup);
    let final_ratio = diffs.last().and_then(|x| x.ratio);
    ctx.dir.write_csv(
        TRIALS,
        &["r", "steps", "maxField"],
        rungs.iter().map(|g| vec![num(g.r), g.steps.to_string(), num(g.max_field)]),
    )?;
    ctx.dir.write_csv(
        DIFFERENCES_CSV,
        &["rCoarse", "rFine", "supX", "supV", "sup", "ratio"],
        diffs.iter().map(|x| {
            vec![
                num(x.r_coarse),
                num(x.r_fine),
                num(x.sup_x),
                num(x.sup_v),
                num(x.sup),
                x.ratio.map(num).unwrap_or_default(),
            ]
        }),
    )?;
    let pass = strictly_decreasing && final_ratio.is_some_and(|q| q <= 0.75);
    let result = FlowRateResult {
        grid_n: fp.grid_n(),
        dt: fp.dt(&plan.datum.datum()?),
        rungs: rungs.iter().map(|g| RungInfo { r: g.r, steps: g.steps, max_field: g.max_field }).collect(),
        differences: diffs,
        strictly_decreasing,
        final_ratio,
    };
    let summary = Summary { kind: plan.kind(), plan_id: plan.id(), seed: plan.seed(), plan: plan.canonical(), result };
    ctx.dir.write_json(SUMMARY, &summary)?;
    Ok(Outcome { aborted: 0, checks_passed: pass })
}
