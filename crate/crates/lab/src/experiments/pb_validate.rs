//! Poisson–Boltzmann solver validation: manufactured solution, the uniform
//! density and the norm/lower-bound estimates on random densities.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};
use vpme_core::pb::{lower_bound_check, solve_pb};
use vpme_core::rng::stream_rng;
use vpme_core::{ScalarField, TorusGrid};

use crate::error::Result;
use crate::experiments::{Outcome, RunContext};
use crate::plan::{PbValidatePlan, Plan};
use crate::store::{num, Summary, SUMMARY, TRIALS};

/// Relative slack of `‖e^φ‖_p ≤ ‖ρ‖_p`.
pub const NORM_SLACK: f64 = 1e-8;
pub const NEUTRALITY_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityCheck {
    pub index: usize,
    pub residual: f64,
    pub iterations: usize,
    /// `‖e^φ‖_p / ‖ρ‖_p` for `p = 1, 2, ∞`.
    pub norm_ratios: [f64; 3],
    pub norms_hold: bool,
    pub neutrality: f64,
    pub lower_bound_holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PbValidateResult {
    pub grid_n: usize,
    pub dim: usize,
    pub manufactured_error: f64,
    pub manufactured_iterations: usize,
    pub uniform_phi_sup: f64,
    pub densities: Vec<DensityCheck>,
    pub all_hold: bool,
}

/// Smooth positive unit-mean density `e^s / ⟨e^s⟩`, `s` a random trigonometric
/// polynomial of degree 3 scaled to sup-amplitude `amp`.
pub fn random_density(grid: &TorusGrid, amp: f64, seed: u64) -> ScalarField {
    let mut rng = stream_rng(seed, 0);
    let d = grid.dim();
    let modes: Vec<([f64; 3], f64, f64)> = (0..6)
        .map(|_| {
            let mut k = [0.0; 3];
            for c in k.iter_mut().take(d) {
                *c = rng.gen_range(-3i32..=3) as f64;
            }
            (k, rng.gen_range(-1.0..1.0), rng.gen_range(0.0..2.0 * PI))
        })
        .collect();
    let s = ScalarField::from_fn(grid, |x| {
        modes.iter().map(|(k, a, th)| a * (2.0 * PI * (0..d).map(|i| k[i] * x[i]).sum::<f64>() + th).cos()).sum()
    });
    let top = s.sup_norm().max(1e-12);
    let e = s.map(|v| (amp * v / top).exp());
    let m = e.mean();
    e.map(|v| v / m)
}

/// Sup error of the solver against `φ* = a cos(2π x₁) - log⟨e^{a cos(2π x₁)}⟩`.
pub fn manufactured(grid: &TorusGrid, a: f64, tol: f64) -> Result<(f64, usize)> {
    let wave = ScalarField::from_fn(grid, |x| a * (2.0 * PI * x[0]).cos());
    let shift = wave.map(f64::exp).mean().ln();
    let exact = wave.map(|w| w - shift);
    let rho = ScalarField::from_fn(grid, |x| {
        let c = a * (2.0 * PI * x[0]).cos();
        4.0 * PI * PI * c + (c - shift).exp()
    });
    let sol = solve_pb(&rho, tol)?;
    let err = sol.phi.values.iter().zip(&exact.values).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    Ok((err, sol.iterations))
}

pub fn check_density(rho: &ScalarField, tol: f64, index: usize) -> Result<DensityCheck> {
    let sol = solve_pb(rho, tol)?;
    let dg = &sol.diagnostics;
    let norm_ratios = [0, 1, 2].map(|p| dg.exp_phi_norms[p] / dg.rho_norms[p]);
    let norms_hold = norm_ratios.iter().all(|&q| q <= 1.0 + NORM_SLACK);
    let mut lower_bound_holds = true;
    for p in [2.0, f64::INFINITY] {
        let lb = lower_bound_check(&sol, rho, p)?;
        lower_bound_holds &= lb.oscillation_holds && lb.mean_holds && lb.min_exp_phi >= lb.exp_lower_bound;
    }
    Ok(DensityCheck {
        index,
        residual: sol.residual_sup,
        iterations: sol.iterations,
        norm_ratios,
        norms_hold,
        neutrality: dg.neutrality,
        lower_bound_holds,
    })
}

pub fn validate(plan: &PbValidatePlan, dim: usize, seed: u64) -> Result<PbValidateResult> {
    let grid = TorusGrid::new(dim, plan.grid_n)?;
    let (manufactured_error, manufactured_iterations) = manufactured(&grid, plan.manufactured, plan.tol)?;
    let uniform_phi_sup = solve_pb(&ScalarField::constant(&grid, 1.0), plan.tol)?.phi.sup_norm();
    let densities = (0..plan.densities)
        .map(|k| {
            let rho = random_density(&grid, plan.amplitude, vpme_core::rng::derive_seed(seed, &[k as u64]));
            check_density(&rho, plan.tol, k)
        })
        .collect::<Result<Vec<_>>>()?;
    let all_hold =
        densities.iter().all(|c| c.norms_hold && c.lower_bound_holds && c.neutrality.abs() <= NEUTRALITY_TOL);
    Ok(PbValidateResult {
        grid_n: plan.grid_n,
        dim,
        manufactured_error,
        manufactured_iterations,
        uniform_phi_sup,
        densities,
        all_hold,
    })
}

pub fn run(plan: &Plan, ctx: &mut RunContext) -> Result<Outcome> {
    let pp = plan.pb_validate.clone().unwrap_or_default();
    let result = validate(&pp, plan.datum.dim, plan.seed())?;
    ctx.dir.write_csv(
        TRIALS,
        &[
            "density",
            "residual",
            "iterations",
            "ratioL1",
            "ratioL2",
            "ratioLinf",
            "normsHold",
            "neutrality",
            "lowerBoundHolds",
        ],
        result.densities.iter().map(|c| {
            vec![
                c.index.to_string(),
                num(c.residual),
                c.iterations.to_string(),
                num(c.norm_ratios[0]),
                num(c.norm_ratios[1]),
                num(c.norm_ratios[2]),
                c.norms_hold.to_string(),
                num(c.neutrality),
                c.lower_bound_holds.to_string(),
            ]
        }),
    )?;
    let pass = result.all_hold && result.manufactured_error <= 1e-8 && result.uniform_phi_sup <= 1e-12;
    let summary = Summary { kind: plan.kind(), plan_id: plan.id(), seed: plan.seed(), plan: plan.canonical(), result };
    ctx.dir.write_json(SUMMARY, &summary)?;
    Ok(Outcome { aborted: 0, checks_passed: pass })
}
