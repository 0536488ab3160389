//! Nonlinear Poisson–Boltzmann solve `-Δφ = ρ - e^φ` on a grid, with the
//! a-priori estimates of the potential as runtime diagnostics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::interp::SplineField;
use crate::kernels::{green_spectrum, kernel_field, KernelFamily};
use crate::torus::{ScalarField, TorusGrid, VectorField};

/// Default sup-norm residual tolerance.
pub const DEFAULT_TOL: f64 = 1e-10;
/// Iteration cap of the damped fixed point.
pub const MAX_ITERATIONS: usize = 10_000;
/// Guard clamp on `φ` before exponentiation.
pub const PHI_CLAMP: f64 = 50.0;

/// Solver controls.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PbOptions {
    pub tol: f64,
    pub max_iterations: usize,
}

impl Default for PbOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, max_iterations: MAX_ITERATIONS }
    }
}

/// Norms and extremes recorded with every solution.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct PbDiagnostics {
    pub min_exp_phi: f64,
    pub max_exp_phi: f64,
    /// `‖e^φ‖_p` for `p = 1, 2, ∞`.
    pub exp_phi_norms: [f64; 3],
    /// `‖ρ‖_p` for `p = 1, 2, ∞` (after clipping).
    pub rho_norms: [f64; 3],
    /// Number of node evaluations that hit the `±50` clamp.
    pub clamp_hits: u64,
    /// Mass removed by clipping negative density values.
    pub clipped_mass: f64,
    /// `∫ (ρ - e^φ)`.
    pub neutrality: f64,
}

/// A solved potential.
#[derive(Clone, Debug)]
pub struct PotentialSolution {
    pub phi: ScalarField,
    /// `-∇φ`.
    pub field: VectorField,
    /// `‖-Δφ - ρ + e^φ‖_∞`, evaluated spectrally.
    pub residual_sup: f64,
    pub iterations: usize,
    pub diagnostics: PbDiagnostics,
}

impl PotentialSolution {
    /// Spline of `-∇φ` for off-grid evaluation.
    pub fn field_spline(&self, order: usize) -> Result<SplineField> {
        let comps: Vec<&[f64]> = self.field.components.iter().map(|c| c.as_slice()).collect();
        SplineField::from_values(&self.phi.grid, &comps, order)
    }
}

fn lp_triple(values: &[f64]) -> [f64; 3] {
    let len = values.len() as f64;
    let l1 = values.iter().map(|v| v.abs()).sum::<f64>() / len;
    let l2 = (values.iter().map(|v| v * v).sum::<f64>() / len).sqrt();
    let linf = values.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
    [l1, l2, linf]
}

#[inline]
fn clamped_exp(x: f64, hits: &mut u64) -> f64 {
    if x > PHI_CLAMP {
        *hits += 1;
        PHI_CLAMP.exp()
    } else if x < -PHI_CLAMP {
        *hits += 1;
        (-PHI_CLAMP).exp()
    } else {
        x.exp()
    }
}

/// Negative values no deeper than this (relative to `max(1, ‖ρ‖_∞)`) are
/// treated as deposition noise and clipped.
pub const CLIP_DEPTH: f64 = 1e-8;

/// Validates a density and clips noise-level negative values; returns the
/// processed values and the clipped mass. Genuinely signed sources are kept.
fn prepare_density(rho: &ScalarField) -> Result<(Vec<f64>, f64)> {
    if rho.values.iter().any(|v| !v.is_finite()) {
        return domain("density has non-finite values");
    }
    let mean = rho.mean();
    if (mean - 1.0).abs() > 1e-10 {
        return domain(format!("density mean {mean} is not 1"));
    }
    let depth = CLIP_DEPTH * rho.sup_norm().max(1.0);
    let mut clipped = 0.0;
    let mut vals: Vec<f64> = rho
        .values
        .iter()
        .map(|&v| {
            if v < 0.0 && v >= -depth {
                clipped -= v;
                0.0
            } else {
                v
            }
        })
        .collect();
    if clipped > 0.0 {
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        vals.iter_mut().for_each(|v| *v /= m);
    }
    Ok((vals, clipped / rho.values.len() as f64))
}

/// Spectral residual `-Δφ - ρ + e^φ` at the nodes.
pub fn residual(phi: &ScalarField, rho: &[f64]) -> Vec<f64> {
    let lap = phi.grid.laplacian(phi);
    lap.values.iter().zip(rho).zip(&phi.values).map(|((l, r), p)| -l - r + p.exp()).collect()
}

/// Solves `-Δφ = ρ - e^φ` from `φ = 0`.
pub fn solve_pb(rho: &ScalarField, tol: f64) -> Result<PotentialSolution> {
    solve_pb_with(rho, None, &PbOptions { tol, ..Default::default() })
}

/// Solves `-Δφ = ρ - e^φ`, optionally warm-started.
///
/// Damped spectral fixed point `ψ = (-Δ + λ)^{-1}(ρ - e^φ + λφ)`, `λ = max(1, max e^φ)`,
/// followed by the constant shift that restores `∫ e^φ = ∫ ρ` (the slowest mode of
/// the plain iteration). The pointwise residual of the shifted iterate is
/// `e^{φ'} - e^φ + λ(φ - ψ)` and costs no transform; the returned residual is
/// recomputed spectrally.
pub fn solve_pb_with(rho: &ScalarField, warm: Option<&ScalarField>, opts: &PbOptions) -> Result<PotentialSolution> {
    if !(opts.tol >= 1e-12) {
        return domain(format!("tolerance {} below 1e-12", opts.tol));
    }
    let grid = rho.grid.clone();
    let (rho_v, clipped_mass) = prepare_density(rho)?;
    let rho_mean = rho_v.iter().sum::<f64>() / rho_v.len() as f64;
    let mut phi = match warm {
        Some(w) if w.grid == grid => w.values.clone(),
        Some(_) => return domain("warm start lives on a different grid"),
        None => vec![0.0; grid.len()],
    };
    let mut hits = 0u64;
    let mut exp_phi: Vec<f64> = phi.iter().map(|&p| clamped_exp(p, &mut hits)).collect();
    let mut last = f64::INFINITY;
    let mut iterations = 0;
    let mut rhs = vec![0.0; grid.len()];
    // Spectral residual checks that failed although the cheap residual passed:
    // the tolerance sits below the round-off floor of the grid.
    let mut floor_hits = 0;
    while iterations < opts.max_iterations {
        iterations += 1;
        let lambda = exp_phi.iter().copied().fold(1.0, f64::max);
        for i in 0..rhs.len() {
            rhs[i] = rho_v[i] - exp_phi[i] + lambda * phi[i];
        }
        let psi = grid.helmholtz_inverse(&rhs, lambda);
        let mut e_psi: Vec<f64> = psi.iter().map(|&p| clamped_exp(p, &mut hits)).collect();
        let e_mean = e_psi.iter().sum::<f64>() / e_psi.len() as f64;
        let shift = (rho_mean / e_mean).ln();
        let scale = shift.exp();
        let mut res = 0.0f64;
        for i in 0..phi.len() {
            let new_phi = psi[i] + shift;
            e_psi[i] *= scale;
            let r = e_psi[i] - exp_phi[i] + lambda * (phi[i] - psi[i]);
            res = res.max(r.abs());
            phi[i] = new_phi;
        }
        exp_phi = e_psi;
        if phi.iter().any(|v| !v.is_finite()) {
            return Err(Error::Convergence { iterations, residual: f64::NAN });
        }
        last = res;
        if res <= 0.5 * opts.tol {
            let field = ScalarField { grid: grid.clone(), values: phi.clone() };
            let true_res = residual(&field, &rho_v).iter().fold(0.0, |m: f64, v| m.max(v.abs()));
            last = true_res;
            if true_res <= opts.tol {
                return Ok(finish(field, &rho_v, true_res, iterations, hits, clipped_mass));
            }
            floor_hits += 1;
            if floor_hits >= 50 {
                break;
            }
        }
    }
    Err(Error::Convergence { iterations, residual: last })
}

fn finish(
    phi: ScalarField,
    rho: &[f64],
    residual_sup: f64,
    iterations: usize,
    clamp_hits: u64,
    clipped_mass: f64,
) -> PotentialSolution {
    let grid = phi.grid.clone();
    let e: Vec<f64> = phi.values.iter().map(|p| p.exp()).collect();
    let mut field = grid.gradient(&phi);
    field.components.iter_mut().for_each(|c| c.iter_mut().for_each(|v| *v = -*v));
    let len = e.len() as f64;
    let diagnostics = PbDiagnostics {
        min_exp_phi: e.iter().copied().fold(f64::INFINITY, f64::min),
        max_exp_phi: e.iter().copied().fold(0.0, f64::max),
        exp_phi_norms: lp_triple(&e),
        rho_norms: lp_triple(rho),
        clamp_hits,
        clipped_mass,
        neutrality: rho.iter().zip(&e).map(|(r, x)| r - x).sum::<f64>() / len,
    };
    PotentialSolution { phi, field, residual_sup, iterations, diagnostics }
}

/// `‖∇Φ₁ - ∇Φ₂‖_∞` and `‖K*ρ₁ - K*ρ₂‖_∞` for two densities.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct StabilityGap {
    pub lhs: f64,
    pub rhs: f64,
}

pub fn field_stability_gap(
    rho1: &ScalarField,
    rho2: &ScalarField,
    family: &KernelFamily,
    tol: f64,
) -> Result<StabilityGap> {
    if rho1.grid != *family.grid() || rho2.grid != *family.grid() {
        return domain("densities and kernels live on different grids");
    }
    let s1 = solve_pb(rho1, tol)?;
    let s2 = solve_pb(rho2, tol)?;
    let lhs = sup_diff(&s1.field, &s2.field);
    let grid = family.grid();
    let diff: Vec<f64> = rho1.values.iter().zip(&rho2.values).map(|(a, b)| a - b).collect();
    let kd = kernel_field(&grid.analyze(&diff));
    Ok(StabilityGap { lhs, rhs: kd.sup_norm() })
}

fn sup_diff(a: &VectorField, b: &VectorField) -> f64 {
    (0..a.grid.len())
        .map(|i| a.components.iter().zip(&b.components).map(|(x, y)| (x[i] - y[i]).powi(2)).sum::<f64>())
        .fold(0.0, f64::max)
        .sqrt()
}

/// Discrete `‖G‖_{L^q}` of the band-limited Green's function; `q = 2` uses Parseval.
pub fn green_norm(grid: &TorusGrid, q: f64) -> f64 {
    let spec = green_spectrum(grid);
    if q == 2.0 {
        return spec.l2_norm_sq().sqrt();
    }
    ScalarField { grid: grid.clone(), values: grid.synthesize(&spec) }.lp_norm(q)
}

/// The two computable inequalities behind the lower bound on `e^Φ`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LowerBoundReport {
    pub p: f64,
    pub mean_phi: f64,
    /// `‖Φ - ⟨Φ⟩‖_∞`.
    pub oscillation: f64,
    /// `‖G‖_{L^{p'}}`.
    pub green_norm: f64,
    /// `‖ρ - e^Φ‖_{L^p}`.
    pub source_norm: f64,
    /// `‖G‖_{L^{p'}} ‖ρ - e^Φ‖_{L^p}` plus the residual allowance `‖G‖_{L^1}·residual`.
    pub oscillation_bound: f64,
    pub oscillation_holds: bool,
    /// `⟨Φ⟩ ≥ -‖Φ - ⟨Φ⟩‖_∞` (with the solver tolerance as slack).
    pub mean_holds: bool,
    /// `exp(⟨Φ⟩ - ‖Φ - ⟨Φ⟩‖_∞)`.
    pub exp_lower_bound: f64,
    pub min_exp_phi: f64,
}

pub fn lower_bound_check(sol: &PotentialSolution, rho: &ScalarField, p: f64) -> Result<LowerBoundReport> {
    if p != 2.0 && !p.is_infinite() {
        return domain(format!("lower bound check needs p in {{2, ∞}}, got {p}"));
    }
    let grid = &sol.phi.grid;
    let (rho_v, _) = prepare_density(rho)?;
    let mean_phi = sol.phi.mean();
    let oscillation = sol.phi.values.iter().fold(0.0, |m: f64, v| m.max((v - mean_phi).abs()));
    let q = if p.is_infinite() { 1.0 } else { 2.0 };
    let gn = green_norm(grid, q);
    let source = ScalarField {
        grid: grid.clone(),
        values: rho_v.iter().zip(&sol.phi.values).map(|(r, f)| r - f.exp()).collect(),
    };
    let source_norm = source.lp_norm(p);
    let oscillation_bound = gn * source_norm + green_norm(grid, 1.0) * sol.residual_sup;
    let min_exp_phi = sol.phi.values.iter().map(|v| v.exp()).fold(f64::INFINITY, f64::min);
    Ok(LowerBoundReport {
        p,
        mean_phi,
        oscillation,
        green_norm: gn,
        source_norm,
        oscillation_bound,
        oscillation_holds: oscillation <= oscillation_bound * (1.0 + 1e-12),
        mean_holds: mean_phi >= -oscillation - sol.residual_sup.max(1e-14),
        exp_lower_bound: (mean_phi - oscillation).exp(),
        min_exp_phi,
    })
}

/// Largest sampled quotient `|∇Φ(x) - ∇Φ(y)| / (|x - y| log(1/|x - y|))` over pairs
/// with separations log-uniform in `[1e-3, 1e-1]`.
pub fn log_lipschitz_quotient(sol: &PotentialSolution, samples: usize, seed: u64) -> Result<f64> {
    let spline = sol.field_spline(4)?;
    let d = sol.phi.grid.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = 0.0f64;
    let mut x = [0.0; 3];
    let mut y = [0.0; 3];
    let mut fx = [0.0; 3];
    let mut fy = [0.0; 3];
    for _ in 0..samples {
        let sep = 10f64.powf(rng.gen_range(-3.0..-1.0));
        let mut dir = [0.0; 3];
        let mut norm = 0.0f64;
        for a in 0..d {
            x[a] = rng.gen_range(-0.5..0.5);
            dir[a] = rng.gen_range(-1.0..1.0);
            norm += dir[a] * dir[a];
        }
        let norm = norm.sqrt().max(1e-300);
        for a in 0..d {
            y[a] = x[a] + sep * dir[a] / norm;
        }
        spline.eval_into(&x[..d], &mut fx[..d]);
        spline.eval_into(&y[..d], &mut fy[..d]);
        let diff = (0..d).map(|a| (fx[a] - fy[a]).powi(2)).sum::<f64>().sqrt();
        best = best.max(diff / (sep * (1.0 / sep).ln()));
    }
    Ok(best)
}
