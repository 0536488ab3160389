//! Uniform laws of large numbers for `g * μ_Y` on the torus: event
//! frequencies, mesh-covering reductions and Bernstein envelopes.
//!
//! Two evaluation paths are used. Tail experiments compute `g * μ_Y` on the
//! whole grid through the B-spline assignment spectrum, which is cheap enough
//! for `N = 10⁵` and hundreds of trials. The exact-inequality suite instead
//! evaluates every convolution by direct particle sums at probe points, so
//! that the inequalities are checked on the same function `g` the modulus
//! controls.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{assignment_spectrum, InitialDatum};
use crate::error::{domain, Error, Result};
use crate::interp::{continuous_symbol, tensor_symbol};
use crate::kernels::{build_kernels, TruncatedKernel};
use crate::modulus::ModulusField;
use crate::mollifiers::Mollifier;
use crate::rng::{derive_seed, stream_rng};
use crate::torus::{displacement, wrap_coord, ScalarField, Spectrum, TorusGrid, MAX_DIM};

/// Assignment order for the grid path.
pub const ASSIGNMENT_ORDER: usize = 6;

/// The test function `g` whose convolutions are studied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Observable {
    /// One component of `K_r`, with modulus `L_r` and second modulus `Q_r`.
    KernelComponent { axis: usize },
    /// `χ_r`, with moduli `ψ_r` and `η_r`.
    Mollifier,
    /// `r χ_r`, with moduli `r ψ_r` and `r η_r`.
    ScaledMollifier,
}

impl Observable {
    pub const ALL: [Observable; 3] =
        [Observable::KernelComponent { axis: 0 }, Observable::Mollifier, Observable::ScaledMollifier];
}

enum Evaluator {
    Kernel(Box<TruncatedKernel>, usize),
    Bump(Mollifier, f64),
}

/// `g` together with its first modulus `h` and the modulus `l` of `h`.
pub struct LocalFunction {
    pub observable: Observable,
    pub r: f64,
    pub g: ScalarField,
    pub h: ModulusField,
    pub l: ModulusField,
    eval: Evaluator,
}

/// Norms entering the thresholds and the Bernstein sums.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionNorms {
    pub g_l2: f64,
    pub g_sup: f64,
    pub h_l1: f64,
    pub h_l2: f64,
    pub h_sup: f64,
    pub l_l1: f64,
    pub l_l2: f64,
    pub l_sup: f64,
}

fn scaled(m: ModulusField, c: f64) -> ModulusField {
    ModulusField { field: m.field.map(|v| c * v), ..m }
}

impl LocalFunction {
    pub fn build(observable: Observable, r: f64, grid: &TorusGrid) -> Result<Self> {
        match observable {
            Observable::KernelComponent { axis } => {
                if axis >= grid.dim() {
                    return domain(format!("kernel component {axis} out of range"));
                }
                let family = build_kernels(grid, &[r])?;
                let moduli = family.kernel_moduli(r)?;
                let k = family.truncated(r)?.clone();
                let g = ScalarField { grid: grid.clone(), values: k.field.components[axis].clone() };
                Ok(Self { observable, r, g, h: moduli.l, l: moduli.q, eval: Evaluator::Kernel(Box::new(k), axis) })
            }
            Observable::Mollifier | Observable::ScaledMollifier => {
                let c = if observable == Observable::Mollifier { 1.0 } else { r };
                let m = Mollifier::new(grid.dim(), r)?;
                let g = m.sample(grid).map(|v| c * v);
                let h = scaled(m.psi(grid)?, c);
                let l = scaled(m.eta(grid)?, c);
                Ok(Self { observable, r, g, h, l, eval: Evaluator::Bump(m, c) })
            }
        }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.g.grid
    }

    /// `g(z)` at an arbitrary displacement.
    pub fn eval(&self, z: &[f64]) -> f64 {
        match &self.eval {
            Evaluator::Kernel(k, a) => k.eval(z)[*a],
            Evaluator::Bump(m, c) => c * m.value(z),
        }
    }

    pub fn norms(&self) -> FunctionNorms {
        FunctionNorms {
            g_l2: self.g.lp_norm(2.0),
            g_sup: self.g.sup_norm(),
            h_l1: self.h.l1_norm(),
            h_l2: self.h.l2_norm(),
            h_sup: self.h.sup_norm(),
            l_l1: self.l.l1_norm(),
            l_l2: self.l.l2_norm(),
            l_sup: self.l.sup_norm(),
        }
    }
}

/// Bernstein's bound `2 exp(-N ξ² / (2(Var + B ξ/3)))` for the mean of `N`
/// iid variables with the given variance bound and sup bound.
pub fn bernstein_tail(n: usize, xi: f64, variance: f64, bound: f64) -> f64 {
    2.0 * (-(n as f64) * xi * xi / (2.0 * (variance + bound * xi / 3.0))).exp()
}

/// Union bound over `mesh_size` points for the failure of `A_g(γ, δ)`: the
/// `g`-deviation at level `rγ‖ρ‖∞` and the `h`-deviation at level `γ‖ρ‖∞`,
/// with `Var ≤ ‖·‖₂² ‖ρ‖∞` and `B = ‖·‖∞`.
pub fn bernstein_sum(n: usize, mesh_size: usize, r: f64, gamma: f64, rho_sup: f64, norms: &FunctionNorms) -> f64 {
    let xg = r * gamma * rho_sup;
    let xh = gamma * rho_sup;
    let g = bernstein_tail(n, xg, norms.g_l2.powi(2) * rho_sup, norms.g_sup);
    let h = bernstein_tail(n, xh, norms.h_l2.powi(2) * rho_sup, norms.h_sup);
    mesh_size as f64 * (g + h)
}

/// The same union bound for `A_g^c ∪ A_h^c`, which contains the failure of `B_g`.
pub fn bernstein_sum_perturbed(
    n: usize,
    mesh_size: usize,
    r: f64,
    gamma: f64,
    rho_sup: f64,
    norms: &FunctionNorms,
) -> f64 {
    let shifted = FunctionNorms {
        g_l2: norms.h_l2,
        g_sup: norms.h_sup,
        h_l1: norms.l_l1,
        h_l2: norms.l_l2,
        h_sup: norms.l_sup,
        ..*norms
    };
    bernstein_sum(n, mesh_size, r, gamma, rho_sup, norms) + bernstein_sum(n, mesh_size, r, gamma, rho_sup, &shifted)
}

/// Threshold of `A_g(γ, δ)`: `2r‖ρ‖∞(δ‖h‖₁ + γ)`.
pub fn threshold_a(r: f64, delta: f64, gamma: f64, rho_sup: f64, norms: &FunctionNorms) -> f64 {
    2.0 * r * rho_sup * (delta * norms.h_l1 + gamma)
}

/// Threshold of `B_g(γ, δ)` for a tuple at sup distance `dist` from the iid one.
pub fn threshold_b(r: f64, delta: f64, gamma: f64, rho_sup: f64, norms: &FunctionNorms, dist: f64) -> f64 {
    2.0 * rho_sup * (gamma + norms.h_l1 + r * norms.l_l1) * dist + threshold_a(r, delta, gamma, rho_sup, norms)
}

/// Points per axis of the grid-aligned covering lattice with covering radius at
/// most `s`: the smallest power of two `m` with `√d/(2m) ≤ s`.
pub fn aligned_mesh_per_axis(dim: usize, s: f64) -> usize {
    (((dim as f64).sqrt() / (2.0 * s) - 1e-12).ceil().max(1.0) as usize).next_power_of_two()
}

/// Flat node indices of the lattice with `m` points per axis (`m` divides `n`).
pub fn lattice_nodes(grid: &TorusGrid, m: usize) -> Vec<usize> {
    let n = grid.n();
    let stride = n / m;
    let d = grid.dim();
    let total = m.pow(d as u32);
    (0..total)
        .map(|flat| {
            let mut rem = flat;
            let mut idx = [0i64; MAX_DIM];
            for a in (0..d).rev() {
                idx[a] = ((rem % m) * stride) as i64;
                rem /= m;
            }
            grid.flat_index(&idx[..d])
        })
        .collect()
}

/// Configuration of a tail experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LlnConfig {
    pub observable: Observable,
    pub datum: InitialDatum,
    pub n_ladder: Vec<usize>,
    pub r: f64,
    pub delta: f64,
    pub gamma: f64,
    pub trials: usize,
    pub seed: u64,
    pub grid_n: usize,
}

impl LlnConfig {
    pub fn new(
        observable: Observable,
        datum: InitialDatum,
        n_ladder: Vec<usize>,
        r: f64,
        grid_n: usize,
        seed: u64,
    ) -> Self {
        Self { observable, datum, n_ladder, r, delta: 0.5, gamma: 0.5, trials: 256, seed, grid_n }
    }

    pub fn validate(&self) -> Result<()> {
        let open = |x: f64| x > 0.0 && x < 1.0;
        if !open(self.delta) || !open(self.gamma) {
            return domain(format!("δ = {} and γ = {} must lie in (0, 1)", self.delta, self.gamma));
        }
        if !(self.r > 0.0 && self.r < 0.25) {
            return domain(format!("r = {} outside (0, 1/4)", self.r));
        }
        if self.trials == 0 || self.n_ladder.is_empty() || self.n_ladder.contains(&0) {
            return domain("need at least one trial and a nonempty ladder of positive N");
        }
        Ok(())
    }
}

/// One trial of a tail experiment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub n: usize,
    pub trial: usize,
    /// `‖g * μ_Y - g * ρ‖` over all grid nodes.
    pub sup_error: f64,
    /// The same over the covering mesh.
    pub mesh_error: f64,
    /// `sup_m |h * μ_Y - h * ρ|(y_m)`.
    pub mesh_error_h: f64,
    pub a_holds: bool,
    /// `|X - Y|_∞` for the perturbed tuple.
    pub perturbation: f64,
    /// `‖g * μ_X - g * ρ‖` over all grid nodes.
    pub sup_error_x: f64,
    pub b_holds: bool,
}

/// Summary of one rung of the `N` ladder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LadderPoint {
    pub n: usize,
    pub trials: usize,
    pub failure_a: f64,
    pub failure_b: f64,
    /// Frequency of the union of mesh deviations that contains `A_g^c`.
    pub mesh_event: f64,
    pub bernstein_a: f64,
    pub bernstein_b: f64,
    pub vacuous: bool,
    pub mean_sup_error: f64,
    /// Quantiles 0.5, 0.9, 0.99 and the max of `|g * μ_Y - g * ρ|` pooled over mesh points and trials.
    pub mesh_error_quantiles: [f64; 4],
    /// Standard deviation of `g * μ_Y(y_m)` across trials, per mesh point.
    pub mesh_sd: Vec<f64>,
}

impl LadderPoint {
    /// Monte Carlo standard error of a frequency at this rung.
    pub fn frequency_sigma(&self, p: f64) -> f64 {
        (p * (1.0 - p) / self.trials as f64).sqrt()
    }
}

/// Output of [`run_lln`] and [`run_lln_perturbed`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub config: LlnConfig,
    pub perturbation: f64,
    pub mesh_per_axis: usize,
    pub mesh_size: usize,
    pub rho_sup: f64,
    pub norms: FunctionNorms,
    pub threshold_a: f64,
    pub ladder: Vec<LadderPoint>,
    pub trials: Vec<TrialRecord>,
}

impl TailReport {
    /// Per-mesh-point log-log slopes of the trial standard deviation against `N`.
    pub fn clt_slopes(&self) -> Vec<f64> {
        let xs: Vec<f64> = self.ladder.iter().map(|p| (p.n as f64).ln()).collect();
        (0..self.mesh_size)
            .map(|m| {
                let ys: Vec<f64> = self.ladder.iter().map(|p| p.mesh_sd[m].ln()).collect();
                loglog_fit(&xs, &ys).0
            })
            .collect()
    }

    /// Whether `P(A_g^c)` is non-increasing along the ladder up to 3σ.
    pub fn failure_monotone(&self) -> bool {
        self.ladder.windows(2).all(|w| {
            let s =
                (w[0].frequency_sigma(w[0].failure_a).powi(2) + w[1].frequency_sigma(w[1].failure_a).powi(2)).sqrt();
            w[1].failure_a <= w[0].failure_a + 3.0 * s
        })
    }

    /// Whether every non-vacuous rung lies under its Bernstein bound.
    pub fn within_envelope(&self) -> bool {
        self.ladder.iter().filter(|p| !p.vacuous).all(|p| p.failure_a <= p.bernstein_a)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    /// One row per rung: `N, gamma, delta, failureA, failureB, meshEvent, bernsteinA, bernsteinB, vacuous, meanSupError`.
    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Format(e.to_string());
        w.write_record([
            "N",
            "gamma",
            "delta",
            "failureA",
            "failureB",
            "meshEvent",
            "bernsteinA",
            "bernsteinB",
            "vacuous",
            "meanSupError",
        ])
        .map_err(err)?;
        for p in &self.ladder {
            w.write_record([
                p.n.to_string(),
                self.config.gamma.to_string(),
                self.config.delta.to_string(),
                p.failure_a.to_string(),
                p.failure_b.to_string(),
                p.mesh_event.to_string(),
                p.bernstein_a.to_string(),
                p.bernstein_b.to_string(),
                p.vacuous.to_string(),
                p.mean_sup_error.to_string(),
            ])
            .map_err(err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Least-squares slope and intercept of `y` against `x`.
pub fn loglog_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + (pos - i as f64) * (sorted[j] - sorted[i])
}

/// Adds an iid perturbation uniform in the ball of radius `size` to every
/// particle and returns the realised `|X - Y|_∞`.
pub fn perturb(y: &[f64], dim: usize, size: f64, seed: u64) -> (Vec<f64>, f64) {
    let mut rng = stream_rng(seed, 2);
    let mut x = y.to_vec();
    let mut worst: f64 = 0.0;
    if size == 0.0 {
        return (x, 0.0);
    }
    let mut z = [0.0; MAX_DIM];
    for p in x.chunks_mut(dim) {
        loop {
            for c in z.iter_mut().take(dim) {
                *c = rng.gen::<f64>() * 2.0 - 1.0;
            }
            if z[..dim].iter().map(|c| c * c).sum::<f64>() < 1.0 {
                break;
            }
        }
        let mut len2 = 0.0;
        for (c, dz) in p.iter_mut().zip(&z[..dim]) {
            let step = size * dz;
            let moved = wrap_coord(*c + step);
            let diff = wrap_coord(moved - *c);
            len2 += diff * diff;
            *c = moved;
        }
        worst = worst.max(len2.sqrt());
    }
    (x, worst)
}

/// Grid-path convolutions with a fixed `g`, `h` and `ρ`.
pub struct GridPath {
    g_hat: Spectrum,
    h_hat: Spectrum,
    deconvolve: Vec<f64>,
    pub g_rho: Vec<f64>,
    pub h_rho: Vec<f64>,
}

impl GridPath {
    pub fn new(f: &LocalFunction, rho: &ScalarField) -> Self {
        let grid = f.grid();
        let g_hat = grid.analyze(&f.g.values);
        let h_hat = grid.analyze(&f.h.field.values);
        let w = tensor_symbol(grid, &continuous_symbol(grid.n(), ASSIGNMENT_ORDER));
        let deconvolve = w.iter().map(|v| 1.0 / v).collect();
        let g_rho = grid.convolve(&f.g, rho).values;
        let h_rho = grid.convolve(&f.h.field, rho).values;
        Self { g_hat, h_hat, deconvolve, g_rho, h_rho }
    }

    /// `g * μ_X` on the nodes (deconvolved assignment) and, if asked, `h * μ_X`
    /// smoothed by the assignment kernel (the modulus is not smooth enough to
    /// deconvolve stably).
    pub fn convolve(&self, grid: &TorusGrid, x: &[f64], with_h: bool) -> (Vec<f64>, Option<Vec<f64>>) {
        let q = assignment_spectrum(grid, x, ASSIGNMENT_ORDER);
        let h = with_h.then(|| {
            let mut s = q.clone();
            s.coeffs.iter_mut().zip(&self.h_hat.coeffs).for_each(|(a, b)| *a *= b);
            grid.synthesize(&s)
        });
        let mut s = q;
        s.coeffs.iter_mut().zip(&self.g_hat.coeffs).zip(&self.deconvolve).for_each(|((a, b), w)| *a *= b * w);
        (grid.synthesize(&s), h)
    }
}

fn max_abs_diff(a: &[f64], b: &[f64], idx: Option<&[usize]>) -> f64 {
    match idx {
        Some(ix) => ix.iter().map(|&i| (a[i] - b[i]).abs()).fold(0.0, f64::max),
        None => a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max),
    }
}

/// Tail experiment for `A_g(γ, δ)`: for every `N` and trial, samples `Y ~ ρ^{⊗N}`
/// and compares `g * μ_Y` with `g * ρ` over the grid and over a grid-aligned
/// covering mesh of radius `rδ`.
pub fn run_lln(config: &LlnConfig) -> Result<TailReport> {
    run_tail(config, 0.0)
}

/// As [`run_lln`], additionally recording `B_g(γ, δ)` for `X = Y + ζ` with iid
/// perturbations uniform in the ball of radius `size < r`.
pub fn run_lln_perturbed(config: &LlnConfig, size: f64) -> Result<TailReport> {
    if !(size >= 0.0 && size < config.r) {
        return domain(format!("perturbation {size} must lie in [0, r) with r = {}", config.r));
    }
    run_tail(config, size)
}

fn run_tail(config: &LlnConfig, size: f64) -> Result<TailReport> {
    config.validate()?;
    let d = config.datum.dim;
    let grid = TorusGrid::new(d, config.grid_n)?;
    let f = LocalFunction::build(config.observable, config.r, &grid)?;
    let norms = f.norms();
    let rho = config.datum.density_field(&grid);
    let rho_sup = rho.max();
    let m = aligned_mesh_per_axis(d, config.r * config.delta);
    if 4 * m > grid.n() {
        return domain(format!("grid n={} is not 4x finer than the {m}-point covering mesh", grid.n()));
    }
    let mesh = lattice_nodes(&grid, m);
    let path = GridPath::new(&f, &rho);
    let thr_a = threshold_a(config.r, config.delta, config.gamma, rho_sup, &norms);
    let (r, gamma) = (config.r, config.gamma);

    let mut ladder = Vec::new();
    let mut trials = Vec::new();
    for &n in &config.n_ladder {
        let out: Vec<(TrialRecord, Vec<f64>)> = (0..config.trials)
            .into_par_iter()
            .map(|t| {
                let seed = derive_seed(config.seed, &[n as u64, t as u64]);
                let y = config.datum.sample_positions(n, seed);
                let (gy, hy) = path.convolve(&grid, &y, true);
                let hy = hy.expect("h requested");
                let sup_error = max_abs_diff(&gy, &path.g_rho, None);
                let mesh_error = max_abs_diff(&gy, &path.g_rho, Some(&mesh));
                let mesh_error_h = max_abs_diff(&hy, &path.h_rho, Some(&mesh));
                let (perturbation, sup_error_x) = if size > 0.0 {
                    let (x, dist) = perturb(&y, d, size, seed);
                    let (gx, _) = path.convolve(&grid, &x, false);
                    (dist, max_abs_diff(&gx, &path.g_rho, None))
                } else {
                    (0.0, sup_error)
                };
                let thr_b = threshold_b(r, config.delta, gamma, rho_sup, &norms, perturbation);
                let rec = TrialRecord {
                    n,
                    trial: t,
                    sup_error,
                    mesh_error,
                    mesh_error_h,
                    a_holds: sup_error <= thr_a,
                    perturbation,
                    sup_error_x,
                    b_holds: sup_error_x <= thr_b,
                };
                (rec, mesh.iter().map(|&i| gy[i]).collect())
            })
            .collect();

        let count = out.len() as f64;
        let freq = |pred: &dyn Fn(&TrialRecord) -> bool| out.iter().filter(|(t, _)| pred(t)).count() as f64 / count;
        let failure_a = freq(&|t| !t.a_holds);
        let failure_b = freq(&|t| !t.b_holds);
        let mesh_event = freq(&|t| t.mesh_error > r * gamma * rho_sup || t.mesh_error_h > gamma * rho_sup);
        let mut pooled: Vec<f64> =
            out.iter().flat_map(|(_, v)| v.iter().zip(&mesh).map(|(a, &i)| (a - path.g_rho[i]).abs())).collect();
        pooled.sort_by(f64::total_cmp);
        let mesh_sd = (0..mesh.len())
            .map(|j| {
                let mean = out.iter().map(|(_, v)| v[j]).sum::<f64>() / count;
                (out.iter().map(|(_, v)| (v[j] - mean).powi(2)).sum::<f64>() / (count - 1.0).max(1.0)).sqrt()
            })
            .collect();
        let bernstein_a = bernstein_sum(n, mesh.len(), r, gamma, rho_sup, &norms);
        let bernstein_b = bernstein_sum_perturbed(n, mesh.len(), r, gamma, rho_sup, &norms);
        ladder.push(LadderPoint {
            n,
            trials: out.len(),
            failure_a,
            failure_b,
            mesh_event,
            bernstein_a,
            bernstein_b,
            vacuous: bernstein_a >= 1.0,
            mean_sup_error: out.iter().map(|(t, _)| t.sup_error).sum::<f64>() / count,
            mesh_error_quantiles: [
                quantile(&pooled, 0.5),
                quantile(&pooled, 0.9),
                quantile(&pooled, 0.99),
                *pooled.last().unwrap_or(&0.0),
            ],
            mesh_sd,
        });
        trials.extend(out.into_iter().map(|(t, _)| t));
    }

    Ok(TailReport {
        config: config.clone(),
        perturbation: size,
        mesh_per_axis: m,
        mesh_size: mesh.len(),
        rho_sup,
        norms,
        threshold_a: thr_a,
        ladder,
        trials,
    })
}

/// Configuration of the exact-inequality suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactSuiteConfig {
    pub datum: InitialDatum,
    pub r: f64,
    pub grid_n: usize,
    pub n_particles: usize,
    pub trials: usize,
    /// Perturbation radius as a fraction of `r`, in `[0, 1)`.
    pub perturbation: f64,
    pub seed: u64,
}

/// Margins of the two deterministic inequalities on one trial (`rhs - lhs`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactTrial {
    pub trial: usize,
    pub observable: Observable,
    pub distance: f64,
    /// Worst pointwise margin of `|g*μ_X - g*μ_Y| ≤ (h*μ_Y)|X - Y|_∞` over the probes.
    pub empirical_margin: f64,
    /// Margin of the mesh reduction with `ν₁` the grid quadrature of `ρ` and `ν₂ = μ_Y`.
    pub mesh_margin: f64,
    pub mesh_lhs: f64,
    pub mesh_rhs: f64,
}

impl ExactTrial {
    pub fn holds(&self) -> bool {
        self.empirical_margin >= 0.0 && self.mesh_margin >= 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactSuiteReport {
    pub config: ExactSuiteConfig,
    pub mesh_per_axis: usize,
    pub probes_per_axis: usize,
    pub trials: Vec<ExactTrial>,
}

impl ExactSuiteReport {
    pub fn all_hold(&self) -> bool {
        self.trials.iter().all(ExactTrial::holds)
    }
}

/// Direct particle sum `(1/N) Σ_j f(y - X_j)` at every probe.
fn particle_sum(f: impl Fn(&[f64]) -> f64 + Sync, probes: &[[f64; MAX_DIM]], x: &[f64], dim: usize) -> Vec<f64> {
    let count = (x.len() / dim) as f64;
    probes
        .par_iter()
        .map(|y| {
            let mut z = [0.0; MAX_DIM];
            let mut acc = 0.0;
            for p in x.chunks(dim) {
                displacement(&y[..dim], p, &mut z[..dim]);
                acc += f(&z[..dim]);
            }
            acc / count
        })
        .collect()
}

/// Checks the weak-strong bound for empirical measures and the covering-mesh
/// reduction on randomized trials, cycling through the observables. Every
/// convolution with a particle measure is a direct sum; convolutions with the
/// grid measure of `ρ` are exact discrete convolutions on the nodes.
pub fn run_exact_suite(config: &ExactSuiteConfig) -> Result<ExactSuiteReport> {
    let d = config.datum.dim;
    let r = config.r;
    if !(0.0..1.0).contains(&config.perturbation) {
        return domain("perturbation fraction must lie in [0, 1)");
    }
    if config.trials == 0 || config.n_particles == 0 {
        return domain("need at least one trial and one particle");
    }
    let grid = TorusGrid::new(d, config.grid_n)?;
    let m = aligned_mesh_per_axis(d, r);
    let p = 4 * m;
    if p > grid.n() {
        return domain(format!("grid n={} cannot host a {p}-point probe lattice", grid.n()));
    }
    let probe_nodes = lattice_nodes(&grid, p);
    let probes: Vec<[f64; MAX_DIM]> = probe_nodes.iter().map(|&i| grid.node_coords(i)).collect();
    let mesh_in_probes: Vec<usize> = {
        let mesh = lattice_nodes(&grid, m);
        mesh.iter()
            .map(|i| probe_nodes.iter().position(|j| j == i).expect("mesh nodes lie on the probe lattice"))
            .collect()
    };
    let rho = config.datum.density_field(&grid);
    let functions = Observable::ALL.iter().map(|&o| LocalFunction::build(o, r, &grid)).collect::<Result<Vec<_>>>()?;
    let against_rho: Vec<(Vec<f64>, Vec<f64>)> = functions
        .iter()
        .map(|f| {
            let g = grid.convolve(&f.g, &rho).values;
            let h = grid.convolve(&f.h.field, &rho).values;
            (probe_nodes.iter().map(|&i| g[i]).collect(), probe_nodes.iter().map(|&i| h[i]).collect())
        })
        .collect();

    let trials = (0..config.trials)
        .map(|t| {
            let k = t % functions.len();
            let f = &functions[k];
            let seed = derive_seed(config.seed, &[t as u64]);
            let y = config.datum.sample_positions(config.n_particles, seed);
            let (x, dist) = perturb(&y, d, config.perturbation * r, seed);
            let gy = particle_sum(|z| f.eval(z), &probes, &y, d);
            let gx = particle_sum(|z| f.eval(z), &probes, &x, d);
            let hy = particle_sum(|z| f.h.eval(z), &probes, &y, d);
            let empirical_margin =
                (0..probes.len()).map(|i| hy[i] * dist - (gx[i] - gy[i]).abs()).fold(f64::INFINITY, f64::min);
            let (g1, h1) = &against_rho[k];
            let lhs = max_abs_diff(g1, &gy, None);
            let h1_sup = h1.iter().cloned().fold(0.0, f64::max);
            let dg = mesh_in_probes.iter().map(|&i| (g1[i] - gy[i]).abs()).fold(0.0, f64::max);
            let dh = mesh_in_probes.iter().map(|&i| (h1[i] - hy[i]).abs()).fold(0.0, f64::max);
            let rhs = 2.0 * r * h1_sup + dg + r * dh;
            ExactTrial {
                trial: t,
                observable: f.observable,
                distance: dist,
                empirical_margin,
                mesh_margin: rhs - lhs,
                mesh_lhs: lhs,
                mesh_rhs: rhs,
            }
        })
        .collect();
    Ok(ExactSuiteReport { config: config.clone(), mesh_per_axis: m, probes_per_axis: p, trials })
}
