//! Time integration of the coupled particle system, the self-consistent
//! reference ensemble and the auxiliary particles it advects.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{DepositionScheme, Depositor, InitialDatum, ParticleEnsemble, SupTracker};
use crate::error::{domain, Error, Result};
use crate::interp::SplineField;
use crate::pb::{solve_pb_with, PbOptions, DEFAULT_TOL, MAX_ITERATIONS};
use crate::rng::derive_seed;
use crate::torus::{wrap_coord, ScalarField, TorusGrid, MAX_DIM};

/// Default reference multiplier `M = κ N`.
pub const DEFAULT_KAPPA: usize = 16;
/// Upper cap of the time step.
pub const DT_CAP: f64 = 0.01;

/// How the reference ensemble is drawn from `f₀`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Sampling {
    Iid,
    Quiet { beams_per_axis: usize },
}

impl Sampling {
    pub fn sample(&self, f0: &InitialDatum, n: usize, seed: u64) -> Result<ParticleEnsemble> {
        match *self {
            Sampling::Iid => ParticleEnsemble::sample_iid(f0, n, seed),
            Sampling::Quiet { beams_per_axis } => ParticleEnsemble::sample_quiet(f0, n, beams_per_axis, seed),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    VelocityVerlet,
}

/// Step size `min(0.01, r/(4 v_max), 4h/v_max)`.
pub fn dt_policy(r: f64, v_max: f64, spacing: f64) -> f64 {
    DT_CAP.min(r / (4.0 * v_max)).min(4.0 * spacing / v_max)
}

/// Everything that determines a paired run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub datum: InitialDatum,
    pub n_particles: usize,
    pub r: f64,
    pub grid_n: usize,
    pub dt: f64,
    pub t_final: f64,
    pub integrator: Integrator,
    pub kappa: usize,
    pub tol: f64,
    pub seed: u64,
    pub deposition: DepositionScheme,
    pub interp_order: usize,
    pub reference_sampling: Sampling,
    /// Seed of the reference ensemble; derived from `seed` when absent.
    pub reference_seed: Option<u64>,
    /// Store full snapshots every `max(1, steps/64)` steps.
    pub snapshots: bool,
}

impl SimulationConfig {
    /// A configuration with the default policies for everything but the essentials.
    pub fn new(datum: InitialDatum, n_particles: usize, r: f64, grid_n: usize, t_final: f64, seed: u64) -> Self {
        Self {
            datum,
            n_particles,
            r,
            grid_n,
            dt: dt_policy(r, datum.v_max, 1.0 / grid_n as f64),
            t_final,
            integrator: Integrator::VelocityVerlet,
            kappa: DEFAULT_KAPPA,
            tol: DEFAULT_TOL,
            seed,
            deposition: DepositionScheme::Spectral { order: 4 },
            interp_order: 4,
            reference_sampling: Sampling::Iid,
            reference_seed: None,
            snapshots: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_particles == 0 {
            return domain("N must be positive");
        }
        if !(self.r > 0.0 && self.r < 0.25) {
            return domain(format!("r = {} outside (0, 1/4)", self.r));
        }
        if self.kappa < 1 {
            return domain("reference multiplier must be at least 1");
        }
        if !(self.dt > 0.0) || !(self.t_final >= 0.0) {
            return domain("time step and horizon must be positive");
        }
        let h = 1.0 / self.grid_n as f64;
        if self.dt * self.datum.v_max > 4.0 * h * (1.0 + 1e-12) {
            return domain(format!("dt·v_max = {} exceeds four grid cells", self.dt * self.datum.v_max));
        }
        TorusGrid::new(self.datum.dim, self.grid_n)?;
        Ok(())
    }

    /// Number of steps; the step actually taken is `t_final / steps ≤ dt`.
    pub fn steps(&self) -> usize {
        (self.t_final / self.dt - 1e-9).ceil().max(0.0) as usize
    }

    pub fn step_size(&self) -> f64 {
        match self.steps() {
            0 => 0.0,
            s => self.t_final / s as f64,
        }
    }

    pub fn reference_seed(&self) -> u64 {
        self.reference_seed.unwrap_or_else(|| derive_seed(self.seed, &[1]))
    }

    pub fn grid(&self) -> Result<TorusGrid> {
        TorusGrid::new(self.datum.dim, self.grid_n)
    }
}

/// `E = -∇Φ_r[μ]` on the grid with its spline, and per-solve diagnostics.
#[derive(Clone, Debug)]
pub struct ForceField {
    pub spline: SplineField,
    /// Grid sup of `|E|`.
    pub sup: f64,
    /// `½ ∫ |E|²`.
    pub energy: f64,
    pub iterations: usize,
    pub residual: f64,
}

impl ForceField {
    /// `E` at every position of a flat array.
    pub fn eval_all(&self, x: &[f64]) -> Vec<f64> {
        let d = self.spline.grid().dim();
        let mut out = vec![0.0; x.len()];
        out.par_chunks_mut(d * 256).zip(x.par_chunks(d * 256)).for_each(|(o, p)| {
            for (oi, pi) in o.chunks_mut(d).zip(p.chunks(d)) {
                self.spline.eval_into(pi, oi);
            }
        });
        out
    }

    pub fn eval(&self, x: &[f64]) -> [f64; MAX_DIM] {
        let mut out = [0.0; MAX_DIM];
        self.spline.eval_into(x, &mut out[..x.len()]);
        out
    }
}

/// Deposition plus Poisson–Boltzmann solve, warm-started from the previous potential.
#[derive(Clone, Debug)]
pub struct FieldSolver {
    depositor: Depositor,
    options: PbOptions,
    order: usize,
    warm: Option<ScalarField>,
}

impl FieldSolver {
    pub fn new(grid: &TorusGrid, r: f64, scheme: DepositionScheme, order: usize, tol: f64) -> Result<Self> {
        let depositor = Depositor::new(grid, r, scheme)?;
        let options = PbOptions { tol, max_iterations: MAX_ITERATIONS };
        Ok(Self { depositor, options, order, warm: None })
    }

    pub fn from_config(cfg: &SimulationConfig) -> Result<Self> {
        Self::new(&cfg.grid()?, cfg.r, cfg.deposition, cfg.interp_order, cfg.tol)
    }

    pub fn solve(&mut self, x: &[f64]) -> Result<ForceField> {
        let mut rho = self.depositor.deposit(x)?;
        // Quadrature of χ_r on the nodes carries ~1e-9 mass error; restore unit mass.
        let mean = rho.mean();
        rho.values.iter_mut().for_each(|v| *v /= mean);
        let sol = solve_pb_with(&rho, self.warm.as_ref(), &self.options)?;
        let spline = sol.field_spline(self.order)?;
        let mag = sol.field.magnitude();
        let energy = 0.5 * mag.values.iter().map(|m| m * m).sum::<f64>() / mag.values.len() as f64;
        let field =
            ForceField { spline, sup: mag.sup_norm(), energy, iterations: sol.iterations, residual: sol.residual_sup };
        self.warm = Some(sol.phi);
        Ok(field)
    }
}

fn kick(v: &mut [f64], force: &[f64], h: f64) {
    v.iter_mut().zip(force).for_each(|(vi, fi)| *vi += h * fi);
}

fn drift(x: &mut [f64], v: &[f64], h: f64) {
    x.iter_mut().zip(v).for_each(|(xi, vi)| *xi = wrap_coord(*xi + h * vi));
}

fn max_norm(f: &[f64], d: usize) -> f64 {
    f.chunks(d).map(|c| c.iter().map(|a| a * a).sum::<f64>().sqrt()).fold(0.0, f64::max)
}

/// Particles moving in their own mean field (the coupled system, or the reference ensemble).
#[derive(Clone, Debug)]
pub struct SelfConsistent {
    pub ensemble: ParticleEnsemble,
    pub field: ForceField,
    pub force: Vec<f64>,
    solver: FieldSolver,
    /// `v_max + Σ dt·max|F|`, the a-priori speed budget.
    pub speed_budget: f64,
}

impl SelfConsistent {
    pub fn new(ensemble: ParticleEnsemble, mut solver: FieldSolver, v_max: f64) -> Result<Self> {
        let field = solver.solve(&ensemble.x)?;
        let force = field.eval_all(&ensemble.x);
        Ok(Self { ensemble, field, force, solver, speed_budget: v_max })
    }

    /// One kick-drift-kick step.
    pub fn step(&mut self, dt: f64) -> Result<()> {
        let d = self.ensemble.dim;
        let before = max_norm(&self.force, d);
        kick(&mut self.ensemble.v, &self.force, 0.5 * dt);
        drift(&mut self.ensemble.x, &self.ensemble.v, dt);
        self.field = self.solver.solve(&self.ensemble.x)?;
        self.force = self.field.eval_all(&self.ensemble.x);
        kick(&mut self.ensemble.v, &self.force, 0.5 * dt);
        self.speed_budget += 0.5 * dt * (before + max_norm(&self.force, d));
        Ok(())
    }
}

/// Particles advected by an external field; they do not contribute to it.
#[derive(Clone, Debug)]
pub struct Passive {
    pub ensemble: ParticleEnsemble,
    pub force: Vec<f64>,
}

impl Passive {
    pub fn new(ensemble: ParticleEnsemble, field: &ForceField) -> Self {
        let force = field.eval_all(&ensemble.x);
        Self { ensemble, force }
    }

    /// One kick-drift-kick step; `next` is the driving field at the end of the step.
    pub fn step(&mut self, next: &ForceField, dt: f64) {
        kick(&mut self.ensemble.v, &self.force, 0.5 * dt);
        drift(&mut self.ensemble.x, &self.ensemble.v, dt);
        self.force = next.eval_all(&self.ensemble.x);
        kick(&mut self.ensemble.v, &self.force, 0.5 * dt);
    }
}

/// Advances the coupled system one step.
pub fn step_coupled(system: &mut SelfConsistent, dt: f64) -> Result<()> {
    system.step(dt)
}

/// Advances the reference ensemble one step.
pub fn step_reference(reference: &mut SelfConsistent, dt: f64) -> Result<()> {
    reference.step(dt)
}

/// Advances auxiliary particles one step in the (already advanced) reference field.
pub fn step_auxiliary(aux: &mut Passive, reference: &SelfConsistent, dt: f64) {
    aux.step(&reference.field, dt)
}

/// One row of the paired time series.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub time: f64,
    /// `|X - Y|_∞` and `|V - W|_∞` at this time.
    pub dist_x: f64,
    pub dist_v: f64,
    /// Running sups over `[0, t]`.
    pub sup_x: f64,
    pub sup_v: f64,
    /// Grid sup of the coupled field.
    pub max_field: f64,
    /// `max_i |E^X(X_i) - E^f(Y_i)|`.
    pub field_diff: f64,
    /// Kinetic plus field energy of the coupled system.
    pub energy_proxy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub time: f64,
    pub coupled: ParticleEnsemble,
    pub auxiliary: ParticleEnsemble,
}

/// The coupled and auxiliary systems from shared initial data.
#[derive(Clone, Debug)]
pub struct PairedTrajectory {
    pub config: SimulationConfig,
    pub initial: ParticleEnsemble,
    pub coupled: ParticleEnsemble,
    pub auxiliary: ParticleEnsemble,
    pub series: Vec<SeriesRow>,
    pub snapshots: Vec<Snapshot>,
    /// PB iterations summed over all solves.
    pub solver_iterations: usize,
    /// Largest PB residual seen.
    pub max_residual: f64,
}

impl PairedTrajectory {
    pub fn terminal(&self) -> SeriesRow {
        *self.series.last().expect("series always holds t = 0")
    }

    /// Writes `time,supX,supV,maxField,energyProxy` plus the instantaneous columns.
    pub fn write_series_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time", "supX", "supV", "maxField", "energyProxy", "distX", "distV", "fieldDiff"])
            .map_err(|e| Error::Format(e.to_string()))?;
        for s in &self.series {
            w.write_record(
                [s.time, s.sup_x, s.sup_v, s.max_field, s.energy_proxy, s.dist_x, s.dist_v, s.field_diff]
                    .iter()
                    .map(|v| v.to_string()),
            )
            .map_err(|e| Error::Format(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn kinetic(e: &ParticleEnsemble) -> f64 {
    0.5 * e.v.iter().map(|c| c * c).sum::<f64>() / e.len() as f64
}

fn check_budget(system: &SelfConsistent) -> Result<()> {
    let speed = system.ensemble.max_speed();
    if speed > system.speed_budget * (1.0 + 1e-12) {
        return domain(format!("speed {speed} exceeds the a-priori budget {}", system.speed_budget));
    }
    Ok(())
}

/// Runs the coupled, reference and auxiliary systems on a shared clock.
pub fn run_pair(config: &SimulationConfig) -> Result<PairedTrajectory> {
    config.validate()?;
    let f0 = &config.datum;
    let d = f0.dim;
    let initial = ParticleEnsemble::sample_iid(f0, config.n_particles, config.seed)?;
    let reference0 =
        config.reference_sampling.sample(f0, config.kappa * config.n_particles, config.reference_seed())?;
    let mut coupled = SelfConsistent::new(initial.clone(), FieldSolver::from_config(config)?, f0.v_max)?;
    let mut reference = SelfConsistent::new(reference0, FieldSolver::from_config(config)?, f0.v_max)?;
    let mut aux = Passive::new(initial.clone(), &reference.field);
    let steps = config.steps();
    let dt = config.step_size();
    let cadence = (steps / 64).max(1);
    let mut tracker = SupTracker::default();
    let mut series = Vec::with_capacity(steps + 1);
    let mut snapshots = Vec::new();
    let mut iterations = coupled.field.iterations + reference.field.iterations;
    let mut max_residual = coupled.field.residual.max(reference.field.residual);
    let mut record = |k: usize, c: &SelfConsistent, a: &Passive, tracker: &mut SupTracker| -> Result<()> {
        let (dx, dv) = c.ensemble.sup_distances(&a.ensemble)?;
        tracker.update(dx, dv);
        let field_diff = c
            .force
            .chunks(d)
            .zip(a.force.chunks(d))
            .map(|(p, q)| p.iter().zip(q).map(|(s, t)| (s - t) * (s - t)).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        series.push(SeriesRow {
            time: k as f64 * dt,
            dist_x: dx,
            dist_v: dv,
            sup_x: tracker.x,
            sup_v: tracker.v,
            max_field: c.field.sup,
            field_diff,
            energy_proxy: kinetic(&c.ensemble) + c.field.energy,
        });
        if config.snapshots && (k.is_multiple_of(cadence) || k == steps) {
            snapshots.push(Snapshot {
                time: k as f64 * dt,
                coupled: c.ensemble.clone(),
                auxiliary: a.ensemble.clone(),
            });
        }
        Ok(())
    };
    record(0, &coupled, &aux, &mut tracker)?;
    for k in 1..=steps {
        step_coupled(&mut coupled, dt)?;
        step_reference(&mut reference, dt)?;
        step_auxiliary(&mut aux, &reference, dt);
        iterations += coupled.field.iterations + reference.field.iterations;
        max_residual = max_residual.max(coupled.field.residual).max(reference.field.residual);
        record(k, &coupled, &aux, &mut tracker)?;
    }
    check_budget(&coupled)?;
    check_budget(&reference)?;
    let mut coupled_ens = coupled.ensemble;
    coupled_ens.tracker = tracker;
    let mut aux_ens = aux.ensemble;
    aux_ens.tracker = tracker;
    Ok(PairedTrajectory {
        config: config.clone(),
        initial,
        coupled: coupled_ens,
        auxiliary: aux_ens,
        series,
        snapshots,
        solver_iterations: iterations,
        max_residual,
    })
}

/// Probes advected by a reference ensemble evolving in its own field at scale `config.r`.
#[derive(Clone, Debug)]
pub struct FlowResult {
    pub probes: ParticleEnsemble,
    pub reference: ParticleEnsemble,
    /// Largest grid field seen.
    pub max_field: f64,
}

/// Evolves `reference` self-consistently and `probes` passively up to `config.t_final`.
pub fn run_flow(
    reference: &ParticleEnsemble,
    probes: &ParticleEnsemble,
    config: &SimulationConfig,
) -> Result<FlowResult> {
    config.validate()?;
    if reference.dim != config.datum.dim || probes.dim != config.datum.dim {
        return domain("ensemble dimension does not match the configuration");
    }
    let mut refsys = SelfConsistent::new(reference.clone(), FieldSolver::from_config(config)?, config.datum.v_max)?;
    let mut aux = Passive::new(probes.clone(), &refsys.field);
    let dt = config.step_size();
    let mut max_field = refsys.field.sup;
    for _ in 0..config.steps() {
        step_reference(&mut refsys, dt)?;
        step_auxiliary(&mut aux, &refsys, dt);
        max_field = max_field.max(refsys.field.sup);
    }
    check_budget(&refsys)?;
    Ok(FlowResult { probes: aux.ensemble, reference: refsys.ensemble, max_field })
}

/// Evolves a single self-consistent system (no reference) up to `config.t_final`.
pub fn run_coupled(initial: &ParticleEnsemble, config: &SimulationConfig) -> Result<ParticleEnsemble> {
    config.validate()?;
    let mut sys = SelfConsistent::new(initial.clone(), FieldSolver::from_config(config)?, config.datum.v_max)?;
    let dt = config.step_size();
    for _ in 0..config.steps() {
        sys.step(dt)?;
    }
    check_budget(&sys)?;
    Ok(sys.ensemble)
}
