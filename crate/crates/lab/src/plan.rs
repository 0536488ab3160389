//! Experiment plans: a TOML file with an `[experiment]` header, a `[datum]`
//! section and one section per experiment kind. Unknown keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vpme_core::dynamics::{dt_policy, SimulationConfig, DEFAULT_KAPPA};
use vpme_core::ensemble::{InitialDatum, SpatialProfile};
use vpme_core::kdist::KineticDistanceParams;
use vpme_core::lln::Observable;
use vpme_core::mollifiers::CELLS_PER_RADIUS;

use crate::error::{config_err, LabError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Converge,
    Lln,
    FlowRate,
    PbValidate,
    Simulate,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Converge => "converge",
            ExperimentKind::Lln => "lln",
            ExperimentKind::FlowRate => "flow-rate",
            ExperimentKind::PbValidate => "pb-validate",
            ExperimentKind::Simulate => "simulate",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    /// Output directory; not part of the plan identity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    Uniform,
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatumSection {
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_profile")]
    pub profile: ProfileKind,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default = "default_mode")]
    pub mode: u32,
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_max: Option<f64>,
}

fn default_dim() -> usize {
    2
}
fn default_profile() -> ProfileKind {
    ProfileKind::Cosine
}
fn default_amplitude() -> f64 {
    0.5
}
fn default_mode() -> u32 {
    1
}
fn default_theta() -> f64 {
    0.0625
}
fn default_one() -> f64 {
    1.0
}
fn default_kappa() -> usize {
    DEFAULT_KAPPA
}
fn default_half() -> f64 {
    0.5
}
fn default_true() -> bool {
    true
}

impl Default for DatumSection {
    fn default() -> Self {
        Self {
            dim: default_dim(),
            profile: default_profile(),
            amplitude: default_amplitude(),
            mode: default_mode(),
            theta: default_theta(),
            v_max: None,
        }
    }
}

impl DatumSection {
    pub fn datum(&self) -> Result<InitialDatum> {
        let spatial = match self.profile {
            ProfileKind::Uniform => SpatialProfile::Uniform,
            ProfileKind::Cosine => SpatialProfile::Cosine { amplitude: self.amplitude, mode: self.mode },
        };
        let datum = match self.v_max {
            Some(v) => InitialDatum::with_v_max(self.dim, spatial, self.theta, v),
            None => InitialDatum::new(self.dim, spatial, self.theta),
        };
        datum.map_err(|e| LabError::Config(format!("[datum]: {e}")))
    }
}

/// `[converge]`: paired coupled/auxiliary runs down an `N` ladder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergePlan {
    pub ladder: Vec<usize>,
    pub epsilon: f64,
    /// Exceedance threshold constant `c₀` in `c₀ N^{-1/d+ε}`.
    #[serde(default = "default_one")]
    pub c0: f64,
    /// Prefactor of the mollification scale `r = r_scale N^{-1/d+ε}`.
    #[serde(default = "default_one")]
    pub r_scale: f64,
    pub trials: usize,
    #[serde(default = "default_one")]
    pub t_final: f64,
    #[serde(default = "default_kappa")]
    pub kappa: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    /// Kinetic-distance audit parameters `(α₀, β₀)`; the audit runs when `r` is admissible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit: Option<[f64; 2]>,
    #[serde(default = "default_true")]
    pub series: bool,
}

/// `[lln]`: tail frequencies of the uniform law of large numbers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlnPlan {
    pub observable: ObservableKind,
    #[serde(default)]
    pub axis: usize,
    pub ladder: Vec<usize>,
    pub r: f64,
    #[serde(default = "default_half")]
    pub delta: f64,
    #[serde(default = "default_half")]
    pub gamma: f64,
    pub trials: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_n: Option<usize>,
    /// Perturbation radius as a fraction of `r`; enables the perturbed experiment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<f64>,
    /// Trials of the exact-inequality suite; zero skips it.
    #[serde(default)]
    pub exact_trials: usize,
    #[serde(default = "default_exact_particles")]
    pub exact_particles: usize,
}

fn default_exact_particles() -> usize {
    256
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObservableKind {
    Kernel,
    Mollifier,
    ScaledMollifier,
}

/// `[flow_rate]`: auxiliary flows down a dyadic `r` ladder against one reference ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowRatePlan {
    pub r_ladder: Vec<f64>,
    #[serde(default = "default_reference")]
    pub reference: usize,
    #[serde(default = "default_beams")]
    pub beams_per_axis: usize,
    #[serde(default = "default_probes")]
    pub probes: usize,
    #[serde(default = "default_half")]
    pub t_final: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
}

fn default_reference() -> usize {
    65_536
}
fn default_beams() -> usize {
    2
}
fn default_probes() -> usize {
    256
}

/// `[pb_validate]`: manufactured solution and estimate checks for the PB solver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PbValidatePlan {
    #[serde(default = "default_pb_grid")]
    pub grid_n: usize,
    #[serde(default = "default_densities")]
    pub densities: usize,
    #[serde(default = "default_density_amplitude")]
    pub amplitude: f64,
    #[serde(default = "default_pb_tol")]
    pub tol: f64,
    /// Amplitude `a` of the manufactured potential `a cos(2π x₁) - log⟨e^{a cos}⟩`.
    #[serde(default = "default_manufactured")]
    pub manufactured: f64,
}

fn default_pb_grid() -> usize {
    128
}
fn default_densities() -> usize {
    20
}
fn default_density_amplitude() -> f64 {
    1.2
}
fn default_pb_tol() -> f64 {
    1e-11
}
fn default_manufactured() -> f64 {
    0.3
}

impl Default for PbValidatePlan {
    fn default() -> Self {
        Self {
            grid_n: default_pb_grid(),
            densities: default_densities(),
            amplitude: default_density_amplitude(),
            tol: default_pb_tol(),
            manufactured: default_manufactured(),
        }
    }
}

/// `[simulate]`: one paired run with its full time series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulatePlan {
    pub particles: usize,
    pub r: f64,
    #[serde(default = "default_one")]
    pub t_final: f64,
    #[serde(default = "default_kappa")]
    pub kappa: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit: Option<[f64; 2]>,
}

/// A complete experiment plan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Plan {
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub datum: DatumSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converge: Option<ConvergePlan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lln: Option<LlnPlan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow_rate: Option<FlowRatePlan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pb_validate: Option<PbValidatePlan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulatePlan>,
}

/// Smallest power of two `n` with `n r ≥ 16`, and at least 16.
pub fn grid_policy(r: f64) -> usize {
    ((CELLS_PER_RADIUS / r - 1e-9).ceil().max(16.0) as usize).next_power_of_two()
}

fn check_geometric(ladder: &[usize], what: &str) -> Result<()> {
    if ladder.is_empty() || ladder.contains(&0) {
        return config_err(format!("{what}: ladder must hold positive sizes"));
    }
    if ladder.windows(2).any(|w| w[1] <= w[0]) {
        return config_err(format!("{what}: ladder must be strictly increasing"));
    }
    if ladder.len() >= 3 {
        let q = ladder[1] as f64 / ladder[0] as f64;
        if ladder.windows(2).any(|w| ((w[1] as f64 / w[0] as f64) / q - 1.0).abs() > 1e-9) {
            return config_err(format!("{what}: ladder {ladder:?} is not geometric"));
        }
    }
    Ok(())
}

impl ConvergePlan {
    /// `r(N) = r_scale N^{-1/d+ε}`.
    pub fn r_of(&self, n: usize, dim: usize) -> f64 {
        self.r_scale * (n as f64).powf(-1.0 / dim as f64 + self.epsilon)
    }

    pub fn threshold(&self, n: usize, dim: usize) -> f64 {
        self.c0 * (n as f64).powf(-1.0 / dim as f64 + self.epsilon)
    }

    pub fn grid_n(&self, dim: usize) -> usize {
        let n_max = *self.ladder.iter().max().unwrap_or(&1);
        self.grid_n.unwrap_or_else(|| grid_policy(self.r_of(n_max, dim)))
    }

    pub fn simulation(&self, datum: InitialDatum, n: usize, seed: u64) -> SimulationConfig {
        let d = datum.dim;
        let mut cfg = SimulationConfig::new(datum, n, self.r_of(n, d), self.grid_n(d), self.t_final, seed);
        cfg.kappa = self.kappa;
        if let Some(dt) = self.dt {
            cfg.dt = dt;
        }
        cfg
    }

    fn validate(&self, datum: InitialDatum) -> Result<()> {
        let d = datum.dim;
        check_geometric(&self.ladder, "[converge]")?;
        if !(self.epsilon > 0.0 && self.epsilon < 1.0 / d as f64) {
            return config_err(format!("[converge]: epsilon = {} outside (0, 1/d)", self.epsilon));
        }
        if self.trials == 0 || !(self.c0 > 0.0) || !(self.r_scale > 0.0) || !(self.t_final > 0.0) {
            return config_err("[converge]: trials, c0, r_scale and t_final must be positive");
        }
        let n = self.grid_n(d);
        let n_max = *self.ladder.iter().max().unwrap();
        if self.r_of(n_max, d) < 4.0 / n as f64 {
            return config_err(format!(
                "[converge]: r(N_max) = {} below four grid cells of n = {n}",
                self.r_of(n_max, d)
            ));
        }
        for &size in &self.ladder {
            self.simulation(datum, size, 0)
                .validate()
                .map_err(|e| LabError::Config(format!("[converge] N={size}: {e}")))?;
        }
        Ok(())
    }
}

impl LlnPlan {
    pub fn observable(&self) -> Observable {
        match self.observable {
            ObservableKind::Kernel => Observable::KernelComponent { axis: self.axis },
            ObservableKind::Mollifier => Observable::Mollifier,
            ObservableKind::ScaledMollifier => Observable::ScaledMollifier,
        }
    }

    pub fn grid_n(&self) -> usize {
        self.grid_n.unwrap_or_else(|| grid_policy(self.r))
    }

    fn validate(&self, datum: InitialDatum) -> Result<()> {
        check_geometric(&self.ladder, "[lln]")?;
        if self.axis >= datum.dim {
            return config_err(format!("[lln]: axis {} out of range for d = {}", self.axis, datum.dim));
        }
        if !(self.r > 0.0 && self.r < 0.25) {
            return config_err(format!("[lln]: r = {} outside (0, 1/4)", self.r));
        }
        if self.trials == 0 {
            return config_err("[lln]: trials must be positive");
        }
        if let Some(p) = self.perturbation {
            if !(0.0..1.0).contains(&p) {
                return config_err(format!("[lln]: perturbation fraction {p} outside [0, 1)"));
            }
        }
        if self.exact_trials > 0 && self.exact_particles == 0 {
            return config_err("[lln]: exact suite needs particles");
        }
        Ok(())
    }
}

impl FlowRatePlan {
    pub fn r_min(&self) -> f64 {
        self.r_ladder.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn grid_n(&self) -> usize {
        self.grid_n.unwrap_or_else(|| grid_policy(self.r_min()))
    }

    /// One step size for every rung, set by the finest scale.
    pub fn dt(&self, datum: &InitialDatum) -> f64 {
        self.dt.unwrap_or_else(|| dt_policy(self.r_min(), datum.v_max, 1.0 / self.grid_n() as f64))
    }

    pub fn simulation(&self, datum: InitialDatum, r: f64, seed: u64) -> SimulationConfig {
        let mut cfg = SimulationConfig::new(datum, self.probes, r, self.grid_n(), self.t_final, seed);
        cfg.dt = self.dt(&datum);
        cfg
    }

    fn validate(&self, datum: InitialDatum) -> Result<()> {
        if self.r_ladder.len() < 2 {
            return config_err("[flow_rate]: r ladder needs at least two scales");
        }
        for w in self.r_ladder.windows(2) {
            if (w[1] / w[0] - 0.5).abs() > 1e-12 {
                return config_err(format!("[flow_rate]: r ladder {:?} is not dyadic and decreasing", self.r_ladder));
            }
        }
        if self.reference == 0 || self.probes == 0 || !(self.t_final > 0.0) {
            return config_err("[flow_rate]: reference, probes and t_final must be positive");
        }
        if self.r_min() < 4.0 / self.grid_n() as f64 {
            return config_err(format!("[flow_rate]: r = {} below four grid cells", self.r_min()));
        }
        if !self.reference.is_multiple_of(self.beams_per_axis.pow(datum.dim as u32)) {
            return config_err("[flow_rate]: reference size must be a multiple of the beam count");
        }
        for &r in &self.r_ladder {
            self.simulation(datum, r, 0).validate().map_err(|e| LabError::Config(format!("[flow_rate] r={r}: {e}")))?;
        }
        Ok(())
    }
}

impl PbValidatePlan {
    fn validate(&self) -> Result<()> {
        if self.grid_n < 8 || !self.grid_n.is_power_of_two() {
            return config_err("[pb_validate]: grid_n must be a power of two ≥ 8");
        }
        if !(self.tol > 0.0) || self.amplitude < 0.0 {
            return config_err("[pb_validate]: tol must be positive and amplitude non-negative");
        }
        Ok(())
    }
}

impl SimulatePlan {
    pub fn simulation(&self, datum: InitialDatum, seed: u64) -> SimulationConfig {
        let n = self.grid_n.unwrap_or_else(|| grid_policy(self.r));
        let mut cfg = SimulationConfig::new(datum, self.particles, self.r, n, self.t_final, seed);
        cfg.kappa = self.kappa;
        if let Some(dt) = self.dt {
            cfg.dt = dt;
        }
        cfg
    }

    fn validate(&self, datum: InitialDatum) -> Result<()> {
        if let Some([a, b]) = self.audit {
            KineticDistanceParams::new(self.r, a, b).map_err(|e| LabError::Config(format!("[simulate] audit: {e}")))?;
        }
        self.simulation(datum, 0).validate().map_err(|e| LabError::Config(format!("[simulate]: {e}")))
    }
}

impl Plan {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| LabError::ConfigRead { path: path.to_path_buf(), source })?;
        Self::from_toml_str(&text).map_err(|e| LabError::Config(format!("{}: {e}", path.display())))
    }

    pub fn kind(&self) -> ExperimentKind {
        self.experiment.kind
    }

    pub fn seed(&self) -> u64 {
        self.experiment.seed
    }

    /// The plan with the output directory removed, as embedded in summaries.
    pub fn canonical(&self) -> Plan {
        let mut p = self.clone();
        p.experiment.out = None;
        p
    }

    /// Hex SHA-256 of the canonical plan; the seed is part of it.
    pub fn id(&self) -> String {
        let bytes = serde_json::to_vec(&self.canonical()).expect("plans always serialise");
        hex::encode(Sha256::digest(bytes))
    }

    /// Checks the section for the plan's kind and every invariant that can be checked up front.
    pub fn validate(&self) -> Result<()> {
        let datum = self.datum.datum()?;
        let missing = || LabError::Config(format!("missing [{}] section", self.kind().name().replace('-', "_")));
        match self.kind() {
            ExperimentKind::Converge => self.converge.as_ref().ok_or_else(missing)?.validate(datum),
            ExperimentKind::Lln => self.lln.as_ref().ok_or_else(missing)?.validate(datum),
            ExperimentKind::FlowRate => self.flow_rate.as_ref().ok_or_else(missing)?.validate(datum),
            ExperimentKind::PbValidate => self.pb_validate.clone().unwrap_or_default().validate(),
            ExperimentKind::Simulate => self.simulate.as_ref().ok_or_else(missing)?.validate(datum),
        }
    }
}
