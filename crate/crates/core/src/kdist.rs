//! The implicitly defined kinetic distance
//! `J = (r + α₀ + β₀) ∧ (|log J|^{1/2}(‖X - Y‖ + α₀) + ‖V - W‖ + β₀)`
//! along recorded running sups, with its property checks and the integral
//! inequality audit.

use std::f64::consts::E;

use serde::{Deserialize, Serialize};

use crate::dynamics::SeriesRow;
use crate::error::{domain, Error, Result};

/// Residual target of [`solve_implicit`].
pub const RESIDUAL_TOL: f64 = 1e-13;

const MAX_ITERATIONS: usize = 400;

/// `F(a, b, j) = j - a|log j|^{1/2} - b`.
pub fn implicit_residual(a: f64, b: f64, j: f64) -> f64 {
    j - a * (-j.ln()).sqrt() - b
}

/// The unique root `j ∈ (0, 1)` of `F(a, b, ·)` for `a ∈ [0, 1)` and `b ∈ (0, 1/e)`.
///
/// Safeguarded Newton on the bracket `(b(1 - 1e-15), 1 - 1e-15)`: a Newton
/// step that leaves the current bracket is replaced by bisection.
pub fn solve_implicit(a: f64, b: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&a) || !(b > 0.0 && b < 1.0 / E) {
        return domain(format!("implicit solve needs a in [0, 1) and b in (0, 1/e), got a={a}, b={b}"));
    }
    if a == 0.0 {
        return Ok(b);
    }
    let f = |j: f64| implicit_residual(a, b, j);
    let (mut lo, mut hi) = (b * (1.0 - 1e-15), 1.0 - 1e-15);
    let mut j = 0.5 * (lo + hi);
    for _ in 0..MAX_ITERATIONS {
        let fj = f(j);
        if fj.abs() <= RESIDUAL_TOL {
            return Ok(j);
        }
        if fj < 0.0 {
            lo = j;
        } else {
            hi = j;
        }
        let slope = 1.0 + a / (2.0 * j * (-j.ln()).sqrt());
        let newton = j - fj / slope;
        let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if next == j {
            break;
        }
        j = next;
    }
    let res = f(j);
    if res.abs() <= RESIDUAL_TOL {
        Ok(j)
    } else {
        Err(Error::Convergence { iterations: MAX_ITERATIONS, residual: res.abs() })
    }
}

/// `r`, `α₀`, `β₀`, each in `(0, 1/(3e))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KineticDistanceParams {
    pub r: f64,
    pub alpha0: f64,
    pub beta0: f64,
}

impl KineticDistanceParams {
    pub fn new(r: f64, alpha0: f64, beta0: f64) -> Result<Self> {
        let cap = 1.0 / (3.0 * E);
        for (name, v) in [("r", r), ("alpha0", alpha0), ("beta0", beta0)] {
            if !(v > 0.0 && v < cap) {
                return domain(format!("{name} = {v} outside (0, 1/(3e))"));
            }
        }
        Ok(Self { r, alpha0, beta0 })
    }

    /// The truncation level `r + α₀ + β₀ < 1/e`.
    pub fn truncation(&self) -> f64 {
        self.r + self.alpha0 + self.beta0
    }

    /// `J` for running sups `(sx, sv)`: the truncation level once either sup
    /// exceeds `r`, and otherwise the truncated implicit root.
    pub fn j_value(&self, sx: f64, sv: f64) -> Result<f64> {
        let cap = self.truncation();
        if sx > self.r || sv > self.r {
            return Ok(cap);
        }
        Ok(cap.min(solve_implicit(sx + self.alpha0, sv + self.beta0)?))
    }
}

fn check_monotone(name: &str, s: &[f64]) -> Result<()> {
    if s.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return domain(format!("{name} series has negative or non-finite entries"));
    }
    if s.windows(2).any(|w| w[1] < w[0]) {
        return domain(format!("{name} series is not nondecreasing"));
    }
    Ok(())
}

/// `J(t)` along running sups of position and velocity distances.
pub fn j_of_t(params: &KineticDistanceParams, sup_x: &[f64], sup_v: &[f64]) -> Result<Vec<f64>> {
    if sup_x.len() != sup_v.len() {
        return domain("position and velocity series differ in length");
    }
    check_monotone("position", sup_x)?;
    check_monotone("velocity", sup_v)?;
    sup_x.iter().zip(sup_v).map(|(&x, &v)| params.j_value(x, v)).collect()
}

/// Sample-wise outcome of the basic property checks on a `J` series.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JBasicsReport {
    pub samples: usize,
    /// `J ≤ r + α₀ + β₀ < 1/e`.
    pub upper_bound: bool,
    /// `|log J| ≥ 1`.
    pub log_lower: bool,
    /// Below truncation: `supX + supV < r`, `supX + α₀ ≤ J/|log J|^{1/2}`, `supV + β₀ ≤ J`.
    pub below_truncation: bool,
    /// Nondecreasing below truncation and constant after the first truncation.
    pub shape: bool,
    /// Largest `|J - RHS(J)|` below truncation.
    pub fixed_point_error: f64,
}

impl JBasicsReport {
    pub fn passed(&self) -> bool {
        self.upper_bound && self.log_lower && self.below_truncation && self.shape && self.fixed_point_error <= 1e-12
    }
}

/// Checks the basic properties of `j` against the sups it was computed from.
pub fn j_basics(params: &KineticDistanceParams, sup_x: &[f64], sup_v: &[f64], j: &[f64]) -> Result<JBasicsReport> {
    if sup_x.len() != j.len() || sup_v.len() != j.len() {
        return domain("series lengths differ");
    }
    let cap = params.truncation();
    let mut rep = JBasicsReport {
        samples: j.len(),
        upper_bound: cap < 1.0 / E,
        log_lower: true,
        below_truncation: true,
        shape: true,
        fixed_point_error: 0.0,
    };
    let mut truncated = false;
    for k in 0..j.len() {
        let (jk, sx, sv) = (j[k], sup_x[k], sup_v[k]);
        let lg = (-jk.ln()).sqrt();
        rep.upper_bound &= jk <= cap;
        rep.log_lower &= -jk.ln() >= 1.0;
        if jk < cap {
            rep.below_truncation &= sx + sv < params.r && sx + params.alpha0 <= jk / lg && sv + params.beta0 <= jk;
            let rhs = cap.min(lg * (sx + params.alpha0) + sv + params.beta0);
            rep.fixed_point_error = rep.fixed_point_error.max((rhs - jk).abs());
        }
        if k > 0 {
            rep.shape &= if truncated { jk == j[k - 1] } else { jk >= j[k - 1] };
        }
        truncated |= jk >= cap;
    }
    Ok(rep)
}

/// The integral inequality for `-|log J|^{1/2}` with a measured field-difference integrand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GronwallAudit {
    pub dt: f64,
    /// `-|log J(t_k)|^{1/2}`.
    pub lhs: Vec<f64>,
    /// `-|log J(0)|^{1/2} + ½ ∫₀^{t_k} (1 + D/(J|log J|^{1/2})) 1{J < r+α₀+β₀}` by trapezoids.
    pub rhs: Vec<f64>,
    /// Quadrature allowance `2 dt · (variation of the integrand on [0, t_k])`.
    pub tolerance: Vec<f64>,
    /// `D / (J|log J|^{1/2})` where `J` is below truncation.
    pub ratio: Vec<Option<f64>>,
    pub max_ratio: f64,
    pub holds: bool,
}

/// Audits the integral inequality on aligned series sampled every `dt`.
pub fn gronwall_audit(params: &KineticDistanceParams, j: &[f64], field_diff: &[f64], dt: f64) -> Result<GronwallAudit> {
    if j.len() != field_diff.len() || j.is_empty() {
        return domain("J and field-difference series are misaligned");
    }
    if !(dt > 0.0) {
        return domain("time step must be positive");
    }
    let cap = params.truncation();
    let lg: Vec<f64> = j.iter().map(|v| (-v.ln()).sqrt()).collect();
    let ratio: Vec<Option<f64>> =
        j.iter().zip(&lg).zip(field_diff).map(|((&jk, &l), &d)| (jk < cap).then(|| d / (jk * l))).collect();
    let integrand: Vec<f64> = ratio.iter().map(|r| r.map_or(0.0, |v| 0.5 * (1.0 + v))).collect();
    let mut rhs = vec![-lg[0]];
    let mut tolerance = vec![0.0];
    let (mut acc, mut var) = (0.0, 0.0);
    for k in 1..j.len() {
        acc += 0.5 * dt * (integrand[k - 1] + integrand[k]);
        var += (integrand[k] - integrand[k - 1]).abs();
        rhs.push(-lg[0] + acc);
        tolerance.push(2.0 * dt * var);
    }
    let lhs: Vec<f64> = lg.iter().map(|l| -l).collect();
    let holds = lhs.iter().zip(&rhs).zip(&tolerance).all(|((l, r), t)| *l <= r + t);
    let max_ratio = ratio.iter().flatten().cloned().fold(0.0, f64::max);
    Ok(GronwallAudit { dt, lhs, rhs, tolerance, ratio, max_ratio, holds })
}

/// `J` series and its audit for a recorded coupled/auxiliary run.
pub fn audit_series(params: &KineticDistanceParams, series: &[SeriesRow]) -> Result<(Vec<f64>, GronwallAudit)> {
    if series.len() < 2 {
        return domain("need at least two recorded times");
    }
    let dt = series[1].time - series[0].time;
    if series.windows(2).any(|w| ((w[1].time - w[0].time) - dt).abs() > 1e-9 * dt.max(1.0)) {
        return domain("series is not uniformly sampled");
    }
    let sx: Vec<f64> = series.iter().map(|s| s.sup_x).collect();
    let sv: Vec<f64> = series.iter().map(|s| s.sup_v).collect();
    let fd: Vec<f64> = series.iter().map(|s| s.field_diff).collect();
    let j = j_of_t(params, &sx, &sv)?;
    let audit = gronwall_audit(params, &j, &fd, dt)?;
    Ok((j, audit))
}

/// Outcome of the logarithm facts on dense samples of `(0, 1/e)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogPropsReport {
    pub samples: usize,
    /// `|log x|` strictly decreasing with values above 1.
    pub log_decreasing: bool,
    /// `|log x| ≤ |log(x/a)| ≤ (1 + log a)|log x|` for `a ∈ {1.5, 2, e, 10}`.
    pub log_comparable: bool,
    /// `x|log x|` strictly increasing.
    pub xlog_increasing: bool,
    /// `x ≤ y|log y|^{-1/2}` implies `x|log x| ≤ (3/2) y|log y|^{1/2}`.
    pub twisted: bool,
    /// Smallest `(3/2) y|log y|^{1/2} - x|log x|` over the tested pairs.
    pub twisted_margin: f64,
}

impl LogPropsReport {
    pub fn passed(&self) -> bool {
        self.log_decreasing && self.log_comparable && self.xlog_increasing && self.twisted
    }
}

/// Sample points of `(0, 1/e)`: half evenly spaced, half log-spaced down to `1e-300`.
pub fn log_samples(count: usize) -> Vec<f64> {
    let top = 1.0 / E;
    let half = count / 2;
    let mut xs: Vec<f64> = (0..half).map(|k| top * (k as f64 + 0.5) / half as f64).collect();
    let rest = count - half;
    let (l0, l1) = (1e-300f64.ln(), top.ln());
    xs.extend((0..rest).map(|k| (l0 + (l1 - l0) * (k as f64 + 0.5) / rest as f64).exp()));
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    xs
}

/// Checks the four logarithm facts on `count` sample points.
pub fn log_props_check(count: usize) -> LogPropsReport {
    let xs = log_samples(count);
    let ab = |x: f64| -x.ln();
    let log_decreasing = xs.iter().all(|&x| ab(x) > 1.0) && xs.windows(2).all(|w| ab(w[1]) < ab(w[0]));
    let log_comparable = [1.5, 2.0, E, 10.0]
        .iter()
        .all(|&a: &f64| xs.iter().all(|&x| ab(x) <= ab(x / a) && ab(x / a) <= (1.0 + a.ln()) * ab(x) * (1.0 + 1e-15)));
    let xlog_increasing = xs.windows(2).all(|w| w[1] * ab(w[1]) > w[0] * ab(w[0]));
    let mut margin = f64::INFINITY;
    for &y in &xs {
        let bound = 1.5 * y * ab(y).sqrt();
        let xmax = y / ab(y).sqrt();
        for frac in [1.0, 0.5, 0.1, 1e-3] {
            let x = xmax * frac;
            margin = margin.min(bound - x * ab(x));
        }
    }
    LogPropsReport {
        samples: xs.len(),
        log_decreasing,
        log_comparable,
        xlog_increasing,
        twisted: margin >= 0.0,
        twisted_margin: margin,
    }
}
