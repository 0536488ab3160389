//! Initial data, particle tuples, deposition onto the grid and empirical
//! convolutions `g * μ_X`.

use std::f64::consts::PI;
use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::gamma_ur;

use crate::error::{domain, Error, Result};
use crate::interp::{continuous_symbol, stencil, tensor_symbol, MAX_ORDER};
use crate::mollifiers::{Mollifier, CELLS_PER_RADIUS};
use crate::rng::stream_rng;
use crate::torus::{displacement, distance_raw, wrap_coord, ScalarField, Spectrum, TorusGrid, TorusPoint, MAX_DIM};

/// Spatial part of the initial datum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpatialProfile {
    Uniform,
    /// `1 + a cos(2π m x₁)`.
    Cosine {
        amplitude: f64,
        mode: u32,
    },
}

/// `f₀(x, v) = ρ₀(x) · N(0, θ I)(v)` truncated at `|v| ≤ v_max`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialDatum {
    pub dim: usize,
    pub spatial: SpatialProfile,
    pub theta: f64,
    pub v_max: f64,
}

/// Default velocity cutoff in units of `√θ`.
pub const V_MAX_SIGMAS: f64 = 8.0;

impl InitialDatum {
    pub fn new(dim: usize, spatial: SpatialProfile, theta: f64) -> Result<Self> {
        Self::with_v_max(dim, spatial, theta, V_MAX_SIGMAS * theta.sqrt())
    }

    pub fn uniform(dim: usize, theta: f64) -> Result<Self> {
        Self::new(dim, SpatialProfile::Uniform, theta)
    }

    pub fn with_v_max(dim: usize, spatial: SpatialProfile, theta: f64, v_max: f64) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return domain(format!("dimension {dim} not in 1..=3"));
        }
        if !(theta > 0.0 && theta.is_finite()) {
            return domain(format!("temperature {theta} must be positive"));
        }
        if let SpatialProfile::Cosine { amplitude, mode } = spatial {
            if !(0.0..1.0).contains(&amplitude) || mode == 0 {
                return domain(format!("cosine profile needs a in [0,1) and m >= 1, got a={amplitude}, m={mode}"));
            }
        }
        let datum = Self { dim, spatial, theta, v_max };
        let loss = datum.truncation_mass_loss();
        if !(v_max > 0.0) || loss > 1e-9 {
            return domain(format!("v_max={v_max} discards Gaussian mass {loss:e} > 1e-9"));
        }
        Ok(datum)
    }

    /// Gaussian mass outside `|v| ≤ v_max`, `Γ(d/2, v_max²/2θ)/Γ(d/2)`.
    pub fn truncation_mass_loss(&self) -> f64 {
        gamma_ur(self.dim as f64 / 2.0, self.v_max * self.v_max / (2.0 * self.theta))
    }

    /// Spatial density `ρ₀(x)`.
    pub fn spatial_density(&self, x: &[f64]) -> f64 {
        match self.spatial {
            SpatialProfile::Uniform => 1.0,
            SpatialProfile::Cosine { amplitude, mode } => 1.0 + amplitude * (2.0 * PI * mode as f64 * x[0]).cos(),
        }
    }

    /// `‖ρ₀‖_∞`.
    pub fn spatial_sup(&self) -> f64 {
        match self.spatial {
            SpatialProfile::Uniform => 1.0,
            SpatialProfile::Cosine { amplitude, .. } => 1.0 + amplitude,
        }
    }

    pub fn density_field(&self, grid: &TorusGrid) -> ScalarField {
        ScalarField::from_fn(grid, |x| self.spatial_density(x))
    }

    /// Inverse of the cumulative marginal along axis 0, by bisection to `1e-14`.
    pub fn inverse_marginal(&self, u: f64) -> f64 {
        match self.spatial {
            SpatialProfile::Uniform => u - 0.5,
            SpatialProfile::Cosine { amplitude, mode } => {
                let w = 2.0 * PI * mode as f64;
                let cdf = |x: f64| x + 0.5 + amplitude * (w * x).sin() / w;
                let (mut lo, mut hi) = (-0.5f64, 0.5f64);
                while hi - lo > 1e-14 {
                    let mid = 0.5 * (lo + hi);
                    if cdf(mid) < u {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            }
        }
    }

    /// `n` iid positions from the spatial marginal, flat, drawn from stream 1 of `seed`.
    pub fn sample_positions(&self, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = stream_rng(seed, 1);
        let mut x = Vec::with_capacity(n * self.dim);
        for _ in 0..n {
            x.push(self.inverse_marginal(rng.gen::<f64>()));
            for _ in 1..self.dim {
                x.push(rng.gen::<f64>() - 0.5);
            }
        }
        x
    }

    fn check_velocity(&self, v: &[f64]) -> bool {
        v.iter().map(|c| c * c).sum::<f64>() <= self.v_max * self.v_max
    }
}

/// Running sups `sup_{s ≤ t} |X(s) - Y(s)|_∞` and `sup_{s ≤ t} |V(s) - W(s)|_∞`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SupTracker {
    pub x: f64,
    pub v: f64,
}

impl SupTracker {
    pub fn update(&mut self, dx: f64, dv: f64) {
        self.x = self.x.max(dx);
        self.v = self.v.max(dv);
    }
}

/// `N` particles in phase space, stored flat (`x[i*d..(i+1)*d]`).
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleEnsemble {
    pub dim: usize,
    pub seed: u64,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub tracker: SupTracker,
}

impl ParticleEnsemble {
    pub fn new(dim: usize, seed: u64, x: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) || x.len() != v.len() || !x.len().is_multiple_of(dim) || x.is_empty() {
            return domain("inconsistent ensemble arrays");
        }
        if x.iter().chain(&v).any(|c| !c.is_finite()) {
            return domain("non-finite particle coordinate");
        }
        let x = x.into_iter().map(wrap_coord).collect();
        Ok(Self { dim, seed, x, v, tracker: SupTracker::default() })
    }

    /// iid draws from `f₀`: inverse-CDF positions, rejection-truncated Gaussian velocities.
    pub fn sample_iid(f0: &InitialDatum, n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return domain("ensemble needs at least one particle");
        }
        let d = f0.dim;
        let mut rng = stream_rng(seed, 0);
        let mut x = Vec::with_capacity(n * d);
        let mut v = Vec::with_capacity(n * d);
        let sd = f0.theta.sqrt();
        let mut vel = [0.0; MAX_DIM];
        for _ in 0..n {
            x.push(f0.inverse_marginal(rng.gen::<f64>()));
            for _ in 1..d {
                x.push(rng.gen::<f64>() - 0.5);
            }
            loop {
                for c in vel.iter_mut().take(d) {
                    *c = sd * rng.sample::<f64, _>(StandardNormal);
                }
                if f0.check_velocity(&vel[..d]) {
                    break;
                }
            }
            v.extend_from_slice(&vel[..d]);
        }
        Self::new(d, seed, x, v)
    }

    /// Multi-beam quiet start: `q^d` velocity beams, each carrying a full
    /// lattice of `m^d` positions (`n = q^d m^d`) mapped through the inverse
    /// marginal and shifted by a seeded sub-cell offset. Beam velocities are the
    /// tensor grid of Gaussian quantiles `Φ⁻¹((k + 1/2)/q)`, rescaled to variance
    /// `θ` per component (`q = 1` is the cold beam `v = 0`).
    pub fn sample_quiet(f0: &InitialDatum, n: usize, beams_per_axis: usize, seed: u64) -> Result<Self> {
        let d = f0.dim;
        let q = beams_per_axis;
        let beams = q.checked_pow(d as u32).unwrap_or(0);
        if n == 0 || beams == 0 || !n.is_multiple_of(beams) {
            return domain(format!("quiet start: {n} particles do not split into {q}^{d} beams"));
        }
        let cells = n / beams;
        let m = (cells as f64).powf(1.0 / d as f64).round() as usize;
        if m.pow(d as u32) != cells {
            return domain(format!("quiet start: {cells} particles per beam is not a perfect {d}-th power"));
        }
        let normal = Normal::new(0.0, 1.0).map_err(|e| Error::Domain(e.to_string()))?;
        let mut nodes: Vec<f64> = (0..q).map(|k| normal.inverse_cdf((k as f64 + 0.5) / q as f64)).collect();
        let var = nodes.iter().map(|z| z * z).sum::<f64>() / q as f64;
        if var > 0.0 {
            let s = (f0.theta / var).sqrt();
            nodes.iter_mut().for_each(|z| *z *= s);
        }
        let mut rng = stream_rng(seed, 0);
        let mut x = Vec::with_capacity(n * d);
        let mut v = Vec::with_capacity(n * d);
        let mut vel = [0.0; MAX_DIM];
        for b in 0..beams {
            let mut rem = b;
            for c in vel.iter_mut().take(d).rev() {
                *c = nodes[rem % q];
                rem /= q;
            }
            if !f0.check_velocity(&vel[..d]) {
                return domain("quiet-start beam velocity exceeds v_max");
            }
            let mut shift = [0.0; MAX_DIM];
            for s in shift.iter_mut().take(d) {
                *s = rng.gen::<f64>();
            }
            for i in 0..cells {
                let mut rem = i;
                let mut idx = [0usize; MAX_DIM];
                for a in (0..d).rev() {
                    idx[a] = rem % m;
                    rem /= m;
                }
                x.push(f0.inverse_marginal((idx[0] as f64 + shift[0]) / m as f64));
                for a in 1..d {
                    x.push((idx[a] as f64 + shift[a]) / m as f64 - 0.5);
                }
                v.extend_from_slice(&vel[..d]);
            }
        }
        Self::new(d, seed, x, v)
    }

    pub fn len(&self) -> usize {
        self.x.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    pub fn velocity(&self, i: usize) -> &[f64] {
        &self.v[i * self.dim..(i + 1) * self.dim]
    }

    pub fn point(&self, i: usize) -> TorusPoint {
        TorusPoint::wrap_unchecked(self.position(i))
    }

    /// `max_i |V_i|`.
    pub fn max_speed(&self) -> f64 {
        self.v.chunks(self.dim).map(|c| c.iter().map(|a| a * a).sum::<f64>().sqrt()).fold(0.0, f64::max)
    }

    /// `(|X - Y|_∞, |V - W|_∞)` with torus distance for positions.
    pub fn sup_distances(&self, other: &Self) -> Result<(f64, f64)> {
        if self.dim != other.dim || self.len() != other.len() {
            return domain("ensembles of different shape");
        }
        let d = self.dim;
        let dx = (0..self.len()).map(|i| distance_raw(self.position(i), other.position(i))).fold(0.0, f64::max);
        let dv = self
            .v
            .chunks(d)
            .zip(other.v.chunks(d))
            .map(|(a, b)| a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        Ok((dx, dv))
    }

    /// Writes rows `trial, particle, x1..xd, v1..vd`.
    pub fn write_csv<W: Write>(&self, trial: u64, out: W, header: bool) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        let d = self.dim;
        if header {
            let mut h = vec!["trial".to_string(), "particle".to_string()];
            h.extend((1..=d).map(|a| format!("x{a}")));
            h.extend((1..=d).map(|a| format!("v{a}")));
            w.write_record(&h).map_err(csv_err)?;
        }
        for i in 0..self.len() {
            let mut row = vec![trial.to_string(), i.to_string()];
            row.extend(self.position(i).iter().map(|c| c.to_string()));
            row.extend(self.velocity(i).iter().map(|c| c.to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// Number of axis-0 bands used by the deterministic scatter.
const SCATTER_BANDS: usize = 64;

/// Deterministic parallel scatter onto a grid. Particle `i` touches `rows`
/// consecutive axis-0 slabs starting at `first[i]`; `add(i, j, slab)` adds its
/// contribution to the `j`-th of them. The summation order at every node is
/// fixed by the band layout, not by the thread count.
fn banded_scatter(
    grid: &TorusGrid,
    first: &[usize],
    rows: usize,
    add: impl Fn(usize, usize, &mut [f64]) + Sync,
) -> Vec<f64> {
    let n = grid.n();
    let slab = grid.len() / n;
    let mut offsets = vec![0usize; n + 1];
    for &f in first {
        offsets[f + 1] += 1;
    }
    for s in 0..n {
        offsets[s + 1] += offsets[s];
    }
    let mut order = vec![0usize; first.len()];
    let mut fill = offsets.clone();
    for (i, &f) in first.iter().enumerate() {
        order[fill[f]] = i;
        fill[f] += 1;
    }
    let bands = SCATTER_BANDS.min(n);
    let band_rows = n / bands;
    let mut out = vec![0.0; grid.len()];
    out.par_chunks_mut(band_rows * slab).enumerate().for_each(|(b, band)| {
        let lo = b * band_rows;
        let hi = lo + band_rows;
        let span = (band_rows + rows - 1).min(n);
        for t in 0..span {
            let s = (lo + n * 2 - (rows - 1).min(n - 1) + t) % n;
            for &i in &order[offsets[s]..offsets[s + 1]] {
                for j in 0..rows {
                    let row = (s + j) % n;
                    if row >= lo && row < hi {
                        add(i, j, &mut band[(row - lo) * slab..(row - lo + 1) * slab]);
                    }
                }
            }
        }
    });
    out
}

/// How particle positions become a grid density `χ_r * μ_X`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DepositionScheme {
    /// `χ_r` evaluated on every node of each particle's support ball.
    Direct,
    /// B-spline assignment of the given order, deconvolved and filtered by `χ̂_r` in Fourier space.
    Spectral { order: usize },
}

/// Deposits particles onto a fixed grid at a fixed scale.
#[derive(Clone, Debug)]
pub struct Depositor {
    grid: TorusGrid,
    mollifier: Mollifier,
    scheme: DepositionScheme,
    symbol: Vec<f64>,
}

impl Depositor {
    pub fn new(grid: &TorusGrid, r: f64, scheme: DepositionScheme) -> Result<Self> {
        let mollifier = Mollifier::new(grid.dim(), r)?;
        if (grid.n() as f64) * r < CELLS_PER_RADIUS - 1e-9 {
            return domain(format!("grid n={} does not resolve r={r} (need n >= {CELLS_PER_RADIUS}/r)", grid.n()));
        }
        let symbol = match scheme {
            DepositionScheme::Direct => Vec::new(),
            DepositionScheme::Spectral { order } => {
                if !(2..=MAX_ORDER).contains(&order) || order % 2 != 0 {
                    return domain(format!("assignment order {order} must be even and at most {MAX_ORDER}"));
                }
                let chi = mollifier.spectrum(grid);
                let w = tensor_symbol(grid, &continuous_symbol(grid.n(), order));
                let mut s: Vec<f64> = chi.coeffs.iter().zip(&w).map(|(c, w)| c.re / w).collect();
                s[0] = 1.0;
                s
            }
        };
        Ok(Self { grid: grid.clone(), mollifier, scheme, symbol })
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn r(&self) -> f64 {
        self.mollifier.r()
    }

    pub fn scheme(&self) -> DepositionScheme {
        self.scheme
    }

    /// `χ_r * μ_X` on the nodes, for flat positions `x`.
    pub fn deposit(&self, x: &[f64]) -> Result<ScalarField> {
        let d = self.grid.dim();
        if x.is_empty() || !x.len().is_multiple_of(d) {
            return domain("position array does not match the grid dimension");
        }
        let values = match self.scheme {
            DepositionScheme::Direct => self.deposit_direct(x),
            DepositionScheme::Spectral { .. } => {
                let mut spec = self.assignment_spectrum(x);
                spec.scale_by(&self.symbol);
                self.grid.synthesize(&spec)
            }
        };
        Ok(ScalarField { grid: self.grid.clone(), values })
    }

    fn deposit_direct(&self, x: &[f64]) -> Vec<f64> {
        let grid = &self.grid;
        let d = grid.dim();
        let n = grid.n();
        let nf = n as f64;
        let r = self.r();
        let count = x.len() / d;
        let weight = 1.0 / count as f64;
        let rows = ((2.0 * r * nf).floor() as usize + 1).min(n);
        // Lowest node index on each axis whose coordinate lies within r.
        let low = |c: f64, rad: f64| ((wrap_coord(c) - rad + 0.5) * nf).ceil() as i64;
        let first: Vec<usize> = (0..count).map(|i| low(x[i * d], r).rem_euclid(n as i64) as usize).collect();
        let m = &self.mollifier;
        banded_scatter(grid, &first, rows, |i, j, slab| {
            let p = &x[i * d..(i + 1) * d];
            let row = low(p[0], r) + j as i64;
            let dy0 = wrap_coord(-0.5 + row as f64 / nf - p[0]);
            let rest = r * r - dy0 * dy0;
            if rest <= 0.0 {
                return;
            }
            match d {
                1 => slab[0] += weight * m.value(&[dy0]),
                2 => {
                    let rho = rest.sqrt();
                    let (lo1, hi1) = (low(p[1], rho), ((wrap_coord(p[1]) + rho + 0.5) * nf).floor() as i64);
                    for k1 in lo1..=hi1 {
                        let dy1 = wrap_coord(-0.5 + k1 as f64 / nf - p[1]);
                        slab[k1.rem_euclid(n as i64) as usize] += weight * m.value(&[dy0, dy1]);
                    }
                }
                _ => {
                    let rho = rest.sqrt();
                    let (lo1, hi1) = (low(p[1], rho), ((wrap_coord(p[1]) + rho + 0.5) * nf).floor() as i64);
                    for k1 in lo1..=hi1 {
                        let dy1 = wrap_coord(-0.5 + k1 as f64 / nf - p[1]);
                        let rest2 = rest - dy1 * dy1;
                        if rest2 <= 0.0 {
                            continue;
                        }
                        let rho2 = rest2.sqrt();
                        let base = k1.rem_euclid(n as i64) as usize * n;
                        let (lo2, hi2) = (low(p[2], rho2), ((wrap_coord(p[2]) + rho2 + 0.5) * nf).floor() as i64);
                        for k2 in lo2..=hi2 {
                            let dy2 = wrap_coord(-0.5 + k2 as f64 / nf - p[2]);
                            slab[base + k2.rem_euclid(n as i64) as usize] += weight * m.value(&[dy0, dy1, dy2]);
                        }
                    }
                }
            }
        })
    }

    /// Fourier coefficients of the B-spline assignment of `μ_X` (node density, mean one).
    fn assignment_spectrum(&self, x: &[f64]) -> Spectrum {
        let DepositionScheme::Spectral { order } = self.scheme else {
            unreachable!("assignment spectrum requested for direct deposition");
        };
        assignment_spectrum(&self.grid, x, order)
    }
}

/// Fourier coefficients of the order-`p` B-spline assignment of `μ_X`,
/// normalised to unit mean. Dividing by the assignment symbol recovers `μ̂_X`
/// up to aliasing.
pub fn assignment_spectrum(grid: &TorusGrid, x: &[f64], p: usize) -> Spectrum {
    let d = grid.dim();
    let n = grid.n();
    let count = x.len() / d;
    let weight = grid.len() as f64 / count as f64;
    let first: Vec<usize> =
        (0..count).map(|i| stencil(grid, &x[i * d..(i + 1) * d], p).0[0].rem_euclid(n as i64) as usize).collect();
    let values = banded_scatter(grid, &first, p, |i, j, slab| {
        let (f, w) = stencil(grid, &x[i * d..(i + 1) * d], p);
        let w0 = weight * w[0][j];
        let wrapi = |k: i64| k.rem_euclid(n as i64) as usize;
        match d {
            1 => slab[0] += w0,
            2 => {
                for j1 in 0..p {
                    slab[wrapi(f[1] + j1 as i64)] += w0 * w[1][j1];
                }
            }
            _ => {
                for j1 in 0..p {
                    let base = wrapi(f[1] + j1 as i64) * n;
                    let w01 = w0 * w[1][j1];
                    for j2 in 0..p {
                        slab[base + wrapi(f[2] + j2 as i64)] += w01 * w[2][j2];
                    }
                }
            }
        }
    });
    grid.analyze(&values)
}

/// `(1/N) Σ_j χ_r(· - X_j)` on the nodes by direct evaluation.
pub fn deposit(x: &[f64], r: f64, grid: &TorusGrid) -> Result<ScalarField> {
    Depositor::new(grid, r, DepositionScheme::Direct)?.deposit(x)
}

/// `g * μ_X (y_m) = (1/N) Σ_j g(y_m - X_j)` at every mesh point.
pub fn empirical_convolution(g: impl Fn(&[f64]) -> f64 + Sync, x: &[f64], dim: usize, mesh: &[TorusPoint]) -> Vec<f64> {
    let count = x.len() / dim;
    mesh.par_iter()
        .map(|y| {
            let mut z = [0.0; MAX_DIM];
            let mut acc = 0.0;
            for p in x.chunks(dim) {
                displacement(y.coords(), p, &mut z[..dim]);
                acc += g(&z[..dim]);
            }
            acc / count as f64
        })
        .collect()
}

/// Vector-valued `g * μ_X` at every mesh point.
pub fn empirical_convolution_vec(
    g: impl Fn(&[f64]) -> [f64; MAX_DIM] + Sync,
    x: &[f64],
    dim: usize,
    mesh: &[TorusPoint],
) -> Vec<[f64; MAX_DIM]> {
    let count = x.len() / dim;
    mesh.par_iter()
        .map(|y| {
            let mut z = [0.0; MAX_DIM];
            let mut acc = [0.0; MAX_DIM];
            for p in x.chunks(dim) {
                displacement(y.coords(), p, &mut z[..dim]);
                let v = g(&z[..dim]);
                for a in 0..dim {
                    acc[a] += v[a];
                }
            }
            acc.iter_mut().for_each(|a| *a /= count as f64);
            acc
        })
        .collect()
}
