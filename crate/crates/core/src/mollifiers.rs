//! The bump family `χ_r(x) = r^{-d} χ(x/r)` and its local Lipschitz moduli.
//!
//! The base profile is `χ(x) = C_d exp(-β/(1-|x|²))` on the open unit ball,
//! normalised to unit mass.

use std::sync::{Arc, OnceLock};

use crate::error::{domain, Result};
use crate::modulus::{build_modulus, ModulusField, ModulusOrder, RadialSup};
use crate::torus::{wrap_coord, ScalarField, Spectrum, TorusGrid, TorusPoint, MAX_DIM};

/// Exponent `β` of the default profile.
pub const SHARPNESS: f64 = 8.0;

/// Minimum number of grid cells per mollification radius.
pub const CELLS_PER_RADIUS: f64 = 16.0;

const RADIAL_CELLS: usize = 1 << 14;

/// Unit-scale radial bump with its normalisation and radial sup tables.
#[derive(Debug)]
pub struct Bump {
    dim: usize,
    beta: f64,
    norm: f64,
    grad_sup: RadialSup,
    hess_sup: RadialSup,
}

/// Radial derivatives `(p, p', p'', p'/s)` at radius `s`.
#[derive(Clone, Copy, Debug)]
pub struct Radial {
    pub p: f64,
    pub dp: f64,
    pub ddp: f64,
    pub dp_over_s: f64,
}

impl Bump {
    pub fn with_sharpness(dim: usize, beta: f64) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return domain(format!("dimension {dim} not in 1..=3"));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return domain(format!("profile exponent {beta} must be positive"));
        }
        let sphere = match dim {
            1 => 2.0,
            2 => 2.0 * std::f64::consts::PI,
            _ => 4.0 * std::f64::consts::PI,
        };
        let raw = |s: f64| {
            let u = 1.0 - s * s;
            if u <= 0.0 {
                0.0
            } else {
                (-beta / u).exp() * s.powi(dim as i32 - 1)
            }
        };
        let scale = (-beta).exp();
        let q = quadrature::double_exponential::integrate(raw, 0.0, 1.0, 1e-15 * scale);
        let norm = 1.0 / (sphere * q.integral);
        let mut b = Self {
            dim,
            beta,
            norm,
            grad_sup: RadialSup::new(|_| 0.0, 1.0, 1),
            hess_sup: RadialSup::new(|_| 0.0, 1.0, 1),
        };
        b.grad_sup = RadialSup::new(|s| b.radial(s).dp.abs(), 1.0, RADIAL_CELLS);
        b.hess_sup = RadialSup::new(|s| b.hessian_magnitude(s), 1.0, RADIAL_CELLS);
        Ok(b)
    }

    /// Shared instance with the default exponent.
    pub fn standard(dim: usize) -> Result<Arc<Bump>> {
        static CACHE: [OnceLock<Arc<Bump>>; MAX_DIM] = [OnceLock::new(), OnceLock::new(), OnceLock::new()];
        if !(1..=MAX_DIM).contains(&dim) {
            return domain(format!("dimension {dim} not in 1..=3"));
        }
        Ok(CACHE[dim - 1]
            .get_or_init(|| Arc::new(Bump::with_sharpness(dim, SHARPNESS).expect("valid profile")))
            .clone())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Normalisation constant `C_d`.
    pub fn norm_constant(&self) -> f64 {
        self.norm
    }

    pub fn radial(&self, s: f64) -> Radial {
        let u = 1.0 - s * s;
        if u <= 0.0 {
            return Radial { p: 0.0, dp: 0.0, ddp: 0.0, dp_over_s: 0.0 };
        }
        let b = self.beta;
        let p = self.norm * (-b / u).exp();
        let c = -2.0 * b / (u * u);
        let dp_over_s = c * p;
        let dp = dp_over_s * s;
        let ddp = c * p + c * s * dp - 8.0 * b * s * s * p / (u * u * u);
        Radial { p, dp, ddp, dp_over_s }
    }

    /// Frobenius norm of the Hessian of the unit profile at radius `s`.
    pub fn hessian_magnitude(&self, s: f64) -> f64 {
        let r = self.radial(s);
        (r.ddp * r.ddp + (self.dim as f64 - 1.0) * r.dp_over_s * r.dp_over_s).sqrt()
    }
}

/// `χ_r` at a fixed scale.
#[derive(Clone, Debug)]
pub struct Mollifier {
    bump: Arc<Bump>,
    r: f64,
}

impl Mollifier {
    pub fn new(dim: usize, r: f64) -> Result<Self> {
        Self::with_bump(Bump::standard(dim)?, r)
    }

    pub fn with_bump(bump: Arc<Bump>, r: f64) -> Result<Self> {
        if !(r > 0.0 && r < 0.5) {
            return domain(format!("mollification scale {r} outside (0, 1/2)"));
        }
        Ok(Self { bump, r })
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn dim(&self) -> usize {
        self.bump.dim
    }

    pub fn bump(&self) -> &Bump {
        &self.bump
    }

    fn local(&self, x: &[f64]) -> ([f64; MAX_DIM], f64) {
        let mut y = [0.0; MAX_DIM];
        let mut s2 = 0.0;
        for (yi, &xi) in y.iter_mut().zip(x.iter().take(self.dim())) {
            *yi = wrap_coord(xi) / self.r;
            s2 += *yi * *yi;
        }
        (y, s2.sqrt())
    }

    /// `χ_r(x)` for raw coordinates `x` (wrapped internally).
    pub fn value(&self, x: &[f64]) -> f64 {
        let (_, s) = self.local(x);
        if s >= 1.0 {
            return 0.0;
        }
        self.bump.radial(s).p * self.r.powi(-(self.dim() as i32))
    }

    pub fn gradient(&self, x: &[f64]) -> [f64; MAX_DIM] {
        let (y, s) = self.local(x);
        let mut g = [0.0; MAX_DIM];
        if s >= 1.0 {
            return g;
        }
        let f = self.bump.radial(s).dp_over_s * self.r.powi(-(self.dim() as i32) - 1);
        for a in 0..self.dim() {
            g[a] = f * y[a];
        }
        g
    }

    /// Hessian `p'' ŷŷᵀ + (p'/s)(I - ŷŷᵀ)`, scaled by `r^{-d-2}`.
    pub fn hessian(&self, x: &[f64]) -> [[f64; MAX_DIM]; MAX_DIM] {
        let (y, s) = self.local(x);
        let mut h = [[0.0; MAX_DIM]; MAX_DIM];
        if s >= 1.0 {
            return h;
        }
        let rad = self.bump.radial(s);
        let scale = self.r.powi(-(self.dim() as i32) - 2);
        let d = self.dim();
        for a in 0..d {
            for b in 0..d {
                let yy = if s > 0.0 { y[a] * y[b] / (s * s) } else { 0.0 };
                let delta = if a == b { 1.0 } else { 0.0 };
                h[a][b] = scale * (rad.ddp * yy + rad.dp_over_s * (delta - yy));
            }
        }
        h
    }

    pub fn gradient_norm(&self, x: &[f64]) -> f64 {
        let (_, s) = self.local(x);
        if s >= 1.0 {
            return 0.0;
        }
        self.bump.radial(s).dp.abs() * self.r.powi(-(self.dim() as i32) - 1)
    }

    /// Frobenius norm of the Hessian.
    pub fn hessian_norm(&self, x: &[f64]) -> f64 {
        let (_, s) = self.local(x);
        if s >= 1.0 {
            return 0.0;
        }
        self.bump.hessian_magnitude(s) * self.r.powi(-(self.dim() as i32) - 2)
    }

    /// Frobenius norm of the third-derivative tensor, by central differences of the Hessian.
    pub fn third_norm(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let eps = 1e-5 * self.r;
        let mut acc = 0.0;
        let mut xp = [0.0; MAX_DIM];
        let mut xm = [0.0; MAX_DIM];
        for c in 0..d {
            xp[..d].copy_from_slice(&x[..d]);
            xm[..d].copy_from_slice(&x[..d]);
            xp[c] += eps;
            xm[c] -= eps;
            let hp = self.hessian(&xp[..d]);
            let hm = self.hessian(&xm[..d]);
            for a in 0..d {
                for b in 0..d {
                    let t = (hp[a][b] - hm[a][b]) / (2.0 * eps);
                    acc += t * t;
                }
            }
        }
        acc.sqrt()
    }

    fn check_resolution(&self, grid: &TorusGrid) -> Result<()> {
        if grid.dim() != self.dim() {
            return domain(format!("grid dimension {} vs mollifier dimension {}", grid.dim(), self.dim()));
        }
        if (grid.n() as f64) * self.r < CELLS_PER_RADIUS - 1e-9 {
            return domain(format!(
                "grid n={} does not resolve r={} (need n >= {}/r)",
                grid.n(),
                self.r,
                CELLS_PER_RADIUS
            ));
        }
        Ok(())
    }

    pub fn sample(&self, grid: &TorusGrid) -> ScalarField {
        ScalarField::from_fn(grid, |x| self.value(x))
    }

    /// Fourier coefficients of the sampled `χ_r`.
    pub fn spectrum(&self, grid: &TorusGrid) -> Spectrum {
        grid.analyze(&self.sample(grid).values)
    }

    /// `ψ_r(y) = sup_{z ∈ B_r(y)} |∇χ_r(z)|` on the grid.
    pub fn psi(&self, grid: &TorusGrid) -> Result<ModulusField> {
        self.check_resolution(grid)?;
        let g = ScalarField::from_fn(grid, |x| self.gradient_norm(x));
        let h = ScalarField::from_fn(grid, |x| self.hessian_norm(x));
        Ok(build_modulus(ModulusOrder::First, self.r, self.r, &g, &h))
    }

    /// `η_r(y) = sup_{z ∈ B_{2r}(y)} |∇²χ_r(z)|` on the grid.
    pub fn eta(&self, grid: &TorusGrid) -> Result<ModulusField> {
        self.check_resolution(grid)?;
        let h = ScalarField::from_fn(grid, |x| self.hessian_norm(x));
        let t = ScalarField::from_fn(grid, |x| self.third_norm(x));
        Ok(build_modulus(ModulusOrder::Second, self.r, 2.0 * self.r, &h, &t))
    }

    /// Pointwise `sup_{z ∈ B_radius(y)} |∇χ_r(z)|` from the radial profile.
    pub fn grad_ball_sup(&self, y: &[f64], radius: f64) -> f64 {
        let (_, s) = self.local(y);
        self.bump.grad_sup.ball_sup(s, radius / self.r) * self.r.powi(-(self.dim() as i32) - 1)
    }

    /// Pointwise `sup_{z ∈ B_radius(y)} |∇²χ_r(z)|` from the radial profile.
    pub fn hess_ball_sup(&self, y: &[f64], radius: f64) -> f64 {
        let (_, s) = self.local(y);
        self.bump.hess_sup.ball_sup(s, radius / self.r) * self.r.powi(-(self.dim() as i32) - 2)
    }
}

/// `χ_r(x)` with the default profile.
pub fn chi_r(x: &TorusPoint, r: f64) -> Result<f64> {
    Ok(Mollifier::new(x.dim(), r)?.value(x.coords()))
}

/// `ψ_r` on `grid` with the default profile.
pub fn psi_r(r: f64, grid: &TorusGrid) -> Result<ModulusField> {
    Mollifier::new(grid.dim(), r)?.psi(grid)
}

/// `η_r` on `grid` with the default profile.
pub fn eta_r(r: f64, grid: &TorusGrid) -> Result<ModulusField> {
    Mollifier::new(grid.dim(), r)?.eta(grid)
}
