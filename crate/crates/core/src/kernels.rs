//! The torus Green's function `G` (`-ΔG = δ - 1`, zero mean), the Coulomb kernel
//! `K = -∇G`, its truncations `K_r = χ_r * K`, and the moduli `L_r`, `Q_r`.
//!
//! Everything is realised band-limited on a grid: `Ĝ(k) = 1/(4π²|k|²)`,
//! `K̂(k) = -ik/(2π|k|²)`, `K̂_r = χ̂_r K̂`.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{domain, Error, Result};
use crate::interp::SplineField;
use crate::modulus::{build_modulus, ModulusField, ModulusOrder};
use crate::mollifiers::{Mollifier, CELLS_PER_RADIUS};
use crate::torus::{ScalarField, Spectrum, TorusGrid, VectorField, MAX_DIM};

const CACHE_MAGIC: &[u8; 8] = b"VPMEKERN";
const CACHE_VERSION: u32 = 1;

/// Spline order used for off-grid kernel values.
pub const KERNEL_SPLINE_ORDER: usize = 4;

/// Spectrum of `G`.
pub fn green_spectrum(grid: &TorusGrid) -> Spectrum {
    let mut s = Spectrum::zeros(grid);
    for (c, &k2) in s.coeffs.iter_mut().zip(grid.k2()) {
        if k2 > 0.0 {
            *c = Complex64::new(1.0 / (4.0 * PI * PI * k2), 0.0);
        }
    }
    s
}

/// Component `a` of `K̂` applied to `base`, i.e. `-∂_a` of the field with spectrum `base · Ĝ`.
pub fn apply_kernel_component(base: &Spectrum, a: usize) -> Spectrum {
    let grid = base.grid.clone();
    let n = grid.n() as i64;
    let mut out = base.clone();
    out.apply(|k, k2| {
        if k2 == 0.0 || k[a] == -n / 2 {
            Complex64::default()
        } else {
            Complex64::new(0.0, -(k[a] as f64) / (2.0 * PI * k2))
        }
    });
    out
}

/// `K * f` for a grid function with spectrum `f`: the field `-∇(G * f)`.
pub fn kernel_field(spec: &Spectrum) -> VectorField {
    let grid = spec.grid.clone();
    let components = (0..grid.dim()).map(|a| grid.synthesize(&apply_kernel_component(spec, a))).collect();
    VectorField { grid, components }
}

/// `K_r` at one scale: node values and the interpolating spline.
#[derive(Clone, Debug)]
pub struct TruncatedKernel {
    pub r: f64,
    pub mollifier: Mollifier,
    pub field: VectorField,
    spline: SplineField,
}

impl TruncatedKernel {
    /// Interpolated value of `K_r` at `x`.
    pub fn eval(&self, x: &[f64]) -> [f64; MAX_DIM] {
        let mut out = [0.0; MAX_DIM];
        self.spline.eval_into(x, &mut out[..self.field.grid.dim()]);
        out
    }
}

/// Moduli of `K_r`: `L_r` (first order, radius `r`) and `Q_r` (second order, radius `2r`).
#[derive(Clone, Debug)]
pub struct KernelModuli {
    pub l: ModulusField,
    pub q: ModulusField,
}

/// `G`, `K` and `K_r` for a list of scales on one grid.
#[derive(Clone, Debug)]
pub struct KernelFamily {
    grid: TorusGrid,
    pub g: ScalarField,
    pub k: VectorField,
    scales: Vec<TruncatedKernel>,
}

fn check_scale(grid: &TorusGrid, r: f64) -> Result<()> {
    if !(r > 0.0 && r < 0.25) {
        return domain(format!("kernel scale {r} outside (0, 1/4)"));
    }
    if (grid.n() as f64) * r < CELLS_PER_RADIUS - 1e-9 {
        return domain(format!("grid n={} does not resolve r={r}", grid.n()));
    }
    Ok(())
}

fn truncated(grid: &TorusGrid, r: f64, field: Option<VectorField>) -> Result<TruncatedKernel> {
    let mollifier = Mollifier::new(grid.dim(), r)?;
    let field = match field {
        Some(f) => f,
        None => kernel_field(&mollifier.spectrum(grid)),
    };
    let comps: Vec<&[f64]> = field.components.iter().map(|c| c.as_slice()).collect();
    let spline = SplineField::from_values(grid, &comps, KERNEL_SPLINE_ORDER)?;
    Ok(TruncatedKernel { r, mollifier, field, spline })
}

/// Builds `G`, `K` and `K_r` for every `r` in `rs`.
pub fn build_kernels(grid: &TorusGrid, rs: &[f64]) -> Result<KernelFamily> {
    for &r in rs {
        check_scale(grid, r)?;
    }
    let one = {
        let mut s = Spectrum::zeros(grid);
        s.coeffs.iter_mut().for_each(|c| *c = Complex64::new(1.0, 0.0));
        s
    };
    let g = ScalarField { grid: grid.clone(), values: grid.synthesize(&green_spectrum(grid)) };
    let k = kernel_field(&one);
    let scales = rs.iter().map(|&r| truncated(grid, r, None)).collect::<Result<_>>()?;
    Ok(KernelFamily { grid: grid.clone(), g, k, scales })
}

/// Frobenius norm of the order-`m` derivative tensor of the field with spectrum `spec`.
pub fn derivative_tensor_norm(spec: &Spectrum, m: usize) -> ScalarField {
    let grid = spec.grid.clone();
    let d = grid.dim();
    let n = grid.n() as i64;
    let mut acc = vec![0.0; grid.len()];
    for alpha in multisets(d, m) {
        // Number of ordered index tuples with these counts.
        let mut mult = factorial(m);
        for &c in &alpha {
            mult /= factorial(c);
        }
        let mut s = spec.clone();
        s.apply(|k, _| {
            if (0..d).any(|a| k[a] == -n / 2) {
                return Complex64::default();
            }
            let mut z = Complex64::new(1.0, 0.0);
            for a in 0..d {
                for _ in 0..alpha[a] {
                    z *= Complex64::new(0.0, 2.0 * PI * k[a] as f64);
                }
            }
            z
        });
        let v = grid.synthesize(&s);
        acc.iter_mut().zip(&v).for_each(|(t, x)| *t += mult as f64 * x * x);
    }
    ScalarField { grid, values: acc.into_iter().map(f64::sqrt).collect() }
}

fn factorial(m: usize) -> usize {
    (1..=m).product()
}

/// All `d`-tuples of nonnegative counts summing to `m`.
fn multisets(d: usize, m: usize) -> Vec<[usize; MAX_DIM]> {
    let mut out = Vec::new();
    for a in 0..=m {
        for b in 0..=(m - a) {
            let c = m - a - b;
            let t = [a, b, c];
            if t[d..].iter().all(|&x| x == 0) {
                out.push(t);
            }
        }
    }
    out
}

impl KernelFamily {
    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn scales(&self) -> Vec<f64> {
        self.scales.iter().map(|s| s.r).collect()
    }

    pub fn truncated(&self, r: f64) -> Result<&TruncatedKernel> {
        self.scales
            .iter()
            .find(|s| (s.r - r).abs() <= 1e-15 * r)
            .ok_or_else(|| Error::Domain(format!("kernel scale {r} was not built")))
    }

    /// Interpolated `K_r(x)`.
    pub fn eval_k_r(&self, r: f64, x: &[f64]) -> Result<[f64; MAX_DIM]> {
        if x.len() != self.grid.dim() {
            return domain("point dimension does not match the kernel grid");
        }
        Ok(self.truncated(r)?.eval(x))
    }

    /// `L_r` and `Q_r` for a built scale.
    pub fn kernel_moduli(&self, r: f64) -> Result<KernelModuli> {
        let t = self.truncated(r)?;
        let mut base = t.mollifier.spectrum(&self.grid);
        let gs = green_spectrum(&self.grid);
        base.coeffs.iter_mut().zip(&gs.coeffs).for_each(|(a, b)| *a *= b);
        // |∇K_r| = |∇²G_r|, and so on up the tower.
        let d2 = derivative_tensor_norm(&base, 2);
        let d3 = derivative_tensor_norm(&base, 3);
        let d4 = derivative_tensor_norm(&base, 4);
        Ok(KernelModuli {
            l: build_modulus(ModulusOrder::First, r, r, &d2, &d3),
            q: build_modulus(ModulusOrder::Second, r, 2.0 * r, &d3, &d4),
        })
    }

    /// Writes the kernel tables: a header (`d`, `n`, scale list) followed by
    /// little-endian `f64` node values of `G`, `K` and every `K_r`.
    pub fn write_cache(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&CACHE_VERSION.to_le_bytes())?;
        w.write_all(&(self.grid.dim() as u32).to_le_bytes())?;
        w.write_all(&(self.grid.n() as u64).to_le_bytes())?;
        w.write_all(&(self.scales.len() as u64).to_le_bytes())?;
        for s in &self.scales {
            w.write_all(&s.r.to_le_bytes())?;
        }
        let mut put = |v: &[f64]| -> Result<()> {
            for x in v {
                w.write_all(&x.to_le_bytes())?;
            }
            Ok(())
        };
        put(&self.g.values)?;
        for c in &self.k.components {
            put(c)?;
        }
        for s in &self.scales {
            for c in &s.field.components {
                put(c)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads tables written by [`KernelFamily::write_cache`].
    pub fn read_cache(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut cur = Cursor { b: &bytes, at: 0 };
        if cur.take(8)? != CACHE_MAGIC {
            return Err(Error::Format("not a kernel cache file".into()));
        }
        let version = u32::from_le_bytes(cur.take(4)?.try_into().unwrap());
        if version != CACHE_VERSION {
            return Err(Error::Format(format!("kernel cache version {version}")));
        }
        let dim = u32::from_le_bytes(cur.take(4)?.try_into().unwrap()) as usize;
        let n = u64::from_le_bytes(cur.take(8)?.try_into().unwrap()) as usize;
        let count = u64::from_le_bytes(cur.take(8)?.try_into().unwrap()) as usize;
        let grid = TorusGrid::new(dim, n)?;
        let rs = (0..count).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
        let len = grid.len();
        let g = ScalarField::new(grid.clone(), cur.f64s(len)?)?;
        let k = VectorField { grid: grid.clone(), components: (0..dim).map(|_| cur.f64s(len)).collect::<Result<_>>()? };
        let mut scales = Vec::with_capacity(count);
        for &r in &rs {
            check_scale(&grid, r)?;
            let field =
                VectorField { grid: grid.clone(), components: (0..dim).map(|_| cur.f64s(len)).collect::<Result<_>>()? };
            scales.push(truncated(&grid, r, Some(field))?);
        }
        if cur.at != bytes.len() {
            return Err(Error::Format("trailing bytes in kernel cache".into()));
        }
        Ok(Self { grid, g, k, scales })
    }
}

struct Cursor<'a> {
    b: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, k: usize) -> Result<&'a [u8]> {
        if self.at + k > self.b.len() {
            return Err(Error::Format("truncated kernel cache".into()));
        }
        let s = &self.b[self.at..self.at + k];
        self.at += k;
        Ok(s)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, k: usize) -> Result<Vec<f64>> {
        let raw = self.take(8 * k)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}
