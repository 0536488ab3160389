//! Cardinal B-spline machinery shared by interpolation and particle deposition.
//!
//! Grid functions are evaluated off-grid through the interpolating spline of
//! even order `p` (degree `p - 1`); `p = 4` is the separable cubic.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{domain, Result};
use crate::torus::{wrap_coord, Spectrum, TorusGrid, MAX_DIM};

/// Largest supported spline order.
pub const MAX_ORDER: usize = 8;

fn check_order(p: usize) -> Result<()> {
    if !(2..=MAX_ORDER).contains(&p) || !p.is_multiple_of(2) {
        return domain(format!("spline order {p} must be even and in 2..={MAX_ORDER}"));
    }
    Ok(())
}

/// Weights `M_p(f + p - 1 - j)`, `j = 0..p`, of the uncentred cardinal B-spline.
#[inline]
pub fn bspline_weights(f: f64, p: usize, w: &mut [f64; MAX_ORDER]) {
    // m[k] holds M_q(f + k) for the current order q.
    let mut m = [0.0; MAX_ORDER];
    m[0] = 1.0;
    for q in 2..=p {
        let inv = 1.0 / (q - 1) as f64;
        for k in (0..q).rev() {
            let u = f + k as f64;
            let a = if k < q - 1 { u * m[k] } else { 0.0 };
            let b = if k >= 1 { (q as f64 - u) * m[k - 1] } else { 0.0 };
            m[k] = (a + b) * inv;
        }
    }
    for j in 0..p {
        w[j] = m[p - 1 - j];
    }
}

/// Node stencil of a point: the first node index per axis and the weights.
#[inline]
pub fn stencil(grid: &TorusGrid, x: &[f64], p: usize) -> ([i64; MAX_DIM], [[f64; MAX_ORDER]; MAX_DIM]) {
    let n = grid.n() as f64;
    let mut first = [0i64; MAX_DIM];
    let mut w = [[0.0; MAX_ORDER]; MAX_DIM];
    for a in 0..grid.dim() {
        let t = (wrap_coord(x[a]) + 0.5) * n;
        let fl = t.floor();
        first[a] = fl as i64 - (p as i64) / 2 + 1;
        bspline_weights(t - fl, p, &mut w[a]);
    }
    (first, w)
}

/// Calls `visit(flat_index, weight)` for every node in the stencil of `x`.
#[inline]
pub fn for_each_stencil_node(grid: &TorusGrid, x: &[f64], p: usize, mut visit: impl FnMut(usize, f64)) {
    let (first, w) = stencil(grid, x, p);
    let n = grid.n();
    let wrapi = |i: i64| i.rem_euclid(n as i64) as usize;
    match grid.dim() {
        1 => {
            for j in 0..p {
                visit(wrapi(first[0] + j as i64), w[0][j]);
            }
        }
        2 => {
            for j0 in 0..p {
                let row = wrapi(first[0] + j0 as i64) * n;
                for j1 in 0..p {
                    visit(row + wrapi(first[1] + j1 as i64), w[0][j0] * w[1][j1]);
                }
            }
        }
        _ => {
            for j0 in 0..p {
                let i0 = wrapi(first[0] + j0 as i64) * n;
                for j1 in 0..p {
                    let i1 = (i0 + wrapi(first[1] + j1 as i64)) * n;
                    let w01 = w[0][j0] * w[1][j1];
                    for j2 in 0..p {
                        visit(i1 + wrapi(first[2] + j2 as i64), w01 * w[2][j2]);
                    }
                }
            }
        }
    }
}

/// Per-axis symbol `Σ_m M_p(m) e^{-2πikm/n}` of the spline sampled at integers.
pub fn discrete_symbol(n: usize, p: usize) -> Vec<f64> {
    // Centred samples M_p(m) for |m| < p/2.
    let mut w = [0.0; MAX_ORDER];
    bspline_weights(0.0, p, &mut w);
    // With f = 0 the weights are M_p(p-1-j), i.e. centred M at m = p/2 - 1 - j.
    (0..n)
        .map(|i| {
            let k = crate::torus::wavenumber(i, n) as f64;
            (0..p)
                .map(|j| {
                    let m = (p / 2) as f64 - 1.0 - j as f64;
                    w[j] * (2.0 * PI * k * m / n as f64).cos()
                })
                .sum()
        })
        .collect()
}

/// Per-axis Fourier transform of the continuous spline, `sinc^p(πk/n)`.
pub fn continuous_symbol(n: usize, p: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let k = crate::torus::wavenumber(i, n) as f64;
            let t = PI * k / n as f64;
            if t == 0.0 {
                1.0
            } else {
                (t.sin() / t).powi(p as i32)
            }
        })
        .collect()
}

/// Tensor product of a per-axis symbol over the grid, in flat spectral order.
pub fn tensor_symbol(grid: &TorusGrid, axis: &[f64]) -> Vec<f64> {
    (0..grid.len())
        .map(|i| {
            let mi = grid.multi_index(i);
            (0..grid.dim()).map(|a| axis[mi[a]]).product()
        })
        .collect()
}

/// Spline coefficients of one or more grid functions, ready for off-grid evaluation.
#[derive(Clone, Debug)]
pub struct SplineField {
    grid: TorusGrid,
    order: usize,
    coeffs: Vec<Vec<f64>>,
}

impl SplineField {
    /// Interpolating spline through the given node values.
    pub fn from_values(grid: &TorusGrid, components: &[&[f64]], order: usize) -> Result<Self> {
        check_order(order)?;
        let spectra: Vec<Spectrum> = components.iter().map(|c| grid.analyze(c)).collect();
        Self::from_spectra(grid, spectra, order)
    }

    /// Interpolating spline through the node values of the given spectra.
    pub fn from_spectra(grid: &TorusGrid, spectra: Vec<Spectrum>, order: usize) -> Result<Self> {
        check_order(order)?;
        let sym = tensor_symbol(grid, &discrete_symbol(grid.n(), order));
        let coeffs = spectra
            .into_iter()
            .map(|mut s| {
                s.coeffs.iter_mut().zip(&sym).for_each(|(c, w)| *c /= Complex64::new(*w, 0.0));
                grid.synthesize(&s)
            })
            .collect();
        Ok(Self { grid: grid.clone(), order, coeffs })
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn components(&self) -> usize {
        self.coeffs.len()
    }

    /// Writes every component's value at `x` into `out`.
    #[inline]
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let coeffs = &self.coeffs;
        for_each_stencil_node(&self.grid, x, self.order, |i, w| {
            for (o, c) in out.iter_mut().zip(coeffs) {
                *o += w * c[i];
            }
        });
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.coeffs.len()];
        self.eval_into(x, &mut out);
        out
    }
}
