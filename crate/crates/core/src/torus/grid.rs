use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use super::{wrap_coord, TorusPoint, MAX_DIM};
use crate::error::{domain, Result};

struct GridInner {
    dim: usize,
    n: usize,
    len: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// `|k|^2` per node index, in integer wavenumber units.
    k2: Vec<f64>,
}

/// Uniform grid with `n` nodes per axis at `x_i = -1/2 + i/n`, stored row-major
/// with axis 0 slowest. Cloning is cheap; transform plans are shared.
#[derive(Clone)]
pub struct TorusGrid {
    inner: Arc<GridInner>,
}

impl fmt::Debug for TorusGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TorusGrid(d={}, n={})", self.dim(), self.n())
    }
}

impl PartialEq for TorusGrid {
    fn eq(&self, other: &Self) -> bool {
        self.dim() == other.dim() && self.n() == other.n()
    }
}

impl TorusGrid {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return domain(format!("dimension {dim} not in 1..=3"));
        }
        if n < 8 || !n.is_power_of_two() {
            return domain(format!("grid size {n} must be a power of two >= 8"));
        }
        let len = n.pow(dim as u32);
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let kk: Vec<f64> = (0..n).map(|i| wavenumber(i, n) as f64).collect();
        let mut k2 = vec![0.0; len];
        for (idx, v) in k2.iter_mut().enumerate() {
            let mut rem = idx;
            let mut s = 0.0;
            for _ in 0..dim {
                let k = kk[rem % n];
                s += k * k;
                rem /= n;
            }
            *v = s;
        }
        Ok(Self { inner: Arc::new(GridInner { dim, n, len, fwd, inv, k2 }) })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.inner.dim
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.inner.n
    }

    /// Total node count `n^d`.
    #[inline]
    pub fn len(&self) -> usize {
        self.inner.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        1.0 / self.n() as f64
    }

    /// Volume of one cell, `h^d`.
    #[inline]
    pub fn cell_volume(&self) -> f64 {
        1.0 / self.len() as f64
    }

    /// Stride of axis `a` in the flat layout.
    #[inline]
    pub fn stride(&self, a: usize) -> usize {
        self.n().pow((self.dim() - 1 - a) as u32)
    }

    /// Multi-index of a flat index (unused axes are zero).
    #[inline]
    pub fn multi_index(&self, flat: usize) -> [usize; MAX_DIM] {
        let n = self.n();
        let mut out = [0; MAX_DIM];
        let mut rem = flat;
        for a in (0..self.dim()).rev() {
            out[a] = rem % n;
            rem /= n;
        }
        out
    }

    /// Flat index of a multi-index; entries are reduced modulo `n`.
    #[inline]
    pub fn flat_index(&self, idx: &[i64]) -> usize {
        let n = self.n() as i64;
        idx.iter().take(self.dim()).fold(0usize, |acc, &i| acc * self.n() + i.rem_euclid(n) as usize)
    }

    /// Coordinates of the node with the given flat index.
    #[inline]
    pub fn node_coords(&self, flat: usize) -> [f64; MAX_DIM] {
        let mi = self.multi_index(flat);
        let h = self.spacing();
        let mut x = [0.0; MAX_DIM];
        for a in 0..self.dim() {
            x[a] = -0.5 + mi[a] as f64 * h;
        }
        x
    }

    pub fn node(&self, flat: usize) -> TorusPoint {
        TorusPoint::wrap_unchecked(&self.node_coords(flat)[..self.dim()])
    }

    /// Flat index of the node nearest to `x` (torus-wise).
    #[inline]
    pub fn nearest_node(&self, x: &[f64]) -> usize {
        let n = self.n();
        let nf = n as f64;
        let mut flat = 0usize;
        for &xi in x.iter().take(self.dim()) {
            let t = ((wrap_coord(xi) + 0.5) * nf).round() as usize % n;
            flat = flat * n + t;
        }
        flat
    }

    /// Integer wavevector of a flat spectral index.
    #[inline]
    pub fn wavevector(&self, flat: usize) -> [i64; MAX_DIM] {
        let mi = self.multi_index(flat);
        let mut k = [0; MAX_DIM];
        for a in 0..self.dim() {
            k[a] = wavenumber(mi[a], self.n());
        }
        k
    }

    /// `|k|^2` table in flat spectral order.
    #[inline]
    pub fn k2(&self) -> &[f64] {
        &self.inner.k2
    }

    /// In-place multi-dimensional DFT (unnormalised in both directions).
    pub(crate) fn fft_nd(&self, data: &mut [Complex64], inverse: bool) {
        assert_eq!(data.len(), self.len());
        let n = self.n();
        let plan = if inverse { &self.inner.inv } else { &self.inner.fwd };
        for a in 0..self.dim() {
            let s = self.stride(a);
            if s == 1 {
                data.par_chunks_mut(n.max(4096 / n * n)).for_each(|chunk| {
                    plan.process(chunk);
                });
                continue;
            }
            // Each block of n*s entries holds s interleaved lines of length n;
            // lines are gathered in groups, transformed, then scattered back.
            const GROUP: usize = 64;
            for block in data.chunks_mut(n * s) {
                let groups: Vec<Vec<Complex64>> = (0..s.div_ceil(GROUP))
                    .into_par_iter()
                    .map(|g| {
                        let j0 = g * GROUP;
                        let j1 = (j0 + GROUP).min(s);
                        let mut buf = vec![Complex64::default(); n * (j1 - j0)];
                        for i in 0..n {
                            let row = &block[i * s + j0..i * s + j1];
                            for (jj, v) in row.iter().enumerate() {
                                buf[jj * n + i] = *v;
                            }
                        }
                        plan.process(&mut buf);
                        buf
                    })
                    .collect();
                for (g, buf) in groups.iter().enumerate() {
                    let j0 = g * GROUP;
                    let w = buf.len() / n;
                    for i in 0..n {
                        let row = &mut block[i * s + j0..i * s + j0 + w];
                        for (jj, v) in row.iter_mut().enumerate() {
                            *v = buf[jj * n + i];
                        }
                    }
                }
            }
        }
    }
}

/// Signed wavenumber of DFT index `i`: `i` below `n/2`, `i - n` otherwise.
#[inline]
pub fn wavenumber(i: usize, n: usize) -> i64 {
    if i < n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// Real values on every node of a grid.
#[derive(Clone, Debug)]
pub struct ScalarField {
    pub grid: TorusGrid,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return domain(format!("{} values for a grid of {} nodes", values.len(), grid.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return domain("non-finite field value");
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: &TorusGrid) -> Self {
        Self { grid: grid.clone(), values: vec![0.0; grid.len()] }
    }

    pub fn constant(grid: &TorusGrid, c: f64) -> Self {
        Self { grid: grid.clone(), values: vec![c; grid.len()] }
    }

    /// Samples `f` at every node.
    pub fn from_fn(grid: &TorusGrid, f: impl Fn(&[f64]) -> f64 + Sync) -> Self {
        let d = grid.dim();
        let values = (0..grid.len()).into_par_iter().map(|i| f(&grid.node_coords(i)[..d])).collect();
        Self { grid: grid.clone(), values }
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Riemann sum over the torus, equal to the mean since the volume is one.
    pub fn integral(&self) -> f64 {
        self.mean()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Discrete `L^p` norm `(h^d Σ |f|^p)^{1/p}`; `p = ∞` gives the sup norm.
    pub fn lp_norm(&self, p: f64) -> f64 {
        if p.is_infinite() {
            return self.sup_norm();
        }
        let s: f64 = self.values.iter().map(|v| v.abs().powf(p)).sum();
        (s * self.grid.cell_volume()).powf(1.0 / p)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { grid: self.grid.clone(), values: self.values.iter().map(|&v| f(v)).collect() }
    }
}

/// `d` real components on every node.
#[derive(Clone, Debug)]
pub struct VectorField {
    pub grid: TorusGrid,
    /// One vector of node values per component.
    pub components: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn zeros(grid: &TorusGrid) -> Self {
        Self { grid: grid.clone(), components: vec![vec![0.0; grid.len()]; grid.dim()] }
    }

    /// Samples `f` at every node.
    pub fn from_fn(grid: &TorusGrid, f: impl Fn(&[f64]) -> [f64; MAX_DIM] + Sync) -> Self {
        let d = grid.dim();
        let vals: Vec<[f64; MAX_DIM]> = (0..grid.len()).into_par_iter().map(|i| f(&grid.node_coords(i)[..d])).collect();
        let components = (0..d).map(|a| vals.iter().map(|v| v[a]).collect()).collect();
        Self { grid: grid.clone(), components }
    }

    /// Euclidean magnitude per node.
    pub fn magnitude(&self) -> ScalarField {
        let values =
            (0..self.grid.len()).map(|i| self.components.iter().map(|c| c[i] * c[i]).sum::<f64>().sqrt()).collect();
        ScalarField { grid: self.grid.clone(), values }
    }

    /// Maximum over nodes of the Euclidean magnitude.
    pub fn sup_norm(&self) -> f64 {
        (0..self.grid.len())
            .map(|i| self.components.iter().map(|c| c[i] * c[i]).sum::<f64>())
            .fold(0.0, f64::max)
            .sqrt()
    }

    /// Discrete `L^p` norm of the magnitude.
    pub fn lp_norm(&self, p: f64) -> f64 {
        self.magnitude().lp_norm(p)
    }
}
