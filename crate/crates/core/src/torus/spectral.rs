//! Trigonometric-interpolation calculus on a [`TorusGrid`].
//!
//! Coefficients are the true Fourier coefficients of the interpolant,
//! `f(x) = Σ_k c_k e^{2πi k·x}`; the grid origin at `-1/2` contributes the
//! phase `(-1)^{Σ idx}` relative to the raw DFT.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use super::{ScalarField, TorusGrid, VectorField};
use crate::error::{domain, Result};

/// Fourier coefficients of a grid function, in flat DFT order.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub grid: TorusGrid,
    pub coeffs: Vec<Complex64>,
}

impl Spectrum {
    pub fn zeros(grid: &TorusGrid) -> Self {
        Self { grid: grid.clone(), coeffs: vec![Complex64::default(); grid.len()] }
    }

    /// Multiplies coefficient `k` by `symbol[k]`.
    pub fn scale_by(&mut self, symbol: &[f64]) {
        self.coeffs.par_iter_mut().zip(symbol.par_iter()).for_each(|(c, s)| *c *= s);
    }

    /// Multiplies every coefficient by `f(wavevector, |k|^2)`.
    pub fn apply(&mut self, f: impl Fn(&[i64; 3], f64) -> Complex64 + Sync) {
        let grid = self.grid.clone();
        let k2 = grid.k2();
        self.coeffs.par_iter_mut().enumerate().for_each(|(i, c)| {
            *c *= f(&grid.wavevector(i), k2[i]);
        });
    }

    /// The mean (zero mode) of the represented function.
    pub fn mean(&self) -> f64 {
        self.coeffs[0].re
    }

    /// `Σ |c_k|^2`, the squared `L^2` norm of the interpolant.
    pub fn l2_norm_sq(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }
}

#[inline]
fn parity_sign(grid: &TorusGrid, flat: usize) -> f64 {
    // n is a power of two, so only the lowest bit of each digit matters.
    let shift = grid.n().trailing_zeros();
    let mask = (0..grid.dim()).fold(0usize, |m, a| m | (1 << (a as u32 * shift)));
    if (flat & mask).count_ones().is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

impl TorusGrid {
    /// Fourier coefficients of the trigonometric interpolant of `values`.
    pub fn analyze(&self, values: &[f64]) -> Spectrum {
        assert_eq!(values.len(), self.len());
        let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft_nd(&mut data, false);
        let scale = 1.0 / self.len() as f64;
        data.par_iter_mut().enumerate().for_each(|(i, c)| *c *= parity_sign(self, i) * scale);
        Spectrum { grid: self.clone(), coeffs: data }
    }

    /// Node values of `Σ_k c_k e^{2πi k·x}` (real part).
    pub fn synthesize(&self, spec: &Spectrum) -> Vec<f64> {
        let mut data: Vec<Complex64> =
            spec.coeffs.par_iter().enumerate().map(|(i, c)| c * parity_sign(self, i)).collect();
        self.fft_nd(&mut data, true);
        data.into_iter().map(|c| c.re).collect()
    }

    /// `∂_a` applied spectrally; the Nyquist mode of axis `a` is dropped.
    pub fn derivative_spectrum(&self, spec: &Spectrum, a: usize) -> Spectrum {
        let n = self.n() as i64;
        let mut out = spec.clone();
        out.apply(
            |k, _| {
                if k[a] == -n / 2 {
                    Complex64::default()
                } else {
                    Complex64::new(0.0, 2.0 * PI * k[a] as f64)
                }
            },
        );
        out
    }

    /// Gradient of the field represented by `spec`.
    pub fn gradient_of_spectrum(&self, spec: &Spectrum) -> VectorField {
        let components = (0..self.dim()).map(|a| self.synthesize(&self.derivative_spectrum(spec, a))).collect();
        VectorField { grid: self.clone(), components }
    }

    pub fn gradient(&self, f: &ScalarField) -> VectorField {
        self.gradient_of_spectrum(&self.analyze(&f.values))
    }

    pub fn divergence(&self, v: &VectorField) -> ScalarField {
        let mut acc = Spectrum::zeros(self);
        for (a, comp) in v.components.iter().enumerate() {
            let d = self.derivative_spectrum(&self.analyze(comp), a);
            acc.coeffs.iter_mut().zip(&d.coeffs).for_each(|(s, c)| *s += c);
        }
        ScalarField { grid: self.clone(), values: self.synthesize(&acc) }
    }

    pub fn laplacian(&self, f: &ScalarField) -> ScalarField {
        let mut s = self.analyze(&f.values);
        s.apply(|_, k2| Complex64::new(-4.0 * PI * PI * k2, 0.0));
        ScalarField { grid: self.clone(), values: self.synthesize(&s) }
    }

    /// Zero-mean solution of `-Δu = f`; `f` must have (numerically) zero mean.
    pub fn laplacian_inverse(&self, f: &ScalarField) -> Result<ScalarField> {
        let mean = f.mean();
        if mean.abs() > 1e-12 * f.sup_norm() {
            return domain(format!("laplacian_inverse of a field with mean {mean:e}"));
        }
        let mut s = self.analyze(&f.values);
        s.apply(|_, k2| if k2 == 0.0 { Complex64::default() } else { Complex64::new(1.0 / (4.0 * PI * PI * k2), 0.0) });
        Ok(ScalarField { grid: self.clone(), values: self.synthesize(&s) })
    }

    /// Solution of `(-Δ + λ)u = f` for `λ > 0`.
    pub fn helmholtz_inverse(&self, f: &[f64], lambda: f64) -> Vec<f64> {
        let mut s = self.analyze(f);
        s.apply(|_, k2| Complex64::new(1.0 / (4.0 * PI * PI * k2 + lambda), 0.0));
        self.synthesize(&s)
    }

    /// Periodic convolution `(g * f)(x) = ∫ g(x - y) f(y) dy` of two grid functions,
    /// exact for their trigonometric interpolants.
    pub fn convolve(&self, g: &ScalarField, f: &ScalarField) -> ScalarField {
        let sg = self.analyze(&g.values);
        let mut sf = self.analyze(&f.values);
        sf.coeffs.iter_mut().zip(&sg.coeffs).for_each(|(a, b)| *a *= b);
        ScalarField { grid: self.clone(), values: self.synthesize(&sf) }
    }
}
