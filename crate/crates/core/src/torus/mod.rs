//! Geometry of the flat torus `[-1/2, 1/2)^d` and its uniform grids.

mod grid;
mod spectral;

pub use grid::{wavenumber, ScalarField, TorusGrid, VectorField};
pub use spectral::Spectrum;

use crate::error::{domain, Result};
use serde::{Deserialize, Serialize};

/// Maximum supported dimension.
pub const MAX_DIM: usize = 3;

/// Reduce a single coordinate to its representative in `[-1/2, 1/2)`.
#[inline]
pub fn wrap_coord(x: f64) -> f64 {
    let mut y = x - (x + 0.5).floor();
    // floor(x + 0.5) can round across the boundary for x just below 1/2
    if y >= 0.5 {
        y -= 1.0;
    } else if y < -0.5 {
        y += 1.0;
    }
    y
}

/// A point of `T^d` stored through its canonical representative.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorusPoint {
    dim: usize,
    c: [f64; MAX_DIM],
}

impl TorusPoint {
    /// Wraps raw coordinates onto the fundamental domain.
    pub fn wrap(x: &[f64]) -> Result<Self> {
        if x.is_empty() || x.len() > MAX_DIM {
            return domain(format!("dimension {} not in 1..=3", x.len()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return domain("non-finite coordinate");
        }
        Ok(Self::wrap_unchecked(x))
    }

    /// Same as [`TorusPoint::wrap`] for inputs already known to be finite and of valid length.
    #[inline]
    pub fn wrap_unchecked(x: &[f64]) -> Self {
        let mut c = [0.0; MAX_DIM];
        for (ci, &xi) in c.iter_mut().zip(x) {
            *ci = wrap_coord(xi);
        }
        Self { dim: x.len(), c }
    }

    pub fn origin(dim: usize) -> Self {
        Self { dim, c: [0.0; MAX_DIM] }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn coords(&self) -> &[f64] {
        &self.c[..self.dim]
    }

    /// Coordinates padded with zeros to length three.
    #[inline]
    pub fn padded(&self) -> [f64; MAX_DIM] {
        self.c
    }
}

/// Componentwise minimal-image displacement `x - y`, each entry in `[-1/2, 1/2)`.
#[inline]
pub fn displacement(x: &[f64], y: &[f64], out: &mut [f64]) {
    for ((o, a), b) in out.iter_mut().zip(x).zip(y) {
        *o = wrap_coord(a - b);
    }
}

/// Minimal-image Euclidean distance between raw coordinate slices.
#[inline]
pub fn distance_raw(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| {
            let t = wrap_coord(a - b);
            t * t
        })
        .sum::<f64>()
        .sqrt()
}

/// Torus distance: the infimum over integer translates of the Euclidean distance.
pub fn distance(x: &TorusPoint, y: &TorusPoint) -> Result<f64> {
    if x.dim != y.dim {
        return domain(format!("dimension mismatch {} vs {}", x.dim, y.dim));
    }
    Ok(distance_raw(x.coords(), y.coords()))
}

/// Regular lattice on `T^d` whose covering radius is at most `s`.
///
/// Uses `m = ceil(sqrt(d)/s)` points per axis placed at `-1/2 + i/m`, so the
/// half-diagonal of a cell is `sqrt(d)/(2m) <= s/2`.
pub fn covering_mesh(dim: usize, s: f64) -> Result<Vec<TorusPoint>> {
    if !(1..=MAX_DIM).contains(&dim) {
        return domain(format!("dimension {dim} not in 1..=3"));
    }
    if !(s > 0.0 && s < 0.5) {
        return domain(format!("mesh spacing {s} outside (0, 1/2)"));
    }
    let m = covering_mesh_per_axis(dim, s);
    let total = m.pow(dim as u32);
    let mut pts = Vec::with_capacity(total);
    let mut x = [0.0; MAX_DIM];
    for flat in 0..total {
        let mut rem = flat;
        for a in (0..dim).rev() {
            x[a] = -0.5 + (rem % m) as f64 / m as f64;
            rem /= m;
        }
        pts.push(TorusPoint::wrap_unchecked(&x[..dim]));
    }
    Ok(pts)
}

/// Points per axis used by [`covering_mesh`].
pub fn covering_mesh_per_axis(dim: usize, s: f64) -> usize {
    ((dim as f64).sqrt() / s - 1e-12).ceil().max(1.0) as usize
}

/// Distance from `x` to the nearest point of the lattice with `m` points per axis.
pub fn distance_to_lattice(x: &[f64], m: usize) -> f64 {
    let mf = m as f64;
    x.iter()
        .map(|&xi| {
            let t = (xi + 0.5) * mf;
            let d = (t - t.round()).abs() / mf;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn wrap_examples() {
        assert_eq!(TorusPoint::wrap(&[0.75]).unwrap().coords(), &[-0.25]);
        assert_eq!(TorusPoint::wrap(&[-0.5]).unwrap().coords(), &[-0.5]);
        assert_eq!(TorusPoint::wrap(&[0.5]).unwrap().coords(), &[-0.5]);
        let p = TorusPoint::wrap(&[1.3, -0.6]).unwrap();
        assert!((p.coords()[0] - 0.3).abs() < 1e-15);
        assert!((p.coords()[1] - 0.4).abs() < 1e-15);
        assert!(TorusPoint::wrap(&[f64::NAN]).is_err());
        assert!(TorusPoint::wrap(&[0.0; 4]).is_err());
    }

    #[test]
    fn wrap_just_below_half() {
        let x = 0.5f64.next_down();
        let y = wrap_coord(x);
        assert!((-0.5..0.5).contains(&y));
    }

    #[test]
    fn distance_examples() {
        let a = TorusPoint::wrap(&[0.45]).unwrap();
        let b = TorusPoint::wrap(&[-0.45]).unwrap();
        assert!((distance(&a, &b).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(distance(&a, &a).unwrap(), 0.0);

        let x = [0.4, 0.4];
        let y = [-0.4, -0.4];
        let mut brute = f64::INFINITY;
        for k0 in -1..=1 {
            for k1 in -1..=1 {
                let d0 = x[0] - y[0] + k0 as f64;
                let d1 = x[1] - y[1] + k1 as f64;
                brute = brute.min((d0 * d0 + d1 * d1).sqrt());
            }
        }
        let p = TorusPoint::wrap(&x).unwrap();
        let q = TorusPoint::wrap(&y).unwrap();
        assert!((distance(&p, &q).unwrap() - brute).abs() < 1e-14);
        assert!((brute - 0.282_842_712_474_619).abs() < 1e-12);
        assert!(distance(&p, &a).is_err());
    }

    #[test]
    fn covering_mesh_examples() {
        let m1 = covering_mesh(1, 0.25).unwrap();
        assert_eq!(m1.len(), 4);
        let m2 = covering_mesh(2, 0.1).unwrap();
        assert_eq!(m2.len(), 225);
        assert!(covering_mesh(1, 0.6).is_err());
        assert!(covering_mesh(2, 0.0).is_err());
    }

    #[test]
    fn covering_property_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (dim, s) in [(1, 0.25), (2, 0.1), (2, 0.37), (3, 0.2)] {
            let mesh = covering_mesh(dim, s).unwrap();
            let m = covering_mesh_per_axis(dim, s);
            assert!(mesh.len() <= ((dim as f64).sqrt() / s).ceil().powi(dim as i32) as usize);
            assert!(1.0 / m as f64 <= 2.0 * s / (dim as f64).sqrt() + 1e-15);
            for _ in 0..10_000 {
                let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-0.5..0.5)).collect();
                let best = mesh.iter().map(|p| distance_raw(&x, p.coords())).fold(f64::INFINITY, f64::min);
                assert!(best <= s, "dim {dim} s {s}: {best}");
                assert!((best - distance_to_lattice(&x, m)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn triangle_inequality_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let dim = rng.gen_range(1..=3);
            let mut pt = || {
                let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
                TorusPoint::wrap(&v).unwrap()
            };
            let (a, b, c) = (pt(), pt(), pt());
            let ab = distance(&a, &b).unwrap();
            let bc = distance(&b, &c).unwrap();
            let ac = distance(&a, &c).unwrap();
            assert!(ac <= ab + bc + 1e-12);
            assert!(ab <= (dim as f64).sqrt() / 2.0 + 1e-15);
        }
    }

    proptest! {
        #[test]
        fn wrap_idempotent_and_in_range(x in prop::collection::vec(-1e6f64..1e6, 1..=3)) {
            let p = TorusPoint::wrap(&x).unwrap();
            for (&c, &raw) in p.coords().iter().zip(&x) {
                prop_assert!((-0.5..0.5).contains(&c));
                let k = raw - c;
                prop_assert!((k - k.round()).abs() < 1e-9 * raw.abs().max(1.0));
            }
            prop_assert_eq!(TorusPoint::wrap(p.coords()).unwrap(), p);
        }

        #[test]
        fn distance_symmetric_and_below_representatives(
            x in prop::collection::vec(-2.0f64..2.0, 2),
            y in prop::collection::vec(-2.0f64..2.0, 2),
        ) {
            let p = TorusPoint::wrap(&x).unwrap();
            let q = TorusPoint::wrap(&y).unwrap();
            let d = distance(&p, &q).unwrap();
            prop_assert!((d - distance(&q, &p).unwrap()).abs() < 1e-15);
            let eu = ((x[0]-y[0]).powi(2) + (x[1]-y[1]).powi(2)).sqrt();
            prop_assert!(d <= eu + 1e-12);
        }
    }
}
