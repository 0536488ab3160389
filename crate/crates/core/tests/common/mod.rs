//! Independent reference values used by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

/// Exact 2D Coulomb kernel `K = -∇G` on the torus by Ewald summation.
pub fn ewald_k_2d(x: [f64; 2]) -> [f64; 2] {
    let tau = 0.01;
    let mut out = [0.0; 2];
    for m0 in -3i32..=3 {
        for m1 in -3i32..=3 {
            let y = [x[0] - m0 as f64, x[1] - m1 as f64];
            let r2 = y[0] * y[0] + y[1] * y[1];
            if r2 == 0.0 {
                continue;
            }
            let w = (-r2 / (4.0 * tau)).exp() / (2.0 * PI * r2);
            out[0] += y[0] * w;
            out[1] += y[1] * w;
        }
    }
    for k0 in -14i32..=14 {
        for k1 in -14i32..=14 {
            if k0 == 0 && k1 == 0 {
                continue;
            }
            let k2 = (k0 * k0 + k1 * k1) as f64;
            let phase = 2.0 * PI * (k0 as f64 * x[0] + k1 as f64 * x[1]);
            let w = phase.sin() * (-4.0 * PI * PI * k2 * tau).exp() / (2.0 * PI * k2);
            out[0] += k0 as f64 * w;
            out[1] += k1 as f64 * w;
        }
    }
    out
}

/// 1D Coulomb kernel `K(x) = 1/2 - frac(x)`.
pub fn k_1d(x: f64) -> f64 {
    0.5 - (x - x.floor())
}

/// 1D Green's function `B₂(frac(x))/2`.
pub fn g_1d(x: f64) -> f64 {
    let t = x - x.floor();
    (t * t - t + 1.0 / 6.0) / 2.0
}

/// Composite Simpson rule with `m` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, m: usize) -> f64 {
    let h = (b - a) / m as f64;
    let mut acc = f(a) + f(b);
    for j in 1..m {
        acc += f(a + j as f64 * h) * if j % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

/// Smooth positive unit-mean density `exp(s)/mean` with `s` a random trigonometric
/// polynomial of degree 3 scaled to sup-amplitude about `amp`.
pub fn random_density(grid: &vpme_core::TorusGrid, amp: f64, seed: u64) -> vpme_core::ScalarField {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let d = grid.dim();
    let modes: Vec<([f64; 3], f64, f64)> = (0..6)
        .map(|_| {
            let mut k = [0.0; 3];
            for a in 0..d {
                k[a] = rng.gen_range(-3i32..=3) as f64;
            }
            (k, rng.gen_range(-1.0..1.0), rng.gen_range(0.0..2.0 * PI))
        })
        .collect();
    let s = vpme_core::ScalarField::from_fn(grid, |x| {
        modes.iter().map(|(k, a, th)| a * (2.0 * PI * (0..d).map(|i| k[i] * x[i]).sum::<f64>() + th).cos()).sum::<f64>()
    });
    let top = s.sup_norm().max(1e-12);
    let e = s.map(|v| (amp * v / top).exp());
    let m = e.mean();
    e.map(|v| v / m)
}
