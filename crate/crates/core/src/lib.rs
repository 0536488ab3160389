//! Numerical core for the regularised ionic Vlasov–Poisson system on the flat
//! torus `T^d = [-1/2, 1/2)^d`, `d ∈ {1, 2, 3}`.
//!
//! The crate is organised bottom-up:
//!
//! * [`torus`]: points, metric, covering meshes, uniform grids and spectral calculus;
//! * [`interp`]: spline evaluation of grid functions at arbitrary points;
//! * [`mollifiers`]: the bump family `χ_r` and its local Lipschitz moduli `ψ_r`, `η_r`;
//! * [`kernels`]: the torus Green's function `G`, Coulomb kernel `K`, truncations `K_r`
//!   and the moduli `L_r`, `Q_r`;
//! * [`pb`]: the nonlinear Poisson–Boltzmann solve `-Δφ = ρ - e^φ` and its diagnostics;
//! * [`ensemble`]: initial data, particle tuples, deposition and empirical convolutions;
//! * [`dynamics`]: coupled, reference and auxiliary particle flows;
//! * [`lln`]: uniform law-of-large-numbers experiments and Bernstein envelopes;
//! * [`kdist`]: the implicit nonlinear kinetic distance and its audits.

pub mod dynamics;
pub mod ensemble;
mod error;
pub mod interp;
pub mod kdist;
pub mod kernels;
pub mod lln;
pub mod modulus;
pub mod mollifiers;
pub mod pb;
pub mod rng;
pub mod torus;

pub use error::{Error, Result};
pub use torus::{ScalarField, TorusGrid, TorusPoint, VectorField};
