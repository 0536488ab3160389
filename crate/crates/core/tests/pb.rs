mod common;

use std::f64::consts::PI;
use std::time::Instant;

use proptest::prelude::*;
use vpme_core::kernels::build_kernels;
use vpme_core::pb::{
    field_stability_gap, log_lipschitz_quotient, lower_bound_check, solve_pb, solve_pb_with, PbOptions,
};
use vpme_core::{Error, ScalarField, TorusGrid};

#[test]
fn uniform_density_gives_zero_potential() {
    for d in 1..=3 {
        let grid = TorusGrid::new(d, 16).unwrap();
        let sol = solve_pb(&ScalarField::constant(&grid, 1.0), 1e-10).unwrap();
        assert!(sol.phi.sup_norm() <= 1e-12);
        assert!(sol.field.sup_norm() <= 1e-12);
        let lb = lower_bound_check(&sol, &ScalarField::constant(&grid, 1.0), f64::INFINITY).unwrap();
        assert!(lb.mean_phi.abs() < 1e-12 && lb.oscillation < 1e-12);
        assert!(lb.oscillation_holds && lb.mean_holds);
    }
}

#[test]
fn manufactured_solution_is_recovered() {
    let grid = TorusGrid::new(2, 128).unwrap();
    // I₀(0.3) by its power series.
    let i0: f64 = (0..30).map(|k| 0.15f64.powi(2 * k) / (1..=k).map(|j| j as f64).product::<f64>().powi(2)).sum();
    let rho = ScalarField::from_fn(&grid, |x| {
        let c = (2.0 * PI * x[0]).cos();
        0.3 * 4.0 * PI * PI * c + (0.3 * c).exp() / i0
    });
    assert!((rho.mean() - 1.0).abs() < 1e-13);
    let start = Instant::now();
    let sol = solve_pb(&rho, 1e-11).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let err = (0..grid.len())
        .map(|i| {
            let x = grid.node_coords(i);
            (sol.phi.values[i] - (0.3 * (2.0 * PI * x[0]).cos() - i0.ln())).abs()
        })
        .fold(0.0, f64::max);
    assert!(err <= 1e-8, "sup error {err}");
    assert!(elapsed < 10.0);
    assert_eq!(sol.diagnostics.clamp_hits, 0);
}

#[test]
fn estimates_hold_on_random_densities() {
    let grid = TorusGrid::new(2, 64).unwrap();
    for seed in 0..20 {
        let rho = common::random_density(&grid, 1.2, seed);
        let tol = 1e-10;
        let sol = solve_pb(&rho, tol).unwrap();
        let dg = &sol.diagnostics;
        assert!(sol.residual_sup <= tol);
        for p in 0..3 {
            assert!(dg.exp_phi_norms[p] <= dg.rho_norms[p] * (1.0 + 1e-8), "seed {seed} p {p}: {dg:?}");
        }
        assert!(dg.neutrality.abs() <= 1e-8);
        let mass: f64 = sol.phi.values.iter().map(|v| v.exp()).sum::<f64>() / grid.len() as f64;
        assert!((mass - 1.0).abs() <= 1e-8);
        assert!(dg.min_exp_phi > 0.0 && dg.clamp_hits == 0);
        for p in [2.0, f64::INFINITY] {
            let lb = lower_bound_check(&sol, &rho, p).unwrap();
            assert!(lb.oscillation_holds, "{lb:?}");
            assert!(lb.mean_holds, "{lb:?}");
            assert!(lb.green_norm.is_finite() && lb.green_norm > 0.0);
            assert!(lb.min_exp_phi >= lb.exp_lower_bound);
        }
    }
}

#[test]
fn errors_are_reported() {
    let grid = TorusGrid::new(2, 16).unwrap();
    let bad = ScalarField::constant(&grid, 1.1);
    assert!(matches!(solve_pb(&bad, 1e-10), Err(Error::Domain(_))));
    // A tolerance under the round-off floor fails fast instead of spinning to the cap.
    let steep = common::random_density(&TorusGrid::new(2, 128).unwrap(), 2.0, 1);
    match solve_pb(&steep, 1e-12) {
        Ok(s) => assert!(s.residual_sup <= 1e-12),
        Err(Error::Convergence { iterations, .. }) => assert!(iterations < 10_000),
        Err(e) => panic!("{e}"),
    }
    assert!(matches!(solve_pb(&ScalarField::constant(&grid, 1.0), 1e-13), Err(Error::Domain(_))));
    let rho = common::random_density(&grid, 1.0, 3);
    let r = solve_pb_with(&rho, None, &PbOptions { tol: 1e-12, max_iterations: 2 });
    match r {
        Err(Error::Convergence { iterations, residual }) => {
            assert_eq!(iterations, 2);
            assert!(residual > 1e-12 && residual.is_finite());
        }
        other => panic!("unexpected {other:?}"),
    }
    let sol = solve_pb(&rho, 1e-10).unwrap();
    assert!(lower_bound_check(&sol, &rho, 1.0).is_err());
}

#[test]
fn negative_lobes_are_clipped_and_logged() {
    let grid = TorusGrid::new(1, 32).unwrap();
    let mut rho = ScalarField::constant(&grid, 1.0);
    rho.values[3] = -1e-12;
    rho.values[4] = 2.0 + 1e-12;
    let sol = solve_pb(&rho, 1e-10).unwrap();
    assert!((sol.diagnostics.clipped_mass - 1e-12 / 32.0).abs() < 1e-20);
}

#[test]
fn warm_start_reduces_iterations() {
    let grid = TorusGrid::new(2, 64).unwrap();
    let rho = common::random_density(&grid, 1.5, 11);
    let cold = solve_pb(&rho, 1e-10).unwrap();
    let warm = solve_pb_with(&rho, Some(&cold.phi), &PbOptions::default()).unwrap();
    assert!(warm.iterations < cold.iterations);
}

#[test]
fn stability_gap_envelope() {
    let grid = TorusGrid::new(2, 64).unwrap();
    let fam = build_kernels(&grid, &[]).unwrap();
    let rho = common::random_density(&grid, 1.0, 5);
    let g = field_stability_gap(&rho, &rho, &fam, 1e-10).unwrap();
    assert!(g.lhs < 1e-9 && g.rhs == 0.0);
    let mut pts = Vec::new();
    for seed in 0..50 {
        let a = common::random_density(&grid, 1.3, 100 + seed);
        let b = common::random_density(&grid, 1.3, 200 + seed);
        let m = a.sup_norm().max(b.sup_norm());
        assert!(m <= 4.0);
        let g = field_stability_gap(&a, &b, &fam, 1e-11).unwrap();
        pts.push((m, g.lhs / g.rhs));
    }
    // A single monotone envelope exp(C(1 + M)) with C fitted on the data.
    let c = pts.iter().map(|(m, q)| q.ln().max(0.0) / (1.0 + m)).fold(0.0, f64::max);
    assert!(c.is_finite() && c < 1.0, "fitted constant {c}");
    for (m, q) in &pts {
        assert!(q.is_finite() && *q <= (c * (1.0 + m)).exp() + 1e-12);
    }
    // Nearby densities.
    let a = common::random_density(&grid, 1.0, 7);
    let pert = common::random_density(&grid, 1.0, 8);
    let b =
        ScalarField::new(grid.clone(), a.values.iter().zip(&pert.values).map(|(x, p)| x + 0.01 * (p - 1.0)).collect())
            .unwrap();
    let g = field_stability_gap(&a, &b, &fam, 1e-11).unwrap();
    assert!(g.lhs.is_finite() && g.rhs > 0.0 && (g.lhs / g.rhs).is_finite());
}

#[test]
fn log_lipschitz_quotient_scales_with_density_sup() {
    let grid = TorusGrid::new(2, 128).unwrap();
    let mut ratios = Vec::new();
    for (k, amp) in [0.5, 1.0, 1.5, 2.0].iter().enumerate() {
        let rho = common::random_density(&grid, *amp, 40 + k as u64);
        let sol = solve_pb(&rho, 1e-10).unwrap();
        let q = log_lipschitz_quotient(&sol, 5000, 1).unwrap();
        ratios.push(q / rho.sup_norm());
    }
    let c = ratios[0];
    assert!(ratios.iter().all(|r| *r <= 10.0 * c), "{ratios:?}");
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]
    #[test]
    fn residual_certificate(seed in 0u64..10_000, amp in 0.0f64..2.0) {
        let grid = TorusGrid::new(2, 32).unwrap();
        let rho = common::random_density(&grid, amp, seed);
        let sol = solve_pb(&rho, 1e-10).unwrap();
        let res = vpme_core::pb::residual(&sol.phi, &rho.values);
        prop_assert!(res.iter().all(|r| r.abs() <= 1e-10));
        prop_assert!(sol.phi.values.iter().all(|v| v.is_finite()));
    }
}
