use proptest::prelude::*;
use statrs::distribution::{Binomial, DiscreteCDF};
use vpme_core::ensemble::{InitialDatum, SpatialProfile};
use vpme_core::lln::{
    aligned_mesh_per_axis, bernstein_tail, lattice_nodes, loglog_fit, perturb, run_exact_suite, run_lln,
    run_lln_perturbed, threshold_a, threshold_b, ExactSuiteConfig, GridPath, LlnConfig, LocalFunction, Observable,
    TailReport,
};
use vpme_core::torus::{displacement, TorusGrid};

fn cosine() -> InitialDatum {
    InitialDatum::new(2, SpatialProfile::Cosine { amplitude: 0.5, mode: 1 }, 1.0).unwrap()
}

fn small_config(observable: Observable, ladder: Vec<usize>, trials: usize) -> LlnConfig {
    let mut cfg = LlnConfig::new(observable, cosine(), ladder, 0.2, 128, 11);
    cfg.trials = trials;
    cfg
}

fn check_report_invariants(rep: &TailReport) {
    let d = rep.config.datum.dim;
    let cap = ((d as f64).sqrt() / (rep.config.r * rep.config.delta)).ceil() as usize;
    assert!(rep.mesh_size <= cap.pow(d as u32));
    for p in &rep.ladder {
        for f in [p.failure_a, p.failure_b, p.mesh_event] {
            assert!((0.0..=1.0).contains(&f));
        }
        assert_eq!(p.mesh_sd.len(), rep.mesh_size);
    }
}

#[test]
fn bernstein_tail_dominates_exact_binomial_tails() {
    // Bernoulli(p) variables: Var = p(1-p), |U| ≤ 1.
    for &(n, p, xi) in &[(50u64, 0.3, 0.1), (200, 0.5, 0.08), (1000, 0.05, 0.02), (400, 0.9, 0.05)] {
        let b = Binomial::new(p, n).unwrap();
        let lo = ((p - xi) * n as f64).ceil() as u64;
        let hi = ((p + xi) * n as f64).floor() as u64;
        let below = if lo == 0 { 0.0 } else { b.cdf(lo - 1) };
        let above = 1.0 - b.cdf(hi);
        let exact = below + above;
        let bound = bernstein_tail(n as usize, xi, p * (1.0 - p), 1.0);
        assert!(exact <= bound, "n={n} p={p}: {exact} > {bound}");
    }
}

#[test]
fn grid_path_matches_direct_particle_sums() {
    let grid = TorusGrid::new(2, 128).unwrap();
    let rho = cosine().density_field(&grid);
    let x = cosine().sample_positions(40, 5);
    for obs in Observable::ALL {
        let f = LocalFunction::build(obs, 0.2, &grid).unwrap();
        let path = GridPath::new(&f, &rho);
        let (gx, _) = path.convolve(&grid, &x, false);
        let scale = f.g.sup_norm();
        let mut z = [0.0; 2];
        for i in (0..grid.len()).step_by(97) {
            let y = grid.node_coords(i);
            let direct: f64 = x
                .chunks(2)
                .map(|p| {
                    displacement(&y[..2], p, &mut z);
                    f.eval(&z)
                })
                .sum::<f64>()
                / 40.0;
            assert!((gx[i] - direct).abs() <= 1e-5 * scale, "{obs:?} node {i}: {} vs {direct}", gx[i]);
        }
    }
}

#[test]
fn kernel_against_uniform_density_has_zero_mean_and_decaying_error() {
    let f0 = InitialDatum::uniform(2, 1.0).unwrap();
    let mut cfg = LlnConfig::new(Observable::KernelComponent { axis: 1 }, f0, vec![1000, 10_000], 1.0 / 16.0, 256, 4);
    cfg.trials = 8;
    let grid = TorusGrid::new(2, 256).unwrap();
    let f = LocalFunction::build(cfg.observable, cfg.r, &grid).unwrap();
    let path = GridPath::new(&f, &f0.density_field(&grid));
    assert!(path.g_rho.iter().all(|v| v.abs() < 1e-12));
    let rep = run_lln(&cfg).unwrap();
    check_report_invariants(&rep);
    assert!(rep.ladder[1].mean_sup_error < rep.ladder[0].mean_sup_error);
}

#[test]
fn pointwise_standard_deviation_follows_the_clt_rate() {
    let f0 = InitialDatum::uniform(2, 1.0).unwrap();
    let mut cfg = LlnConfig::new(Observable::Mollifier, f0, vec![100, 1000, 10_000], 0.125, 128, 8);
    cfg.trials = 96;
    let rep = run_lln(&cfg).unwrap();
    let slopes = rep.clt_slopes();
    assert_eq!(slopes.len(), rep.mesh_size);
    for s in slopes {
        assert!((s + 0.5).abs() <= 0.1, "slope {s}");
    }
    // Scalar CLT oracle: sd = sqrt((‖χ_r‖₂² - 1)/N) for uniform ρ.
    let grid = TorusGrid::new(2, 128).unwrap();
    let g2 = LocalFunction::build(Observable::Mollifier, 0.125, &grid).unwrap().g.lp_norm(2.0).powi(2);
    for p in &rep.ladder {
        let expected = ((g2 - 1.0) / p.n as f64).sqrt();
        let median = {
            let mut v = p.mesh_sd.clone();
            v.sort_by(f64::total_cmp);
            v[v.len() / 2]
        };
        assert!((median / expected - 1.0).abs() < 0.15, "N={}: {median} vs {expected}", p.n);
    }
}

#[test]
fn failure_frequency_respects_the_bernstein_envelope() {
    let cfg = small_config(Observable::KernelComponent { axis: 0 }, vec![100, 3000, 100_000], 24);
    let rep = run_lln(&cfg).unwrap();
    check_report_invariants(&rep);
    assert!(rep.within_envelope());
    assert!(rep.failure_monotone());
    // The largest rung is informative: the bound is far below one.
    let last = rep.ladder.last().unwrap();
    assert!(!last.vacuous && last.bernstein_a < 1e-3, "{}", last.bernstein_a);
    assert!(rep.ladder[0].vacuous);
    // The union of mesh deviations contains A_g^c, so its frequency dominates.
    for p in &rep.ladder {
        assert!(p.mesh_event >= p.failure_a);
    }
}

#[test]
fn zero_perturbation_reproduces_the_unperturbed_experiment() {
    let cfg = small_config(Observable::ScaledMollifier, vec![200, 2000], 16);
    let a = run_lln(&cfg).unwrap();
    let b = run_lln_perturbed(&cfg, 0.0).unwrap();
    for (p, q) in a.ladder.iter().zip(&b.ladder) {
        assert_eq!(p.failure_a, q.failure_a);
        assert_eq!(q.failure_b, p.failure_a);
    }
    let t = threshold_b(cfg.r, cfg.delta, cfg.gamma, a.rho_sup, &a.norms, 0.0);
    assert_eq!(t, threshold_a(cfg.r, cfg.delta, cfg.gamma, a.rho_sup, &a.norms));
    assert!(run_lln_perturbed(&cfg, cfg.r).is_err());
    assert!(run_lln_perturbed(&cfg, -0.01).is_err());
}

#[test]
fn perturbed_tuples_record_the_shifted_event() {
    let cfg = small_config(Observable::KernelComponent { axis: 0 }, vec![500, 5000], 16);
    let rep = run_lln_perturbed(&cfg, cfg.r / 2.0).unwrap();
    check_report_invariants(&rep);
    for t in &rep.trials {
        assert!(t.perturbation > 0.0 && t.perturbation <= cfg.r / 2.0);
        let thr = threshold_b(cfg.r, cfg.delta, cfg.gamma, rep.rho_sup, &rep.norms, t.perturbation);
        assert_eq!(t.b_holds, t.sup_error_x <= thr);
    }
    for p in &rep.ladder {
        assert!(p.bernstein_b >= p.bernstein_a);
    }
}

#[test]
fn perturbation_stays_within_its_radius() {
    let y = cosine().sample_positions(2000, 3);
    let (x, dist) = perturb(&y, 2, 0.05, 3);
    assert!(dist <= 0.05 && dist > 0.045);
    let (same, zero) = perturb(&y, 2, 0.0, 3);
    assert_eq!((same, zero), (y.clone(), 0.0));
    assert_ne!(x, y);
}

#[test]
fn exact_inequalities_hold_on_every_trial() {
    let cfg = ExactSuiteConfig {
        datum: cosine(),
        r: 0.125,
        grid_n: 128,
        n_particles: 128,
        trials: 24,
        perturbation: 0.5,
        seed: 21,
    };
    let rep = run_exact_suite(&cfg).unwrap();
    assert_eq!(rep.trials.len(), 24);
    for t in &rep.trials {
        assert!(t.holds(), "{t:?}");
        assert!(t.distance < cfg.r);
    }
    // Every observable is exercised.
    for obs in Observable::ALL {
        assert!(rep.trials.iter().any(|t| t.observable == obs));
    }
}

#[test]
fn reports_serialise_to_json_and_csv() {
    let cfg = small_config(Observable::Mollifier, vec![100, 400], 4);
    let rep = run_lln(&cfg).unwrap();
    let json = rep.to_json().unwrap();
    let back: TailReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, rep);
    let mut csv = Vec::new();
    rep.write_summary_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("N,gamma,delta,failureA"));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn runs_are_deterministic_and_validated() {
    let cfg = small_config(Observable::Mollifier, vec![300], 6);
    assert_eq!(run_lln(&cfg).unwrap(), run_lln(&cfg).unwrap());
    for bad in [
        LlnConfig { delta: 1.0, ..cfg.clone() },
        LlnConfig { gamma: 0.0, ..cfg.clone() },
        LlnConfig { r: 0.25, ..cfg.clone() },
        LlnConfig { trials: 0, ..cfg.clone() },
        LlnConfig { n_ladder: vec![], ..cfg.clone() },
        LlnConfig { grid_n: 64, ..cfg.clone() },
    ] {
        assert!(run_lln(&bad).is_err());
    }
}

#[test]
fn loglog_fit_recovers_power_laws() {
    let x: Vec<f64> = [1.0f64, 10.0, 100.0].iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = [1.0f64, 10.0, 100.0].iter().map(|v| (3.0 * v.powf(-0.5)).ln()).collect();
    let (slope, icpt) = loglog_fit(&x, &y);
    assert!((slope + 0.5).abs() < 1e-12 && (icpt - 3f64.ln()).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn aligned_meshes_cover_within_the_size_cap(d in 1usize..=3, s in 0.01f64..0.2) {
        let m = aligned_mesh_per_axis(d, s);
        prop_assert!((d as f64).sqrt() / (2.0 * m as f64) <= s);
        let cap = ((d as f64).sqrt() / s).ceil() as usize;
        prop_assert!(m <= cap.max(1));
    }

    #[test]
    fn lattice_nodes_are_distinct_and_evenly_spaced(k in 0u32..5) {
        let grid = TorusGrid::new(2, 64).unwrap();
        let m = 1usize << k;
        let nodes = lattice_nodes(&grid, m);
        let mut sorted = nodes.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), m * m);
        let h = 1.0 / m as f64;
        for &i in &nodes {
            let c = grid.node_coords(i);
            for a in 0..2 {
                let t = (c[a] + 0.5) / h;
                prop_assert!((t - t.round()).abs() < 1e-9);
            }
        }
    }
}
