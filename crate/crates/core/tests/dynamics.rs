use vpme_core::dynamics::{
    dt_policy, run_coupled, run_flow, run_pair, FieldSolver, Passive, Sampling, SelfConsistent, SimulationConfig,
};
use vpme_core::ensemble::{DepositionScheme, InitialDatum, ParticleEnsemble, SpatialProfile};
use vpme_core::torus::{distance_raw, wrap_coord};

fn single(x: [f64; 2], v: [f64; 2]) -> ParticleEnsemble {
    ParticleEnsemble::new(2, 0, x.to_vec(), v.to_vec()).unwrap()
}

#[test]
fn lone_particle_moves_in_a_straight_line() {
    let f0 = InitialDatum::uniform(2, 1.0).unwrap();
    let mut cfg = SimulationConfig::new(f0, 1, 0.125, 128, 1.0, 0);
    cfg.deposition = DepositionScheme::Direct;
    let (x0, v0) = ([0.1234, -0.2718], [0.7, -0.3]);
    let out = run_coupled(&single(x0, v0), &cfg).unwrap();
    let free = [x0[0] + v0[0], x0[1] + v0[1]];
    let drift = distance_raw(&out.x, &free);
    assert!(drift <= 1e-6 * cfg.t_final, "drift {drift}");
}

#[test]
fn mirror_pair_keeps_its_symmetry() {
    let f0 = InitialDatum::uniform(2, 1.0).unwrap();
    let mut cfg = SimulationConfig::new(f0, 2, 0.125, 128, 0.0, 0);
    cfg.deposition = DepositionScheme::Direct;
    let s = 0.07;
    let e = ParticleEnsemble::new(2, 0, vec![s, 0.0, -s, 0.0], vec![0.4, 0.0, -0.4, 0.0]).unwrap();
    let mut sys = SelfConsistent::new(e, FieldSolver::from_config(&cfg).unwrap(), f0.v_max).unwrap();
    let p0: f64 = 0.0;
    for _ in 0..100 {
        sys.step(cfg.dt).unwrap();
        let x = &sys.ensemble.x;
        let v = &sys.ensemble.v;
        assert!(wrap_coord(x[0] + x[2]).abs() <= 1e-8);
        assert!(x[1].abs() <= 1e-8 && x[3].abs() <= 1e-8);
        assert!((v[0] + v[2]).abs() <= 1e-8 && v[1].abs() <= 1e-8);
        // Momentum only changes through the field, which is odd here.
        assert!(((v[0] + v[2]) - p0).abs() <= 1e-8);
    }
    // The particles repel, so the pair genuinely interacts.
    assert!(sys.ensemble.v[0] != 0.4);
}

#[test]
fn velocity_verlet_is_second_order() {
    let f0 = InitialDatum::new(2, SpatialProfile::Cosine { amplitude: 0.5, mode: 1 }, 0.25).unwrap();
    let init = ParticleEnsemble::sample_iid(&f0, 16, 3).unwrap();
    let run = |dt: f64| {
        let mut cfg = SimulationConfig::new(f0, 16, 0.125, 128, 0.5, 0);
        cfg.dt = dt;
        cfg.tol = 1e-11;
        run_coupled(&init, &cfg).unwrap()
    };
    let reference = run(0.0078125 / 8.0);
    let err = |e: &ParticleEnsemble| {
        let (dx, dv) = e.sup_distances(&reference).unwrap();
        dx + dv
    };
    let e1 = err(&run(0.0078125));
    let e2 = err(&run(0.0078125 / 2.0));
    // Richardson against a dt/8 reference: (1 - 1/64)/(1/4 - 1/64) ≈ 4.2 for p = 2.
    let expected = (1.0 - 1.0 / 64.0) / (0.25 - 1.0 / 64.0);
    let ratio = e1 / e2;
    assert!((ratio / expected - 1.0).abs() < 0.2, "ratio {ratio} (errors {e1:e}, {e2:e})");
}

#[test]
fn identical_reference_gives_identical_trajectories() {
    let f0 = InitialDatum::new(2, SpatialProfile::Cosine { amplitude: 0.4, mode: 1 }, 0.25).unwrap();
    let mut cfg = SimulationConfig::new(f0, 64, 0.125, 128, 0.1, 9);
    cfg.kappa = 1;
    cfg.reference_seed = Some(9);
    let pair = run_pair(&cfg).unwrap();
    for row in &pair.series {
        assert!(row.sup_x <= 1e-12 && row.sup_v <= 1e-12, "{row:?}");
    }
}

#[test]
fn auxiliary_particles_free_stream_in_a_quiet_uniform_plasma() {
    let f0 = InitialDatum::uniform(2, 0.25).unwrap();
    let mut cfg = SimulationConfig::new(f0, 64, 0.125, 128, 1.0, 4);
    cfg.reference_sampling = Sampling::Quiet { beams_per_axis: 2 };
    let reference = cfg.reference_sampling.sample(&f0, 16_384, 5).unwrap();
    let probes = ParticleEnsemble::sample_iid(&f0, 64, 6).unwrap();
    let out = run_flow(&reference, &probes, &cfg).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..probes.len() {
        let y0 = probes.position(i);
        let w0 = probes.velocity(i);
        let free = [y0[0] + w0[0], y0[1] + w0[1]];
        worst = worst.max(distance_raw(out.probes.position(i), &free));
    }
    assert!(worst <= 1e-3, "deviation {worst}");
    assert!(out.max_field < 1e-3);
}

#[test]
fn auxiliary_velocity_moment_is_preserved_in_law() {
    let f0 = InitialDatum::uniform(2, 0.25).unwrap();
    let trials = 64;
    let probes_per_trial = 16;
    let mut before = Vec::new();
    let mut after = Vec::new();
    for t in 0..trials {
        let cfg = SimulationConfig::new(f0, probes_per_trial, 0.2, 128, 0.25, 100 + t);
        let reference = ParticleEnsemble::sample_iid(&f0, 1024, 1000 + t).unwrap();
        let probes = ParticleEnsemble::sample_iid(&f0, probes_per_trial, 2000 + t).unwrap();
        let out = run_flow(&reference, &probes, &cfg).unwrap();
        let m2 = |e: &ParticleEnsemble| e.v.iter().map(|c| c * c).sum::<f64>() / e.len() as f64;
        before.push(m2(&probes));
        after.push(m2(&out.probes));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let sd = |v: &[f64]| {
        let m = mean(v);
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
    };
    let sigma = sd(&after) / (trials as f64).sqrt();
    // The initial law has E|W|² = 2θ.
    assert!((mean(&after) - 2.0 * 0.25).abs() <= 3.0 * sigma, "{} vs 0.5 ± {}", mean(&after), 3.0 * sigma);
    assert!((mean(&after) - mean(&before)).abs() <= 3.0 * sigma);
}

#[test]
fn paired_run_starts_together_and_tracks_running_sups() {
    let f0 = InitialDatum::new(2, SpatialProfile::Cosine { amplitude: 0.5, mode: 1 }, 0.0625).unwrap();
    let n = 2048usize;
    let r = (n as f64).powf(-0.4);
    let mut cfg = SimulationConfig::new(f0, n, r, 512, 0.05, 1);
    cfg.kappa = 4;
    let pair = run_pair(&cfg).unwrap();
    let first = pair.series[0];
    assert_eq!((first.dist_x, first.dist_v, first.sup_x, first.sup_v), (0.0, 0.0, 0.0, 0.0));
    assert_eq!(pair.series.len(), cfg.steps() + 1);
    for w in pair.series.windows(2) {
        assert!(w[1].sup_x >= w[0].sup_x && w[1].sup_v >= w[0].sup_v);
        assert!(w[1].sup_x.is_finite() && w[1].sup_v.is_finite());
        assert!(w[1].sup_x >= w[1].dist_x);
    }
    assert!(pair.terminal().sup_x > 0.0);
    assert_eq!(pair.coupled.tracker.x, pair.terminal().sup_x);
}

#[test]
fn paired_runs_are_deterministic() {
    let f0 = InitialDatum::new(2, SpatialProfile::Cosine { amplitude: 0.5, mode: 1 }, 0.25).unwrap();
    let mut cfg = SimulationConfig::new(f0, 128, 0.125, 128, 0.05, 77);
    cfg.snapshots = true;
    let a = run_pair(&cfg).unwrap();
    let b = run_pair(&cfg).unwrap();
    assert_eq!(a.series, b.series);
    assert_eq!(a.coupled, b.coupled);
    assert_eq!(a.snapshots, b.snapshots);
    assert!(a.snapshots.len() >= 2);
    let mut csv = Vec::new();
    a.write_series_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("time,supX,supV,maxField,energyProxy"));
    assert_eq!(text.lines().count(), a.series.len() + 1);
}

#[test]
fn configuration_invariants_are_enforced() {
    let f0 = InitialDatum::uniform(2, 1.0).unwrap();
    let good = SimulationConfig::new(f0, 16, 0.125, 128, 1.0, 0);
    assert!(good.validate().is_ok());
    assert!((good.dt - dt_policy(0.125, 8.0, 1.0 / 128.0)).abs() < 1e-15);
    assert!(good.dt * f0.v_max <= 4.0 / 128.0 + 1e-15);
    let mut bad = good.clone();
    bad.r = 0.25;
    assert!(bad.validate().is_err());
    let mut bad = good.clone();
    bad.kappa = 0;
    assert!(bad.validate().is_err());
    let mut bad = good.clone();
    bad.dt = 0.01;
    assert!(bad.validate().is_err());
    let mut bad = good.clone();
    bad.grid_n = 64;
    assert!(run_pair(&bad).is_err());
}

#[test]
fn passive_particles_do_not_feel_each_other() {
    let f0 = InitialDatum::uniform(2, 1.0).unwrap();
    let cfg = SimulationConfig::new(f0, 1, 0.125, 128, 0.0, 0);
    let reference = ParticleEnsemble::sample_iid(&f0, 256, 1).unwrap();
    let mut solver = FieldSolver::from_config(&cfg).unwrap();
    let field = solver.solve(&reference.x).unwrap();
    let one = single([0.1, 0.2], [0.3, 0.0]);
    let two = ParticleEnsemble::new(2, 0, vec![0.1, 0.2, 0.1001, 0.2], vec![0.3, 0.0, 0.3, 0.0]).unwrap();
    let mut a = Passive::new(one, &field);
    let mut b = Passive::new(two, &field);
    a.step(&field, cfg.dt);
    b.step(&field, cfg.dt);
    assert_eq!(&a.ensemble.x[..], &b.ensemble.x[..2]);
}
