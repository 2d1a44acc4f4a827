use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use peaklab::attractor::*;
use peaklab::coefficients::{CoefficientSpec, ScalarFn};
use peaklab::dynamics::{Nonlinearity, Stepper};
use peaklab::elliptic::{MeshPair, MeshParams, OperatorPair};
use peaklab::equilibria::*;
use peaklab::geometry::Profile;
use peaklab::transfer::{extend, Alpha, Field};

fn pair(n_x: usize) -> MeshPair {
    MeshPair::new(&Profile::power(1.0), MeshParams { n_x, density: 1.0, grading: None }).unwrap()
}

fn skewed() -> CoefficientSpec {
    CoefficientSpec::identity().with_a01(ScalarFn::Affine { c0: 1.0, c1: 0.5 })
}

fn atlas(op: &OperatorPair, lambda: f64, strategy: Strategy) -> EquilibriumAtlas {
    enumerate_equilibria(op, &Nonlinearity::cubic(lambda), strategy, EnumerateOptions::default()).unwrap()
}

fn limit_attractor(lambda: f64, cfg: &SamplingConfig) -> (OperatorPair, EquilibriumAtlas, AttractorSample) {
    let op = pair(32).assemble_limit(&CoefficientSpec::identity()).unwrap();
    let a = atlas(&op, lambda, Strategy::ConstantSeeds);
    let s = assemble_attractor(&a, &op, &Nonlinearity::cubic(lambda), cfg, None).unwrap();
    (op, a, s)
}

/// Index of the nonconstant equilibrium with `u(0) < 0` in a λ = 20 atlas.
fn psi_index(a: &EquilibriumAtlas) -> usize {
    a.entries
        .iter()
        .position(|e| e.morse_index == 1 && e.state.values[0] < 0.0)
        .unwrap()
}

#[test]
fn projection_at_zero_is_the_constant_mode() {
    let op = pair(32).assemble_limit(&CoefficientSpec::identity()).unwrap();
    let nl = Nonlinearity::cubic(5.0);
    let a = atlas(&op, 5.0, Strategy::ConstantSeeds);
    let zero = &a.entries[1];
    let q = spectral_projection(&op, &nl, zero, 4).unwrap();
    assert_eq!(q.rank, 1);
    let phi = &q.basis[0].values;
    assert!(phi.iter().all(|v| (v - phi[0]).abs() < 1e-8 && *v > 0.0));
    assert!((q.values[0] + 4.0).abs() < 1e-8);
    assert!(q.form_residual(&op, &nl) <= 1e-8);

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..5 {
        let u: Vec<f64> = (0..op.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let once = q.apply(&u);
        let twice = q.apply(&once);
        let scale = once.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(once.iter().zip(&twice).all(|(a, b)| (a - b).abs() <= 1e-10 * scale.max(1.0)));
    }

    let two = spectral_projection(&op, &nl, &a.entries[2], 4).unwrap();
    assert_eq!(two.rank, 0);
    assert!(two.basis.is_empty());
    assert!(spectral_projection(&op, &nl, zero, 0).is_err());
}

#[test]
fn rank_two_projection_is_idempotent() {
    let op = pair(32).assemble_limit(&skewed()).unwrap();
    let nl = Nonlinearity::cubic(20.0);
    let a = atlas(&op, 20.0, Strategy::EigenfunctionSeeds);
    let zero = a.entries.iter().find(|e| e.state.max_abs() < 1e-12).unwrap();
    let q = spectral_projection(&op, &nl, zero, 2).unwrap();
    assert_eq!(q.rank, 2);
    assert!(q.form_residual(&op, &nl) <= 1e-8);
    let u: Vec<f64> = (0..op.dim()).map(|i| ((i * 37 % 11) as f64 - 5.0) / 5.0).collect();
    let once = q.apply(&u);
    let twice = q.apply(&once);
    assert!(once.iter().zip(&twice).all(|(a, b)| (a - b).abs() <= 1e-10));
}

#[test]
fn rays_from_zero_reach_both_stable_states() {
    let op = pair(32).assemble_limit(&CoefficientSpec::identity()).unwrap();
    let nl = Nonlinearity::cubic(5.0);
    let a = atlas(&op, 5.0, Strategy::ConstantSeeds);
    let q = spectral_projection(&op, &nl, &a.entries[1], 1).unwrap();
    let sinks: Vec<Field> = a.stable().map(|e| e.state.clone()).collect();
    let cfg = SamplingConfig::default();
    let ms = sample_unstable_manifold(&q, &op, &nl, &sinks, &cfg).unwrap();
    assert_eq!(ms.rays.len(), 2);
    assert!(ms.complete());
    let ends: Vec<f64> = ms.rays.iter().map(|r| sinks[r.endpoint.unwrap()].values[0]).collect();
    assert_eq!(ends, vec![2.0, -2.0]);
    for r in &ms.rays {
        assert!(q.local_norm(&r.states[0].sub(&a.entries[1].state).unwrap().values) <= cfg.r_loc / 100.0 + 1e-15);
        assert!(r.end_distance <= 1e-4);
        assert!(r.exit_time.is_some());
    }
    for ray in 0..2 {
        let levels: Vec<usize> = ms.graph.iter().filter(|g| g.ray == ray).map(|g| g.level).collect();
        assert_eq!(levels, (0..cfg.amplitudes.len()).collect::<Vec<_>>());
    }
    // The constant direction is invariant, so the graph is flat.
    assert!(ms.graph.iter().all(|g| g.w.max_abs() < 1e-10));

    let stable = spectral_projection(&op, &nl, &a.entries[0], 1).unwrap();
    let empty = sample_unstable_manifold(&stable, &op, &nl, &sinks, &cfg).unwrap();
    assert!(empty.rays.is_empty() && empty.graph.is_empty());
}

#[test]
fn off_manifold_component_decays_exponentially() {
    let op = pair(32).assemble_limit(&CoefficientSpec::identity()).unwrap();
    let nl = Nonlinearity::cubic(5.0);
    let zero = newton_solve(&op, &nl, &Field::constant(op.space.clone(), 0.0), NewtonOptions::default()).unwrap();
    let (spec, _) = linear_spectrum(&op, &nl, &zero.state, 2).unwrap();
    let q = spectral_projection(&op, &nl, &zero, 1).unwrap();
    let mu_stable = spec.values[1];
    assert!(mu_stable > 0.0);
    let u0: Vec<f64> = q.basis[0]
        .values
        .iter()
        .zip(&spec.vectors[1].values)
        .map(|(p, s)| 0.05 * p + 0.05 * s)
        .collect();
    let dt = 1e-3;
    let stepper = Stepper::new(&op, &nl, dt).unwrap();
    let mut u = u0;
    let mut log = Vec::new();
    for k in 1..=400 {
        u = stepper.step(&u, dt).unwrap();
        if k % 50 == 0 {
            let qu = q.apply(&u);
            let z: Vec<f64> = u.iter().zip(&qu).map(|(a, b)| a - b).collect();
            log.push((k as f64 * dt, q.local_norm(&z)));
        }
    }
    let (t0, z0) = log[0];
    let (t1, z1) = *log.last().unwrap();
    let rate = (z0 / z1).ln() / (t1 - t0);
    assert!(rate >= 0.5 * mu_stable, "{rate} vs {mu_stable}");
}

#[test]
fn graph_distance_decreases_with_eps() {
    let p = pair(32);
    let coeff = skewed();
    let nl = Nonlinearity::cubic(20.0);
    let op0 = p.assemble_limit(&coeff).unwrap();
    let a0 = atlas(&op0, 20.0, Strategy::EigenfunctionSeeds);
    let i = psi_index(&a0);
    let sinks0: Vec<Field> = a0.stable().map(|e| e.state.clone()).collect();
    let cfg = SamplingConfig::default();
    let q0 = spectral_projection(&op0, &nl, &a0.entries[i], 1).unwrap();
    let ms0 = sample_unstable_manifold(&q0, &op0, &nl, &sinks0, &cfg).unwrap();
    let mut graph = Vec::new();
    for eps in [0.2, 0.1, 0.05] {
        let op = p.assemble_thin(&coeff, eps).unwrap();
        let e = newton_solve(&op, &nl, &extend(&a0.entries[i].state, &p.thin, eps).unwrap(), NewtonOptions::default()).unwrap();
        let mut q = spectral_projection(&op, &nl, &e, 1).unwrap();
        q.align_with(&[extend(&q0.basis[0], &p.thin, eps).unwrap()]);
        let sinks: Vec<Field> = sinks0.iter().map(|s| extend(s, &p.thin, eps).unwrap()).collect();
        let ms = sample_unstable_manifold(&q, &op, &nl, &sinks, &cfg).unwrap();
        let g = metric(&op, Alpha::Half);
        graph.push(graph_compare(&ms, &ms0, &g).unwrap());
    }
    assert!(graph.windows(2).all(|w| w[1] < w[0]), "{graph:?}");
}

#[test]
fn rank_one_projections_converge_at_first_order() {
    let p = pair(32);
    let coeff = skewed();
    let nl = Nonlinearity::cubic(20.0);
    let op0 = p.assemble_limit(&coeff).unwrap();
    let a0 = atlas(&op0, 20.0, Strategy::EigenfunctionSeeds);
    let e0 = &a0.entries[psi_index(&a0)];
    let q0 = spectral_projection(&op0, &nl, e0, 1).unwrap();
    // First order sets in below ε ≈ 0.02; above it the distance falls faster.
    let eps_list = [0.0125, 0.00625, 0.003125];
    let proj: Vec<f64> = eps_list
        .iter()
        .map(|&eps| {
            let op = p.assemble_thin(&coeff, eps).unwrap();
            let e = newton_solve(&op, &nl, &extend(&e0.state, &p.thin, eps).unwrap(), NewtonOptions::default()).unwrap();
            let q = spectral_projection(&op, &nl, &e, 1).unwrap();
            projection_distance(&q, &q0, &p.thin, &metric(&op, Alpha::Half)).unwrap()
        })
        .collect();
    let fit = peaklab::rate::fit_rate(&eps_list.iter().copied().zip(proj.iter().copied()).collect::<Vec<_>>(), 0.0).unwrap();
    assert!((0.8..=1.2).contains(&fit.slope), "projection slope {}", fit.slope);
}

#[test]
fn manifold_is_tangent_to_the_unstable_direction() {
    let op = pair(32).assemble_limit(&skewed()).unwrap();
    let nl = Nonlinearity::cubic(20.0);
    let a = atlas(&op, 20.0, Strategy::EigenfunctionSeeds);
    let q = spectral_projection(&op, &nl, &a.entries[psi_index(&a)], 1).unwrap();
    let sinks: Vec<Field> = a.stable().map(|e| e.state.clone()).collect();
    let cfg = SamplingConfig {
        amplitudes: vec![0.01, 0.02, 0.04],
        r_loc: 0.5,
        ..Default::default()
    };
    let ms = sample_unstable_manifold(&q, &op, &nl, &sinks, &cfg).unwrap();
    let w: Vec<f64> = ms.graph.iter().filter(|g| g.ray == 0).map(|g| q.local_norm(&g.w.values)).collect();
    assert_eq!(w.len(), 3);
    let order = (w[2] / w[0]).ln() / 4f64.ln();
    assert!(order >= 1.8, "tangency order {order}: {w:?}");
}

#[test]
fn lambda_below_first_eigenvalue_gives_a_point() {
    let (_, a, s) = limit_attractor(0.5, &SamplingConfig::default());
    assert_eq!(a.entries.len(), 1);
    assert_eq!(s.len(), 1);
    assert!(s.points[0].field.max_abs() < 1e-12);
    assert_eq!(s.density_bound, 0.0);
}

#[test]
fn lambda_five_attractor_is_a_segment_of_constants() {
    let (op, a, s) = limit_attractor(5.0, &SamplingConfig::default());
    assert!(!s.incomplete);
    let eq = s.points.iter().filter(|p| matches!(p.provenance, Provenance::Equilibrium { .. })).count();
    assert_eq!(eq, 3);
    let rays: Vec<_> = s.manifolds.iter().flat_map(|m| m.rays.iter()).collect();
    assert_eq!(rays.len(), 2);
    for r in rays {
        let end = &a.entries[r.endpoint.unwrap()];
        assert_eq!(end.morse_index, 0);
        assert!(r.states.last().unwrap().values.iter().zip(&end.state.values).all(|(x, y)| (x - y).abs() <= 1e-4));
    }
    // Every point is a constant between −2 and 2.
    for p in &s.points {
        let v = &p.field.values;
        assert!(v.iter().all(|x| (x - v[0]).abs() < 1e-9 && x.abs() <= 2.0 + 1e-9));
    }
    let json = s.to_json(&metric(&op, Alpha::Half));
    assert_eq!(json["num_equilibria"], 3);
    assert_eq!(json["num_rays"], 2);
    assert_eq!(json["points"].as_array().unwrap().len(), s.len());
    assert!(json["sampling_density_bound"].as_f64().unwrap() > 0.0);
}

#[test]
fn budget_caps_the_sample() {
    let cfg = SamplingConfig {
        spacing: 0.001,
        budget: 100,
        ..Default::default()
    };
    let (_, _, s) = limit_attractor(5.0, &cfg);
    assert!(s.len() <= 100);
    assert_eq!(s.points.iter().filter(|p| matches!(p.provenance, Provenance::Equilibrium { .. })).count(), 3);
}

#[test]
fn hausdorff_of_trivial_samples() {
    let (op, _, s) = limit_attractor(5.0, &SamplingConfig::default());
    let g = metric(&op, Alpha::Half);
    assert_eq!(hausdorff_distance(&s, &s, &g).unwrap(), (0.0, 0.0));

    let point = |c: f64| AttractorSample {
        points: vec![AttractorPoint {
            field: Field::constant(op.space.clone(), c),
            provenance: Provenance::Equilibrium { index: 0 },
        }],
        alpha: Alpha::Half,
        norm_kind: Alpha::Half.interval_norm(),
        density_bound: 0.0,
        incomplete: false,
        manifolds: Vec::new(),
    };
    let one = g.quad_form(&vec![1.0; op.dim()]).sqrt();
    let (d1, d2) = hausdorff_distance(&point(0.0), &point(1.5), &g).unwrap();
    assert!((d1 - 1.5 * one).abs() < 1e-12 && (d2 - 1.5 * one).abs() < 1e-12);

    let mut empty = point(0.0);
    empty.points.clear();
    assert!(hausdorff_distance(&empty, &s, &g).is_err());
}

#[test]
fn refined_resampling_stays_within_the_density_bound() {
    let coarse_cfg = SamplingConfig::default();
    let fine_cfg = SamplingConfig {
        spacing: 0.5 * coarse_cfg.spacing,
        ..Default::default()
    };
    let (op, _, coarse) = limit_attractor(5.0, &coarse_cfg);
    let (_, _, fine) = limit_attractor(5.0, &fine_cfg);
    let g = metric(&op, Alpha::Half);
    let (d1, d2) = hausdorff_distance(&coarse, &fine, &g).unwrap();
    let bound = coarse.density_bound.max(fine.density_bound);
    assert!(d1 <= bound && d2 <= bound, "{d1} {d2} {bound}");
}

#[test]
fn sample_is_nearly_invariant() {
    let (op, _, s) = limit_attractor(5.0, &SamplingConfig::default());
    let nl = Nonlinearity::cubic(5.0);
    let stepper = Stepper::new(&op, &nl, 1e-3).unwrap();
    let moved = AttractorSample {
        points: s
            .points
            .iter()
            .map(|p| AttractorPoint {
                field: p.field.with_values(peaklab::dynamics::evolve_final(&stepper, &p.field.values, 1.0).unwrap()),
                provenance: p.provenance,
            })
            .collect(),
        ..s.clone()
    };
    let g = metric(&op, Alpha::Half);
    let (d, _) = hausdorff_distance(&moved, &s, &g).unwrap();
    assert!(d <= 2.0 * s.density_bound, "{d} vs {}", s.density_bound);
}

#[test]
fn symmetric_problem_gives_a_symmetric_sample() {
    let op = pair(32).assemble_limit(&skewed()).unwrap();
    let a = atlas(&op, 20.0, Strategy::EigenfunctionSeeds);
    let s = assemble_attractor(&a, &op, &Nonlinearity::cubic(20.0), &SamplingConfig::default(), None).unwrap();
    assert!(!s.incomplete);
    let negated = AttractorSample {
        points: s
            .points
            .iter()
            .map(|p| AttractorPoint {
                field: p.field.with_values(p.field.values.iter().map(|v| -v).collect()),
                provenance: p.provenance,
            })
            .collect(),
        ..s.clone()
    };
    let g = metric(&op, Alpha::Half);
    let (d1, d2) = hausdorff_distance(&negated, &s, &g).unwrap();
    assert!(d1 <= 1e-8 && d2 <= 1e-8, "{d1} {d2}");
}

#[test]
fn attraction_of_bounded_sets() {
    let (op, a, s) = limit_attractor(5.0, &SamplingConfig::default());
    let nl = Nonlinearity::cubic(5.0);
    let eq: Vec<Field> = a.entries.iter().map(|e| e.state.clone()).collect();
    let logs = exponential_attraction_check(&op, &nl, &s, &eq, 2.0, 1e-2, 0.1).unwrap();
    assert!(logs.iter().all(|l| l.log.iter().all(|p| p.1 <= 1e-12)));

    let three = Field::constant(op.space.clone(), 3.0);
    let wave = Field::from_fn(op.space.clone(), |x, _| 4.0 * (3.0 * std::f64::consts::PI * x).cos());
    let logs = exponential_attraction_check(&op, &nl, &s, &[three, wave], 3.0, 1e-3, 0.05).unwrap();
    for l in &logs {
        assert!(l.exponent.unwrap() > 0.0);
        let tail = &l.log[l.log.len() / 2..];
        assert!(tail.last().unwrap().1 < 1e-2 * tail[0].1);
    }
    // Distances to a finite sample dip when a trajectory passes a sample
    // point; the constant state approaches an equilibrium directly.
    assert!(logs[0].log.windows(2).all(|w| w[1].1 <= w[0].1));
    // Constant-mode decay rate at 2 is 1 + |f'(2)| = 8.
    assert!((logs[0].exponent.unwrap() - 8.0).abs() < 0.5);

    let huge = Field::constant(op.space.clone(), 1e3);
    assert!(exponential_attraction_check(&op, &nl, &s, &[huge], 2.0, 1e-2, 0.1).is_err());
}

#[test]
fn rate_experiment_contracts() {
    let p = Profile::power(1.0);
    let cfg = AttractorExperiment {
        mesh: MeshParams { n_x: 16, density: 1.0, grading: None },
        ..Default::default()
    };
    let coeff = CoefficientSpec::identity();
    assert!(attractor_rate_experiment(&p, &coeff, &Nonlinearity::cubic(5.0), &[0.2, 0.1], &cfg).is_err());
    let flat = attractor_rate_experiment(&p, &coeff, &Nonlinearity::zero(), &[0.2, 0.1, 0.05], &cfg).unwrap();
    assert!(flat.rows.iter().all(|r| r.forward + r.backward < 1e-12));
    assert!(flat.fit().is_none());
    assert!(!flat.flagged());
}

#[test]
fn attractor_distance_decreases_with_eps() {
    let p = Profile::power(1.0);
    let cfg = AttractorExperiment {
        mesh: MeshParams { n_x: 32, density: 1.0, grading: None },
        ..Default::default()
    };
    let rates = attractor_rate_experiment(&p, &skewed(), &Nonlinearity::cubic(20.0), &[0.2, 0.1, 0.05], &cfg).unwrap();
    assert!(!rates.flagged());
    let fit = rates.fit().unwrap();
    assert!(fit.strictly_decreasing());
    assert!(fit.slope >= 0.4, "{}", fit.slope);
    let mut csv = Vec::new();
    rates.table.write_csv(&mut csv, true).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("eps,distance,norm_kind,mesh_h,flag,slope,r_squared,floor,theta_report\n"));
}
