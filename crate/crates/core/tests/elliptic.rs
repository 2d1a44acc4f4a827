use std::f64::consts::PI;
use std::sync::Arc;

use peaklab::coefficients::{CoefficientSpec, HigherTerm, ScalarFn};
use peaklab::elliptic::*;
use peaklab::geometry::{build_interval_mesh, build_thin_mesh, Profile};
use peaklab::rate::fit_rate;
use peaklab::transfer::{extend, Field, Space};

/// `1 + j_{1,1}²` and `1 + j_{1,2}²` (Neumann Bessel modes of `−(x u')'/x`).
const LAMBDA2: f64 = 15.681_970_642_5;
const LAMBDA3: f64 = 50.218_465_254_8;

fn limit_op(n: usize, grading: f64) -> OperatorPair {
    let p = Profile::power(1.0);
    let mesh = build_interval_mesh(n, grading).unwrap();
    assemble_limit(&p, &CoefficientSpec::identity(), &mesh).unwrap()
}

#[test]
fn limit_mass_integrates_the_weight() {
    let op = limit_op(37, 1.5);
    let total: f64 = op.mass.row_sums().iter().sum();
    assert!((total - 0.5).abs() < 1e-10, "{total}");
    let k1 = op.stiffness.mul_vec(&vec![1.0; op.dim()]);
    assert!(k1.iter().all(|v| v.abs() < 1e-12));
    assert!(op.max_asymmetry() <= 1e-12);
}

#[test]
fn unweighted_interval_has_standard_p1_entries() {
    let mut p = Profile::power(1.0);
    p.n = 0; // a^0 = 1
    let mesh = build_interval_mesh(10, 1.0).unwrap();
    let op = assemble_limit(&p, &CoefficientSpec::identity(), &mesh).unwrap();
    let h = 0.1;
    assert!((op.stiffness.get(4, 4) - 2.0 / h).abs() < 1e-10);
    assert!((op.stiffness.get(4, 5) + 1.0 / h).abs() < 1e-10);
    assert!((op.mass.get(4, 4) - 2.0 * h / 3.0).abs() < 1e-12);
    assert!((op.mass.get(4, 5) - h / 6.0).abs() < 1e-12);
}

#[test]
fn non_positive_a01_is_rejected() {
    let mesh = build_interval_mesh(8, 1.0).unwrap();
    let coeff = CoefficientSpec::identity().with_a01(ScalarFn::Affine { c0: 0.5, c1: -1.0 });
    assert!(assemble_limit(&Profile::power(1.0), &coeff, &mesh).is_err());
}

#[test]
fn constants_and_shifted_resolvent() {
    let op = limit_op(32, 1.5);
    let one = Field::constant(op.space.clone(), 1.0);
    let u = solve(&op, &one, 0.0).unwrap();
    assert!(u.values.iter().all(|v| (v - 1.0).abs() < 1e-10));
    let u = solve(&op, &one, 1.0).unwrap();
    assert!(u.values.iter().all(|v| (v - 0.5).abs() < 1e-10));
}

#[test]
fn manufactured_solution_orders() {
    // u = cos(πx) solves −(x u')'/x + u = π²cos(πx) + π sin(πx)/x + cos(πx).
    let rhs = |x: f64| {
        let s = if x > 0.0 { (PI * x).sin() / x } else { PI };
        PI * PI * (PI * x).cos() + PI * s + (PI * x).cos()
    };
    let mut l2 = Vec::new();
    let mut h1 = Vec::new();
    for n in [64, 128, 256, 512] {
        let op = limit_op(n, 1.0);
        let f = Field::from_fn(op.space.clone(), |x, _| rhs(x));
        let u = solve(&op, &f, 0.0).unwrap();
        assert!(galerkin_residual(&op, &u, &f) <= 1e-10);
        let (e0, e1) = interval_errors(&u, |x| (PI * x).cos(), |x| -PI * (PI * x).sin()).unwrap();
        let h = 1.0 / n as f64;
        l2.push((h, e0));
        h1.push((h, e1));
    }
    let s0 = fit_rate(&l2, 0.0).unwrap().slope;
    let s1 = fit_rate(&h1, 0.0).unwrap().slope;
    assert!((s0 - 2.0).abs() <= 0.2, "L2 slope {s0}");
    assert!((s1 - 1.0).abs() <= 0.2, "H1 slope {s1}");
}

#[test]
fn bessel_spectrum_of_the_cusp_limit() {
    let op = limit_op(512, 2.0);
    let eig = eigenpairs(&op, 3).unwrap();
    assert!((eig.values[0] - 1.0).abs() < 1e-8);
    assert!((eig.values[1] - LAMBDA2).abs() / LAMBDA2 < 0.01, "{:?}", eig.values);
    assert!((eig.values[2] - LAMBDA3).abs() / LAMBDA3 < 0.02, "{:?}", eig.values);
    let c = eig.vectors[0].values[0];
    assert!(c > 0.0 && eig.vectors[0].values.iter().all(|v| (v - c).abs() < 1e-8));
    for (k, v) in eig.vectors.iter().enumerate() {
        let mv = op.mass.mul_vec(&v.values);
        let r: Vec<f64> = op.l_form().mul_vec(&v.values).iter().zip(&mv).map(|(a, b)| a - eig.values[k] * b).collect();
        let rn = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        let vn = v.values.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(rn <= 1e-8 * vn * eig.values[k], "pair {k}: {rn}");
        for (j, w) in eig.vectors.iter().enumerate() {
            let g: f64 = w.values.iter().zip(&mv).map(|(a, b)| a * b).sum();
            assert!((g - if j == k { 1.0 } else { 0.0 }).abs() < 1e-9);
        }
    }
}

#[test]
fn flux_vanishes_at_the_cusp() {
    let op = limit_op(32, 1.5);
    let flux = flux_decay_check(&Field::constant(op.space.clone(), 3.0)).unwrap();
    assert_eq!(flux.len(), 10);
    assert!(flux.iter().all(|f| f.1 == 0.0));

    // Smooth manufactured solution: flux near 0 shrinks under refinement.
    let rhs = |x: f64| {
        let s = if x > 0.0 { (PI * x).sin() / x } else { PI };
        PI * PI * (PI * x).cos() + PI * s + (PI * x).cos()
    };
    let mut first = Vec::new();
    for n in [32, 64, 128] {
        let op = limit_op(n, 1.0);
        let u = solve(&op, &Field::from_fn(op.space.clone(), |x, _| rhs(x)), 0.0).unwrap();
        first.push(flux_decay_check(&u).unwrap()[0].1.abs());
    }
    assert!(first[1] < 0.5 * first[0] && first[2] < 0.5 * first[1], "{first:?}");
}

#[test]
fn thin_identity_operator_is_plain_h1() {
    let p = Profile::power(1.0);
    let mesh = Arc::new(build_thin_mesh(&p, 16, 1.0, 1.5).unwrap());
    let mut coeff = CoefficientSpec::identity();
    coeff.eps0 = 1.0 - 1e-9;
    coeff.c0 = 1e-12;
    // ε just below 1 (ε0 < 1 is a standing assumption): ∂_y carries no scaling.
    let op = assemble_thin(&coeff, &mesh, coeff.eps0).unwrap();
    assert!(op.max_asymmetry() <= 1e-12);
    let y: Vec<f64> = mesh.vertices.iter().map(|v| v[1]).collect();
    assert!((op.stiffness.quad_form(&y) - mesh.total_area()).abs() < 1e-8);
    // E(1) is in the kernel; E(x) has energy |Ω| at every ε.
    let one = vec![1.0; op.dim()];
    assert!(op.stiffness.mul_vec(&one).iter().all(|v| v.abs() < 1e-10));
    let area = mesh.total_area();
    for eps in [0.5f64, 0.1, 0.01] {
        let op = assemble_thin(&CoefficientSpec::identity(), &mesh, eps).unwrap();
        let x: Vec<f64> = mesh.vertices.iter().map(|v| v[0]).collect();
        assert!((op.stiffness.quad_form(&x) - area).abs() < 1e-6);
    }
    assert!((area - 1.0).abs() < 1e-12);
}

#[test]
fn ellipticity_is_checked_at_assembly() {
    let p = Profile::power(1.0);
    let mesh = Arc::new(build_thin_mesh(&p, 8, 1.0, 1.5).unwrap());
    let coeff = CoefficientSpec::identity();
    assert!(assemble_thin(&coeff, &mesh, 0.75).is_err());
    assert!(assemble_thin(&coeff, &mesh, 0.0).is_err());
}

#[test]
fn thin_spectrum_starts_at_one() {
    let p = Profile::power(1.0);
    let mesh = Arc::new(build_thin_mesh(&p, 24, 1.0, 1.5).unwrap());
    let op = assemble_thin(&CoefficientSpec::identity(), &mesh, 0.1).unwrap();
    let eig = eigenpairs(&op, 3).unwrap();
    assert!(eig.values[0] >= 1.0 - 1e-8 && (eig.values[0] - 1.0).abs() < 1e-8);
    // Low thin modes approach the limit ones.
    assert!((eig.values[1] - LAMBDA2).abs() / LAMBDA2 < 0.05, "{:?}", eig.values);
}

#[test]
fn mean_zero_split_reassembles() {
    let op = limit_op(40, 1.5);
    let u = Field::from_fn(op.space.clone(), |x, _| (3.0 * x).sin() + x * x);
    let (c, w) = mean_zero_split(&op, &u);
    let mean: f64 = op.lumped.iter().zip(&w.values).map(|(m, v)| m * v).sum();
    assert!(mean.abs() < 1e-12);
    for (a, b) in u.values.iter().zip(&w.values) {
        assert!((a - (b + c)).abs() < 1e-12);
    }
    let kc = op.stiffness.mul_vec(&vec![c; op.dim()]);
    assert!(kc.iter().all(|v| v.abs() < 1e-12));
}

fn y_dependent(x: f64, y: f64, _eps: f64) -> f64 {
    (PI * x).cos() * (1.0 + y)
}

#[test]
fn resolvent_rate_is_linear_in_eps() {
    let (table, check) = resolvent_rate_experiment(
        &Profile::power(1.0),
        &CoefficientSpec::identity(),
        &y_dependent,
        &[0.2, 0.1, 0.05, 0.025],
        MeshParams { n_x: 64, density: 1.0, grading: None },
    )
    .unwrap();
    let fit = table.fit.unwrap();
    assert!((0.8..=1.2).contains(&fit.slope) && fit.r_squared >= 0.98, "{fit:?}");
    assert!(check.passed, "{check:?}");
}

#[test]
fn resolvent_rate_survives_a_mixed_term() {
    let coeff = CoefficientSpec::identity().with_term(HigherTerm::mixed(1, 0.1));
    let (table, _) = resolvent_rate_experiment(
        &Profile::power(1.0),
        &coeff,
        &y_dependent,
        &[0.2, 0.1, 0.05, 0.025],
        MeshParams { n_x: 64, density: 1.0, grading: None },
    )
    .unwrap();
    let fit = table.fit.unwrap();
    assert!((0.8..=1.2).contains(&fit.slope), "{fit:?}");
}

#[test]
fn y_independent_data_gives_a_small_linear_gap() {
    // For f = E(g) the thin solution differs from E u0 only through the
    // slope of the profile, so the distance is far below the y-dependent
    // case and still vanishes linearly.
    let g = |x: f64, _y: f64, _e: f64| (PI * x).cos();
    let params = MeshParams { n_x: 48, density: 1.0, grading: None };
    let (table, _) = resolvent_rate_experiment(&Profile::power(1.0), &CoefficientSpec::identity(), &g, &[0.2, 0.1, 0.05], params).unwrap();
    let (reference, _) =
        resolvent_rate_experiment(&Profile::power(1.0), &CoefficientSpec::identity(), &y_dependent, &[0.2, 0.1, 0.05], params).unwrap();
    for (a, b) in table.rows.iter().zip(&reference.rows) {
        assert!(a.distance < b.distance, "{} vs {}", a.distance, b.distance);
    }
    assert!(table.fit.unwrap().slope > 0.8);
    // Constants are reproduced exactly at every ε.
    let c = |_x: f64, _y: f64, _e: f64| 2.5;
    let (table, _) = resolvent_rate_experiment(&Profile::power(1.0), &CoefficientSpec::identity(), &c, &[0.2, 0.1, 0.05], params).unwrap();
    assert!(table.rows.iter().all(|r| r.distance < 1e-9));
    assert!(table.fit.is_none());
}

#[test]
fn transverse_gradient_vanishes_with_eps() {
    let p = Profile::power(1.0);
    let pair = MeshPair::new(&p, MeshParams { n_x: 48, density: 1.0, grading: None }).unwrap();
    let coeff = CoefficientSpec::identity();
    let mut pairs = Vec::new();
    for eps in [0.2, 0.1, 0.05] {
        let op = pair.assemble_thin(&coeff, eps).unwrap();
        let f = Field::from_fn(op.space.clone(), |x, y| y_dependent(x, y, eps));
        let u = solve(&op, &f, 0.0).unwrap();
        pairs.push((eps, transverse_gradient_norm(&u).unwrap()));
    }
    assert!(fit_rate(&pairs, 0.0).unwrap().slope >= 1.0);
}

#[test]
fn increasing_eps_list_is_rejected() {
    assert!(check_eps_list(&[0.05, 0.1, 0.2], 0.5).is_err());
    assert!(check_eps_list(&[0.2, 0.1], 0.5).is_err());
    assert!(check_eps_list(&[0.6, 0.1, 0.05], 0.5).is_err());
    assert!(check_eps_list(&[0.2, 0.1, 0.05], 0.5).is_ok());
}

#[test]
fn extension_of_limit_solution_is_a_good_thin_guess() {
    let p = Profile::power(1.0);
    let pair = MeshPair::new(&p, MeshParams { n_x: 32, density: 1.0, grading: None }).unwrap();
    let coeff = CoefficientSpec::identity();
    let limit = pair.assemble_limit(&coeff).unwrap();
    let u0 = solve(&limit, &Field::from_fn(limit.space.clone(), |x, _| x), 0.0).unwrap();
    let e = extend(&u0, &pair.thin, 0.1).unwrap();
    assert!(matches!(e.space, Space::Omega { .. }));
}
