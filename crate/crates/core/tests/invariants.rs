use std::f64::consts::PI;
use std::sync::Arc;

use proptest::prelude::*;

use peaklab::geometry::{build_interval_mesh, build_thin_mesh, Profile};
use peaklab::rate::fit_rate;
use peaklab::transfer::{average, extend, Field, Space};

fn triangle_area(v: &[[f64; 2]], t: [usize; 3]) -> f64 {
    let [a, b, c] = t.map(|i| v[i]);
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn interval_mesh_nodes_increase_from_zero_to_one(n in 4usize..300, g in 1.0f64..3.0) {
        let m = build_interval_mesh(n, g).unwrap();
        prop_assert_eq!(m.nodes.len(), n + 1);
        prop_assert_eq!(m.nodes[0], 0.0);
        prop_assert!((m.nodes[n] - 1.0).abs() < 1e-15);
        prop_assert!(m.nodes.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn thin_mesh_fills_the_linear_cusp(n_x in 8usize..40, density in 0.5f64..3.0, g in 1.0f64..2.5) {
        // For a(x) = x the boundary is straight, so the triangles tile Ω exactly: |Ω| = 1.
        let mesh = build_thin_mesh(&Profile::power(1.0), n_x, density, g).unwrap();
        let areas: Vec<f64> = mesh.triangles.iter().map(|&t| triangle_area(&mesh.vertices, t)).collect();
        prop_assert!(areas.iter().all(|&a| a > 0.0));
        prop_assert!((areas.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert_eq!(mesh.columns.iter().map(|c| c.len).sum::<usize>(), mesh.vertices.len());
        prop_assert!(mesh.vertices.iter().all(|v| v[1].abs() <= v[0] + 1e-14));
    }

    #[test]
    fn average_inverts_extension(
        coeffs in prop::collection::vec(-2.0f64..2.0, 1..6),
        eps in 0.005f64..0.5,
        n_x in 8usize..48,
        exponent in 1.0f64..2.0,
    ) {
        let p = Profile::power(exponent);
        let thin = Arc::new(build_thin_mesh(&p, n_x, 1.0, p.default_grading()).unwrap());
        let space = Space::interval(peaklab::transfer::column_mesh(&thin), p);
        let u0 = Field::from_fn(space, |x, _| {
            coeffs.iter().enumerate().map(|(k, c)| c * (k as f64 * PI * x).cos()).sum()
        });
        let back = average(&extend(&u0, &thin, eps).unwrap()).unwrap();
        for (a, b) in back.values.iter().zip(&u0.values) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn fit_recovers_exact_power_laws(p in 0.2f64..3.0, c in 0.01f64..100.0) {
        let pairs: Vec<(f64, f64)> = [0.2, 0.1, 0.05, 0.025].iter().map(|&e| (e, c * f64::powf(e, p))).collect();
        let fit = fit_rate(&pairs, 0.0).unwrap();
        prop_assert!((fit.slope - p).abs() < 1e-10);
        prop_assert!((fit.intercept - c.ln()).abs() < 1e-9);
        prop_assert!(fit.r_squared > 1.0 - 1e-12);
    }

    #[test]
    fn fit_ignores_points_at_the_floor(p in 0.5f64..2.0, floor in 1e-8f64..1e-5) {
        let mut pairs: Vec<(f64, f64)> = [0.2, 0.1, 0.05].iter().map(|&e| (e, f64::powf(e, p))).collect();
        pairs.push((0.025, 5.0 * floor));
        let fit = fit_rate(&pairs, floor).unwrap();
        prop_assert!((fit.slope - p).abs() < 1e-10);
    }
}
