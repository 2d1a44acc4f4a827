//! Resolvent convergence `‖L_ε⁻¹f − E L_0⁻¹ M f‖_{H1_eps}` on the cusp
//! `a(x) = x` with `f(x, y) = cos(πx)(1 + y)`.

use std::f64::consts::PI;
use std::time::Instant;

use peaklab::coefficients::CoefficientSpec;
use peaklab::elliptic::{resolvent_rate_experiment, MeshParams};
use peaklab::geometry::Profile;

fn main() -> peaklab::Result<()> {
    let n_x: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(96);
    let density: f64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let profile = Profile::power(1.0);
    let coeff = CoefficientSpec::identity();
    let source = |x: f64, y: f64, _eps: f64| (PI * x).cos() * (1.0 + y);
    let start = Instant::now();
    let (table, check) = resolvent_rate_experiment(
        &profile,
        &coeff,
        &source,
        &[0.2, 0.1, 0.05, 0.025],
        MeshParams { n_x, density, grading: None },
    )?;
    table.write_csv(std::io::stdout(), false).expect("stdout");
    println!("richardson: {check:?}");
    println!("elapsed: {:.2?}", start.elapsed());
    Ok(())
}
