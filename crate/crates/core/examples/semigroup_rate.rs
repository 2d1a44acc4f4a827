//! Semigroup convergence `‖T_ε(t*)Eu₀ − E T_0(t*)u₀‖` for the heat flow
//! (`f ≡ 0`) and for the cubic `f(s) = 5s − s³`.

use std::f64::consts::PI;
use std::time::Instant;

use peaklab::coefficients::CoefficientSpec;
use peaklab::dynamics::{semigroup_rate_experiment, Nonlinearity};
use peaklab::elliptic::MeshParams;
use peaklab::geometry::Profile;

fn main() -> peaklab::Result<()> {
    let n_x: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(64);
    let params = MeshParams { n_x, density: 1.0, grading: None };
    let profile = Profile::power(1.0);
    let coeff = CoefficientSpec::identity();
    let eps_list = [0.2, 0.1, 0.05, 0.025];
    let cases: [(&str, Nonlinearity, fn(f64) -> f64); 2] = [
        ("linear, u0 = cos(pi x)", Nonlinearity::zero(), |x| (PI * x).cos()),
        ("cubic lambda = 5, u0 = 0.5 + cos(pi x)", Nonlinearity::cubic(5.0), |x| 0.5 + (PI * x).cos()),
    ];
    for (label, nl, u0) in cases {
        let start = Instant::now();
        let rates = semigroup_rate_experiment(&profile, &coeff, &nl, &u0, 1.0, None, &eps_list, params)?;
        println!("== {label}");
        rates.l2.write_csv(std::io::stdout(), false).expect("stdout");
        rates.h1.write_csv(std::io::stdout(), false).expect("stdout");
        println!("richardson: {:?}", rates.richardson);
        println!("elapsed: {:.2?}", start.elapsed());
    }
    Ok(())
}
