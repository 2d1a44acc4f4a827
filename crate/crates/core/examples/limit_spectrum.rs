//! Smallest eigenvalues of the limit operator on `a(x) = x` against the
//! Bessel values `1 + j_{1,k}²`, and of the thin operator at a few eps.

use peaklab::coefficients::CoefficientSpec;
use peaklab::elliptic::{assemble_limit, eigenpairs, MeshPair, MeshParams};
use peaklab::geometry::{build_interval_mesh, Profile};

const BESSEL: [f64; 4] = [1.0, 15.681970, 50.218456, 104.499757];

fn main() -> peaklab::Result<()> {
    let p = Profile::power(1.0);
    let coeff = CoefficientSpec::identity();
    for n in [64, 128, 256, 512] {
        let op = assemble_limit(&p, &coeff, &build_interval_mesh(n, p.default_grading())?)?;
        let eig = eigenpairs(&op, 4)?;
        let errs: Vec<String> = eig
            .values
            .iter()
            .zip(BESSEL)
            .map(|(l, b)| format!("{l:.5} ({:.1e})", (l - b).abs() / b))
            .collect();
        println!("limit N = {n}: {}", errs.join(", "));
    }
    let pair = MeshPair::new(&p, MeshParams { n_x: 48, density: 1.0, grading: None })?;
    for eps in [0.2, 0.1, 0.05, 0.025] {
        let eig = eigenpairs(&pair.assemble_thin(&coeff, eps)?, 4)?;
        println!("thin eps = {eps}: {:.5?}", eig.values);
    }
    Ok(())
}
