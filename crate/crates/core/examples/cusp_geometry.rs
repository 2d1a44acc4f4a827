//! Hypothesis checks for a few cusp profiles and the size of the thin mesh
//! built on the `a(x) = x` cusp.

use peaklab::coefficients::ScalarFn;
use peaklab::geometry::{build_thin_mesh, check_hypotheses, Profile};

fn main() -> peaklab::Result<()> {
    for exponent in [1.0, 1.5, 2.0, 3.0] {
        let p = Profile::power(exponent);
        let r = check_hypotheses(&p, &ScalarFn::Const(1.0), 256, 1e-8)?;
        let h2 = r.h2_integral.map_or("infinite".to_string(), |v| format!("{v:.6}"));
        println!("a(x) = x^{exponent}: H1 {}, H3 {}, integral of a W^2 {h2}", r.h1_ok, r.h3_ok);
        for m in &r.messages {
            println!("    {m}");
        }
    }
    let p = Profile::power(1.0);
    for n_x in [16, 32, 64] {
        let mesh = build_thin_mesh(&p, n_x, 1.0, p.default_grading())?;
        println!(
            "N_x = {n_x}: {} vertices, {} triangles, {} columns",
            mesh.vertices.len(),
            mesh.triangles.len(),
            mesh.columns.len()
        );
    }
    Ok(())
}
