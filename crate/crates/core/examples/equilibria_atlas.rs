//! Equilibria of the cusp limit problem for the cubic `f(s) = λs − s³`,
//! their Morse indices and spectral gaps, and the ε-pairing rate of a
//! nonconstant equilibrium.

use std::time::Instant;

use peaklab::coefficients::{CoefficientSpec, ScalarFn};
use peaklab::dynamics::Nonlinearity;
use peaklab::elliptic::{MeshPair, MeshParams};
use peaklab::equilibria::{enumerate_equilibria, pair_and_rate, EnumerateOptions, NewtonOptions, Strategy};
use peaklab::geometry::Profile;
use peaklab::transfer::Alpha;

fn main() -> peaklab::Result<()> {
    let n_x: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(64);
    let eps_list: Vec<f64> = std::env::args()
        .nth(2)
        .map(|s| s.split(',').map(|v| v.parse().expect("eps value")).collect())
        .unwrap_or_else(|| vec![0.05, 0.025, 0.0125, 0.00625]);
    let profile = Profile::power(1.0);
    let pair = MeshPair::new(&profile, MeshParams { n_x, density: 1.0, grading: None })?;
    for (lambda, strategy) in [(5.0, Strategy::ConstantSeeds), (20.0, Strategy::EigenfunctionSeeds), (20.0, Strategy::LambdaContinuation)] {
        let start = Instant::now();
        let coeff = if lambda > 10.0 {
            CoefficientSpec::identity().with_a01(ScalarFn::Affine { c0: 1.0, c1: 0.5 })
        } else {
            CoefficientSpec::identity()
        };
        let op = pair.assemble_limit(&coeff)?;
        let nl = Nonlinearity::cubic(lambda);
        let atlas = enumerate_equilibria(&op, &nl, strategy, EnumerateOptions::default())?;
        println!("lambda = {lambda}, {strategy:?}: {} equilibria, {} solves ({:.2?})", atlas.entries.len(), atlas.solves, start.elapsed());
        for e in &atlas.entries {
            println!(
                "  u(0) = {:+.5}  u(1) = {:+.5}  morse = {}  gap = {:.5}  residual = {:.1e}",
                e.state.values[0],
                e.state.values[e.state.len() - 1],
                e.morse_index,
                e.gap,
                e.residual
            );
        }
        if lambda > 10.0 && strategy == Strategy::EigenfunctionSeeds {
            let start = Instant::now();
            let pairings = pair_and_rate(&atlas, &pair, &coeff, &nl, &eps_list, Alpha::Half, 0.3, NewtonOptions::default())?;
            for p in &pairings {
                let d: Vec<String> = p.table.rows.iter().map(|r| format!("{:.3e}", r.distance)).collect();
                let slope = p.table.fit.as_ref().map(|f| format!("{:.3}", f.slope)).unwrap_or_else(|| "-".into());
                println!("  pair {}: d = [{}] slope = {slope} unique = {}", p.limit_index, d.join(", "), p.unique);
            }
            println!("  pairing took {:.2?}", start.elapsed());
        }
    }
    Ok(())
}
