//! Limit attractor of the cubic problem at λ = 5 (three equilibria joined
//! by two rays) and the ε-sweep of Hausdorff distances between thin and
//! limit attractors at λ = 20, with and without a mixed coefficient term.

use std::time::Instant;

use peaklab::attractor::{assemble_attractor, attractor_rate_experiment, exponential_attraction_check, AttractorExperiment, SamplingConfig};
use peaklab::coefficients::{CoefficientSpec, HigherTerm, ScalarFn};
use peaklab::dynamics::Nonlinearity;
use peaklab::elliptic::{MeshPair, MeshParams};
use peaklab::equilibria::{enumerate_equilibria, EnumerateOptions, Strategy};
use peaklab::geometry::Profile;
use peaklab::transfer::Field;

fn main() -> peaklab::Result<()> {
    let n_x: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(48);
    let eps_list: Vec<f64> = std::env::args()
        .nth(2)
        .map(|s| s.split(',').map(|v| v.parse().expect("eps value")).collect())
        .unwrap_or_else(|| vec![0.2, 0.1, 0.05]);
    let profile = Profile::power(1.0);
    let mesh = MeshParams { n_x, density: 1.0, grading: None };

    let start = Instant::now();
    let pair = MeshPair::new(&profile, mesh)?;
    let op = pair.assemble_limit(&CoefficientSpec::identity())?;
    let nl = Nonlinearity::cubic(5.0);
    let atlas = enumerate_equilibria(&op, &nl, Strategy::ConstantSeeds, EnumerateOptions::default())?;
    let sample = assemble_attractor(&atlas, &op, &nl, &SamplingConfig::default(), None)?;
    let rays: Vec<String> = sample
        .manifolds
        .iter()
        .flat_map(|m| m.rays.iter())
        .map(|r| format!("endpoint {:?} at sup distance {:.1e}", r.endpoint.map(|i| atlas.entries[i].state.values[0]), r.end_distance))
        .collect();
    println!(
        "lambda = 5: {} points, {} equilibria, rays [{}], density bound {:.3e} ({:.2?})",
        sample.len(),
        atlas.entries.len(),
        rays.join("; "),
        sample.density_bound,
        start.elapsed()
    );
    let logs = exponential_attraction_check(&op, &nl, &sample, &[Field::constant(op.space.clone(), 3.0)], 3.0, 1e-3, 0.05)?;
    println!("  attraction of u = 3: fitted exponent {:?}", logs[0].exponent);

    let base = CoefficientSpec::identity().with_a01(ScalarFn::Affine { c0: 1.0, c1: 0.5 });
    for (label, coeff) in [("A12 = 0", base.clone()), ("A12 = 0.1", base.with_term(HigherTerm::mixed(1, 0.1)))] {
        let start = Instant::now();
        let cfg = AttractorExperiment { mesh, ..Default::default() };
        let rates = attractor_rate_experiment(&profile, &coeff, &Nonlinearity::cubic(20.0), &eps_list, &cfg)?;
        println!("lambda = 20, {label}: limit sample {} points ({:.2?})", rates.limit.len(), start.elapsed());
        for r in &rates.rows {
            println!(
                "  eps = {:<7} d = {:.4e} (forward {:.3e}, backward {:.3e}) floor = {:.3e} graph = {:.3e} projection = {:.3e} points = {}",
                r.eps,
                r.forward + r.backward,
                r.forward,
                r.backward,
                r.sampling_floor,
                r.graph,
                r.projection,
                r.points
            );
        }
        match rates.fit() {
            Some(f) => println!("  slope = {:.3}, r^2 = {:.4}", f.slope, f.r_squared),
            None => println!("  slope undefined"),
        }
    }
    Ok(())
}
