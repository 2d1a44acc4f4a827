//! Trajectories of `u_t = Lu + λu − u³` on the limit interval with
//! `λ = 5`: the energy decreases and large data enter `|u| <= √5`.

use std::f64::consts::PI;

use peaklab::coefficients::CoefficientSpec;
use peaklab::dynamics::{evolve, Nonlinearity};
use peaklab::elliptic::assemble_limit;
use peaklab::geometry::{build_interval_mesh, Profile};
use peaklab::transfer::Field;

fn main() -> peaklab::Result<()> {
    let p = Profile::power(1.0);
    let op = assemble_limit(&p, &CoefficientSpec::identity(), &build_interval_mesh(64, p.default_grading())?)?;
    let nl = Nonlinearity::cubic(5.0);
    let starts = [
        ("u0 = 10", Field::constant(op.space.clone(), 10.0)),
        ("u0 = 10 cos(3 pi x)", Field::from_fn(op.space.clone(), |x, _| 10.0 * (3.0 * PI * x).cos())),
        ("u0 = 0.1 cos(pi x)", Field::from_fn(op.space.clone(), |x, _| 0.1 * (PI * x).cos())),
    ];
    println!("label,t,Linf,energy");
    for (label, u0) in starts {
        let traj = evolve(&op, &nl, &u0, 5.0, 1e-3, 500)?;
        for r in traj.log.iter().step_by(500) {
            println!("{label},{:.3},{:.6},{:.6}", r.t, r.linf, r.energy.unwrap_or(f64::NAN));
        }
    }
    Ok(())
}
