//! Nonlinearities, IMEX Euler time stepping for both semiflows, the limit
//! Lyapunov energy, and the semigroup-rate sweep.
//!
//! Time derivative and reaction use the lumped mass `M_L`, so a step solves
//! `(M_L + dt(K + M_L)) u⁺ = M_L(u + dt f(u))` with `f` applied nodally.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientSpec;
use crate::elliptic::{check_eps_list, richardson, MeshPair, MeshParams, OperatorPair, RichardsonCheck};
use crate::error::{Error, Result};
use crate::geometry::Profile;
use crate::rate::RateTable;
use crate::sparse::{solve_refined, CsrMatrix, SkylineLdlt};
use crate::transfer::{extend, Alpha, Field};

type ScalarMap = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Reaction term `f` with `f'`, `f''`, primitive `F`, growth exponent `γ`
/// and dissipativity radius `m_f`.
#[derive(Clone)]
pub struct Nonlinearity {
    f: ScalarMap,
    df: ScalarMap,
    d2f: ScalarMap,
    primitive: ScalarMap,
    pub gamma: f64,
    pub m_f: f64,
    pub family: String,
    /// Parameter of the cubic family.
    pub lambda: Option<f64>,
}

impl std::fmt::Debug for Nonlinearity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Nonlinearity")
            .field("family", &self.family)
            .field("lambda", &self.lambda)
            .field("gamma", &self.gamma)
            .field("m_f", &self.m_f)
            .finish()
    }
}

impl Nonlinearity {
    /// `f(s) = λs − s³`.
    pub fn cubic(lambda: f64) -> Self {
        Self {
            f: Arc::new(move |s| lambda * s - s * s * s),
            df: Arc::new(move |s| lambda - 3.0 * s * s),
            d2f: Arc::new(|s| -6.0 * s),
            primitive: Arc::new(move |s| 0.5 * lambda * s * s - 0.25 * s.powi(4)),
            gamma: 3.0,
            m_f: lambda.max(0.0).sqrt(),
            family: "cubic".into(),
            lambda: Some(lambda),
        }
    }

    pub fn zero() -> Self {
        Self {
            f: Arc::new(|_| 0.0),
            df: Arc::new(|_| 0.0),
            d2f: Arc::new(|_| 0.0),
            primitive: Arc::new(|_| 0.0),
            gamma: 1.0,
            m_f: 1.0,
            family: "zero".into(),
            lambda: None,
        }
    }

    /// Arbitrary `f` given with `f'`, `f''` and `F`.
    pub fn custom(
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        df: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d2f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        primitive: impl Fn(f64) -> f64 + Send + Sync + 'static,
        gamma: f64,
        m_f: f64,
    ) -> Self {
        Self {
            f: Arc::new(f),
            df: Arc::new(df),
            d2f: Arc::new(d2f),
            primitive: Arc::new(primitive),
            gamma,
            m_f,
            family: "custom".into(),
            lambda: None,
        }
    }

    pub fn f(&self, s: f64) -> f64 {
        (self.f)(s)
    }

    pub fn df(&self, s: f64) -> f64 {
        (self.df)(s)
    }

    pub fn d2f(&self, s: f64) -> f64 {
        (self.d2f)(s)
    }

    /// `F(s) = ∫₀^s f`.
    pub fn primitive(&self, s: f64) -> f64 {
        (self.primitive)(s)
    }
}

/// Declarative nonlinearity: `family = "cubic" | "zero"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonlinearitySpec {
    pub family: String,
    #[serde(default)]
    pub lambda: Option<f64>,
    /// Overrides the family's dissipativity radius.
    #[serde(default)]
    pub m_f: Option<f64>,
}

impl NonlinearitySpec {
    pub fn build(&self) -> Result<Nonlinearity> {
        let mut nl = match self.family.as_str() {
            "cubic" => Nonlinearity::cubic(
                self.lambda
                    .ok_or_else(|| Error::InvalidInput("nonlinearity.lambda is required for the cubic family".into()))?,
            ),
            "zero" => Nonlinearity::zero(),
            other => return Err(Error::InvalidInput(format!("unknown nonlinearity family `{other}`"))),
        };
        if let Some(m) = self.m_f {
            nl.m_f = m;
        }
        Ok(nl)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NonlinearityReport {
    /// Smallest `C` with `|f'(s)| ≤ C(1 + |s|^{γ−1})` on the samples.
    pub growth_constant: f64,
    pub gamma: f64,
    pub m_f: f64,
    pub samples: usize,
}

/// Samples `s ∈ [−50, 50]`; rejects `f(s)s > 0` for `|s| ≥ m_f`.
pub fn validate_nonlinearity(nl: &Nonlinearity) -> Result<NonlinearityReport> {
    if !(nl.gamma >= 1.0) || !(nl.m_f >= 0.0) {
        return Err(Error::Nonlinearity(format!("need gamma >= 1 and m_f >= 0 (gamma = {}, m_f = {})", nl.gamma, nl.m_f)));
    }
    if let Some(lambda) = nl.lambda {
        if nl.family == "cubic" && (nl.m_f - lambda.max(0.0).sqrt()).abs() > 1e-12 {
            return Err(Error::Nonlinearity(format!("cubic family has m_f = sqrt(lambda), got {}", nl.m_f)));
        }
    }
    const SAMPLES: usize = 4001;
    let mut growth: f64 = 0.0;
    for i in 0..SAMPLES {
        let s = -50.0 + 100.0 * i as f64 / (SAMPLES - 1) as f64;
        let (f, df) = (nl.f(s), nl.df(s));
        if !f.is_finite() || !df.is_finite() {
            return Err(Error::Nonlinearity(format!("f or f' is not finite at s = {s}")));
        }
        growth = growth.max(df.abs() / (1.0 + s.abs().powf(nl.gamma - 1.0)));
        if s.abs() >= nl.m_f && f * s > 1e-10 * (1.0 + s * s) {
            return Err(Error::Nonlinearity(format!("dissipativity fails: f({s}) * {s} = {} > 0", f * s)));
        }
    }
    Ok(NonlinearityReport {
        growth_constant: growth,
        gamma: nl.gamma,
        m_f: nl.m_f,
        samples: SAMPLES,
    })
}

/// IMEX Euler stepper with the factorization of `M_L + dt(K + M_L)` cached.
pub struct Stepper {
    pub dt: f64,
    matrix: CsrMatrix,
    factor: SkylineLdlt,
    lumped: Vec<f64>,
    nl: Nonlinearity,
}

impl Stepper {
    pub fn new(op: &OperatorPair, nl: &Nonlinearity, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidInput(format!("time step {dt} must be positive")));
        }
        let diag: Vec<f64> = op.lumped.iter().map(|m| (1.0 + dt) * m).collect();
        let matrix = op.stiffness.scaled(dt).add_diagonal(&diag);
        let factor = SkylineLdlt::factor(&matrix)?;
        Ok(Self {
            dt,
            matrix,
            factor,
            lumped: op.lumped.clone(),
            nl: nl.clone(),
        })
    }

    /// One step of size `dt`, which must equal the factorized step.
    pub fn step(&self, u: &[f64], dt: f64) -> Result<Vec<f64>> {
        if dt != self.dt {
            return Err(Error::InvalidInput(format!(
                "step {dt} differs from the factorized step {}; build a new stepper",
                self.dt
            )));
        }
        let rhs: Vec<f64> = u
            .iter()
            .zip(&self.lumped)
            .map(|(&v, &m)| m * (v + dt * self.nl.f(v)))
            .collect();
        let (x, rel) = solve_refined(&self.matrix, &self.factor, &rhs);
        if rel > 1e-10 {
            return Err(Error::NotConverged {
                what: "IMEX step solve",
                iterations: 2,
                residual: rel,
            });
        }
        Ok(x)
    }
}

/// One IMEX step; factorizes on every call (use [`Stepper`] in loops).
pub fn step_imex(op: &OperatorPair, nl: &Nonlinearity, u: &Field, dt: f64) -> Result<Field> {
    let s = Stepper::new(op, nl, dt)?;
    Ok(u.with_values(s.step(&u.values, dt)?))
}

/// Lumped discrete energy `½uᵀKu + Σ m_j(½u_j² − F(u_j))`, the nodal
/// quadrature of `∫ aⁿ(½A01u_x² + ½u² − F(u))`.
pub fn energy(op: &OperatorPair, nl: &Nonlinearity, u: &Field) -> f64 {
    let pot: f64 = u
        .values
        .iter()
        .zip(&op.lumped)
        .map(|(&v, &m)| m * (0.5 * v * v - nl.primitive(v)))
        .sum();
    0.5 * op.stiffness.quad_form(&u.values) + pot
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryLog {
    pub t: f64,
    /// `L2` on Ω or `L2_a` on the interval.
    pub l2: f64,
    /// Norm of the `L` form: `H1_eps` on Ω, weighted `H1` on the interval.
    pub h1: f64,
    pub linf: f64,
    /// Interval side only.
    pub energy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Field>,
    /// One entry per step, including `t = 0`.
    pub log: Vec<TrajectoryLog>,
}

impl Trajectory {
    pub fn last(&self) -> &Field {
        self.states.last().expect("trajectory has a state")
    }

    /// CSV `t,L2,H1_or_H1eps,Linf,energy`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,L2,H1_or_H1eps,Linf,energy")?;
        for r in &self.log {
            write!(w, "{:e},{:e},{:e},{:e},", r.t, r.l2, r.h1, r.linf)?;
            match r.energy {
                Some(e) => writeln!(w, "{e:e}")?,
                None => writeln!(w)?,
            }
        }
        Ok(())
    }
}

/// Number of steps of size `dt` reaching `t`; `t` must be a multiple of `dt`.
pub fn step_count(t: f64, dt: f64) -> Result<usize> {
    let n = (t / dt).round();
    if !(dt > 0.0) || !(t >= 0.0) || (n * dt - t).abs() > 1e-9 * t.max(1.0) {
        return Err(Error::InvalidInput(format!("final time {t} is not a multiple of dt = {dt}")));
    }
    Ok(n as usize)
}

const BLOW_UP: f64 = 1e6;

/// Evolves to time `t_final` with fixed `dt`, keeping every
/// `snapshot_every`-th state (and the final one).
pub fn evolve(op: &OperatorPair, nl: &Nonlinearity, u0: &Field, t_final: f64, dt: f64, snapshot_every: usize) -> Result<Trajectory> {
    let stepper = Stepper::new(op, nl, dt)?;
    evolve_with(&stepper, op, u0, t_final, snapshot_every)
}

/// As [`evolve`] with a prebuilt stepper.
pub fn evolve_with(stepper: &Stepper, op: &OperatorPair, u0: &Field, t_final: f64, snapshot_every: usize) -> Result<Trajectory> {
    let dt = stepper.dt;
    let steps = step_count(t_final, dt)?;
    let every = snapshot_every.max(1);
    let l_form = op.l_form();
    let interval = op.space.is_interval();
    let record = |t: f64, v: &[f64]| TrajectoryLog {
        t,
        l2: op.mass.quad_form(v).max(0.0).sqrt(),
        h1: l_form.quad_form(v).max(0.0).sqrt(),
        linf: v.iter().fold(0.0f64, |m, x| m.max(x.abs())),
        energy: interval.then(|| energy(op, &stepper.nl, &u0.with_values(v.to_vec()))),
    };
    let mut u = u0.values.clone();
    let mut times = vec![0.0];
    let mut states = vec![u0.clone()];
    let mut log = vec![record(0.0, &u)];
    for k in 1..=steps {
        u = stepper.step(&u, dt)?;
        let t = k as f64 * dt;
        let row = record(t, &u);
        if !(row.linf <= BLOW_UP) {
            return Err(Error::BlowUp { t, max: row.linf });
        }
        log.push(row);
        if k % every == 0 || k == steps {
            times.push(t);
            states.push(u0.with_values(u.clone()));
        }
    }
    Ok(Trajectory { times, states, log })
}

/// Final state only, without logging.
pub fn evolve_final(stepper: &Stepper, u0: &[f64], t_final: f64) -> Result<Vec<f64>> {
    let steps = step_count(t_final, stepper.dt)?;
    let mut u = u0.to_vec();
    for k in 1..=steps {
        u = stepper.step(&u, stepper.dt)?;
        let m = u.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if !(m <= BLOW_UP) {
            return Err(Error::BlowUp {
                t: k as f64 * stepper.dt,
                max: m,
            });
        }
    }
    Ok(u)
}

/// Semigroup distances for both `α` at every ε.
#[derive(Debug, Clone)]
pub struct SemigroupRates {
    /// `α = 0` (`L2` on Ω).
    pub l2: RateTable,
    /// `α = 1/2` (`H1_eps`).
    pub h1: RateTable,
    pub richardson: RichardsonCheck,
}

impl SemigroupRates {
    pub fn table(&self, alpha: Alpha) -> &RateTable {
        match alpha {
            Alpha::Zero => &self.l2,
            Alpha::Half => &self.h1,
        }
    }
}

fn semigroup_distances(
    pair: &MeshPair,
    coeff: &CoefficientSpec,
    nl: &Nonlinearity,
    u0: &(dyn Fn(f64) -> f64 + Sync),
    t_star: f64,
    dt: f64,
    eps_list: &[f64],
) -> Result<(Vec<[f64; 2]>, f64)> {
    let limit = pair.assemble_limit(coeff)?;
    let init0 = Field::from_fn(limit.space.clone(), |x, _| u0(x));
    let u_limit = evolve_final(&Stepper::new(&limit, nl, dt)?, &init0.values, t_star)?;
    let u_limit = init0.with_values(u_limit);
    let results: Vec<([f64; 2], f64)> = eps_list
        .par_iter()
        .map(|&eps| {
            let op = pair.assemble_thin(coeff, eps)?;
            let init = extend(&init0, &pair.thin, eps)?;
            let u = evolve_final(&Stepper::new(&op, nl, dt)?, &init.values, t_star)?;
            let eu = extend(&u_limit, &pair.thin, eps)?;
            let diff: Vec<f64> = u.iter().zip(&eu.values).map(|(a, b)| a - b).collect();
            let l2 = op.mass.quad_form(&diff).max(0.0).sqrt();
            let h1 = op.l_form().quad_form(&diff).max(0.0).sqrt();
            Ok(([l2, h1], op.l_form().quad_form(&u).max(0.0).sqrt()))
        })
        .collect::<Result<_>>()?;
    let scale = results.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok((results.into_iter().map(|r| r.0).collect(), scale))
}

/// `‖T_ε(t*)Eu₀ − E T_0(t*)u₀‖` in `X^0` and `X^{1/2}` for every ε, with a
/// mesh-halving check at the smallest ε.
#[allow(clippy::too_many_arguments)]
pub fn semigroup_rate_experiment(
    p: &Profile,
    coeff: &CoefficientSpec,
    nl: &Nonlinearity,
    u0: &(dyn Fn(f64) -> f64 + Sync),
    t_star: f64,
    dt: Option<f64>,
    eps_list: &[f64],
    params: MeshParams,
) -> Result<SemigroupRates> {
    check_eps_list(eps_list, coeff.eps0)?;
    if !(0.5..=5.0).contains(&t_star) {
        return Err(Error::InvalidInput(format!("t_star = {t_star} must lie in [0.5, 5]")));
    }
    validate_nonlinearity(nl)?;
    let dt = dt.unwrap_or(t_star / 2000.0);
    let pair = MeshPair::new(p, params)?;
    let (d, scale) = semigroup_distances(&pair, coeff, nl, u0, t_star, dt, eps_list)?;
    let eps_min = *eps_list.last().unwrap();
    let coarse_pair = MeshPair::new(
        p,
        MeshParams {
            n_x: params.n_x / 2,
            ..params
        },
    )?;
    let (dc, _) = semigroup_distances(&coarse_pair, coeff, nl, u0, t_star, dt, &[eps_min])?;
    let h1: Vec<f64> = d.iter().map(|x| x[1]).collect();
    let check = richardson(eps_min, h1[h1.len() - 1], dc[0][1], &h1);
    let floor = 1e-12 * scale;
    let h = pair.thin.max_h();
    let table = |k: usize, kind: Alpha| {
        let pairs: Vec<(f64, f64)> = eps_list.iter().copied().zip(d.iter().map(|x| x[k])).collect();
        let mut t = RateTable::from_pairs(&pairs, &kind.omega_norm().to_string(), h, floor);
        if !check.passed {
            if let Some(last) = t.rows.last_mut().filter(|r| r.flag != "below_floor") {
                last.flag = "discretization_dominated".into();
            }
        }
        t
    };
    Ok(SemigroupRates {
        l2: table(0, Alpha::Zero),
        h1: table(1, Alpha::Half),
        richardson: check,
    })
}
