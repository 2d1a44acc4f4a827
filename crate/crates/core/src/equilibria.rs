//! Equilibria of both problems: damped Newton, enumeration by seeding or
//! λ-continuation, linearized spectra with Morse indices, and ε-pairing.
//!
//! The discrete equilibrium equation matches the time stepper:
//! `R(u) = (K + M_L)u − M_L f(u) = 0`, and the linearization
//! `L̄ = K + M_L diag(1 − f'(u))` is taken against the lumped mass.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientSpec;
use crate::dynamics::{validate_nonlinearity, Nonlinearity};
use crate::eigen::{smallest_eigenpairs, LanczosOptions};
use crate::elliptic::{check_eps_list, MeshPair, OperatorPair};
use crate::error::{Error, Result};
use crate::rate::RateTable;
use crate::sparse::{dot, CsrMatrix, SkylineLdlt};
use crate::transfer::{extend, Alpha, Field};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NewtonOptions {
    pub max_iter: usize,
    /// Bound on the dual-norm residual `sqrt(Rᵀ(K + M_L)⁻¹R)`.
    pub tol: f64,
    /// Numerical hyperbolicity threshold on `min |μ|`.
    pub gap_tol: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            max_iter: 60,
            tol: 1e-10,
            gap_tol: 1e-3,
        }
    }
}

/// Linearized spectrum `L̄ v = μ M_L v`, lowest `morse_index + 2` pairs.
#[derive(Debug, Clone)]
pub struct LinearSpectrum {
    pub values: Vec<f64>,
    /// `M_L`-orthonormal.
    pub vectors: Vec<Field>,
}

#[derive(Debug, Clone)]
pub struct Equilibrium {
    pub state: Field,
    pub spectrum: LinearSpectrum,
    pub morse_index: usize,
    pub hyperbolic: bool,
    pub gap: f64,
    pub residual: f64,
    pub iterations: usize,
}

/// `min |μ|` over the attached spectrum.
pub fn hyperbolicity_gap(e: &Equilibrium) -> f64 {
    e.gap
}

struct Residual<'a> {
    op: &'a OperatorPair,
    nl: &'a Nonlinearity,
    dual: SkylineLdlt,
}

impl<'a> Residual<'a> {
    fn new(op: &'a OperatorPair, nl: &'a Nonlinearity) -> Result<Self> {
        let dual = SkylineLdlt::factor(&op.stiffness.add_diagonal(&op.lumped))?;
        Ok(Self { op, nl, dual })
    }

    fn eval(&self, u: &[f64]) -> Vec<f64> {
        let mut r = self.op.stiffness.mul_vec(u);
        for ((ri, &ui), &m) in r.iter_mut().zip(u).zip(&self.op.lumped) {
            *ri += m * (ui - self.nl.f(ui));
        }
        r
    }

    fn dual_norm(&self, r: &[f64]) -> f64 {
        dot(r, &self.dual.solve(r)).max(0.0).sqrt()
    }

    fn jacobian(&self, u: &[f64]) -> CsrMatrix {
        let d: Vec<f64> = u
            .iter()
            .zip(&self.op.lumped)
            .map(|(&ui, &m)| m * (1.0 - self.nl.df(ui)))
            .collect();
        self.op.stiffness.add_diagonal(&d)
    }
}

/// Damped Newton from `guess`; attaches the linearized spectrum.
pub fn newton_solve(op: &OperatorPair, nl: &Nonlinearity, guess: &Field, opts: NewtonOptions) -> Result<Equilibrium> {
    if guess.len() != op.dim() {
        return Err(Error::SpaceMismatch("Newton guess has the wrong length".into()));
    }
    let res = Residual::new(op, nl)?;
    let mut u = guess.values.clone();
    let mut r = res.eval(&u);
    let mut norm = res.dual_norm(&r);
    let mut iterations = 0;
    while norm > opts.tol {
        if iterations == opts.max_iter {
            return Err(Error::NotConverged {
                what: "Newton",
                iterations,
                residual: norm,
            });
        }
        iterations += 1;
        let jac = SkylineLdlt::factor(&res.jacobian(&u))?;
        let mut delta = r.clone();
        jac.solve_in_place(&mut delta);
        let mut alpha = 1.0;
        loop {
            let trial: Vec<f64> = u.iter().zip(&delta).map(|(a, d)| a - alpha * d).collect();
            let rt = res.eval(&trial);
            let nt = res.dual_norm(&rt);
            if nt.is_finite() && (nt < (1.0 - 1e-4 * alpha) * norm || alpha < 1.0 / 1024.0) {
                u = trial;
                r = rt;
                norm = nt;
                break;
            }
            if alpha < 1.0 / 1024.0 {
                return Err(Error::NotConverged {
                    what: "Newton (non-finite residual)",
                    iterations,
                    residual: nt,
                });
            }
            alpha *= 0.5;
        }
        if u.iter().any(|v| !(v.abs() <= 1e6)) {
            return Err(Error::NotConverged {
                what: "Newton (iterate left the bounded region)",
                iterations,
                residual: norm,
            });
        }
    }
    let state = guess.with_values(u);
    let (spectrum, morse_index) = linear_spectrum(op, nl, &state, 2)?;
    let gap = spectrum.values.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    Ok(Equilibrium {
        state,
        spectrum,
        morse_index,
        hyperbolic: gap >= opts.gap_tol,
        gap,
        residual: norm,
        iterations,
    })
}

/// Lowest `morse + extra` eigenpairs of `(L̄, M_L)` at `u`, and the Morse
/// index from the inertia of `L̄`.
pub fn linear_spectrum(op: &OperatorPair, nl: &Nonlinearity, u: &Field, extra: usize) -> Result<(LinearSpectrum, usize)> {
    let d: Vec<f64> = u
        .values
        .iter()
        .zip(&op.lumped)
        .map(|(&ui, &m)| m * (1.0 - nl.df(ui)))
        .collect();
    let lbar = op.stiffness.add_diagonal(&d);
    let morse = match SkylineLdlt::factor(&lbar) {
        Ok(f) => f.negative_pivots(),
        // Exactly singular: count the spectrum instead.
        Err(_) => usize::MAX,
    };
    let lowest = u
        .values
        .iter()
        .map(|&ui| 1.0 - nl.df(ui))
        .fold(f64::INFINITY, f64::min);
    let shift = lowest - 1.0 - 0.01 * lowest.abs();
    let n = op.dim();
    let want = if morse == usize::MAX { 3 } else { morse + extra };
    let k = want.min(n - 1).max(1);
    let b = CsrMatrix::from_diagonal(&op.lumped);
    let r = smallest_eigenpairs(&lbar, &b, k, shift, LanczosOptions::default())?;
    let morse = if morse == usize::MAX {
        r.values.iter().filter(|v| **v < 0.0).count()
    } else {
        morse
    };
    let vectors = r.vectors.into_iter().map(|v| u.with_values(v)).collect();
    Ok((LinearSpectrum { values: r.values, vectors }, morse))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    ConstantSeeds,
    EigenfunctionSeeds,
    LambdaContinuation,
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant_seeds" => Ok(Strategy::ConstantSeeds),
            "eigenfunction_seeds" => Ok(Strategy::EigenfunctionSeeds),
            "lambda_continuation" => Ok(Strategy::LambdaContinuation),
            other => Err(Error::InvalidInput(format!("unknown strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EnumerateOptions {
    /// Maximum number of Newton solves.
    pub budget: usize,
    pub newton: NewtonOptions,
    /// `X^{1/2}` distance below which two solutions are the same.
    pub dedup_tol: f64,
    /// Number of λ steps between a bifurcation and the target.
    pub continuation_steps: usize,
}

impl Default for EnumerateOptions {
    fn default() -> Self {
        Self {
            budget: 200,
            newton: NewtonOptions::default(),
            dedup_tol: 1e-6,
            continuation_steps: 40,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EquilibriumAtlas {
    pub entries: Vec<Equilibrium>,
    /// Newton solves spent.
    pub solves: usize,
    /// The solve budget ran out before the strategy finished.
    pub exhausted: bool,
}

impl EquilibriumAtlas {
    pub fn stable(&self) -> impl Iterator<Item = &Equilibrium> {
        self.entries.iter().filter(|e| e.morse_index == 0)
    }

    pub fn all_hyperbolic(&self) -> bool {
        self.entries.iter().all(|e| e.hyperbolic)
    }

    /// Index of the entry closest to `u` in the `L` form norm.
    pub fn nearest(&self, op: &OperatorPair, u: &[f64]) -> Option<(usize, f64)> {
        let g = op.l_form();
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let d: Vec<f64> = u.iter().zip(&e.state.values).map(|(a, b)| a - b).collect();
                (i, g.quad_form(&d).max(0.0).sqrt())
            })
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
    }

    /// JSON with one object per entry; `field_ref` names the CSV written
    /// by [`EquilibriumAtlas::write_fields`].
    pub fn to_json(&self, op: &OperatorPair) -> serde_json::Value {
        let entries: Vec<serde_json::Value> = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let v = &e.state.values;
                serde_json::json!({
                    "id": i,
                    "morse_index": e.morse_index,
                    "gap": e.gap,
                    "hyperbolic": e.hyperbolic,
                    "residual": e.residual,
                    "spectrum": e.spectrum.values,
                    "norm_summary": {
                        "L2": op.mass.quad_form(v).max(0.0).sqrt(),
                        "X_half": op.l_form().quad_form(v).max(0.0).sqrt(),
                        "Linf": e.state.max_abs(),
                        "mean": weighted_mean(op, v),
                    },
                    "field_ref": format!("equilibrium_{i}.csv"),
                })
            })
            .collect();
        serde_json::json!({ "entries": entries, "solves": self.solves, "exhausted": self.exhausted })
    }

    pub fn write_fields(&self, dir: &std::path::Path) -> Result<()> {
        for (i, e) in self.entries.iter().enumerate() {
            crate::elliptic::write_field(&dir.join(format!("equilibrium_{i}.csv")), &e.state)?;
        }
        Ok(())
    }
}

fn weighted_mean(op: &OperatorPair, v: &[f64]) -> f64 {
    dot(&op.lumped, v) / op.lumped.iter().sum::<f64>()
}

fn l_distance(g: &CsrMatrix, a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    g.quad_form(&d).max(0.0).sqrt()
}

struct Collector<'a> {
    g: CsrMatrix,
    op: &'a OperatorPair,
    tol: f64,
    found: Vec<Equilibrium>,
}

impl<'a> Collector<'a> {
    /// Adds the new solutions in order; returns how many were new.
    fn absorb(&mut self, sols: Vec<Equilibrium>) -> usize {
        let mut added = 0;
        for e in sols {
            let scale = 1.0 + self.g.quad_form(&e.state.values).max(0.0).sqrt();
            if self
                .found
                .iter()
                .all(|f| l_distance(&self.g, &f.state.values, &e.state.values) > self.tol * scale)
            {
                self.found.push(e);
                added += 1;
            }
        }
        added
    }

    fn finish(mut self, solves: usize, exhausted: bool) -> EquilibriumAtlas {
        let op = self.op;
        // Deterministic order: by weighted mean, then by value at node 0.
        self.found.sort_by(|a, b| {
            let ka = (weighted_mean(op, &a.state.values), a.state.values[0]);
            let kb = (weighted_mean(op, &b.state.values), b.state.values[0]);
            ka.partial_cmp(&kb).unwrap()
        });
        EquilibriumAtlas {
            entries: self.found,
            solves,
            exhausted,
        }
    }
}

fn solve_seeds(op: &OperatorPair, nl: &Nonlinearity, seeds: &[Vec<f64>], opts: NewtonOptions) -> Vec<Equilibrium> {
    seeds
        .par_iter()
        .map(|s| newton_solve(op, nl, &Field { values: s.clone(), space: op.space.clone() }, opts).ok())
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

/// Finds equilibria with the chosen strategy; seeds are solved in
/// parallel and merged in seed order.
pub fn enumerate_equilibria(op: &OperatorPair, nl: &Nonlinearity, strategy: Strategy, opts: EnumerateOptions) -> Result<EquilibriumAtlas> {
    if opts.budget < 3 {
        return Err(Error::InvalidInput(format!("budget {} must allow at least 3 seeds", opts.budget)));
    }
    validate_nonlinearity(nl)?;
    let n = op.dim();
    let mut col = Collector {
        g: op.l_form(),
        op,
        tol: opts.dedup_tol,
        found: Vec::new(),
    };
    let mut solves = 0;

    let mut constants = vec![0.0];
    if let Some(l) = nl.lambda {
        if nl.family == "cubic" && l > 1.0 {
            constants.extend([(l - 1.0).sqrt(), -(l - 1.0).sqrt()]);
        }
    }
    if nl.m_f > 0.0 {
        constants.extend([nl.m_f, -nl.m_f]);
    }
    let seeds: Vec<Vec<f64>> = constants.iter().map(|&c| vec![c; n]).collect();
    let take = seeds.len().min(opts.budget);
    solves += take;
    let sols = solve_seeds(op, nl, &seeds[..take], opts.newton);
    col.absorb(sols);
    let mut exhausted = take < seeds.len();

    match strategy {
        Strategy::ConstantSeeds => {}
        Strategy::EigenfunctionSeeds => {
            let mut frontier = 0;
            while frontier < col.found.len() && !exhausted {
                let anchor = col.found[frontier].clone();
                frontier += 1;
                let seeds = eigen_seeds(&anchor);
                if seeds.is_empty() {
                    continue;
                }
                let take = seeds.len().min(opts.budget - solves);
                exhausted = take < seeds.len();
                solves += take;
                let sols = solve_seeds(op, nl, &seeds[..take], opts.newton);
                col.absorb(sols);
            }
        }
        Strategy::LambdaContinuation => {
            let target = nl
                .lambda
                .filter(|_| nl.family == "cubic")
                .ok_or_else(|| Error::InvalidInput("lambda continuation needs the cubic family".into()))?;
            let branches = continuation_branches(op, target, opts, &mut solves, &mut exhausted)?;
            let sols = solve_seeds(op, nl, &branches, opts.newton);
            solves += branches.len();
            col.absorb(sols);
        }
    }
    Ok(col.finish(solves, exhausted))
}

/// Seeds `u* ± c φ_k` along the unstable directions of `u*` plus the first
/// stable one, at several amplitudes.
fn eigen_seeds(anchor: &Equilibrium) -> Vec<Vec<f64>> {
    let u = &anchor.state.values;
    let scale = 1.0 + anchor.state.max_abs();
    let mut seeds = Vec::new();
    let count = (anchor.morse_index + 1).min(anchor.spectrum.vectors.len());
    for phi in anchor.spectrum.vectors.iter().take(count) {
        let pmax = phi.max_abs().max(1e-300);
        for amp in [0.25, 0.5, 1.0, 2.0] {
            for sign in [1.0, -1.0] {
                let c = sign * amp * scale / pmax;
                seeds.push(u.iter().zip(&phi.values).map(|(a, p)| a + c * p).collect());
            }
        }
    }
    seeds
}

/// Tracks the branches bifurcating from `u = 0` at every eigenvalue
/// `λ_k < target` of `(K + M_L, M_L)` up to `target`; returns the final
/// iterates as seeds.
fn continuation_branches(op: &OperatorPair, target: f64, opts: EnumerateOptions, solves: &mut usize, exhausted: &mut bool) -> Result<Vec<Vec<f64>>> {
    let n = op.dim();
    let b = CsrMatrix::from_diagonal(&op.lumped);
    let a = op.stiffness.add_diagonal(&op.lumped);
    let mut k = 4.min(n - 1);
    let eig = loop {
        let r = smallest_eigenpairs(&a, &b, k, 0.0, LanczosOptions::default())?;
        if r.values[k - 1] >= target || k == n - 1 || k >= 24 {
            break r;
        }
        k = (2 * k).min(n - 1);
    };
    let mut seeds = Vec::new();
    for (lk, phi) in eig.values.iter().zip(&eig.vectors) {
        if *lk >= target - 1e-9 {
            continue;
        }
        let delta0 = (0.05 * (target - lk)).min(0.5);
        let lambda0 = lk + delta0;
        // Amplitude from the cubic normal form: c² = δ ⟨φ, φ⟩ / ⟨φ³, φ⟩.
        let num: f64 = op.lumped.iter().zip(phi).map(|(m, p)| m * p * p).sum();
        let den: f64 = op.lumped.iter().zip(phi).map(|(m, p)| m * p.powi(4)).sum();
        let c = (delta0 * num / den).sqrt();
        for sign in [1.0, -1.0] {
            let mut u: Vec<f64> = phi.iter().map(|p| sign * c * p).collect();
            let steps = opts.continuation_steps.max(1);
            let mut ok = true;
            for s in 0..=steps {
                if *solves >= opts.budget {
                    *exhausted = true;
                    return Ok(seeds);
                }
                *solves += 1;
                let lam = lambda0 + (target - lambda0) * s as f64 / steps as f64;
                let nl = Nonlinearity::cubic(lam);
                match newton_solve(op, &nl, &Field { values: u.clone(), space: op.space.clone() }, opts.newton) {
                    Ok(e) => u = e.state.values,
                    Err(_) => {
                        ok = false;
                        break;
                    }
                }
            }
            if ok {
                seeds.push(u);
            }
        }
    }
    Ok(seeds)
}

/// Pairing of one limit equilibrium across ε.
#[derive(Debug, Clone)]
pub struct Pairing {
    pub limit_index: usize,
    pub table: RateTable,
    /// Thin-side equilibria, one per ε.
    pub states: Vec<Equilibrium>,
    /// Perturbed-seed solves landed on the same equilibrium.
    pub unique: bool,
    /// ε values whose solution left the isolation ball.
    pub failures: Vec<f64>,
}

/// For each limit equilibrium and ε, solves the thin problem from
/// `E u₀*` and records `‖u_ε* − E u₀*‖` in `X^α`.
pub fn pair_and_rate(
    atlas0: &EquilibriumAtlas,
    pair: &MeshPair,
    coeff: &CoefficientSpec,
    nl: &Nonlinearity,
    eps_list: &[f64],
    alpha: Alpha,
    isolation_radius: f64,
    opts: NewtonOptions,
) -> Result<Vec<Pairing>> {
    check_eps_list(eps_list, coeff.eps0)?;
    if let Some(bad) = atlas0.entries.iter().position(|e| !e.hyperbolic) {
        return Err(Error::InvalidInput(format!(
            "limit equilibrium {bad} is not hyperbolic (gap {:e} < {:e})",
            atlas0.entries[bad].gap, opts.gap_tol
        )));
    }
    let ops: Vec<OperatorPair> = eps_list
        .par_iter()
        .map(|&eps| pair.assemble_thin(coeff, eps))
        .collect::<Result<_>>()?;
    let h = pair.thin.max_h();
    atlas0
        .entries
        .iter()
        .enumerate()
        .map(|(i, e0)| {
            let rows: Vec<Result<(f64, Equilibrium, bool)>> = ops
                .par_iter()
                .zip(eps_list.par_iter())
                .map(|(op, &eps)| {
                    let seed = extend(&e0.state, &pair.thin, eps)?;
                    let sol = newton_solve(op, nl, &seed, opts)?;
                    let diff: Vec<f64> = sol.state.values.iter().zip(&seed.values).map(|(a, b)| a - b).collect();
                    let d = match alpha {
                        Alpha::Zero => op.mass.quad_form(&diff),
                        Alpha::Half => op.l_form().quad_form(&diff),
                    }
                    .max(0.0)
                    .sqrt();
                    // Uniqueness inside the ball: a perturbed seed returns.
                    let mut rng = ChaCha8Rng::seed_from_u64(0xe9 + i as u64);
                    let bump = 0.1 * isolation_radius;
                    let perturbed: Vec<f64> = seed.values.iter().map(|v| v + bump * rng.gen_range(-1.0..1.0)).collect();
                    let again = newton_solve(op, nl, &seed.with_values(perturbed), opts)
                        .map(|s| l_distance(&op.l_form(), &s.state.values, &sol.state.values) <= 1e-6 * (1.0 + d))
                        .unwrap_or(false);
                    Ok((d, sol, again))
                })
                .collect();
            let mut pairs = Vec::new();
            let mut states = Vec::new();
            let mut unique = true;
            let mut failures = Vec::new();
            for (row, &eps) in rows.into_iter().zip(eps_list) {
                let (d, sol, again) = row?;
                if d > isolation_radius {
                    failures.push(eps);
                }
                unique &= again;
                pairs.push((eps, d));
                states.push(sol);
            }
            let floor = 1e-12 * (1.0 + e0.state.max_abs());
            let mut table = RateTable::from_pairs(&pairs, &alpha.omega_norm().to_string(), h, floor);
            for r in &mut table.rows {
                if failures.contains(&r.eps) {
                    r.flag = "pairing_failure".into();
                }
            }
            Ok(Pairing {
                limit_index: i,
                table,
                states,
                unique,
                failures,
            })
        })
        .collect()
}

/// CSV `eps,pair_id,distance,slope`.
pub fn write_pairing_csv<W: Write>(pairings: &[Pairing], mut w: W) -> std::io::Result<()> {
    writeln!(w, "eps,pair_id,distance,slope")?;
    for p in pairings {
        let slope = p.table.fit.as_ref().map(|f| format!("{:.6}", f.slope)).unwrap_or_default();
        for r in &p.table.rows {
            writeln!(w, "{:e},{},{:e},{}", r.eps, p.limit_index, r.distance, slope)?;
        }
    }
    Ok(())
}
