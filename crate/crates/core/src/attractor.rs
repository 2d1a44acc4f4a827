//! Unstable spectral projections at equilibria, unstable-manifold sampling
//! by forward integration, attractor samples as the union of equilibria and
//! manifold rays, Hausdorff distances between samples, exponential
//! attraction logs, and the ε-sweep of attractor distances.
//!
//! Distances are measured in a Gram metric `‖u‖² = uᵀGu` on one space: the
//! `L` form `K + M` for `X^{1/2}` or the consistent mass for `X^0`.
//! Projections and manifold coordinates use the lumped mass, the inner
//! product in which the linearization `L̄ = K + M_L diag(1 − f')` is
//! self-adjoint. On the thin domain that inner product is divided by the
//! transverse measure `|B₁|`, so that `⟨Eu, Ev⟩ = ⟨u, v⟩` and coordinates
//! on both sides are comparable.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientSpec;
use crate::dynamics::{Nonlinearity, Stepper};
use crate::elliptic::{check_eps_list, MeshPair, MeshParams, OperatorPair};
use crate::equilibria::{
    enumerate_equilibria, linear_spectrum, newton_solve, EnumerateOptions, Equilibrium, EquilibriumAtlas, NewtonOptions,
    Strategy,
};
use crate::error::{ensure, Error, Result};
use crate::geometry::{Profile, ThinMesh};
use crate::rate::{RateFit, RateTable};
use crate::sparse::{dot, CsrMatrix};
use crate::transfer::{extend, Alpha, Field, NormKind, UNIT_BALL_MEASURE};

/// Gram matrix of `X^α` on the space of `op`.
pub fn metric(op: &OperatorPair, alpha: Alpha) -> CsrMatrix {
    match alpha {
        Alpha::Zero => op.mass.clone(),
        Alpha::Half => op.l_form(),
    }
}

fn metric_distance(g: &CsrMatrix, a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    g.quad_form(&d).max(0.0).sqrt()
}

fn linf_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// `M_L`-orthogonal projection onto the unstable eigenspace of `L̄` at an
/// equilibrium.
#[derive(Debug, Clone)]
pub struct SpectralProjection {
    pub anchor: Field,
    /// Eigenvectors with negative eigenvalue, orthonormal in the scaled
    /// lumped inner product `uᵀM_Lv / unit`.
    pub basis: Vec<Field>,
    pub values: Vec<f64>,
    pub rank: usize,
    /// `|B₁|` on the thin domain, `1` on the interval.
    pub unit: f64,
    lumped: Vec<f64>,
}

impl SpectralProjection {
    /// `Φᵀ M_L u / unit`.
    pub fn coordinates(&self, u: &[f64]) -> Vec<f64> {
        self.basis
            .iter()
            .map(|phi| phi.values.iter().zip(u).zip(&self.lumped).map(|((p, v), m)| p * m * v).sum::<f64>() / self.unit)
            .collect()
    }

    /// `sqrt(uᵀ M_L u / unit)`.
    pub fn local_norm(&self, u: &[f64]) -> f64 {
        (u.iter().zip(&self.lumped).map(|(v, m)| m * v * v).sum::<f64>() / self.unit).sqrt()
    }

    /// `Φ c`.
    pub fn combine(&self, c: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.anchor.len()];
        for (phi, &ci) in self.basis.iter().zip(c) {
            for (o, p) in out.iter_mut().zip(&phi.values) {
                *o += ci * p;
            }
        }
        out
    }

    /// `Q⁺u = Φ Φᵀ M_L u / unit`.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        self.combine(&self.coordinates(u))
    }

    /// `max_i ‖L̄φ_i − μ_i M_L φ_i‖ / ((‖L̄‖∞ + |μ_i| ‖M_L‖∞) ‖φ_i‖)`.
    pub fn form_residual(&self, op: &OperatorPair, nl: &Nonlinearity) -> f64 {
        let d: Vec<f64> = self
            .anchor
            .values
            .iter()
            .zip(&op.lumped)
            .map(|(&u, &m)| m * (1.0 - nl.df(u)))
            .collect();
        let lbar = op.stiffness.add_diagonal(&d);
        let na = (0..lbar.dim())
            .map(|i| lbar.row(i).map(|(_, v)| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        let nb = op.lumped.iter().fold(0.0f64, |m, v| m.max(*v));
        self.basis
            .iter()
            .zip(&self.values)
            .map(|(phi, &mu)| {
                let lv = lbar.mul_vec(&phi.values);
                let r: Vec<f64> = lv.iter().zip(&phi.values).zip(&op.lumped).map(|((a, p), m)| a - mu * m * p).collect();
                dot(&r, &r).sqrt() / ((na + mu.abs() * nb) * dot(&phi.values, &phi.values).sqrt())
            })
            .fold(0.0, f64::max)
    }

    /// Flips each basis vector whose `M_L` inner product with the matching
    /// reference vector is negative.
    pub fn align_with(&mut self, reference: &[Field]) {
        for (phi, r) in self.basis.iter_mut().zip(reference) {
            let c: f64 = phi.values.iter().zip(&r.values).zip(&self.lumped).map(|((p, q), m)| p * m * q).sum::<f64>();
            if c < 0.0 {
                phi.values.iter_mut().for_each(|v| *v = -*v);
            }
        }
    }
}

/// Unstable projection at a hyperbolic equilibrium. `k_max` bounds the rank
/// the caller is prepared to handle.
pub fn spectral_projection(op: &OperatorPair, nl: &Nonlinearity, e: &Equilibrium, k_max: usize) -> Result<SpectralProjection> {
    ensure(e.hyperbolic, || format!("equilibrium is not hyperbolic (gap {:e})", e.gap))?;
    ensure(k_max >= e.morse_index, || {
        format!("k_max = {k_max} is smaller than the Morse index {}", e.morse_index)
    })?;
    let rank = e.morse_index;
    let unit = if e.state.space.is_interval() { 1.0 } else { UNIT_BALL_MEASURE };
    let spectrum = if e.spectrum.vectors.len() >= rank {
        e.spectrum.clone()
    } else {
        linear_spectrum(op, nl, &e.state, 1)?.0
    };
    ensure(spectrum.values.iter().take(rank).all(|v| *v < 0.0), || {
        "attached spectrum disagrees with the Morse index".into()
    })?;
    Ok(SpectralProjection {
        anchor: e.state.clone(),
        basis: spectrum.vectors[..rank]
            .iter()
            .map(|v| v.with_values(v.values.iter().map(|x| x * unit.sqrt()).collect()))
            .collect(),
        values: spectrum.values[..rank].to_vec(),
        rank,
        unit,
        lumped: op.lumped.clone(),
    })
}

/// Operator norm `‖Q_ε⁺E − E Q_0⁺‖` from `X_0` (scaled lumped norm) to
/// `X_ε^α` with Gram matrix `g` divided by `|B₁|`. Both projections have
/// finite rank, so the norm is the largest eigenvalue of a `2r × 2r`
/// problem.
pub fn projection_distance(q_eps: &SpectralProjection, q0: &SpectralProjection, thin: &Arc<ThinMesh>, g: &CsrMatrix) -> Result<f64> {
    let eps = q_eps
        .anchor
        .space
        .eps()
        .ok_or_else(|| Error::SpaceMismatch("first projection must live on the thin domain".into()))?;
    ensure(q0.anchor.space.is_interval(), || "second projection must live on the interval".into())?;
    ensure(q_eps.rank == q0.rank, || format!("ranks differ: {} vs {}", q_eps.rank, q0.rank))?;
    ensure(q0.anchor.len() == thin.num_columns(), || "interval nodes must be the thin mesh columns".into())?;
    let r = q0.rank;
    if r == 0 {
        return Ok(0.0);
    }
    // D = U Wᵀ with U = [Φ_ε, EΦ_0] and W = [Eᵀ M_ε Φ_ε, −M_0 Φ_0].
    let mut u_cols: Vec<Vec<f64>> = q_eps.basis.iter().map(|f| f.values.clone()).collect();
    for phi in &q0.basis {
        u_cols.push(extend(phi, thin, eps)?.values);
    }
    let mut w_cols: Vec<Vec<f64>> = Vec::with_capacity(2 * r);
    for phi in &q_eps.basis {
        let mut acc = vec![0.0; thin.num_columns()];
        let mut v = 0;
        for (j, col) in thin.columns.iter().enumerate() {
            for _ in 0..col.len {
                acc[j] += q_eps.lumped[v] * phi.values[v] / q_eps.unit;
                v += 1;
            }
        }
        w_cols.push(acc);
    }
    for phi in &q0.basis {
        w_cols.push(phi.values.iter().zip(&q0.lumped).map(|(p, m)| -p * m).collect());
    }
    let m = 2 * r;
    let gu_cols: Vec<Vec<f64>> = u_cols.iter().map(|c| g.mul_vec(c)).collect();
    let gu: DMatrix<f64> = DMatrix::from_fn(m, m, |i, j| dot(&u_cols[i], &gu_cols[j]) / q_eps.unit);
    let gw: DMatrix<f64> = DMatrix::from_fn(m, m, |i, j| w_cols[i].iter().zip(&w_cols[j]).zip(&q0.lumped).map(|((a, b), w)| a * b / w).sum());
    // λ_max(G_U G_W) = λ_max(G_U^{1/2} G_W G_U^{1/2}).
    let eu = SymmetricEigen::new(gu);
    let sqrt_u: DMatrix<f64> = &eu.eigenvectors
        * DMatrix::from_diagonal(&eu.eigenvalues.map(|v: f64| v.max(0.0).sqrt()))
        * eu.eigenvectors.transpose();
    let s: DMatrix<f64> = &sqrt_u * gw * &sqrt_u;
    let top = SymmetricEigen::new((&s + s.transpose()) * 0.5).eigenvalues.iter().fold(0.0f64, |a, b| a.max(*b));
    Ok(top.max(0.0).sqrt())
}

/// Parameters shared by manifold sampling and attractor assembly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplingConfig {
    /// Levels of `|v|` at which graph points are recorded, strictly
    /// increasing in `(0, r_loc/2]`.
    pub amplitudes: Vec<f64>,
    /// Radius, in the scaled lumped norm, of the local ball around the
    /// anchor.
    pub r_loc: f64,
    pub dt: f64,
    /// Rays not within `end_tol` (sup norm) of a stable equilibrium by
    /// `t_max` are incomplete.
    pub t_max: f64,
    pub end_tol: f64,
    /// A ray state is recorded once it is `spacing` away (in the metric)
    /// from the last recorded one.
    pub spacing: f64,
    /// Directions on the unit circle for rank-2 anchors.
    pub angles: usize,
    /// Maximum number of points in an assembled sample.
    pub budget: usize,
    pub alpha: Alpha,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            amplitudes: vec![0.05, 0.1, 0.2, 0.4],
            r_loc: 1.0,
            dt: 1e-3,
            t_max: 40.0,
            end_tol: 1e-6,
            spacing: 0.02,
            angles: 8,
            budget: 4000,
            alpha: Alpha::Half,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(self.r_loc > 0.0 && self.dt > 0.0 && self.t_max > 0.0, || {
            "r_loc, dt and t_max must be positive".into()
        })?;
        ensure(self.end_tol > 0.0 && self.spacing > 0.0, || "end_tol and spacing must be positive".into())?;
        ensure(self.angles >= 3, || "need at least 3 angles".into())?;
        ensure(!self.amplitudes.is_empty(), || "amplitudes must not be empty".into())?;
        ensure(self.amplitudes.windows(2).all(|w| w[1] > w[0]), || "amplitudes must be strictly increasing".into())?;
        ensure(self.amplitudes[0] > 0.0 && *self.amplitudes.last().unwrap() <= 0.5 * self.r_loc, || {
            format!("amplitudes must lie in (0, r_loc/2] = (0, {}]", 0.5 * self.r_loc)
        })
    }

    /// Initial displacement of every ray along its direction.
    pub fn start_amplitude(&self) -> f64 {
        (0.01 * self.r_loc).min(0.5 * self.amplitudes[0])
    }
}

/// Unit coefficient vectors of the rays leaving a rank-`r` anchor: `±1`
/// for rank 1, `angles` points of the unit circle for rank 2, and `±e_i`
/// otherwise.
pub fn ray_directions(rank: usize, angles: usize) -> Vec<Vec<f64>> {
    match rank {
        0 => Vec::new(),
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..angles)
            .map(|j| {
                let t = 2.0 * std::f64::consts::PI * j as f64 / angles as f64;
                vec![t.cos(), t.sin()]
            })
            .collect(),
        r => (0..2 * r)
            .map(|k| {
                let mut c = vec![0.0; r];
                c[k / 2] = if k % 2 == 0 { 1.0 } else { -1.0 };
                c
            })
            .collect(),
    }
}

/// One forward trajectory leaving an anchor.
#[derive(Debug, Clone)]
pub struct Ray {
    pub direction: Vec<f64>,
    pub start_amplitude: f64,
    pub times: Vec<f64>,
    /// Recorded states; the first is the initial perturbation.
    pub states: Vec<Field>,
    /// Time at which the ray left the local ball.
    pub exit_time: Option<f64>,
    /// Index into the sink list of the stable equilibrium reached.
    pub endpoint: Option<usize>,
    /// Sup-norm distance from the last state to that equilibrium.
    pub end_distance: f64,
    pub complete: bool,
}

/// Graph point `(v, w)` of the local unstable manifold, with
/// `u = u* + Φv + w` and `|v|` equal to one of the amplitude levels.
#[derive(Debug, Clone)]
pub struct GraphPoint {
    pub ray: usize,
    pub level: usize,
    pub v: Vec<f64>,
    pub w: Field,
}

#[derive(Debug, Clone)]
pub struct ManifoldSample {
    pub anchor: Field,
    pub projection: SpectralProjection,
    pub amplitudes: Vec<f64>,
    pub rays: Vec<Ray>,
    pub graph: Vec<GraphPoint>,
}

impl ManifoldSample {
    pub fn complete(&self) -> bool {
        self.rays.iter().all(|r| r.complete)
    }
}

/// Integrates one ray per direction from `u* + a₀Φc`, recording graph
/// points inside the `r_loc` ball and states along the whole path until
/// the ray reaches one of `sinks`.
pub fn sample_unstable_manifold(
    proj: &SpectralProjection,
    op: &OperatorPair,
    nl: &Nonlinearity,
    sinks: &[Field],
    cfg: &SamplingConfig,
) -> Result<ManifoldSample> {
    cfg.validate()?;
    let directions = ray_directions(proj.rank, cfg.angles);
    let mut sample = ManifoldSample {
        anchor: proj.anchor.clone(),
        projection: proj.clone(),
        amplitudes: cfg.amplitudes.clone(),
        rays: Vec::new(),
        graph: Vec::new(),
    };
    if directions.is_empty() {
        return Ok(sample);
    }
    let stepper = Stepper::new(op, nl, cfg.dt)?;
    let g = metric(op, cfg.alpha);
    let results: Vec<Result<(Ray, Vec<GraphPoint>)>> = directions
        .par_iter()
        .enumerate()
        .map(|(i, c)| integrate_ray(i, c, proj, &stepper, &g, sinks, cfg))
        .collect();
    for r in results {
        let (ray, graph) = r?;
        sample.rays.push(ray);
        sample.graph.extend(graph);
    }
    Ok(sample)
}

#[allow(clippy::too_many_arguments)]
fn integrate_ray(
    index: usize,
    direction: &[f64],
    proj: &SpectralProjection,
    stepper: &Stepper,
    g: &CsrMatrix,
    sinks: &[Field],
    cfg: &SamplingConfig,
) -> Result<(Ray, Vec<GraphPoint>)> {
    let anchor = &proj.anchor.values;
    let a0 = cfg.start_amplitude();
    let offset = proj.combine(&direction.iter().map(|c| a0 * c).collect::<Vec<_>>());
    let mut u: Vec<f64> = anchor.iter().zip(&offset).map(|(a, o)| a + o).collect();
    let local_norm = |x: &[f64]| -> f64 { proj.local_norm(&x.iter().zip(anchor).map(|(a, b)| a - b).collect::<Vec<_>>()) };
    let coords = |x: &[f64]| -> Vec<f64> {
        let d: Vec<f64> = x.iter().zip(anchor).map(|(a, b)| a - b).collect();
        proj.coordinates(&d)
    };
    let mut ray = Ray {
        direction: direction.to_vec(),
        start_amplitude: a0,
        times: vec![0.0],
        states: vec![proj.anchor.with_values(u.clone())],
        exit_time: None,
        endpoint: None,
        end_distance: f64::INFINITY,
        complete: false,
    };
    let mut graph = Vec::new();
    let mut next_level = 0;
    let mut v_old = coords(&u);
    let mut last = u.clone();
    let steps = (cfg.t_max / cfg.dt).ceil() as usize;
    for k in 1..=steps {
        let t = k as f64 * cfg.dt;
        let u_new = stepper.step(&u, cfg.dt)?;
        let m = u_new.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if !(m <= 1e6) {
            return Err(Error::BlowUp { t, max: m });
        }
        if ray.exit_time.is_none() {
            let v_new = coords(&u_new);
            let (r_old, r_new) = (dot(&v_old, &v_old).sqrt(), dot(&v_new, &v_new).sqrt());
            while next_level < cfg.amplitudes.len() && r_old < cfg.amplitudes[next_level] && cfg.amplitudes[next_level] <= r_new {
                let s = (cfg.amplitudes[next_level] - r_old) / (r_new - r_old);
                let us: Vec<f64> = u.iter().zip(&u_new).map(|(a, b)| a + s * (b - a)).collect();
                let vs = coords(&us);
                let tangent = proj.combine(&vs);
                let w: Vec<f64> = us.iter().zip(anchor).zip(&tangent).map(|((x, a), p)| x - a - p).collect();
                graph.push(GraphPoint {
                    ray: index,
                    level: next_level,
                    v: vs,
                    w: proj.anchor.with_values(w),
                });
                next_level += 1;
            }
            if local_norm(&u_new) >= cfg.r_loc {
                ray.exit_time = Some(t);
            }
            v_old = v_new;
        }
        u = u_new;
        let nearest = sinks
            .iter()
            .enumerate()
            .map(|(j, s)| (j, linf_distance(&u, &s.values)))
            .fold((usize::MAX, f64::INFINITY), |best, c| if c.1 < best.1 { c } else { best });
        if nearest.1 <= cfg.end_tol {
            ray.times.push(t);
            ray.states.push(proj.anchor.with_values(u.clone()));
            ray.endpoint = Some(nearest.0);
            ray.end_distance = nearest.1;
            ray.complete = true;
            break;
        }
        if metric_distance(g, &u, &last) >= cfg.spacing {
            ray.times.push(t);
            ray.states.push(proj.anchor.with_values(u.clone()));
            last = u.clone();
        }
        if k == steps {
            ray.times.push(t);
            ray.states.push(proj.anchor.with_values(u.clone()));
            ray.end_distance = nearest.1;
            ray.endpoint = (nearest.0 != usize::MAX).then_some(nearest.0);
        }
    }
    Ok((ray, graph))
}

/// `max` over shared `(ray, level)` graph points of `‖w_ε − E w_0‖` in the
/// metric `g` of the thin side.
pub fn graph_compare(ms_eps: &ManifoldSample, ms_0: &ManifoldSample, g: &CsrMatrix) -> Result<f64> {
    let eps = ms_eps
        .anchor
        .space
        .eps()
        .ok_or_else(|| Error::SpaceMismatch("first sample must live on the thin domain".into()))?;
    let thin = ms_eps.anchor.space.thin_mesh().unwrap().clone();
    ensure(ms_eps.amplitudes == ms_0.amplitudes, || "amplitude grids differ".into())?;
    ensure(ms_eps.rays.len() == ms_0.rays.len(), || "ray families differ".into())?;
    let mut worst = 0.0f64;
    for p in &ms_eps.graph {
        let Some(q) = ms_0.graph.iter().find(|q| q.ray == p.ray && q.level == p.level) else {
            return Err(Error::InvalidInput(format!("no limit graph point for ray {} level {}", p.ray, p.level)));
        };
        let ew = extend(&q.w, &thin, eps)?;
        worst = worst.max(metric_distance(g, &p.w.values, &ew.values));
    }
    ensure(ms_eps.graph.len() == ms_0.graph.len(), || "graph point sets differ".into())?;
    Ok(worst)
}

/// Origin of a sample point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Equilibrium { index: usize },
    Ray { anchor: usize, ray: usize, t: f64 },
}

#[derive(Debug, Clone)]
pub struct AttractorPoint {
    pub field: Field,
    pub provenance: Provenance,
}

/// Finite sample of an attractor.
#[derive(Debug, Clone)]
pub struct AttractorSample {
    pub points: Vec<AttractorPoint>,
    pub alpha: Alpha,
    pub norm_kind: NormKind,
    /// Largest metric gap between consecutive points along any ray,
    /// counting the anchor before the first state and the endpoint
    /// equilibrium after the last.
    pub density_bound: f64,
    /// Some ray did not reach a stable equilibrium.
    pub incomplete: bool,
    /// Manifold samples per atlas entry (empty for stable entries).
    pub manifolds: Vec<ManifoldSample>,
}

impl AttractorSample {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn fields(&self) -> Vec<&Field> {
        self.points.iter().map(|p| &p.field).collect()
    }

    /// Same points, each mapped by `E` onto `thin` at parameter `eps`.
    pub fn extended(&self, thin: &Arc<ThinMesh>, eps: f64) -> Result<AttractorSample> {
        let points = self
            .points
            .iter()
            .map(|p| {
                Ok(AttractorPoint {
                    field: extend(&p.field, thin, eps)?,
                    provenance: p.provenance,
                })
            })
            .collect::<Result<_>>()?;
        Ok(AttractorSample {
            points,
            alpha: self.alpha,
            norm_kind: self.alpha.omega_norm(),
            density_bound: self.density_bound,
            incomplete: self.incomplete,
            manifolds: Vec::new(),
        })
    }

    /// Largest consecutive gap along rays in the metric `g`.
    pub fn density_in(&self, g: &CsrMatrix) -> f64 {
        density(&self.points, g)
    }

    /// Manifest: provenance and norm of every point, norm kind, sampling
    /// density bound, and completeness.
    pub fn to_json(&self, g: &CsrMatrix) -> serde_json::Value {
        let points: Vec<serde_json::Value> = self
            .points
            .iter()
            .map(|p| {
                serde_json::json!({
                    "provenance": p.provenance,
                    "norm": g.quad_form(&p.field.values).max(0.0).sqrt(),
                    "linf": p.field.max_abs(),
                })
            })
            .collect();
        serde_json::json!({
            "norm_kind": self.norm_kind.to_string(),
            "alpha": self.alpha.label(),
            "points": points,
            "num_points": self.points.len(),
            "num_equilibria": self.points.iter().filter(|p| matches!(p.provenance, Provenance::Equilibrium { .. })).count(),
            "num_rays": self.manifolds.iter().map(|m| m.rays.len()).sum::<usize>(),
            "sampling_density_bound": self.density_bound,
            "incomplete": self.incomplete,
        })
    }
}

fn density(points: &[AttractorPoint], g: &CsrMatrix) -> f64 {
    let eq: std::collections::HashMap<usize, &Field> = points
        .iter()
        .filter_map(|p| match p.provenance {
            Provenance::Equilibrium { index } => Some((index, &p.field)),
            _ => None,
        })
        .collect();
    let mut worst = 0.0f64;
    let mut i = 0;
    while i < points.len() {
        let Provenance::Ray { anchor, ray, .. } = points[i].provenance else {
            i += 1;
            continue;
        };
        let mut j = i;
        while j < points.len() && matches!(points[j].provenance, Provenance::Ray { anchor: a, ray: r, .. } if a == anchor && r == ray) {
            j += 1;
        }
        if let Some(a) = eq.get(&anchor) {
            worst = worst.max(metric_distance(g, &a.values, &points[i].field.values));
        }
        for k in i + 1..j {
            worst = worst.max(metric_distance(g, &points[k - 1].field.values, &points[k].field.values));
        }
        i = j;
    }
    worst
}

/// Union of the atlas equilibria and the unstable-manifold rays of every
/// unstable entry, thinned uniformly along the rays to `cfg.budget`
/// points in total. `reference` aligns projection signs with given bases
/// (one entry per atlas entry).
pub fn assemble_attractor(
    atlas: &EquilibriumAtlas,
    op: &OperatorPair,
    nl: &Nonlinearity,
    cfg: &SamplingConfig,
    reference: Option<&[Vec<Field>]>,
) -> Result<AttractorSample> {
    cfg.validate()?;
    ensure(atlas.all_hyperbolic(), || "all equilibria must be hyperbolic".into())?;
    ensure(!atlas.entries.is_empty(), || "atlas is empty".into())?;
    let sinks: Vec<Field> = atlas.stable().map(|e| e.state.clone()).collect();
    let sink_index: Vec<usize> = atlas.entries.iter().enumerate().filter(|(_, e)| e.morse_index == 0).map(|(i, _)| i).collect();
    let mut manifolds = Vec::with_capacity(atlas.entries.len());
    for (i, e) in atlas.entries.iter().enumerate() {
        let mut proj = spectral_projection(op, nl, e, e.morse_index)?;
        if let Some(r) = reference {
            proj.align_with(&r[i]);
        }
        let mut ms = sample_unstable_manifold(&proj, op, nl, &sinks, cfg)?;
        for ray in &mut ms.rays {
            ray.endpoint = ray.endpoint.map(|j| sink_index[j]);
        }
        manifolds.push(ms);
    }
    let incomplete = manifolds.iter().any(|m| !m.complete());

    let mut points: Vec<AttractorPoint> = atlas
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| AttractorPoint {
            field: e.state.clone(),
            provenance: Provenance::Equilibrium { index: i },
        })
        .collect();
    let ray_points: Vec<AttractorPoint> = manifolds
        .iter()
        .enumerate()
        .flat_map(|(a, m)| {
            m.rays.iter().enumerate().flat_map(move |(r, ray)| {
                ray.states.iter().zip(&ray.times).map(move |(s, &t)| AttractorPoint {
                    field: s.clone(),
                    provenance: Provenance::Ray { anchor: a, ray: r, t },
                })
            })
        })
        .collect();
    let room = cfg.budget.saturating_sub(points.len());
    if ray_points.len() <= room {
        points.extend(ray_points);
    } else if room > 0 {
        let n = ray_points.len();
        let mut keep = vec![false; n];
        for k in 0..room {
            keep[(k * n) / room] = true;
        }
        points.extend(ray_points.into_iter().zip(keep).filter(|(_, k)| *k).map(|(p, _)| p));
    }
    let g = metric(op, cfg.alpha);
    let density_bound = density(&points, &g);
    Ok(AttractorSample {
        points,
        alpha: cfg.alpha,
        norm_kind: cfg.alpha.norm_for(&op.space),
        density_bound,
        incomplete,
        manifolds,
    })
}

/// Semi-distance `max_a min_b ‖a − b‖_G` with candidates screened by the
/// Gram expansion `aᵀGa + bᵀGb − 2aᵀGb` and the winner recomputed from
/// the difference.
fn semi_distance(a: &[&[f64]], b: &[&[f64]], gb: &[Vec<f64>], nb: &[f64], g: &CsrMatrix) -> f64 {
    a.par_iter()
        .map(|x| {
            let na = g.quad_form(x);
            let d2: Vec<f64> = gb.iter().zip(nb).map(|(gy, ny)| na + ny - 2.0 * dot(x, gy)).collect();
            let best = d2.iter().fold(f64::INFINITY, |m, v| m.min(*v));
            let slack = 1e-10 * (na + 1.0);
            d2.iter()
                .enumerate()
                .filter(|(_, v)| **v <= best + slack)
                .map(|(j, _)| metric_distance(g, x, b[j]))
                .fold(f64::INFINITY, f64::min)
        })
        .reduce(|| 0.0, f64::max)
}

/// `(dist(A, B), dist(B, A))` in the metric `g` on the space of `A`. An
/// interval-side `B` is extended by `E` when `A` lives on the thin domain.
pub fn hausdorff_distance(a: &AttractorSample, b: &AttractorSample, g: &CsrMatrix) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    let b_ext;
    let b = match (a.points[0].field.space.eps(), b.points[0].field.space.is_interval()) {
        (Some(eps), true) => {
            b_ext = b.extended(a.points[0].field.space.thin_mesh().unwrap(), eps)?;
            &b_ext
        }
        _ => b,
    };
    ensure(a.points[0].field.space.compatible(&b.points[0].field.space), || "samples live on different spaces".into())?;
    let av: Vec<&[f64]> = a.points.iter().map(|p| p.field.values.as_slice()).collect();
    let bv: Vec<&[f64]> = b.points.iter().map(|p| p.field.values.as_slice()).collect();
    let ga: Vec<Vec<f64>> = av.par_iter().map(|x| g.mul_vec(x)).collect();
    let gb: Vec<Vec<f64>> = bv.par_iter().map(|x| g.mul_vec(x)).collect();
    let na: Vec<f64> = av.iter().zip(&ga).map(|(x, gx)| dot(x, gx)).collect();
    let nb: Vec<f64> = bv.iter().zip(&gb).map(|(x, gx)| dot(x, gx)).collect();
    Ok((semi_distance(&av, &bv, &gb, &nb, g), semi_distance(&bv, &av, &ga, &na, g)))
}

/// Distance from `u` to the nearest sample point in the metric `g`.
pub fn distance_to_sample(u: &[f64], sample: &AttractorSample, g: &CsrMatrix) -> f64 {
    sample
        .points
        .par_iter()
        .map(|p| metric_distance(g, u, &p.field.values))
        .reduce(|| f64::INFINITY, f64::min)
}

/// Distance-to-attractor log of one initial state.
#[derive(Debug, Clone, Serialize)]
pub struct AttractionLog {
    pub log: Vec<(f64, f64)>,
    /// `−slope` of `log dist` against `t` over the second half of the log,
    /// when at least three distances there exceed the floor.
    pub exponent: Option<f64>,
}

/// Sup-norm cap on the initial states of [`exponential_attraction_check`].
pub const ATTRACTION_CAP: f64 = 100.0;

/// Evolves every state of `b` to time `t_final`, logging the distance to
/// the sample at multiples of `every` from `t = 1` on.
pub fn exponential_attraction_check(
    op: &OperatorPair,
    nl: &Nonlinearity,
    sample: &AttractorSample,
    b: &[Field],
    t_final: f64,
    dt: f64,
    every: f64,
) -> Result<Vec<AttractionLog>> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    ensure(t_final >= 1.0 && every > 0.0, || "need t_final >= 1 and a positive logging interval".into())?;
    for u in b {
        ensure(u.max_abs() <= ATTRACTION_CAP, || format!("initial state exceeds the sup-norm cap {ATTRACTION_CAP}"))?;
    }
    let stepper = Stepper::new(op, nl, dt)?;
    let g = metric(op, sample.alpha);
    let stride = ((every / dt).round() as usize).max(1);
    let steps = (t_final / dt).round() as usize;
    b.iter()
        .map(|u0| {
            let mut u = u0.values.clone();
            let mut log = Vec::new();
            for k in 1..=steps {
                u = stepper.step(&u, dt)?;
                let t = k as f64 * dt;
                if k % stride == 0 && t >= 1.0 - 1e-12 {
                    log.push((t, distance_to_sample(&u, sample, &g)));
                }
            }
            let floor = 1e-13 * (1.0 + g.quad_form(&u).max(0.0).sqrt());
            let tail: Vec<(f64, f64)> = log[log.len() / 2..].iter().copied().filter(|p| p.1 > floor).collect();
            let exponent = (tail.len() >= 3).then(|| {
                let n = tail.len() as f64;
                let mt = tail.iter().map(|p| p.0).sum::<f64>() / n;
                let ml = tail.iter().map(|p| p.1.ln()).sum::<f64>() / n;
                let sxy: f64 = tail.iter().map(|p| (p.0 - mt) * (p.1.ln() - ml)).sum();
                let sxx: f64 = tail.iter().map(|p| (p.0 - mt).powi(2)).sum();
                -sxy / sxx
            });
            Ok(AttractionLog { log, exponent })
        })
        .collect()
}

/// Settings of the attractor ε-sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttractorExperiment {
    pub mesh: MeshParams,
    pub sampling: SamplingConfig,
    pub strategy: Strategy,
    pub enumerate: EnumerateOptions,
    pub newton: NewtonOptions,
}

impl Default for AttractorExperiment {
    fn default() -> Self {
        Self {
            mesh: MeshParams::default(),
            sampling: SamplingConfig::default(),
            strategy: Strategy::EigenfunctionSeeds,
            enumerate: EnumerateOptions::default(),
            newton: NewtonOptions::default(),
        }
    }
}

/// Per-ε diagnostics of the attractor sweep.
#[derive(Debug, Clone, Serialize)]
pub struct AttractorRow {
    pub eps: f64,
    /// `dist(A_ε, E A_0)`.
    pub forward: f64,
    /// `dist(E A_0, A_ε)`.
    pub backward: f64,
    /// Larger of the two samples' density bounds in the thin metric.
    pub sampling_floor: f64,
    pub points: usize,
    /// Largest graph distance over unstable anchors.
    pub graph: f64,
    /// Largest projection distance over unstable anchors.
    pub projection: f64,
    /// Thin equilibria solved from `E u₀*` keep the Morse index and stay
    /// distinct.
    pub paired: bool,
    pub incomplete: bool,
}

#[derive(Debug, Clone)]
pub struct AttractorRates {
    /// `d(ε) = dist(A_ε, E A_0) + dist(E A_0, A_ε)`, with `theta_report`
    /// holding the local exponent between consecutive ε.
    pub table: RateTable,
    pub rows: Vec<AttractorRow>,
    pub limit: AttractorSample,
    pub limit_atlas: EquilibriumAtlas,
}

impl AttractorRates {
    pub fn fit(&self) -> Option<&RateFit> {
        self.table.fit.as_ref()
    }

    pub fn flagged(&self) -> bool {
        self.limit.incomplete || self.rows.iter().any(|r| !r.paired || r.incomplete)
    }
}

/// Limit attractor and, for every ε, the thin attractor built from the
/// equilibria paired with the limit atlas; `d(ε)` in `X^α`.
pub fn attractor_rate_experiment(
    p: &Profile,
    coeff: &CoefficientSpec,
    nl: &Nonlinearity,
    eps_list: &[f64],
    cfg: &AttractorExperiment,
) -> Result<AttractorRates> {
    check_eps_list(eps_list, coeff.eps0)?;
    cfg.sampling.validate()?;
    let pair = MeshPair::new(p, cfg.mesh)?;
    let op0 = pair.assemble_limit(coeff)?;
    let atlas0 = enumerate_equilibria(&op0, nl, cfg.strategy, cfg.enumerate)?;
    let limit = assemble_attractor(&atlas0, &op0, nl, &cfg.sampling, None)?;
    let alpha = cfg.sampling.alpha;

    let mut rows = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let op = pair.assemble_thin(coeff, eps)?;
        let g = metric(&op, alpha);
        let mut entries = Vec::with_capacity(atlas0.entries.len());
        let mut paired = true;
        for e0 in &atlas0.entries {
            let seed = extend(&e0.state, &pair.thin, eps)?;
            let sol = newton_solve(&op, nl, &seed, cfg.newton)?;
            paired &= sol.morse_index == e0.morse_index && sol.hyperbolic;
            entries.push(sol);
        }
        for i in 0..entries.len() {
            for j in 0..i {
                paired &= metric_distance(&g, &entries[i].state.values, &entries[j].state.values) > cfg.enumerate.dedup_tol;
            }
        }
        let row_base = |forward, backward, floor, points, graph, projection, incomplete| AttractorRow {
            eps,
            forward,
            backward,
            sampling_floor: floor,
            points,
            graph,
            projection,
            paired,
            incomplete,
        };
        if !paired {
            rows.push(row_base(f64::NAN, f64::NAN, f64::NAN, 0, f64::NAN, f64::NAN, false));
            break;
        }
        let atlas = EquilibriumAtlas {
            entries,
            solves: atlas0.entries.len(),
            exhausted: false,
        };
        let reference: Vec<Vec<Field>> = limit
            .manifolds
            .iter()
            .map(|m| m.projection.basis.iter().map(|b| extend(b, &pair.thin, eps)).collect::<Result<_>>())
            .collect::<Result<_>>()?;
        let sample = assemble_attractor(&atlas, &op, nl, &cfg.sampling, Some(&reference))?;
        let ext = limit.extended(&pair.thin, eps)?;
        let (forward, backward) = hausdorff_distance(&sample, &ext, &g)?;
        let floor = sample.density_in(&g).max(ext.density_in(&g));
        let mut graph = 0.0f64;
        let mut projection = 0.0f64;
        for (ms, ms0) in sample.manifolds.iter().zip(&limit.manifolds) {
            if ms.projection.rank > 0 {
                graph = graph.max(graph_compare(ms, ms0, &g)?);
                projection = projection.max(projection_distance(&ms.projection, &ms0.projection, &pair.thin, &g)?);
            }
        }
        rows.push(row_base(forward, backward, floor, sample.len(), graph, projection, sample.incomplete));
    }

    let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.eps, r.forward + r.backward)).collect();
    let floor = 1e-12 * limit.points.iter().map(|p| p.field.max_abs()).fold(1.0, f64::max);
    let mut table = RateTable::from_pairs(&pairs, &alpha.omega_norm().to_string(), pair.thin.max_h(), floor);
    for (k, row) in table.rows.iter_mut().enumerate() {
        let r = &rows[k];
        if !r.paired {
            row.flag = "pairing_failure".into();
        } else if r.incomplete {
            row.flag = "incomplete".into();
        } else if row.distance <= r.sampling_floor {
            row.flag = "sampling_dominated".into();
        }
        if k > 0 {
            let (e0, d0) = pairs[k - 1];
            let (e1, d1) = pairs[k];
            row.theta_report = Some((d0 / d1).ln() / (e0 / e1).ln());
        }
    }
    if rows.iter().any(|r| !r.paired) || rows.len() < eps_list.len() {
        table.fit = None;
    }
    if let Some(f) = table.fit.as_mut() {
        f.theta_report = Some(f.slope);
    }
    Ok(AttractorRates {
        table,
        rows,
        limit,
        limit_atlas: atlas0,
    })
}
