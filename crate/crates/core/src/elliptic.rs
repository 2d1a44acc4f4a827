//! Assembled operators `L_ε` (fixed domain Ω) and `L_0` (weighted interval),
//! linear and resolvent solves, eigenpairs, and the resolvent-rate sweep.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientSpec;
use crate::eigen::{smallest_eigenpairs, LanczosOptions};
use crate::error::{Error, Result};
use crate::fem;
use crate::geometry::{build_thin_mesh, IntervalMesh, Profile, ThinMesh};
use crate::rate::{fit_rate, RateRow, RateTable};
use crate::sparse::{conjugate_gradient, dot, norm2, solve_refined, CsrMatrix, SkylineLdlt};
use crate::transfer::{average_into, column_mesh, extend, Field, NormKind, Space};

/// Stiffness/mass pair of `L = −div(A∇) + I` on one space. The form of `L`
/// itself is `stiffness + mass`.
#[derive(Debug, Clone)]
pub struct OperatorPair {
    pub stiffness: CsrMatrix,
    pub mass: CsrMatrix,
    /// Row sums of `mass` (lumped mass).
    pub lumped: Vec<f64>,
    pub space: Space,
}

impl OperatorPair {
    fn new(stiffness: CsrMatrix, mass: CsrMatrix, space: Space) -> Self {
        let lumped = mass.row_sums();
        Self {
            stiffness,
            mass,
            lumped,
            space,
        }
    }

    pub fn dim(&self) -> usize {
        self.mass.dim()
    }

    pub fn eps(&self) -> Option<f64> {
        self.space.eps()
    }

    /// `K + M`.
    pub fn l_form(&self) -> CsrMatrix {
        self.stiffness.linear_combination(1.0, &self.mass, 1.0)
    }

    /// Largest entry of `K − Kᵀ` and `M − Mᵀ`.
    pub fn max_asymmetry(&self) -> f64 {
        self.stiffness.max_asymmetry().max(self.mass.max_asymmetry())
    }

    /// Factorization of `K + (1 + shift) M` for repeated solves.
    pub fn resolvent(&self, shift: f64) -> Result<Resolvent> {
        if !(shift >= 0.0) {
            return Err(Error::InvalidInput(format!("resolvent shift {shift} must be >= 0")));
        }
        let matrix = self.stiffness.linear_combination(1.0, &self.mass, 1.0 + shift);
        let factor = SkylineLdlt::factor(&matrix);
        Ok(Resolvent {
            matrix,
            factor,
            mass: self.mass.clone(),
            space: self.space.clone(),
        })
    }

    /// Writes `stiffness.mtx` and `mass.mtx` in coordinate format.
    pub fn export(&self, dir: &std::path::Path) -> Result<()> {
        for (name, m) in [("stiffness.mtx", &self.stiffness), ("mass.mtx", &self.mass)] {
            let path = dir.join(name);
            let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            m.write_coordinate(std::io::BufWriter::new(file)).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Cached factorization of `K + (1 + λ)M`; falls back to CG when the
/// direct factorization broke down or lost accuracy.
pub struct Resolvent {
    matrix: CsrMatrix,
    factor: Result<SkylineLdlt>,
    mass: CsrMatrix,
    space: Space,
}

impl Resolvent {
    /// Solves `(K + (1+λ)M) u = M rhs`.
    pub fn solve(&self, rhs: &Field) -> Result<Field> {
        if !rhs.space.compatible(&self.space) && !same_mesh(&rhs.space, &self.space) {
            return Err(Error::SpaceMismatch("right-hand side lives on a different mesh".into()));
        }
        let b = self.mass.mul_vec(&rhs.values);
        let x = self.solve_vec(&b)?;
        Ok(Field {
            values: x,
            space: self.space.clone(),
        })
    }

    /// Solves `(K + (1+λ)M) x = b` for a raw load vector.
    pub fn solve_vec(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.matrix.dim() {
            return Err(Error::SpaceMismatch(format!("load of length {} for dimension {}", b.len(), self.matrix.dim())));
        }
        match &self.factor {
            Ok(f) => {
                let (x, rel) = solve_refined(&self.matrix, f, b);
                if rel <= 1e-10 {
                    return Ok(x);
                }
                let (x, rel) = conjugate_gradient(&self.matrix, b, 1e-10, 20 * b.len())?;
                if rel <= 1e-8 {
                    Ok(x)
                } else {
                    Err(Error::NotConverged {
                        what: "conjugate gradient fallback",
                        iterations: 20 * b.len(),
                        residual: rel,
                    })
                }
            }
            Err(e) => match conjugate_gradient(&self.matrix, b, 1e-10, 20 * b.len()) {
                Ok((x, rel)) if rel <= 1e-8 => Ok(x),
                _ => Err(match e {
                    Error::Factorization {
                        row,
                        pivot,
                        diag,
                        min_pivot,
                        max_pivot,
                    } => Error::Factorization {
                        row: *row,
                        pivot: *pivot,
                        diag: *diag,
                        min_pivot: *min_pivot,
                        max_pivot: *max_pivot,
                    },
                    other => Error::InvalidInput(other.to_string()),
                }),
            },
        }
    }
}

/// Fields on the thin mesh at different ε share nodes; solves only need the
/// mesh to match.
fn same_mesh(a: &Space, b: &Space) -> bool {
    match (a.thin_mesh(), b.thin_mesh()) {
        (Some(x), Some(y)) => Arc::ptr_eq(x, y) || (x.vertices == y.vertices && x.triangles == y.triangles),
        _ => false,
    }
}

/// Weighted limit pair: `∫ aⁿ A01 u'φ'` and `∫ aⁿ uφ`. No boundary terms:
/// the weighted flux condition at the cusp and `u'(1) = 0` are natural.
pub fn assemble_limit(p: &Profile, coeff: &CoefficientSpec, mesh: &IntervalMesh) -> Result<OperatorPair> {
    for &x in &mesh.nodes {
        let a01 = coeff.a01.eval(x, 0.0);
        if !(a01 > 0.0) {
            return Err(Error::InvalidInput(format!("A01({x}) = {a01} is not positive")));
        }
        if x > 0.0 && !(p.a(x) > 0.0) {
            return Err(Error::InvalidInput(format!("profile vanishes at interior node x = {x}")));
        }
    }
    let (k, m) = fem::interval_matrices(mesh, p, &coeff.a01);
    Ok(OperatorPair::new(k, m, Space::interval(mesh.clone(), p.clone())))
}

/// Thin-side pair at ε: expanded form with `∂_y` scaled by `1/ε`, Neumann.
pub fn assemble_thin(coeff: &CoefficientSpec, mesh: &Arc<ThinMesh>, eps: f64) -> Result<OperatorPair> {
    coeff.validate()?;
    coeff.check_ellipticity_at(eps, mesh.vertices.iter().map(|v| (v[0], v[1])))?;
    let k = fem::thin_stiffness(mesh, coeff, eps);
    let m = fem::thin_mass(mesh);
    Ok(OperatorPair::new(k, m, Space::omega(mesh.clone(), eps)))
}

/// Solves `b(u, φ) + λ(u, φ) = (rhs, φ)`.
pub fn solve(op: &OperatorPair, rhs: &Field, shift: f64) -> Result<Field> {
    op.resolvent(shift)?.solve(rhs)
}

#[derive(Debug, Clone)]
pub struct EigenSet {
    /// Increasing; eigenvalues of `L` (so at least 1).
    pub values: Vec<f64>,
    /// Mass-orthonormal.
    pub vectors: Vec<Field>,
    pub residuals: Vec<f64>,
}

/// `k` smallest eigenpairs of `(K + M) v = λ M v`.
pub fn eigenpairs(op: &OperatorPair, k: usize) -> Result<EigenSet> {
    let r = smallest_eigenpairs(&op.l_form(), &op.mass, k, 0.0, LanczosOptions::default())?;
    Ok(EigenSet {
        values: r.values,
        vectors: r
            .vectors
            .into_iter()
            .map(|v| Field {
                values: v,
                space: op.space.clone(),
            })
            .collect(),
        residuals: r.residuals,
    })
}

/// Splits `u = c + w` with `c` the mass-weighted mean (the `aⁿ`-mean on the
/// interval) and `w` mean-zero.
pub fn mean_zero_split(op: &OperatorPair, u: &Field) -> (f64, Field) {
    let total: f64 = op.lumped.iter().sum();
    let c = dot(&op.lumped, &u.values) / total;
    (c, u.with_values(u.values.iter().map(|v| v - c).collect()))
}

/// `(x, aⁿ(x) u'(x))` at the midpoints of the first ten elements.
pub fn flux_decay_check(u0: &Field) -> Result<Vec<(f64, f64)>> {
    let (mesh, profile) = match &u0.space {
        Space::Interval { mesh, profile } => (mesh, profile),
        _ => return Err(Error::SpaceMismatch("flux check needs an interval field".into())),
    };
    let count = mesh.num_elements().min(10);
    Ok((0..count)
        .map(|e| {
            let (a, b) = mesh.element(e);
            let x = 0.5 * (a + b);
            let du = (u0.values[e + 1] - u0.values[e]) / (b - a);
            (x, profile.weight(x) * du)
        })
        .collect())
}

/// `‖∂_y u‖_{L²(Ω)}` (unscaled).
pub fn transverse_gradient_norm(u: &Field) -> Result<f64> {
    let mesh = u
        .space
        .thin_mesh()
        .ok_or_else(|| Error::SpaceMismatch("transverse gradient needs a thin-domain field".into()))?;
    Ok(fem::thin_dy_energy(mesh, &u.values).sqrt())
}

/// Discretization parameters shared by a thin mesh and its matching interval
/// mesh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshParams {
    /// Number of x-layers minus one.
    pub n_x: usize,
    /// Transverse nodes per unit of `a(x)/h`.
    pub density: f64,
    /// Grading exponent; the profile's default when absent.
    pub grading: Option<f64>,
}

impl Default for MeshParams {
    fn default() -> Self {
        Self {
            n_x: 64,
            density: 1.0,
            grading: None,
        }
    }
}

/// A thin mesh and the interval space on its x-layers, so that
/// `E(V_h^0) ⊂ V_h^ε` exactly.
#[derive(Debug, Clone)]
pub struct MeshPair {
    pub thin: Arc<ThinMesh>,
    pub limit: Space,
}

impl MeshPair {
    pub fn new(p: &Profile, params: MeshParams) -> Result<Self> {
        let grading = params.grading.unwrap_or_else(|| p.default_grading());
        let thin = Arc::new(build_thin_mesh(p, params.n_x, params.density, grading)?);
        let limit = Space::interval(column_mesh(&thin), p.clone());
        Ok(Self { thin, limit })
    }

    pub fn interval_mesh(&self) -> &IntervalMesh {
        self.limit.interval_mesh().expect("limit space is an interval")
    }

    pub fn profile(&self) -> &Profile {
        self.limit.profile()
    }

    pub fn omega(&self, eps: f64) -> Space {
        Space::omega(self.thin.clone(), eps)
    }

    pub fn assemble_limit(&self, coeff: &CoefficientSpec) -> Result<OperatorPair> {
        assemble_limit(self.profile(), coeff, self.interval_mesh())
    }

    pub fn assemble_thin(&self, coeff: &CoefficientSpec, eps: f64) -> Result<OperatorPair> {
        assemble_thin(coeff, &self.thin, eps)
    }
}

/// Source term `f^ε(x, y)` on Ω indexed by ε.
pub type SourceFamily = dyn Fn(f64, f64, f64) -> f64 + Sync;

/// `‖L_ε⁻¹ f^ε − E L_0⁻¹ M f^ε‖_{H1_eps}` on one mesh pair, together with
/// `‖L_ε⁻¹ f^ε‖_{H1_eps}`.
pub fn resolvent_distance(
    pair: &MeshPair,
    coeff: &CoefficientSpec,
    limit: &OperatorPair,
    source: &SourceFamily,
    eps: f64,
) -> Result<(f64, f64)> {
    let op = pair.assemble_thin(coeff, eps)?;
    let f = Field::from_fn(op.space.clone(), |x, y| source(x, y, eps));
    let u_eps = solve(&op, &f, 0.0)?;
    let mf = average_into(&f, &limit.space)?;
    let u0 = solve(limit, &mf, 0.0)?;
    let eu0 = extend(&u0, &pair.thin, eps)?;
    let diff = u_eps.sub(&eu0)?;
    let g = op.l_form();
    Ok((g.quad_form(&diff.values).max(0.0).sqrt(), g.quad_form(&u_eps.values).max(0.0).sqrt()))
}

/// Outcome of repeating the smallest-ε distance on a mesh with half the
/// x-layers.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RichardsonCheck {
    pub eps: f64,
    pub fine: f64,
    pub coarse: f64,
    /// Smallest gap between consecutive distances of the sweep.
    pub smallest_gap: f64,
    pub passed: bool,
}

/// Resolvent-rate sweep. Distances for each ε run in parallel; the result
/// is ordered like `eps_list`.
pub fn resolvent_rate_experiment(
    p: &Profile,
    coeff: &CoefficientSpec,
    source: &SourceFamily,
    eps_list: &[f64],
    params: MeshParams,
) -> Result<(RateTable, RichardsonCheck)> {
    check_eps_list(eps_list, coeff.eps0)?;
    let pair = MeshPair::new(p, params)?;
    let limit = pair.assemble_limit(coeff)?;
    let results: Vec<(f64, f64)> = eps_list
        .par_iter()
        .map(|&eps| resolvent_distance(&pair, coeff, &limit, source, eps))
        .collect::<Result<_>>()?;
    let distances: Vec<f64> = results.iter().map(|r| r.0).collect();
    // Solver-level floor: distances this small are roundoff.
    let floor = 1e-12 * results.iter().map(|r| r.1).fold(0.0, f64::max);

    let eps_min = *eps_list.last().unwrap();
    let coarse_pair = MeshPair::new(
        p,
        MeshParams {
            n_x: params.n_x / 2,
            ..params
        },
    )?;
    let coarse_limit = coarse_pair.assemble_limit(coeff)?;
    let coarse = resolvent_distance(&coarse_pair, coeff, &coarse_limit, source, eps_min)?.0;
    let fine = *distances.last().unwrap();
    let check = richardson(eps_min, fine, coarse, &distances);

    let h = pair.thin.max_h();
    let rows = eps_list
        .iter()
        .zip(&distances)
        .map(|(&eps, &d)| RateRow {
            eps,
            distance: d,
            norm_kind: NormKind::H1Eps.to_string(),
            mesh_h: h,
            flag: if d <= 10.0 * floor {
                "below_floor".into()
            } else if eps == eps_min && !check.passed {
                "discretization_dominated".into()
            } else {
                "ok".into()
            },
            theta_report: None,
        })
        .collect();
    let pairs: Vec<(f64, f64)> = eps_list.iter().copied().zip(distances.iter().copied()).collect();
    let fit = fit_rate(&pairs, floor).ok();
    Ok((RateTable { rows, fit, floor }, check))
}

/// Passes when the mesh-halving change at the smallest ε is at most 10% of
/// the smallest gap between consecutive distances.
pub fn richardson(eps: f64, fine: f64, coarse: f64, distances: &[f64]) -> RichardsonCheck {
    let smallest_gap = distances
        .windows(2)
        .map(|w| (w[0] - w[1]).abs())
        .fold(f64::INFINITY, f64::min);
    RichardsonCheck {
        eps,
        fine,
        coarse,
        smallest_gap,
        passed: (fine - coarse).abs() <= 0.1 * smallest_gap,
    }
}

/// `eps_list` must be strictly decreasing inside `(0, eps0]` with at least
/// three entries.
pub fn check_eps_list(eps_list: &[f64], eps0: f64) -> Result<()> {
    if eps_list.len() < 3 {
        return Err(Error::TooFewPoints(eps_list.len()));
    }
    if eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidInput("eps_list must be strictly decreasing".into()));
    }
    if !(eps_list[eps_list.len() - 1] > 0.0 && eps_list[0] <= eps0 + 1e-15) {
        return Err(Error::InvalidInput(format!("eps_list must lie in (0, eps0 = {eps0}]")));
    }
    Ok(())
}

/// Relative residual `‖(K+M)u − M f‖ / ‖M f‖`.
pub fn galerkin_residual(op: &OperatorPair, u: &Field, rhs: &Field) -> f64 {
    let b = op.mass.mul_vec(&rhs.values);
    let a = op.l_form().mul_vec(&u.values);
    let r: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    norm2(&r) / norm2(&b).max(1e-300)
}

/// Writes a field as CSV to `path`.
pub fn write_field(path: &std::path::Path, u: &Field) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    u.write_csv(&mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Weighted `L2_a` and `H1_a` errors of an interval field against an exact
/// solution and its derivative, by 5-point Gauss per element.
pub fn interval_errors(u: &Field, exact: impl Fn(f64) -> f64, d_exact: impl Fn(f64) -> f64) -> Result<(f64, f64)> {
    let (mesh, profile) = match &u.space {
        Space::Interval { mesh, profile } => (mesh, profile),
        _ => return Err(Error::SpaceMismatch("interval errors need an interval field".into())),
    };
    let v = &u.values;
    let (mut l2, mut h1) = (0.0, 0.0);
    for e in 0..mesh.num_elements() {
        let (a, b) = mesh.element(e);
        let du = (v[e + 1] - v[e]) / (b - a);
        for (x, w) in crate::quadrature::gauss_on(a, b, 5) {
            let uh = v[e] + (x - a) * du;
            let wt = w * profile.weight(x);
            let e0 = uh - exact(x);
            let e1 = du - d_exact(x);
            l2 += wt * e0 * e0;
            h1 += wt * (e0 * e0 + e1 * e1);
        }
    }
    Ok((l2.sqrt(), h1.sqrt()))
}
