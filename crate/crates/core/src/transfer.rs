//! Nodal fields on either mesh, the extension `E` (constant along each
//! transverse section) and averaging `M` (transverse mean), the norms of
//! `X_ε^α` / `X_0^α` for `α ∈ {0, 1/2}`, and the transverse Poincaré ratio.
//!
//! All computation lives on the fixed domain `Ω`; the thin domain `R^ε` only
//! enters through the `1/ε` scaling of `∂_y` in the coefficients.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coefficients::{CoefficientSpec, ScalarFn};
use crate::error::{Error, Result};
use crate::fem;
use crate::geometry::{IntervalMesh, Profile, ThinMesh};
use crate::sparse::CsrMatrix;

/// Measure of the unit transverse ball for `n = 1`: the length of `(−1, 1)`.
pub const UNIT_BALL_MEASURE: f64 = 2.0;

/// Function space a [`Field`] lives in.
#[derive(Debug, Clone)]
pub enum Space {
    /// Weighted space on `(0, 1)` with weight `aⁿ`.
    Interval { mesh: Arc<IntervalMesh>, profile: Arc<Profile> },
    /// `H¹_ε(Ω)`-type space on the fixed domain at parameter ε.
    Omega { mesh: Arc<ThinMesh>, eps: f64 },
}

impl Space {
    pub fn interval(mesh: IntervalMesh, profile: Profile) -> Self {
        Space::Interval {
            mesh: Arc::new(mesh),
            profile: Arc::new(profile),
        }
    }

    pub fn omega(mesh: Arc<ThinMesh>, eps: f64) -> Self {
        Space::Omega { mesh, eps }
    }

    pub fn dim(&self) -> usize {
        match self {
            Space::Interval { mesh, .. } => mesh.num_nodes(),
            Space::Omega { mesh, .. } => mesh.num_vertices(),
        }
    }

    pub fn eps(&self) -> Option<f64> {
        match self {
            Space::Omega { eps, .. } => Some(*eps),
            Space::Interval { .. } => None,
        }
    }

    pub fn is_interval(&self) -> bool {
        matches!(self, Space::Interval { .. })
    }

    pub fn profile(&self) -> &Profile {
        match self {
            Space::Interval { profile, .. } => profile,
            Space::Omega { mesh, .. } => &mesh.profile,
        }
    }

    pub fn interval_mesh(&self) -> Option<&Arc<IntervalMesh>> {
        match self {
            Space::Interval { mesh, .. } => Some(mesh),
            Space::Omega { .. } => None,
        }
    }

    pub fn thin_mesh(&self) -> Option<&Arc<ThinMesh>> {
        match self {
            Space::Omega { mesh, .. } => Some(mesh),
            Space::Interval { .. } => None,
        }
    }

    /// Same mesh (by identity or by equal nodes) and same ε.
    pub fn compatible(&self, other: &Space) -> bool {
        match (self, other) {
            (Space::Interval { mesh: a, .. }, Space::Interval { mesh: b, .. }) => Arc::ptr_eq(a, b) || a.nodes == b.nodes,
            (Space::Omega { mesh: a, eps: ea }, Space::Omega { mesh: b, eps: eb }) => {
                ea == eb && (Arc::ptr_eq(a, b) || (a.vertices == b.vertices && a.triangles == b.triangles))
            }
            _ => false,
        }
    }

    /// Mesh size in `x`.
    pub fn h(&self) -> f64 {
        match self {
            Space::Interval { mesh, .. } => mesh.max_h(),
            Space::Omega { mesh, .. } => mesh.max_h(),
        }
    }

    /// Nodal coordinates `(x, Some(y))` or `(x, None)`.
    pub fn node(&self, i: usize) -> (f64, Option<f64>) {
        match self {
            Space::Interval { mesh, .. } => (mesh.nodes[i], None),
            Space::Omega { mesh, .. } => (mesh.vertices[i][0], Some(mesh.vertices[i][1])),
        }
    }
}

/// Nodal P1 coefficients tagged with their space.
#[derive(Debug, Clone)]
pub struct Field {
    pub values: Vec<f64>,
    pub space: Space,
}

impl Field {
    pub fn new(values: Vec<f64>, space: Space) -> Result<Self> {
        if values.len() != space.dim() {
            return Err(Error::SpaceMismatch(format!(
                "{} values for a space with {} nodes",
                values.len(),
                space.dim()
            )));
        }
        Ok(Self { values, space })
    }

    pub fn constant(space: Space, c: f64) -> Self {
        Self {
            values: vec![c; space.dim()],
            space,
        }
    }

    /// Nodal interpolant of `f(x, y)` (`y = 0` on the interval).
    pub fn from_fn(space: Space, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = (0..space.dim())
            .map(|i| {
                let (x, y) = space.node(i);
                f(x, y.unwrap_or(0.0))
            })
            .collect();
        Self { values, space }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn with_values(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        Self {
            values,
            space: self.space.clone(),
        }
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        if !self.space.compatible(&other.space) {
            return Err(Error::SpaceMismatch("fields live on different spaces".into()));
        }
        Ok(self.with_values(self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect()))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// CSV with columns `node_index,x,y,value` (`y` empty on the interval).
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "node_index,x,y,value")?;
        for (i, v) in self.values.iter().enumerate() {
            match self.space.node(i) {
                (x, Some(y)) => writeln!(w, "{i},{x:.17e},{y:.17e},{v:.17e}")?,
                (x, None) => writeln!(w, "{i},{x:.17e},,{v:.17e}")?,
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NormKind {
    L2,
    #[serde(rename = "H1_eps")]
    H1Eps,
    #[serde(rename = "L2_a")]
    L2A,
    #[serde(rename = "H1_a")]
    H1A,
    Linf,
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormKind::L2 => "L2",
            NormKind::H1Eps => "H1_eps",
            NormKind::L2A => "L2_a",
            NormKind::H1A => "H1_a",
            NormKind::Linf => "Linf",
        })
    }
}

impl std::str::FromStr for NormKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "L2" => Ok(NormKind::L2),
            "H1_eps" => Ok(NormKind::H1Eps),
            "L2_a" => Ok(NormKind::L2A),
            "H1_a" => Ok(NormKind::H1A),
            "Linf" => Ok(NormKind::Linf),
            other => Err(Error::InvalidInput(format!("unknown norm kind '{other}'"))),
        }
    }
}

/// Index `α ∈ {0, 1/2}` of the phase spaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Alpha {
    #[serde(rename = "0")]
    Zero,
    #[serde(rename = "1/2")]
    Half,
}

impl Alpha {
    pub fn omega_norm(self) -> NormKind {
        match self {
            Alpha::Zero => NormKind::L2,
            Alpha::Half => NormKind::H1Eps,
        }
    }

    pub fn interval_norm(self) -> NormKind {
        match self {
            Alpha::Zero => NormKind::L2A,
            Alpha::Half => NormKind::H1A,
        }
    }

    pub fn norm_for(self, space: &Space) -> NormKind {
        if space.is_interval() {
            self.interval_norm()
        } else {
            self.omega_norm()
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Alpha::Zero => "0",
            Alpha::Half => "1/2",
        }
    }
}

impl NormKind {
    pub fn valid_on(self, space: &Space) -> bool {
        match self {
            NormKind::Linf => true,
            NormKind::L2 | NormKind::H1Eps => !space.is_interval(),
            NormKind::L2A | NormKind::H1A => space.is_interval(),
        }
    }
}

/// `(Eu)(x, y) = u(x)`: P1 interpolation of the interval field at each
/// vertex abscissa.
pub fn extend(u0: &Field, target: &Arc<ThinMesh>, eps: f64) -> Result<Field> {
    let mesh = u0
        .space
        .interval_mesh()
        .ok_or_else(|| Error::SpaceMismatch("extend expects an interval field".into()))?;
    let mut values = Vec::with_capacity(target.num_vertices());
    for col in &target.columns {
        let v = mesh.interpolate(&u0.values, col.x);
        values.extend(std::iter::repeat(v).take(col.len));
    }
    Ok(Field {
        values,
        space: Space::omega(target.clone(), eps),
    })
}

/// Interval mesh whose nodes are the x-layers of `mesh`.
pub fn column_mesh(mesh: &ThinMesh) -> IntervalMesh {
    IntervalMesh {
        nodes: mesh.x_layers(),
        grading: mesh.grading,
        quad_order: mesh.quad_order,
    }
}

/// Transverse mean by the trapezoid rule on each column; at the cusp
/// vertex `Mu(0) = u(0, 0)`. The result lives on the column mesh.
pub fn average(u: &Field) -> Result<Field> {
    let mesh = u
        .space
        .thin_mesh()
        .ok_or_else(|| Error::SpaceMismatch("average expects a field on the thin domain".into()))?;
    let values = average_values(mesh, &u.values);
    Ok(Field {
        values,
        space: Space::interval(column_mesh(mesh), mesh.profile.clone()),
    })
}

/// Same as [`average`] but tagging the result with a given interval space,
/// which must have the thin mesh's x-layers as nodes.
pub fn average_into(u: &Field, target: &Space) -> Result<Field> {
    let mesh = u
        .space
        .thin_mesh()
        .ok_or_else(|| Error::SpaceMismatch("average expects a field on the thin domain".into()))?;
    let im = target
        .interval_mesh()
        .ok_or_else(|| Error::SpaceMismatch("average target must be an interval space".into()))?;
    if im.nodes != mesh.x_layers() {
        return Err(Error::SpaceMismatch("interval nodes differ from the thin mesh x-layers".into()));
    }
    Field::new(average_values(mesh, &u.values), target.clone())
}

pub(crate) fn average_values(mesh: &ThinMesh, u: &[f64]) -> Vec<f64> {
    mesh.columns
        .iter()
        .map(|c| {
            let vals = &u[c.first..c.first + c.len];
            if c.len == 1 {
                return vals[0];
            }
            let m = (c.len - 1) as f64;
            let inner: f64 = vals[1..c.len - 1].iter().sum();
            (0.5 * (vals[0] + vals[c.len - 1]) + inner) / m
        })
        .collect()
}

/// Gram matrix `G` of a Hilbert norm on `space`: `‖u‖² = uᵀ G u`.
pub fn gram_matrix(space: &Space, kind: NormKind, coeff: &CoefficientSpec) -> Result<CsrMatrix> {
    if !kind.valid_on(space) || kind == NormKind::Linf {
        return Err(Error::NormMismatch { kind: kind.to_string() });
    }
    Ok(match space {
        Space::Interval { mesh, profile } => {
            let (k, m) = fem::interval_matrices(mesh, profile, &ScalarFn::Const(1.0));
            match kind {
                NormKind::L2A => m,
                _ => k.linear_combination(1.0, &m, 1.0),
            }
        }
        Space::Omega { mesh, eps } => {
            let m = fem::thin_mass(mesh);
            match kind {
                NormKind::L2 => m,
                _ => fem::thin_stiffness(mesh, coeff, *eps).linear_combination(1.0, &m, 1.0),
            }
        }
    })
}

/// Norm of `u` of the given kind. `coeff` supplies `A^ε` for `H1_eps`.
pub fn norm(u: &Field, kind: NormKind, coeff: &CoefficientSpec) -> Result<f64> {
    if !kind.valid_on(&u.space) {
        return Err(Error::NormMismatch { kind: kind.to_string() });
    }
    let v = &u.values;
    let sq = match (&u.space, kind) {
        (_, NormKind::Linf) => return Ok(u.max_abs()),
        (Space::Interval { mesh, profile }, _) => {
            let mut s = 0.0;
            for e in 0..mesh.num_elements() {
                let (a, b) = mesh.element(e);
                let du = (v[e + 1] - v[e]) / (b - a);
                for (x, w) in mesh.quadrature(e) {
                    let t = (x - a) / (b - a);
                    let ux = v[e] + t * (v[e + 1] - v[e]);
                    let mut integrand = ux * ux;
                    if kind == NormKind::H1A {
                        integrand += du * du;
                    }
                    s += w * profile.weight(x) * integrand;
                }
            }
            s
        }
        (Space::Omega { mesh, eps }, _) => {
            let mut s = 0.0;
            for (t, tri) in mesh.triangles.iter().enumerate() {
                let ut = tri.map(|i| v[i]);
                let m = fem::thin_element_mass(mesh.area(t));
                let mut k = [[0.0; 3]; 3];
                if kind == NormKind::H1Eps {
                    k = fem::thin_element_stiffness(mesh, t, coeff, *eps);
                }
                for i in 0..3 {
                    for j in 0..3 {
                        s += ut[i] * (m[i][j] + k[i][j]) * ut[j];
                    }
                }
            }
            s
        }
    };
    Ok(sq.max(0.0).sqrt())
}

/// `‖u − E M u‖²_{L²(Ω)} / ‖∂_y u‖²_{L²(Ω)}`, `0` when both vanish.
pub fn poincare_transverse_gap(u: &Field) -> Result<f64> {
    let mesh = u
        .space
        .thin_mesh()
        .ok_or_else(|| Error::SpaceMismatch("Poincaré ratio needs a thin-domain field".into()))?;
    let mean = average_values(mesh, &u.values);
    let mut diff = u.values.clone();
    for (c, m) in mesh.columns.iter().zip(&mean) {
        for d in &mut diff[c.first..c.first + c.len] {
            *d -= m;
        }
    }
    let num = fem::thin_mass(mesh).quad_form(&diff).max(0.0);
    let den = fem::thin_dy_energy(mesh, &u.values);
    let scale = u.values.iter().map(|x| x * x).sum::<f64>().max(1e-300);
    if den <= 1e-28 * scale {
        if num <= 1e-28 * scale {
            return Ok(0.0);
        }
        return Ok(f64::INFINITY);
    }
    Ok(num / den)
}
