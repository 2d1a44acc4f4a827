//! Cusp profiles, the H1–H3 hypothesis checks, and graded meshes of the
//! interval `(0, 1)` and of the fixed domain `Ω = {(x, y): |y| < a(x)}`.

use serde::{Deserialize, Serialize};

use crate::coefficients::ScalarFn;
use crate::error::{ensure, Error, Result};
use crate::quadrature::{gauss_on, integrate_toward};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProfileKind {
    /// `a(x) = x^exponent`
    Power { exponent: f64 },
    /// `a(x) = coefficient · x^exponent`
    ScaledPower { coefficient: f64, exponent: f64 },
    /// Piecewise linear through `(xs[i], values[i])`.
    Tabulated { xs: Vec<f64>, values: Vec<f64> },
}

/// Width function `a(x)` of the cusp with its hypothesis metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub kind: ProfileKind,
    /// Transverse dimension.
    pub n: u32,
    pub alpha1: f64,
    pub alpha2: f64,
    pub k1: f64,
    pub k2: f64,
    pub x0: f64,
}

impl Profile {
    /// `a(x) = x^exponent`, `n = 1`, with the matching H3 data.
    pub fn power(exponent: f64) -> Self {
        Self {
            kind: ProfileKind::Power { exponent },
            n: 1,
            alpha1: exponent,
            alpha2: exponent,
            k1: 1.0,
            k2: 1.0,
            x0: 0.5,
        }
    }

    pub fn with_dimension(mut self, n: u32) -> Self {
        self.n = n;
        self
    }

    pub fn table_range(&self) -> Option<(f64, f64)> {
        match &self.kind {
            ProfileKind::Tabulated { xs, .. } => Some((xs[0], *xs.last().unwrap())),
            _ => None,
        }
    }

    /// `a(x)`; errors only for tabulated profiles queried off-table.
    pub fn eval(&self, x: f64) -> Result<f64> {
        match &self.kind {
            ProfileKind::Power { exponent } => Ok(power(x, *exponent)),
            ProfileKind::ScaledPower {
                coefficient,
                exponent,
            } => Ok(coefficient * power(x, *exponent)),
            ProfileKind::Tabulated { xs, values } => {
                let (lo, hi) = (xs[0], *xs.last().unwrap());
                if x < lo || x > hi {
                    return Err(Error::OutOfRange { x, lo, hi });
                }
                let k = match xs.binary_search_by(|p| p.partial_cmp(&x).unwrap()) {
                    Ok(k) => return Ok(values[k]),
                    Err(k) => k,
                };
                let t = (x - xs[k - 1]) / (xs[k] - xs[k - 1]);
                Ok(values[k - 1] + t * (values[k] - values[k - 1]))
            }
        }
    }

    /// `a(x)` for `x` already known to lie in the profile's domain.
    #[inline]
    pub fn a(&self, x: f64) -> f64 {
        self.eval(x.clamp(0.0, 1.0)).unwrap_or(0.0)
    }

    /// `aⁿ(x)`, the weight of the limit problem.
    #[inline]
    pub fn weight(&self, x: f64) -> f64 {
        self.a(x).powi(self.n as i32)
    }

    /// Exponent used to pick the default grading.
    pub fn leading_exponent(&self) -> f64 {
        self.alpha1
    }

    /// Default mesh grading: 1.5 for `α1 ≤ 1.5`, else 2.
    pub fn default_grading(&self) -> f64 {
        if self.alpha1 <= 1.5 {
            1.5
        } else {
            2.0
        }
    }

    fn validate_shape(&self) -> Result<()> {
        ensure(self.n >= 1, || "transverse dimension n must be >= 1".into())?;
        ensure(self.x0 > 0.0 && self.x0 < 1.0, || format!("x0 = {} must lie in (0, 1)", self.x0))?;
        ensure(self.k1 > 0.0 && self.k2 > 0.0, || "K1 and K2 must be positive".into())?;
        if let ProfileKind::Tabulated { xs, values } = &self.kind {
            ensure(xs.len() >= 2 && xs.len() == values.len(), || {
                "tabulated profile needs matching xs/values with >= 2 entries".into()
            })?;
            ensure(xs.windows(2).all(|w| w[1] > w[0]), || "tabulated xs must increase".into())?;
        }
        Ok(())
    }
}

fn power(x: f64, e: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.powf(e)
    }
}

/// Declarative profile as it appears in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSpec {
    pub kind: String,
    #[serde(default)]
    pub exponent: Option<f64>,
    #[serde(default)]
    pub coefficient: Option<f64>,
    #[serde(default)]
    pub xs: Option<Vec<f64>>,
    #[serde(default)]
    pub values: Option<Vec<f64>>,
    #[serde(default = "one_u32")]
    pub n: u32,
    #[serde(default)]
    pub alpha1: Option<f64>,
    #[serde(default)]
    pub alpha2: Option<f64>,
    #[serde(rename = "K1", default)]
    pub k1: Option<f64>,
    #[serde(rename = "K2", default)]
    pub k2: Option<f64>,
    #[serde(default)]
    pub x0: Option<f64>,
}

fn one_u32() -> u32 {
    1
}

impl ProfileSpec {
    pub fn build(&self) -> Result<Profile> {
        let kind = match self.kind.as_str() {
            "power" => ProfileKind::Power {
                exponent: self.exponent.ok_or_else(|| Error::InvalidInput("profile.exponent missing".into()))?,
            },
            "scaled_power" => ProfileKind::ScaledPower {
                coefficient: self
                    .coefficient
                    .ok_or_else(|| Error::InvalidInput("profile.coefficient missing".into()))?,
                exponent: self.exponent.ok_or_else(|| Error::InvalidInput("profile.exponent missing".into()))?,
            },
            "tabulated" => ProfileKind::Tabulated {
                xs: self.xs.clone().ok_or_else(|| Error::InvalidInput("profile.xs missing".into()))?,
                values: self
                    .values
                    .clone()
                    .ok_or_else(|| Error::InvalidInput("profile.values missing".into()))?,
            },
            other => return Err(Error::InvalidInput(format!("profile.kind '{other}' is unknown"))),
        };
        let e = self.exponent.unwrap_or(1.0);
        let c = self.coefficient.unwrap_or(1.0);
        let p = Profile {
            kind,
            n: self.n,
            alpha1: self.alpha1.unwrap_or(e),
            alpha2: self.alpha2.unwrap_or(e),
            k1: self.k1.unwrap_or(c),
            k2: self.k2.unwrap_or(c),
            x0: self.x0.unwrap_or(0.5),
        };
        p.validate_shape()?;
        Ok(p)
    }
}

/// Result of [`check_hypotheses`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisReport {
    pub h1_ok: bool,
    pub h3_ok: bool,
    /// `∫₀¹ aⁿ W² dx`, `None` when the quadrature did not converge (infinite).
    pub h2_integral: Option<f64>,
    pub w_samples: Vec<(f64, f64)>,
    pub messages: Vec<String>,
}

impl HypothesisReport {
    pub fn h2_finite(&self) -> bool {
        self.h2_integral.is_some()
    }

    pub fn all_ok(&self) -> bool {
        self.h1_ok && self.h3_ok && self.h2_finite()
    }
}

/// Maximum number of dyadic pieces used toward the cusp.
const H2_MAX_PIECES: usize = 60;

/// `W(x) = ∫_x^{1/2} dt / (A01(t) aⁿ(t))`.
pub fn w_function(p: &Profile, a01: &ScalarFn, x: f64, tol: f64) -> Option<f64> {
    let g = |t: f64| 1.0 / (a01.eval(t, 0.0) * p.weight(t));
    if x == 0.5 {
        return Some(0.0);
    }
    if x <= 0.0 {
        return None;
    }
    let (lo, hi, sign) = if x < 0.5 { (x, 0.5, 1.0) } else { (0.5, x, -1.0) };
    // Pieces shrink toward lo, where the integrand is largest; on an interval
    // bounded away from 0 they always become negligible.
    let v = integrate_toward(&g, lo, hi, tol, 200).value;
    v.is_finite().then_some(sign * v)
}

/// Grid checks of H1 and H3 and nested quadrature for the H2 integral.
pub fn check_hypotheses(p: &Profile, a01: &ScalarFn, grid_size: usize, tol: f64) -> Result<HypothesisReport> {
    ensure(grid_size >= 16, || format!("grid_size = {grid_size} must be >= 16"))?;
    p.validate_shape()?;
    let mut messages = Vec::new();

    let mut h1_ok = p.eval(0.0)? == 0.0;
    if !h1_ok {
        messages.push("a(0) != 0".into());
    }
    for i in 1..=grid_size {
        let x = i as f64 / grid_size as f64;
        let a = p.eval(x)?;
        if !(a > 0.0) {
            h1_ok = false;
            messages.push(format!("a({x}) = {a} is not positive"));
            break;
        }
    }

    let n = p.n as f64;
    let gap = p.alpha1 - p.alpha2;
    let mut h3_ok = p.alpha1 >= 1.0 && p.alpha2 >= 1.0 && gap >= 0.0 && gap < 2.0 / n;
    if !h3_ok {
        messages.push(format!(
            "alpha1 = {}, alpha2 = {} violate 1 <= alpha, 0 <= alpha1 - alpha2 < 2/n",
            p.alpha1, p.alpha2
        ));
    }
    for i in 1..grid_size {
        let x = p.x0 * i as f64 / grid_size as f64;
        let a = p.eval(x)?;
        let lo = p.k1 * x.powf(p.alpha1);
        let hi = p.k2 * x.powf(p.alpha2);
        if a < lo * (1.0 - 1e-12) || a > hi * (1.0 + 1e-12) {
            h3_ok = false;
            messages.push(format!("K1 x^a1 <= a(x) <= K2 x^a2 fails at x = {x}"));
            break;
        }
    }

    let inner_tol = tol * 1e-2;
    let integrand = |x: f64| match w_function(p, a01, x, inner_tol) {
        Some(w) => p.weight(x) * w * w,
        None => f64::INFINITY,
    };
    // Split at 1/2 where W vanishes; the singular end is x = 0.
    let left = integrate_toward(&integrand, 0.0, 0.5, tol, H2_MAX_PIECES);
    let (right, _, right_ok) = crate::quadrature::adaptive(&integrand, 0.5, 1.0, tol, 30);
    let h2_integral = if left.converged && right_ok && right.is_finite() {
        Some(left.value + right)
    } else {
        messages.push("H2 integral did not converge (treated as infinite)".into());
        None
    };

    let w_samples = (1..=grid_size)
        .map(|i| i as f64 / grid_size as f64)
        .filter_map(|x| w_function(p, a01, x, inner_tol).map(|w| (x, w)))
        .collect();

    Ok(HypothesisReport {
        h1_ok,
        h3_ok,
        h2_integral,
        w_samples,
        messages,
    })
}

/// Graded partition of `[0, 1]` with per-element Gauss points.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalMesh {
    pub nodes: Vec<f64>,
    pub grading: f64,
    pub quad_order: usize,
}

/// Default Gauss order per element.
pub const DEFAULT_QUAD_ORDER: usize = 3;

/// Nodes `(i/N)^g`, `i = 0..=N`.
pub fn build_interval_mesh(n: usize, grading: f64) -> Result<IntervalMesh> {
    ensure(n >= 4, || format!("N = {n} must be >= 4"))?;
    ensure(grading >= 1.0, || format!("grading exponent {grading} must be >= 1"))?;
    Ok(IntervalMesh {
        nodes: graded_nodes(n, grading),
        grading,
        quad_order: DEFAULT_QUAD_ORDER,
    })
}

pub(crate) fn graded_nodes(n: usize, grading: f64) -> Vec<f64> {
    (0..=n)
        .map(|i| {
            if i == n {
                1.0
            } else {
                (i as f64 / n as f64).powf(grading)
            }
        })
        .collect()
}

impl IntervalMesh {
    pub fn with_quad_order(mut self, order: usize) -> Self {
        self.quad_order = order.max(1);
        self
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_elements(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn element(&self, e: usize) -> (f64, f64) {
        (self.nodes[e], self.nodes[e + 1])
    }

    pub fn max_h(&self) -> f64 {
        self.nodes.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    pub fn min_h(&self) -> f64 {
        self.nodes.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
    }

    /// Gauss points `(x, w)` of element `e`.
    pub fn quadrature(&self, e: usize) -> impl Iterator<Item = (f64, f64)> {
        let (a, b) = self.element(e);
        gauss_on(a, b, self.quad_order)
    }

    /// Evaluates the P1 interpolant of nodal `values` at `x ∈ [0, 1]`.
    pub fn interpolate(&self, values: &[f64], x: f64) -> f64 {
        let k = self.locate(x);
        let (a, b) = self.element(k);
        let t = ((x - a) / (b - a)).clamp(0.0, 1.0);
        values[k] + t * (values[k + 1] - values[k])
    }

    /// Element containing `x`.
    pub fn locate(&self, x: f64) -> usize {
        match self.nodes.binary_search_by(|p| p.partial_cmp(&x).unwrap()) {
            Ok(k) => k.min(self.num_elements() - 1),
            Err(k) => k.saturating_sub(1).min(self.num_elements() - 1),
        }
    }
}

/// Outward-normal tag of a boundary edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryTag {
    /// `x = 1`, normal `+x`.
    Right = 0,
    /// `y = a(x)`.
    Upper = 1,
    /// `y = −a(x)`.
    Lower = 2,
}

/// Vertical layer of vertices at a fixed `x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Column {
    pub x: f64,
    /// Index of the bottom vertex; the column occupies `first..first + len`.
    pub first: usize,
    /// Number of vertices (transverse intervals + 1).
    pub len: usize,
    pub half_width: f64,
}

/// Column-structured triangulation of `Ω` for `n = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThinMesh {
    pub profile: Profile,
    pub vertices: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub columns: Vec<Column>,
    pub boundary_edges: Vec<(usize, usize, BoundaryTag)>,
    pub grading: f64,
    pub quad_order: usize,
    column_of: Vec<usize>,
}

/// Builds the triangulation. Column `i` sits at `x_i = (i/N_x)^g` and has
/// `max(1, ceil(density · a(x_i) / h_i))` transverse intervals, `h_i` being
/// the spacing to the previous layer; the `x = 0` column is the single
/// vertex `(0, 0)`.
pub fn build_thin_mesh(p: &Profile, n_x: usize, density: f64, grading: f64) -> Result<ThinMesh> {
    ensure(p.n == 1, || format!("thin meshes need n = 1, profile has n = {}", p.n))?;
    ensure(n_x >= 8, || format!("N_x = {n_x} must be >= 8"))?;
    ensure(density > 0.0, || "transverse density must be positive".into())?;
    ensure(grading >= 1.0, || format!("grading exponent {grading} must be >= 1"))?;
    let xs = graded_nodes(n_x, grading);
    let mut vertices = Vec::new();
    let mut columns = Vec::with_capacity(xs.len());
    let mut column_of = Vec::new();
    for (i, &x) in xs.iter().enumerate() {
        let a = p.eval(x)?;
        if i == 0 {
            if a != 0.0 {
                return Err(Error::Mesh {
                    column: 0,
                    reason: format!("a(0) = {a}, the cusp column must collapse"),
                });
            }
            columns.push(Column {
                x,
                first: 0,
                len: 1,
                half_width: 0.0,
            });
            vertices.push([0.0, 0.0]);
            column_of.push(0);
            continue;
        }
        if !(a > 0.0) {
            return Err(Error::Mesh {
                column: i,
                reason: format!("a({x}) = {a} is not positive"),
            });
        }
        let h = x - xs[i - 1];
        let m = ((density * a / h).ceil() as usize).max(1);
        let first = vertices.len();
        for j in 0..=m {
            let y = -a + 2.0 * a * j as f64 / m as f64;
            vertices.push([x, y]);
            column_of.push(i);
        }
        columns.push(Column {
            x,
            first,
            len: m + 1,
            half_width: a,
        });
    }

    let mut triangles = Vec::new();
    let mut boundary_edges = Vec::new();
    for i in 0..columns.len() - 1 {
        let l = columns[i];
        let r = columns[i + 1];
        let rel = |c: &Column, j: usize| {
            if c.len == 1 {
                0.5
            } else {
                j as f64 / (c.len - 1) as f64
            }
        };
        let (mut a, mut b) = (0usize, 0usize);
        while a + 1 < l.len || b + 1 < r.len {
            let advance_right = if a + 1 == l.len {
                true
            } else if b + 1 == r.len {
                false
            } else {
                rel(&r, b + 1) <= rel(&l, a + 1)
            };
            let tri = if advance_right {
                b += 1;
                [l.first + a, r.first + b - 1, r.first + b]
            } else {
                a += 1;
                [l.first + a - 1, r.first + b, l.first + a]
            };
            let area = signed_area(&vertices, tri);
            if !(area > 0.0) {
                return Err(Error::Mesh {
                    column: i,
                    reason: format!("degenerate triangle {tri:?} with area {area:e}"),
                });
            }
            triangles.push(tri);
        }
        boundary_edges.push((l.first, r.first, BoundaryTag::Lower));
        boundary_edges.push((r.first + r.len - 1, l.first + l.len - 1, BoundaryTag::Upper));
    }
    let last = columns[columns.len() - 1];
    for j in 0..last.len - 1 {
        boundary_edges.push((last.first + j, last.first + j + 1, BoundaryTag::Right));
    }

    Ok(ThinMesh {
        profile: p.clone(),
        vertices,
        triangles,
        columns,
        boundary_edges,
        grading,
        quad_order: DEFAULT_QUAD_ORDER,
        column_of,
    })
}

pub(crate) fn signed_area(v: &[[f64; 2]], t: [usize; 3]) -> f64 {
    let [a, b, c] = t.map(|i| v[i]);
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

impl ThinMesh {
    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn column_of(&self, vertex: usize) -> usize {
        self.column_of[vertex]
    }

    pub fn x_layers(&self) -> Vec<f64> {
        self.columns.iter().map(|c| c.x).collect()
    }

    pub fn area(&self, t: usize) -> f64 {
        signed_area(&self.vertices, self.triangles[t])
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.area(t)).sum()
    }

    /// Area of the polygon traced by the column end points.
    pub fn polygon_area(&self) -> f64 {
        self.columns
            .windows(2)
            .map(|w| (w[1].x - w[0].x) * (w[0].half_width + w[1].half_width))
            .sum()
    }

    pub fn max_h(&self) -> f64 {
        self.columns.windows(2).map(|w| w[1].x - w[0].x).fold(0.0, f64::max)
    }

    /// Gradients of the three barycentric functions and the area.
    pub fn gradients(&self, t: usize) -> ([[f64; 2]; 3], f64) {
        let [a, b, c] = self.triangles[t].map(|i| self.vertices[i]);
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        let g = [
            [(b[1] - c[1]) / det, (c[0] - b[0]) / det],
            [(c[1] - a[1]) / det, (a[0] - c[0]) / det],
            [(a[1] - b[1]) / det, (b[0] - a[0]) / det],
        ];
        (g, 0.5 * det)
    }

    /// Mesh as `{vertices, triangles, boundary_edges}` JSON.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "vertices": self.vertices,
            "triangles": self.triangles,
            "boundary_edges": self
                .boundary_edges
                .iter()
                .map(|&(i, j, tag)| [i, j, tag as usize])
                .collect::<Vec<_>>(),
        })
    }
}
