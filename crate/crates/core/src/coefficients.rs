//! Diffusion coefficients `A^ε = Σ ε^k A_k` in the block form used on the
//! fixed domain, together with their validation.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar function of `(x, y)`. Longitudinal blocks ignore `y`.
#[derive(Clone)]
pub enum ScalarFn {
    Const(f64),
    /// `c0 + c1 x`
    Affine { c0: f64, c1: f64 },
    /// `amplitude * cos(frequency * π x)`
    CosPi { amplitude: f64, frequency: f64 },
    Custom(Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>),
}

impl ScalarFn {
    pub fn custom(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        ScalarFn::Custom(Arc::new(f))
    }

    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            ScalarFn::Const(c) => *c,
            ScalarFn::Affine { c0, c1 } => c0 + c1 * x,
            ScalarFn::CosPi {
                amplitude,
                frequency,
            } => amplitude * (frequency * std::f64::consts::PI * x).cos(),
            ScalarFn::Custom(f) => f(x, y),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, ScalarFn::Const(c) if *c == 0.0)
            || matches!(self, ScalarFn::Affine { c0, c1 } if *c0 == 0.0 && *c1 == 0.0)
            || matches!(self, ScalarFn::CosPi { amplitude, .. } if *amplitude == 0.0)
    }

    /// Does not depend on `y` (custom functions are assumed to).
    pub fn is_transversally_constant(&self) -> bool {
        !matches!(self, ScalarFn::Custom(_))
    }
}

impl fmt::Debug for ScalarFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarFn::Const(c) => write!(f, "Const({c})"),
            ScalarFn::Affine { c0, c1 } => write!(f, "Affine({c0} + {c1} x)"),
            ScalarFn::CosPi {
                amplitude,
                frequency,
            } => write!(f, "{amplitude} cos({frequency} pi x)"),
            ScalarFn::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Declarative form of [`ScalarFn`] for config files: a bare number, or a
/// table with `c0`/`c1`, or `amplitude`/`frequency`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarSpec {
    Const(f64),
    Affine { c0: f64, c1: f64 },
    CosPi { amplitude: f64, frequency: f64 },
}

impl From<ScalarSpec> for ScalarFn {
    fn from(s: ScalarSpec) -> Self {
        match s {
            ScalarSpec::Const(c) => ScalarFn::Const(c),
            ScalarSpec::Affine { c0, c1 } => ScalarFn::Affine { c0, c1 },
            ScalarSpec::CosPi {
                amplitude,
                frequency,
            } => ScalarFn::CosPi {
                amplitude,
                frequency,
            },
        }
    }
}

/// One correction `A_k` of the expansion, with longitudinal (`a1`), mixed
/// (`a2`) and transverse (`a3`) entries.
#[derive(Debug, Clone)]
pub struct HigherTerm {
    pub k: u32,
    pub a1: ScalarFn,
    pub a2: ScalarFn,
    pub a3: ScalarFn,
}

impl HigherTerm {
    pub fn mixed(k: u32, value: f64) -> Self {
        Self {
            k,
            a1: ScalarFn::Const(0.0),
            a2: ScalarFn::Const(value),
            a3: ScalarFn::Const(0.0),
        }
    }
}

/// Terms with `k` above this are dropped from the expansion.
pub const DEFAULT_K_MAX: u32 = 3;

#[derive(Debug, Clone)]
pub struct CoefficientSpec {
    pub a01: ScalarFn,
    pub a03: ScalarFn,
    pub higher_terms: Vec<HigherTerm>,
    /// Bound on every `|A_k|` entry.
    pub c0: f64,
    /// Ellipticity constant of `A_0`.
    pub alpha0: f64,
    /// Largest admissible ε.
    pub eps0: f64,
    pub k_max: u32,
}

impl Default for CoefficientSpec {
    fn default() -> Self {
        Self::identity()
    }
}

/// Effective 2×2 matrix multiplying `(∂x, ∂y)` in the bilinear form after the
/// `1/ε` scaling of the transverse derivative is folded in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FormMatrix {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl CoefficientSpec {
    /// `A_0 = I`, no corrections.
    pub fn identity() -> Self {
        Self {
            a01: ScalarFn::Const(1.0),
            a03: ScalarFn::Const(1.0),
            higher_terms: Vec::new(),
            c0: 0.1,
            alpha0: 1.0,
            eps0: 0.5,
            k_max: DEFAULT_K_MAX,
        }
    }

    pub fn with_a01(mut self, a01: ScalarFn) -> Self {
        self.a01 = a01;
        self
    }

    pub fn with_term(mut self, term: HigherTerm) -> Self {
        self.higher_terms.push(term);
        self
    }

    /// `α = α0 − ε0·C0/(1 − ε0)`.
    pub fn effective_ellipticity(&self) -> f64 {
        self.alpha0 - self.eps0 * self.c0 / (1.0 - self.eps0)
    }

    fn active_terms(&self) -> impl Iterator<Item = &HigherTerm> {
        self.higher_terms.iter().filter(move |t| t.k >= 1 && t.k <= self.k_max)
    }

    pub fn has_higher_terms(&self) -> bool {
        self.active_terms()
            .any(|t| !(t.a1.is_zero() && t.a2.is_zero() && t.a3.is_zero()))
    }

    /// Full coefficient matrix `A^ε(x, y)` (unscaled), as `(a11, a12, a22)`.
    pub fn matrix(&self, x: f64, y: f64, eps: f64) -> (f64, f64, f64) {
        let mut m = (self.a01.eval(x, 0.0), 0.0, self.a03.eval(x, y));
        for t in self.active_terms() {
            let ek = eps.powi(t.k as i32);
            m.0 += ek * t.a1.eval(x, y);
            m.1 += ek * t.a2.eval(x, y);
            m.2 += ek * t.a3.eval(x, y);
        }
        m
    }

    /// Matrix of the form `A^ε ∇^ε u · ∇^ε φ` written against `(∂x, ∂y)`:
    /// longitudinal entries carry `ε^k`, mixed `ε^{k−1}`, transverse `ε^{k−2}`.
    pub fn form_matrix(&self, x: f64, y: f64, eps: f64) -> FormMatrix {
        let inv = 1.0 / eps;
        let mut m = FormMatrix {
            xx: self.a01.eval(x, 0.0),
            xy: 0.0,
            yy: self.a03.eval(x, y) * inv * inv,
        };
        for t in self.active_terms() {
            let k = t.k as i32;
            m.xx += eps.powi(k) * t.a1.eval(x, y);
            m.xy += eps.powi(k - 1) * t.a2.eval(x, y);
            m.yy += eps.powi(k - 2) * t.a3.eval(x, y);
        }
        m
    }

    /// Checks positivity of `A01`, `A03`, the `C0` bound on a grid over
    /// `|y| ≤ 1`, and `α > 0`.
    pub fn validate(&self) -> Result<()> {
        if !(self.eps0 > 0.0 && self.eps0 < 1.0) {
            return Err(Error::InvalidInput(format!("eps0 = {} must lie in (0, 1)", self.eps0)));
        }
        if self.c0 <= 0.0 || self.alpha0 <= 0.0 {
            return Err(Error::InvalidInput("C0 and alpha0 must be positive".into()));
        }
        let alpha = self.effective_ellipticity();
        if alpha <= 0.0 {
            return Err(Error::Ellipticity(format!(
                "alpha = alpha0 - eps0 C0 / (1 - eps0) = {alpha} is not positive"
            )));
        }
        const GRID: usize = 64;
        for i in 0..=GRID {
            let x = i as f64 / GRID as f64;
            let a01 = self.a01.eval(x, 0.0);
            if !(a01 > 0.0) {
                return Err(Error::InvalidInput(format!("A01({x}) = {a01} is not positive")));
            }
            for j in 0..=8 {
                let y = -1.0 + 2.0 * j as f64 / 8.0;
                let a03 = self.a03.eval(x, y);
                if !(a03 > 0.0) {
                    return Err(Error::InvalidInput(format!("A03({x}, {y}) = {a03} is not positive")));
                }
                if a01.min(a03) < self.alpha0 - 1e-12 {
                    return Err(Error::Ellipticity(format!(
                        "A0({x}, {y}) has eigenvalue {} below alpha0 = {}",
                        a01.min(a03),
                        self.alpha0
                    )));
                }
                for t in self.active_terms() {
                    let worst = t.a1.eval(x, y).abs().max(t.a2.eval(x, y).abs()).max(t.a3.eval(x, y).abs());
                    if worst > self.c0 + 1e-12 {
                        return Err(Error::InvalidInput(format!(
                            "term k = {} reaches {worst} at ({x}, {y}), above C0 = {}",
                            t.k, self.c0
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Checks `0 < ε ≤ ε0` and that `A^ε` stays positive definite at `(x, y)`
    /// sample points.
    pub fn check_ellipticity_at(&self, eps: f64, points: impl Iterator<Item = (f64, f64)>) -> Result<()> {
        if !(eps > 0.0 && eps <= self.eps0 + 1e-15) {
            return Err(Error::Ellipticity(format!("eps = {eps} outside (0, eps0 = {}]", self.eps0)));
        }
        for (x, y) in points {
            let (a, b, c) = self.matrix(x, y, eps);
            let tr = a + c;
            let det = a * c - b * b;
            let min_eig = 0.5 * (tr - ((a - c).powi(2) + 4.0 * b * b).sqrt());
            if !(det > 0.0 && min_eig > 0.0) {
                return Err(Error::Ellipticity(format!(
                    "A^eps({x}, {y}) at eps = {eps} has min eigenvalue {min_eig}"
                )));
            }
        }
        Ok(())
    }
}
