//! Declarative experiment configuration read from TOML, with field-level
//! validation.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attractor::SamplingConfig;
use crate::coefficients::{CoefficientSpec, HigherTerm, ScalarSpec, DEFAULT_K_MAX};
use crate::dynamics::{validate_nonlinearity, Nonlinearity, NonlinearitySpec};
use crate::elliptic::MeshParams;
use crate::equilibria::{EnumerateOptions, NewtonOptions, Strategy};
use crate::error::{Error, Result};
use crate::geometry::{Profile, ProfileSpec};
use crate::transfer::{Alpha, NormKind};

/// One offending config key and what is wrong with it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for FieldError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn field_error(field: &str, message: impl Into<String>) -> FieldError {
    FieldError {
        field: field.to_string(),
        message: message.into(),
    }
}

/// Top-level experiment description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seed of the random initial data of `evolve`.
    #[serde(default)]
    pub seed: u64,
    /// Output directory; `--out` overrides it.
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Strictly decreasing values inside `(0, eps0]`.
    #[serde(default = "default_eps_list")]
    pub eps_list: Vec<f64>,
    /// Norm of distances in equilibrium and attractor comparisons:
    /// `L2` selects `X^0`, `H1_eps` selects `X^{1/2}`.
    #[serde(default = "default_norm")]
    pub norm: NormKind,
    pub profile: ProfileSpec,
    #[serde(default)]
    pub coefficients: CoefficientConfig,
    #[serde(default)]
    pub nonlinearity: NonlinearityConfig,
    #[serde(default)]
    pub mesh: MeshConfig,
    #[serde(default)]
    pub time: TimeConfig,
    #[serde(default)]
    pub source: SourceConfig,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default)]
    pub check: CheckConfig,
    #[serde(default)]
    pub eigs: EigsConfig,
    #[serde(default)]
    pub evolve: EvolveConfig,
    #[serde(default)]
    pub equilibria: EquilibriaConfig,
    #[serde(default)]
    pub attractor: AttractorConfig,
    #[serde(default)]
    pub rates: RatesConfig,
}

fn default_out() -> PathBuf {
    PathBuf::from("peaklab-out")
}

fn default_eps_list() -> Vec<f64> {
    vec![0.2, 0.1, 0.05, 0.025]
}

fn default_norm() -> NormKind {
    NormKind::H1Eps
}

/// Coefficient matrix `A^ε = A_0 + Σ ε^k A_k` in declarative form.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientConfig {
    #[serde(default = "unit_scalar")]
    pub a01: ScalarSpec,
    #[serde(default = "unit_scalar")]
    pub a03: ScalarSpec,
    #[serde(default)]
    pub terms: Vec<TermConfig>,
    #[serde(default = "default_c0")]
    pub c0: f64,
    #[serde(default = "one")]
    pub alpha0: f64,
    #[serde(default = "default_eps0")]
    pub eps0: f64,
    #[serde(default = "default_k_max")]
    pub k_max: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermConfig {
    pub k: u32,
    #[serde(default = "zero_scalar")]
    pub a1: ScalarSpec,
    #[serde(default = "zero_scalar")]
    pub a2: ScalarSpec,
    #[serde(default = "zero_scalar")]
    pub a3: ScalarSpec,
}

fn unit_scalar() -> ScalarSpec {
    ScalarSpec::Const(1.0)
}

fn zero_scalar() -> ScalarSpec {
    ScalarSpec::Const(0.0)
}

fn default_c0() -> f64 {
    0.1
}

fn one() -> f64 {
    1.0
}

fn default_eps0() -> f64 {
    0.5
}

fn default_k_max() -> u32 {
    DEFAULT_K_MAX
}

impl Default for CoefficientConfig {
    fn default() -> Self {
        Self {
            a01: unit_scalar(),
            a03: unit_scalar(),
            terms: Vec::new(),
            c0: default_c0(),
            alpha0: 1.0,
            eps0: default_eps0(),
            k_max: DEFAULT_K_MAX,
        }
    }
}

impl CoefficientConfig {
    pub fn build(&self) -> CoefficientSpec {
        CoefficientSpec {
            a01: self.a01.into(),
            a03: self.a03.into(),
            higher_terms: self
                .terms
                .iter()
                .map(|t| HigherTerm {
                    k: t.k,
                    a1: t.a1.into(),
                    a2: t.a2.into(),
                    a3: t.a3.into(),
                })
                .collect(),
            c0: self.c0,
            alpha0: self.alpha0,
            eps0: self.eps0,
            k_max: self.k_max,
        }
    }
}

/// `family = "cubic" | "zero"`; the cubic family is `f(s) = λs − s³`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearityConfig {
    #[serde(default = "default_family")]
    pub family: String,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub m_f: Option<f64>,
}

fn default_family() -> String {
    "zero".into()
}

impl Default for NonlinearityConfig {
    fn default() -> Self {
        Self {
            family: default_family(),
            lambda: None,
            m_f: None,
        }
    }
}

impl NonlinearityConfig {
    pub fn build(&self) -> Result<Nonlinearity> {
        NonlinearitySpec {
            family: self.family.clone(),
            lambda: self.lambda,
            m_f: self.m_f,
        }
        .build()
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    /// Elements of the standalone interval mesh (limit spectra and limit
    /// trajectories); defaults to `n_x`.
    #[serde(default)]
    pub n: Option<usize>,
    /// x-layers of the thin mesh minus one.
    #[serde(default = "default_n_x")]
    pub n_x: usize,
    /// Grading exponent; the profile's default when absent.
    #[serde(default)]
    pub grading: Option<f64>,
    #[serde(default = "one")]
    pub density: f64,
}

fn default_n_x() -> usize {
    64
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self {
            n: None,
            n_x: default_n_x(),
            grading: None,
            density: 1.0,
        }
    }
}

impl MeshConfig {
    pub fn params(&self) -> MeshParams {
        MeshParams {
            n_x: self.n_x,
            density: self.density,
            grading: self.grading,
        }
    }

    pub fn interval_elements(&self) -> usize {
        self.n.unwrap_or(self.n_x)
    }

    pub fn grading_for(&self, p: &Profile) -> f64 {
        self.grading.unwrap_or_else(|| p.default_grading())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    /// Comparison time of the semigroup sweep, in `[0.5, 5]`.
    #[serde(default = "one")]
    pub t_star: f64,
    /// Step size; `t_star / 2000` when absent.
    #[serde(default)]
    pub dt: Option<f64>,
    /// Horizon of single trajectories.
    #[serde(default = "default_t_max")]
    pub t_max: f64,
}

fn default_t_max() -> f64 {
    5.0
}

impl Default for TimeConfig {
    fn default() -> Self {
        Self {
            t_star: 1.0,
            dt: None,
            t_max: default_t_max(),
        }
    }
}

impl TimeConfig {
    pub fn step(&self) -> f64 {
        self.dt.unwrap_or(self.t_star / 2000.0)
    }
}

/// `f(x, y) = amplitude · cos(frequency·πx) · (1 + y_slope·y)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    #[serde(default = "one")]
    pub amplitude: f64,
    #[serde(default = "one")]
    pub frequency: f64,
    #[serde(default = "one")]
    pub y_slope: f64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            amplitude: 1.0,
            frequency: 1.0,
            y_slope: 1.0,
        }
    }
}

impl SourceConfig {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.amplitude * (self.frequency * PI * x).cos() * (1.0 + self.y_slope * y)
    }
}

/// `u₀(x) = offset + amplitude · cos(frequency·πx)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    #[serde(default)]
    pub offset: f64,
    #[serde(default = "one")]
    pub amplitude: f64,
    #[serde(default = "one")]
    pub frequency: f64,
}

impl Default for InitialConfig {
    fn default() -> Self {
        Self {
            offset: 0.0,
            amplitude: 1.0,
            frequency: 1.0,
        }
    }
}

impl InitialConfig {
    pub fn eval(&self, x: f64) -> f64 {
        self.offset + self.amplitude * (self.frequency * PI * x).cos()
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    #[serde(default = "default_grid")]
    pub grid_size: usize,
    #[serde(default = "default_check_tol")]
    pub tol: f64,
}

fn default_grid() -> usize {
    256
}

fn default_check_tol() -> f64 {
    1e-8
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            grid_size: default_grid(),
            tol: default_check_tol(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EigsConfig {
    /// Number of smallest eigenpairs per operator.
    #[serde(default = "default_eig_count")]
    pub count: usize,
}

fn default_eig_count() -> usize {
    4
}

impl Default for EigsConfig {
    fn default() -> Self {
        Self { count: default_eig_count() }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolveConfig {
    /// Extra limit trajectories from seeded random data with
    /// `‖u₀‖∞ ≤ random_amplitude`, monitored for energy decay and entry
    /// into the absorbing ball.
    #[serde(default)]
    pub random_initial: usize,
    #[serde(default = "default_random_amplitude")]
    pub random_amplitude: f64,
    /// Every how many steps a state is logged.
    #[serde(default = "default_snapshot")]
    pub snapshot_every: usize,
}

fn default_random_amplitude() -> f64 {
    10.0
}

fn default_snapshot() -> usize {
    10
}

impl Default for EvolveConfig {
    fn default() -> Self {
        Self {
            random_initial: 0,
            random_amplitude: default_random_amplitude(),
            snapshot_every: default_snapshot(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquilibriaConfig {
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    #[serde(default = "default_budget")]
    pub budget: usize,
    /// Thin solutions farther than this from `E u₀*` are pairing failures.
    #[serde(default = "default_isolation")]
    pub isolation_radius: f64,
    #[serde(default = "default_gap_tol")]
    pub gap_tol: f64,
}

fn default_strategy() -> Strategy {
    Strategy::EigenfunctionSeeds
}

fn default_budget() -> usize {
    EnumerateOptions::default().budget
}

fn default_isolation() -> f64 {
    0.3
}

fn default_gap_tol() -> f64 {
    NewtonOptions::default().gap_tol
}

impl Default for EquilibriaConfig {
    fn default() -> Self {
        Self {
            strategy: default_strategy(),
            budget: default_budget(),
            isolation_radius: default_isolation(),
            gap_tol: default_gap_tol(),
        }
    }
}

impl EquilibriaConfig {
    pub fn newton(&self) -> NewtonOptions {
        NewtonOptions {
            gap_tol: self.gap_tol,
            ..NewtonOptions::default()
        }
    }

    pub fn enumerate(&self) -> EnumerateOptions {
        EnumerateOptions {
            budget: self.budget,
            newton: self.newton(),
            ..EnumerateOptions::default()
        }
    }
}

/// Manifold sampling settings; absent keys take the library defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttractorConfig {
    #[serde(default)]
    pub amplitudes: Option<Vec<f64>>,
    #[serde(default)]
    pub r_loc: Option<f64>,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub t_max: Option<f64>,
    #[serde(default)]
    pub end_tol: Option<f64>,
    #[serde(default)]
    pub spacing: Option<f64>,
    #[serde(default)]
    pub angles: Option<usize>,
    #[serde(default)]
    pub budget: Option<usize>,
    /// Constant initial states whose attraction to the limit sample is
    /// logged.
    #[serde(default)]
    pub attraction_constants: Vec<f64>,
    #[serde(default = "default_attraction_time")]
    pub attraction_time: f64,
}

fn default_attraction_time() -> f64 {
    3.0
}

impl Default for AttractorConfig {
    fn default() -> Self {
        Self {
            amplitudes: None,
            r_loc: None,
            dt: None,
            t_max: None,
            end_tol: None,
            spacing: None,
            angles: None,
            budget: None,
            attraction_constants: Vec::new(),
            attraction_time: default_attraction_time(),
        }
    }
}

impl AttractorConfig {
    pub fn sampling(&self, alpha: Alpha) -> SamplingConfig {
        let d = SamplingConfig::default();
        SamplingConfig {
            amplitudes: self.amplitudes.clone().unwrap_or(d.amplitudes),
            r_loc: self.r_loc.unwrap_or(d.r_loc),
            dt: self.dt.unwrap_or(d.dt),
            t_max: self.t_max.unwrap_or(d.t_max),
            end_tol: self.end_tol.unwrap_or(d.end_tol),
            spacing: self.spacing.unwrap_or(d.spacing),
            angles: self.angles.unwrap_or(d.angles),
            budget: self.budget.unwrap_or(d.budget),
            alpha,
        }
    }
}

/// Sweeps run by the `rates` command.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Resolvent,
    Semigroup,
    Equilibria,
    Attractor,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Resolvent => "resolvent",
            Experiment::Semigroup => "semigroup",
            Experiment::Equilibria => "equilibria",
            Experiment::Attractor => "attractor",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesConfig {
    #[serde(default = "default_experiments")]
    pub experiments: Vec<Experiment>,
}

fn default_experiments() -> Vec<Experiment> {
    vec![Experiment::Resolvent]
}

impl Default for RatesConfig {
    fn default() -> Self {
        Self {
            experiments: default_experiments(),
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML text; syntax and unknown-key errors become a single
    /// field error naming the offending location.
    pub fn from_toml(text: &str) -> std::result::Result<Self, Vec<FieldError>> {
        toml::from_str(text).map_err(|e: toml::de::Error| {
            let msg = e.message().to_string();
            let field = match e.span() {
                Some(span) => {
                    let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
                    format!("line {line}")
                }
                None => "config".to_string(),
            };
            vec![field_error(&field, msg)]
        })
    }

    /// Reads and validates a config file.
    pub fn load(path: &Path) -> std::result::Result<(Self, String), Vec<FieldError>> {
        let text = std::fs::read_to_string(path).map_err(|e| vec![field_error("config", format!("cannot read {}: {e}", path.display()))])?;
        let cfg = Self::from_toml(&text)?;
        let errors = cfg.validate();
        if errors.is_empty() {
            Ok((cfg, text))
        } else {
            Err(errors)
        }
    }

    pub fn alpha(&self) -> Alpha {
        match self.norm {
            NormKind::L2 => Alpha::Zero,
            _ => Alpha::Half,
        }
    }

    /// Every violated constraint, keyed by config path.
    pub fn validate(&self) -> Vec<FieldError> {
        let mut errs = Vec::new();
        let push = |errs: &mut Vec<FieldError>, field: &str, msg: String| errs.push(field_error(field, msg));

        let profile = match self.profile.build() {
            Ok(p) => Some(p),
            Err(e) => {
                push(&mut errs, "profile", e.to_string());
                None
            }
        };
        if let Some(p) = &profile {
            if p.n != 1 {
                push(&mut errs, "profile.n", format!("only n = 1 is supported, got {}", p.n));
            }
        }

        let c = &self.coefficients;
        if !(c.eps0 > 0.0 && c.eps0 < 1.0) {
            push(&mut errs, "coefficients.eps0", format!("must lie in (0, 1), got {}", c.eps0));
        } else if let Err(e) = c.build().validate() {
            push(&mut errs, "coefficients", e.to_string());
        }
        for (i, t) in c.terms.iter().enumerate() {
            if t.k == 0 {
                push(&mut errs, &format!("coefficients.terms[{i}].k"), "must be at least 1".into());
            }
        }

        if self.eps_list.len() < 3 {
            push(&mut errs, "eps_list", format!("needs at least 3 values, got {}", self.eps_list.len()));
        }
        if self.eps_list.windows(2).any(|w| !(w[1] < w[0])) {
            push(&mut errs, "eps_list", "must be strictly decreasing".into());
        }
        if let (Some(first), Some(last)) = (self.eps_list.first(), self.eps_list.last()) {
            if !(*last > 0.0) || !(*first <= c.eps0) {
                push(&mut errs, "eps_list", format!("values must lie in (0, eps0 = {}]", c.eps0));
            }
        }

        if !matches!(self.norm, NormKind::L2 | NormKind::H1Eps) {
            push(&mut errs, "norm", format!("must be L2 or H1_eps, got {}", self.norm));
        }

        match self.nonlinearity.build() {
            Ok(nl) => {
                if let Err(e) = validate_nonlinearity(&nl) {
                    push(&mut errs, "nonlinearity", e.to_string());
                }
            }
            Err(e) => push(&mut errs, "nonlinearity", e.to_string()),
        }

        let m = &self.mesh;
        if m.n_x < 8 {
            push(&mut errs, "mesh.n_x", format!("must be at least 8, got {}", m.n_x));
        }
        if m.n.is_some_and(|n| n < 4) {
            push(&mut errs, "mesh.n", "must be at least 4".into());
        }
        if m.grading.is_some_and(|g| !(g >= 1.0)) {
            push(&mut errs, "mesh.grading", "must be at least 1".into());
        }
        if !(m.density > 0.0) {
            push(&mut errs, "mesh.density", "must be positive".into());
        }

        let t = &self.time;
        if !(0.5..=5.0).contains(&t.t_star) {
            push(&mut errs, "time.t_star", format!("must lie in [0.5, 5], got {}", t.t_star));
        }
        if t.dt.is_some_and(|dt| !(dt > 0.0)) {
            push(&mut errs, "time.dt", "must be positive".into());
        }
        if !(t.t_max > 0.0) {
            push(&mut errs, "time.t_max", "must be positive".into());
        } else {
            let dt = t.step();
            if dt > 0.0 {
                for (name, v) in [("time.t_star", t.t_star), ("time.t_max", t.t_max)] {
                    let n = (v / dt).round();
                    if (n * dt - v).abs() > 1e-9 * v.max(1.0) {
                        push(&mut errs, name, format!("{v} is not a multiple of dt = {dt}"));
                    }
                }
            }
        }

        if self.check.grid_size < 16 {
            push(&mut errs, "check.grid_size", "must be at least 16".into());
        }
        if !(self.check.tol > 0.0) {
            push(&mut errs, "check.tol", "must be positive".into());
        }
        if self.eigs.count == 0 {
            push(&mut errs, "eigs.count", "must be at least 1".into());
        }
        if self.evolve.snapshot_every == 0 {
            push(&mut errs, "evolve.snapshot_every", "must be at least 1".into());
        }
        if !(self.evolve.random_amplitude > 0.0) {
            push(&mut errs, "evolve.random_amplitude", "must be positive".into());
        }
        if !(self.equilibria.isolation_radius > 0.0) {
            push(&mut errs, "equilibria.isolation_radius", "must be positive".into());
        }
        if !(self.equilibria.gap_tol > 0.0) {
            push(&mut errs, "equilibria.gap_tol", "must be positive".into());
        }
        if self.equilibria.budget == 0 {
            push(&mut errs, "equilibria.budget", "must be at least 1".into());
        }
        if let Err(e) = self.attractor.sampling(self.alpha()).validate() {
            push(&mut errs, "attractor", e.to_string());
        }
        if !(self.attractor.attraction_time > 0.0) {
            push(&mut errs, "attractor.attraction_time", "must be positive".into());
        }
        if self.rates.experiments.is_empty() {
            push(&mut errs, "rates.experiments", "must name at least one sweep".into());
        }
        errs
    }

    /// Built profile; call after [`ExperimentConfig::validate`].
    pub fn profile(&self) -> Result<Profile> {
        self.profile.build()
    }
}

/// Joins field errors into one [`Error::InvalidInput`].
pub fn validation_error(errors: &[FieldError]) -> Error {
    Error::InvalidInput(errors.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))
}
