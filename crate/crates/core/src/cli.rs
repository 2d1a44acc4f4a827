//! Batch runner behind the `peaklab` binary: executes one pipeline from an
//! [`ExperimentConfig`], writes CSV/JSON outputs and a `manifest.json`, and
//! turns a run directory into a markdown report with plot data.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attractor::{attractor_rate_experiment, exponential_attraction_check, metric, AttractorExperiment};
use crate::coefficients::CoefficientSpec;
use crate::config::{Experiment, ExperimentConfig, FieldError};
use crate::dynamics::{evolve, semigroup_rate_experiment, validate_nonlinearity, Nonlinearity, Trajectory};
use crate::elliptic::{assemble_limit, eigenpairs, galerkin_residual, resolvent_rate_experiment, solve, MeshPair};
use crate::equilibria::{enumerate_equilibria, pair_and_rate, write_pairing_csv};
use crate::error::{Error, Result};
use crate::geometry::{build_interval_mesh, check_hypotheses, Profile};
use crate::rate::RateTable;
use crate::transfer::{average_into, extend, Field};

/// Successful run.
pub const EXIT_OK: i32 = 0;
/// I/O or internal failure.
pub const EXIT_FAILURE: i32 = 1;
/// Config or input validation failed.
pub const EXIT_VALIDATION: i32 = 2;
/// The run finished (possibly partially) with numerical flags raised.
pub const EXIT_NUMERICAL: i32 = 3;

/// File name of the run manifest inside the output directory.
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Check,
    Mesh,
    Solve,
    Eigs,
    Evolve,
    Equilibria,
    Attractor,
    Rates,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Command::Check,
        Command::Mesh,
        Command::Solve,
        Command::Eigs,
        Command::Evolve,
        Command::Equilibria,
        Command::Attractor,
        Command::Rates,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Check => "check",
            Command::Mesh => "mesh",
            Command::Solve => "solve",
            Command::Eigs => "eigs",
            Command::Evolve => "evolve",
            Command::Equilibria => "equilibria",
            Command::Attractor => "attractor",
            Command::Rates => "rates",
        }
    }
}

impl std::str::FromStr for Command {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown command `{s}`")))
    }
}

/// Command-line overrides of config keys.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides `out`.
    pub out: Option<PathBuf>,
    /// Worker threads; the rayon default when absent.
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTiming {
    pub name: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the run directory.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// One convergence sweep of a run, as listed in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultEntry {
    /// `resolvent`, `semigroup`, `equilibria` or `attractor`.
    pub experiment: String,
    /// Statement the sweep measures.
    pub label: String,
    /// Rate CSV relative to the run directory.
    pub file: String,
    pub norm_kind: String,
    pub slope: Option<f64>,
    pub r_squared: Option<f64>,
    pub flagged: bool,
}

/// Self-description of a run directory. Timings are the only entries that
/// change between identical reruns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub exit_code: i32,
    /// SHA-256 of the config file bytes.
    pub config_sha256: String,
    /// Parsed config with defaults filled in.
    pub config: serde_json::Value,
    pub versions: BTreeMap<String, String>,
    pub jobs: usize,
    pub steps: Vec<StepTiming>,
    /// Every file written by the run, sorted by path.
    pub files: Vec<FileEntry>,
    pub flags: Vec<String>,
    pub messages: Vec<String>,
    pub summary: Vec<(String, String)>,
    pub results: Vec<ResultEntry>,
}

impl RunManifest {
    pub fn read(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(MANIFEST);
        if !path.is_file() {
            return Err(Error::MissingManifest(run_dir.to_path_buf()));
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// What a run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub exit_code: i32,
    /// `None` when validation failed before anything was written.
    pub out_dir: Option<PathBuf>,
    /// Field-level validation errors, numerical flags and failure messages.
    pub messages: Vec<String>,
    pub flags: Vec<String>,
    pub summary: Vec<(String, String)>,
}

impl RunOutcome {
    /// One-screen text table of the summary.
    pub fn render(&self, command: Command) -> String {
        let mut s = String::new();
        let width = self.summary.iter().map(|(k, _)| k.len()).max().unwrap_or(0).max(9);
        let _ = writeln!(s, "peaklab {}", command.name());
        if let Some(dir) = &self.out_dir {
            let _ = writeln!(s, "  {:width$}  {}", "output", dir.display());
        }
        for (k, v) in &self.summary {
            let _ = writeln!(s, "  {k:width$}  {v}");
        }
        for f in &self.flags {
            let _ = writeln!(s, "  {:width$}  {f}", "flag");
        }
        for m in &self.messages {
            let _ = writeln!(s, "  {:width$}  {m}", "message");
        }
        let _ = writeln!(s, "  {:width$}  {}", "exit", self.exit_code);
        s
    }
}

/// Exit code an error maps to.
pub fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::InvalidInput(_)
        | Error::OutOfRange { .. }
        | Error::Ellipticity(_)
        | Error::Nonlinearity(_)
        | Error::Mesh { .. }
        | Error::Toml(_) => EXIT_VALIDATION,
        Error::Factorization { .. }
        | Error::NotConverged { .. }
        | Error::BlowUp { .. }
        | Error::TooFewPoints(_)
        | Error::EmptySample => EXIT_NUMERICAL,
        Error::NormMismatch { .. } | Error::SpaceMismatch(_) | Error::MissingManifest(_) | Error::Io { .. } | Error::Json(_) => EXIT_FAILURE,
    }
}

fn hex_sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Output bookkeeping of one run.
struct Runner {
    dir: PathBuf,
    files: Vec<String>,
    steps: Vec<StepTiming>,
    flags: Vec<String>,
    summary: Vec<(String, String)>,
    results: Vec<ResultEntry>,
}

impl Runner {
    fn new(dir: PathBuf) -> Self {
        Self {
            dir,
            files: Vec::new(),
            steps: Vec::new(),
            flags: Vec::new(),
            summary: Vec::new(),
            results: Vec::new(),
        }
    }

    fn timed<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f();
        self.steps.push(StepTiming {
            name: name.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        out
    }

    fn write_bytes(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        if !self.files.iter().any(|f| f == rel) {
            self.files.push(rel.to_string());
        }
        Ok(())
    }

    fn write_with(&mut self, rel: &str, f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf).map_err(|e| Error::io(self.dir.join(rel), e))?;
        self.write_bytes(rel, &buf)
    }

    fn write_json(&mut self, rel: &str, value: &serde_json::Value) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_bytes(rel, text.as_bytes())
    }

    fn write_field(&mut self, rel: &str, u: &Field) -> Result<()> {
        self.write_with(rel, |w| u.write_csv(w))
    }

    fn write_rate_table(&mut self, rel: &str, table: &RateTable, with_theta: bool) -> Result<()> {
        self.write_with(rel, |w| table.write_csv(w, with_theta))
    }

    fn note(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.summary.push((key.into(), value.into()));
    }

    fn flag(&mut self, flag: impl Into<String>) {
        let flag = flag.into();
        if !self.flags.contains(&flag) {
            self.flags.push(flag);
        }
    }

    fn result(&mut self, experiment: &str, label: &str, file: &str, table: &RateTable) {
        self.results.push(ResultEntry {
            experiment: experiment.into(),
            label: label.into(),
            file: file.into(),
            norm_kind: table.rows.first().map(|r| r.norm_kind.clone()).unwrap_or_default(),
            slope: table.fit.as_ref().map(|f| f.slope),
            r_squared: table.fit.as_ref().map(|f| f.r_squared),
            flagged: table.flagged(),
        });
    }
}

/// Inputs shared by all pipelines.
struct Setup {
    profile: Profile,
    coeff: CoefficientSpec,
    nl: Nonlinearity,
}

fn fmt_slope(table: &RateTable) -> String {
    match &table.fit {
        Some(f) => format!("{:.3} (r^2 {:.4})", f.slope, f.r_squared),
        None => "undefined".into(),
    }
}

/// Loads `config_path`, applies `opts` and runs `command`.
pub fn run(command: Command, config_path: &Path, opts: &RunOptions) -> RunOutcome {
    let loaded = ExperimentConfig::load(config_path);
    let (cfg, text) = match loaded {
        Ok(v) => v,
        Err(errors) => return validation_outcome(&errors),
    };
    run_config(command, &cfg, text.as_bytes(), opts)
}

fn validation_outcome(errors: &[FieldError]) -> RunOutcome {
    RunOutcome {
        exit_code: EXIT_VALIDATION,
        out_dir: None,
        messages: errors.iter().map(|e| e.to_string()).collect(),
        flags: Vec::new(),
        summary: Vec::new(),
    }
}

/// Runs an already parsed config; `config_bytes` are hashed into the
/// manifest.
pub fn run_config(command: Command, cfg: &ExperimentConfig, config_bytes: &[u8], opts: &RunOptions) -> RunOutcome {
    let errors = cfg.validate();
    if !errors.is_empty() {
        return validation_outcome(&errors);
    }
    if opts.jobs == Some(0) {
        return validation_outcome(&[FieldError {
            field: "--jobs".into(),
            message: "must be at least 1".into(),
        }]);
    }
    let dir = opts.out.clone().unwrap_or_else(|| cfg.out.clone());
    if let Err(e) = std::fs::create_dir_all(&dir) {
        return RunOutcome {
            exit_code: EXIT_FAILURE,
            out_dir: None,
            messages: vec![format!("cannot create {}: {e}", dir.display())],
            flags: Vec::new(),
            summary: Vec::new(),
        };
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = opts.jobs {
        builder = builder.num_threads(j);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            return RunOutcome {
                exit_code: EXIT_FAILURE,
                out_dir: Some(dir),
                messages: vec![format!("cannot start worker pool: {e}")],
                flags: Vec::new(),
                summary: Vec::new(),
            }
        }
    };
    let jobs = pool.current_num_threads();

    let mut runner = Runner::new(dir.clone());
    let result = pool.install(|| execute(command, cfg, &mut runner));
    let mut messages = Vec::new();
    let mut exit_code = match &result {
        Ok(()) if runner.flags.is_empty() => EXIT_OK,
        Ok(()) => EXIT_NUMERICAL,
        Err(e) => {
            messages.push(e.to_string());
            exit_code_for(e)
        }
    };

    let manifest = build_manifest(command, cfg, config_bytes, jobs, exit_code, &runner, &messages);
    match manifest.and_then(|m| {
        let mut text = serde_json::to_string_pretty(&m)?;
        text.push('\n');
        let path = dir.join(MANIFEST);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }) {
        Ok(()) => {}
        Err(e) => {
            messages.push(format!("manifest not written: {e}"));
            exit_code = EXIT_FAILURE;
        }
    }
    RunOutcome {
        exit_code,
        out_dir: Some(dir),
        messages,
        flags: runner.flags,
        summary: runner.summary,
    }
}

fn build_manifest(
    command: Command,
    cfg: &ExperimentConfig,
    config_bytes: &[u8],
    jobs: usize,
    exit_code: i32,
    runner: &Runner,
    messages: &[String],
) -> Result<RunManifest> {
    let mut paths = runner.files.clone();
    paths.sort();
    let mut files = Vec::with_capacity(paths.len());
    for rel in paths {
        let path = runner.dir.join(&rel);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        files.push(FileEntry {
            path: rel,
            bytes: bytes.len() as u64,
            sha256: hex_sha256(&bytes),
        });
    }
    let mut versions = BTreeMap::new();
    versions.insert("peaklab".to_string(), env!("CARGO_PKG_VERSION").to_string());
    versions.insert("manifest_format".to_string(), "1".to_string());
    Ok(RunManifest {
        command: command.name().into(),
        exit_code,
        config_sha256: hex_sha256(config_bytes),
        config: serde_json::to_value(cfg)?,
        versions,
        jobs,
        steps: runner.steps.clone(),
        files,
        flags: runner.flags.clone(),
        messages: messages.to_vec(),
        summary: runner.summary.clone(),
        results: runner.results.clone(),
    })
}

fn execute(command: Command, cfg: &ExperimentConfig, r: &mut Runner) -> Result<()> {
    let setup = Setup {
        profile: cfg.profile()?,
        coeff: cfg.coefficients.build(),
        nl: cfg.nonlinearity.build()?,
    };
    match command {
        Command::Check => run_check(cfg, &setup, r),
        Command::Mesh => run_mesh(cfg, &setup, r),
        Command::Solve => run_solve(cfg, &setup, r),
        Command::Eigs => run_eigs(cfg, &setup, r),
        Command::Evolve => run_evolve(cfg, &setup, r),
        Command::Equilibria => run_equilibria(cfg, &setup, r),
        Command::Attractor => run_attractor(cfg, &setup, r),
        Command::Rates => {
            for exp in &cfg.rates.experiments {
                match exp {
                    Experiment::Resolvent => run_resolvent(cfg, &setup, r)?,
                    Experiment::Semigroup => run_semigroup(cfg, &setup, r)?,
                    Experiment::Equilibria => run_equilibria(cfg, &setup, r)?,
                    Experiment::Attractor => run_attractor(cfg, &setup, r)?,
                }
            }
            Ok(())
        }
    }
}

fn run_check(cfg: &ExperimentConfig, s: &Setup, r: &mut Runner) -> Result<()> {
    let report = r.timed("hypotheses", || check_hypotheses(&s.profile, &s.coeff.a01, cfg.check.grid_size, cfg.check.tol))?;
    r.write_json("hypotheses.json", &serde_json::to_value(&report)?)?;
    let nl_report = validate_nonlinearity(&s.nl)?;
    r.write_json("nonlinearity.json", &serde_json::to_value(&nl_report)?)?;
    r.note("h1", report.h1_ok.to_string());
    r.note("h3", report.h3_ok.to_string());
    r.note(
        "h2 integral",
        report.h2_integral.map(|v| format!("{v:.6}")).unwrap_or_else(|| "infinite".into()),
    );
    r.note("ellipticity", format!("{:.6}", s.coeff.effective_ellipticity()));
    r.note("dissipativity m_f", format!("{}", nl_report.m_f));
    if report.all_ok() {
        Ok(())
    } else {
        let mut failed = Vec::new();
        if !report.h1_ok {
            failed.push("profile: positivity of a(x) on (0, 1] fails");
        }
        if !report.h3_ok {
            failed.push("profile: power bounds K1 x^alpha1 <= a(x) <= K2 x^alpha2 fail");
        }
        if !report.h2_finite() {
            failed.push("profile: the weighted integral of a^n W^2 diverges");
        }
        Err(Error::InvalidInput(failed.join("; ")))
    }
}

fn run_mesh(cfg: &ExperimentConfig, s: &Setup, r: &mut Runner) -> Result<()> {
    let pair = r.timed("mesh", || MeshPair::new(&s.profile, cfg.mesh.params()))?;
    r.write_json("mesh.json", &pair.thin.to_json())?;
    let nodes = pair.interval_mesh().nodes.clone();
    r.write_with("interval_mesh.csv", |w| {
        writeln!(w, "node_index,x")?;
        for (i, x) in nodes.iter().enumerate() {
            writeln!(w, "{i},{x:.17e}")?;
        }
        Ok(())
    })?;
    r.note("vertices", pair.thin.num_vertices().to_string());
    r.note("triangles", pair.thin.triangles.len().to_string());
    r.note("x-layers", pair.thin.num_columns().to_string());
    r.note("max h", format!("{:.4e}", pair.thin.max_h()));
    r.note("mesh area", format!("{:.6}", pair.thin.total_area()));
    Ok(())
}

fn run_solve(cfg: &ExperimentConfig, s: &Setup, r: &mut Runner) -> Result<()> {
    let pair = r.timed("mesh", || MeshPair::new(&s.profile, cfg.mesh.params()))?;
    let limit = r.timed("assemble limit", || pair.assemble_limit(&s.coeff))?;
    let source = cfg.source;
    let f_first = Field::from_fn(pair.omega(cfg.eps_list[0]), |x, y| source.eval(x, y));
    let u0 = r.timed("limit solve", || solve(&limit, &average_into(&f_first, &limit.space)?, 0.0))?;
    let rows: Vec<(f64, Field, f64, f64, f64)> = r.timed("thin solves", || {
        cfg.eps_list
            .par_iter()
            .map(|&eps| {
                let op = pair.assemble_thin(&s.coeff, eps)?;
                let f = Field::from_fn(op.space.clone(), |x, y| source.eval(x, y));
                let u = solve(&op, &f, 0.0)?;
                let diff = u.sub(&extend(&u0, &pair.thin, eps)?)?;
                let g = op.l_form();
                let d = g.quad_form(&diff.values).max(0.0).sqrt();
                let n = g.quad_form(&u.values).max(0.0).sqrt();
                let res = galerkin_residual(&op, &u, &f);
                Ok((eps, u, d, n, res))
            })
            .collect::<Result<_>>()
    })?;
    r.write_field("solution_limit.csv", &u0)?;
    for (eps, u, ..) in &rows {
        r.write_field(&format!("solution_eps_{eps}.csv"), u)?;
    }
    r.write_with("solve.csv", |w| {
        writeln!(w, "eps,distance_H1_eps,solution_norm_H1_eps,relative_residual")?;
        for (eps, _, d, n, res) in &rows {
            writeln!(w, "{eps:e},{d:e},{n:e},{res:e}")?;
        }
        Ok(())
    })?;
    for (eps, _, d, n, _) in &rows {
        r.note(format!("eps = {eps}"), format!("distance {d:.4e}, relative {:.4e}", d / n.max(1e-300)));
    }
    Ok(())
}

fn run_eigs(cfg: &ExperimentConfig, s: &Setup, r: &mut Runner) -> Result<()> {
    let k = cfg.eigs.count;
    let mesh = build_interval_mesh(cfg.mesh.interval_elements(), cfg.mesh.grading_for(&s.profile))?;
    let limit = r.timed("assemble limit", || assemble_limit(&s.profile, &s.coeff, &mesh))?;
    let limit_eigs = r.timed("limit spectrum", || eigenpairs(&limit, k))?;
    let pair = MeshPair::new(&s.profile, cfg.mesh.params())?;
    let thin: Vec<(f64, crate::elliptic::EigenSet)> = r.timed("thin spectra", || {
        cfg.eps_list
            .par_iter()
            .map(|&eps| Ok((eps, eigenpairs(&pair.assemble_thin(&s.coeff, eps)?, k)?)))
            .collect::<Result<_>>()
    })?;
    for (i, v) in limit_eigs.vectors.iter().enumerate() {
        r.write_field(&format!("eigenvector_limit_{i}.csv"), v)?;
    }
    r.write_with("eigs.csv", |w| {
        writeln!(w, "operator,eps,index,eigenvalue,backward_error")?;
        for (i, (v, res)) in limit_eigs.values.iter().zip(&limit_eigs.residuals).enumerate() {
            writeln!(w, "limit,,{i},{v:.15e},{res:e}")?;
        }
        for (eps, set) in &thin {
            for (i, (v, res)) in set.values.iter().zip(&set.residuals).enumerate() {
                writeln!(w, "thin,{eps:e},{i},{v:.15e},{res:e}")?;
            }
        }
        Ok(())
    })?;
    let fmt = |vals: &[f64]| vals.iter().map(|v| format!("{v:.5}")).collect::<Vec<_>>().join(", ");
    r.note("limit", fmt(&limit_eigs.values));
    for (eps, set) in &thin {
        r.note(format!("eps = {eps}"), fmt(&set.values));
    }
    Ok(())
}

/// Smooth random data `Σ c_k cos(kπx)` scaled to sup norm `amplitude·s`,
/// `s ∈ [1/2, 1]`.
fn random_initial(rng: &mut ChaCha8Rng, space: &crate::transfer::Space, amplitude: f64) -> Field {
    let coeffs: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let scale = rng.gen_range(0.5..=1.0);
    let u = Field::from_fn(space.clone(), |x, _| {
        coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| c * (k as f64 * std::f64::consts::PI * x).cos())
            .sum()
    });
    let m = u.max_abs().max(1e-300);
    let values = u.values.iter().map(|v| v * amplitude * scale / m).collect();
    u.with_values(values)
}

/// First logged time after which `‖u‖∞ ≤ radius` holds for the rest of the
/// trajectory.
fn entry_time(traj: &Trajectory, radius: f64) -> Option<f64> {
    let last_out = traj.log.iter().rposition(|l| l.linf > radius);
    match last_out {
        None => traj.log.first().map(|l| l.t),
        Some(i) => traj.log.get(i + 1).map(|l| l.t),
    }
}

fn energy_monotone(traj: &Trajectory) -> bool {
    traj.log.windows(2).all(|w| match (w[0].energy, w[1].energy) {
        (Some(e0), Some(e1)) => e1 <= e0 + 1e-8 * (1.0 + e0.abs()),
        _ => true,
    })
}

fn run_evolve(cfg: &ExperimentConfig, s: &Setup, r: &mut Runner) -> Result<()> {
    let dt = cfg.time.step();
    let t_max = cfg.time.t_max;
    let every = cfg.evolve.snapshot_every;
    let mesh = build_interval_mesh(cfg.mesh.interval_elements(), cfg.mesh.grading_for(&s.profile))?;
    let limit = assemble_limit(&s.profile, &s.coeff, &mesh)?;
    let init = cfg.initial;
    let u0 = Field::from_fn(limit.space.clone(), |x, _| init.eval(x));
    let traj = r.timed("limit trajectory", || evolve(&limit, &s.nl, &u0, t_max, dt, every))?;
    r.write_with("trajectory_limit.csv", |w| traj.write_csv(w))?;
    r.write_field("final_limit.csv", traj.last())?;

    let pair = MeshPair::new(&s.profile, cfg.mesh.params())?;
    let eps = *cfg.eps_list.last().expect("validated eps_list");
    let thin_op = pair.assemble_thin(&s.coeff, eps)?;
    let v0 = Field::from_fn(thin_op.space.clone(), |x, _| init.eval(x));
    let thin = r.timed("thin trajectory", || evolve(&thin_op, &s.nl, &v0, t_max, dt, every))?;
    r.write_with(&format!("trajectory_eps_{eps}.csv"), |w| thin.write_csv(w))?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let starts: Vec<Field> = (0..cfg.evolve.random_initial)
        .map(|_| random_initial(&mut rng, &limit.space, cfg.evolve.random_amplitude))
        .collect();
    let extra: Vec<Trajectory> = r.timed("random trajectories", || {
        starts.par_iter().map(|u| evolve(&limit, &s.nl, u, t_max, dt, every)).collect::<Result<_>>()
    })?;
    let radius = 1.05 * s.nl.m_f;
    let check_ball = s.nl.m_f > 0.0;
    let mut rows = Vec::new();
    for (i, t) in std::iter::once(&traj).chain(extra.iter()).enumerate() {
        let monotone = energy_monotone(t);
        let entry = if check_ball { entry_time(t, radius) } else { None };
        if !monotone {
            r.flag(format!("energy_increase (trajectory {i})"));
        }
        if check_ball && entry.is_none() {
            r.flag(format!("absorbing_ball_not_reached (trajectory {i})"));
        }
        rows.push((i, t.log[0].linf, t.log.last().map(|l| l.linf).unwrap_or(f64::NAN), entry, monotone));
    }
    r.write_with("dissipativity.csv", |w| {
        writeln!(w, "trajectory,initial_Linf,final_Linf,ball_radius_Linf,entry_time,energy_monotone")?;
        for (i, a, b, entry, mono) in &rows {
            let entry = entry.map(|t| format!("{t:e}")).unwrap_or_default();
            let radius = if check_ball { format!("{radius:e}") } else { String::new() };
            writeln!(w, "{i},{a:e},{b:e},{radius},{entry},{mono}")?;
        }
        Ok(())
    })?;
    r.note("steps", format!("{} of dt = {dt}", traj.log.len() - 1));
    r.note("limit final Linf", format!("{:.6e}", traj.last().max_abs()));
    r.note(format!("thin eps = {eps} final Linf"), format!("{:.6e}", thin.last().max_abs()));
    r.note("trajectories checked", rows.len().to_string());
    Ok(())
}

fn run_resolvent(cfg: &ExperimentConfig, s: &Setup, r: &mut Runner) -> Result<()> {
    let source = cfg.source;
    let f = move |x: f64, y: f64, _eps: f64| source.eval(x, y);
    let (table, check) = r.timed("resolvent sweep", || {
        resolvent_rate_experiment(&s.profile, &s.coeff, &f, &cfg.eps_list, cfg.mesh.params())
    })?;
    r.write_rate_table("resolvent_rates.csv", &table, false)?;
    r.write_json("resolvent_richardson.json", &serde_json::to_value(check)?)?;
    r.result("resolvent", "resolvent convergence", "resolvent_rates.csv", &table);
    r.note("resolvent slope", fmt_slope(&table));
    if table.flagged() {
        r.flag("resolvent: discretization_dominated");
    }
    Ok(())
}

fn run_semigroup(cfg: &ExperimentConfig, s: &Setup, r: &mut Runner) -> Result<()> {
    let init = cfg.initial;
    let u0 = move |x: f64| init.eval(x);
    let rates = r.timed("semigroup sweep", || {
        semigroup_rate_experiment(
            &s.profile,
            &s.coeff,
            &s.nl,
            &u0,
            cfg.time.t_star,
            cfg.time.dt,
            &cfg.eps_list,
            cfg.mesh.params(),
        )
    })?;
    let label = if s.nl.family == "zero" {
        "linear semigroup convergence"
    } else {
        "nonlinear semigroup convergence"
    };
    r.write_rate_table("semigroup_rates_L2.csv", &rates.l2, false)?;
    r.write_rate_table("semigroup_rates_H1_eps.csv", &rates.h1, false)?;
    r.write_json("semigroup_richardson.json", &serde_json::to_value(rates.richardson)?)?;
    r.result("semigroup", label, "semigroup_rates_L2.csv", &rates.l2);
    r.result("semigroup", label, "semigroup_rates_H1_eps.csv", &rates.h1);
    r.note("semigroup slope L2", fmt_slope(&rates.l2));
    r.note("semigroup slope H1_eps", fmt_slope(&rates.h1));
    if rates.l2.flagged() || rates.h1.flagged() {
        r.flag("semigroup: discretization_dominated");
    }
    Ok(())
}

fn run_equilibria(cfg: &ExperimentConfig, s: &Setup, r: &mut Runner) -> Result<()> {
    let pair = MeshPair::new(&s.profile, cfg.mesh.params())?;
    let limit = pair.assemble_limit(&s.coeff)?;
    let eq = cfg.equilibria;
    let atlas = r.timed("enumerate", || enumerate_equilibria(&limit, &s.nl, eq.strategy, eq.enumerate()))?;
    r.write_json("equilibria.json", &atlas.to_json(&limit))?;
    for (i, e) in atlas.entries.iter().enumerate() {
        r.write_field(&format!("equilibria/equilibrium_{i}.csv"), &e.state)?;
    }
    let morse: Vec<String> = atlas.entries.iter().map(|e| e.morse_index.to_string()).collect();
    r.note("equilibria", format!("{} (Morse indices {})", atlas.entries.len(), morse.join(", ")));
    if atlas.exhausted {
        r.flag("equilibria: solve budget exhausted");
    }
    if !atlas.all_hyperbolic() {
        r.flag("equilibria: non_hyperbolic");
        return Ok(());
    }
    let pairings = r.timed("pairing", || {
        pair_and_rate(&atlas, &pair, &s.coeff, &s.nl, &cfg.eps_list, cfg.alpha(), eq.isolation_radius, eq.newton())
    })?;
    r.write_with("pairing.csv", |w| write_pairing_csv(&pairings, w))?;
    for p in &pairings {
        if !p.failures.is_empty() {
            r.flag(format!("equilibria: pairing_failure (equilibrium {})", p.limit_index));
        }
        if !p.unique {
            r.flag(format!("equilibria: non_unique_pairing (equilibrium {})", p.limit_index));
        }
        let file = format!("pairing_{}.csv", p.limit_index);
        r.write_rate_table(&file, &p.table, false)?;
        r.result("equilibria", "convergence of hyperbolic equilibria", &file, &p.table);
        let d0 = p.table.rows.first().map(|x| x.distance).unwrap_or(0.0);
        r.note(format!("equilibrium {} slope", p.limit_index), format!("{} (d at largest eps {d0:.3e})", fmt_slope(&p.table)));
    }
    Ok(())
}

fn run_attractor(cfg: &ExperimentConfig, s: &Setup, r: &mut Runner) -> Result<()> {
    let alpha = cfg.alpha();
    let exp = AttractorExperiment {
        mesh: cfg.mesh.params(),
        sampling: cfg.attractor.sampling(alpha),
        strategy: cfg.equilibria.strategy,
        enumerate: cfg.equilibria.enumerate(),
        newton: cfg.equilibria.newton(),
    };
    let rates = r.timed("attractor sweep", || attractor_rate_experiment(&s.profile, &s.coeff, &s.nl, &cfg.eps_list, &exp))?;
    let pair = MeshPair::new(&s.profile, cfg.mesh.params())?;
    let limit = pair.assemble_limit(&s.coeff)?;
    let g = metric(&limit, alpha);
    r.write_json("attractor_limit.json", &rates.limit.to_json(&g))?;
    r.write_rate_table("attractor_rates.csv", &rates.table, true)?;
    r.write_with("attractor_rows.csv", |w| {
        writeln!(w, "eps,forward,backward,sampling_floor,points,graph_distance,projection_distance,paired,incomplete,norm_kind")?;
        for row in &rates.rows {
            writeln!(
                w,
                "{:e},{:e},{:e},{:e},{},{:e},{:e},{},{},{}",
                row.eps,
                row.forward,
                row.backward,
                row.sampling_floor,
                row.points,
                row.graph,
                row.projection,
                row.paired,
                row.incomplete,
                alpha.omega_norm()
            )?;
        }
        Ok(())
    })?;
    r.result("attractor", "attractor convergence", "attractor_rates.csv", &rates.table);
    r.note(
        "limit attractor",
        format!(
            "{} points, {} equilibria, density bound {:.3e}",
            rates.limit.len(),
            rates.limit_atlas.entries.len(),
            rates.limit.density_bound
        ),
    );
    r.note("attractor slope", fmt_slope(&rates.table));
    if rates.limit.incomplete || rates.rows.iter().any(|x| x.incomplete) {
        r.flag("attractor: incomplete rays");
    }
    if rates.rows.iter().any(|x| !x.paired) {
        r.flag("attractor: pairing_failure");
    }
    if rates.rows.iter().any(|x| x.sampling_floor >= x.forward + x.backward) {
        r.flag("attractor: sampling_dominated");
    }

    if !cfg.attractor.attraction_constants.is_empty() {
        let b: Vec<Field> = cfg
            .attractor
            .attraction_constants
            .iter()
            .map(|&c| Field::constant(limit.space.clone(), c))
            .collect();
        let t_final = cfg.attractor.attraction_time;
        let dt = exp.sampling.dt;
        let logs = r.timed("attraction", || exponential_attraction_check(&limit, &s.nl, &rates.limit, &b, t_final, dt, 0.05))?;
        r.write_with("attraction.csv", |w| {
            writeln!(w, "initial_constant,t,distance_to_sample,norm_kind")?;
            for (c, log) in cfg.attractor.attraction_constants.iter().zip(&logs) {
                for (t, d) in &log.log {
                    writeln!(w, "{c:e},{t:e},{d:e},{}", alpha.interval_norm())?;
                }
            }
            Ok(())
        })?;
        for (c, log) in cfg.attractor.attraction_constants.iter().zip(&logs) {
            let value = log.exponent.map(|e| format!("{e:.3}")).unwrap_or_else(|| "undefined".into());
            r.note(format!("attraction exponent u = {c}"), value);
        }
    }
    Ok(())
}

/// Files written by [`report`].
#[derive(Debug, Clone)]
pub struct Report {
    pub markdown: PathBuf,
    pub plot_files: Vec<PathBuf>,
}

/// Statement each experiment kind measures, with its expected behaviour.
fn statement(experiment: &str) -> &'static str {
    match experiment {
        "resolvent" => "elliptic resolvent estimate: distance of order eps in H1_eps",
        "semigroup" => "semigroup convergence at fixed time t*: first order in eps",
        "equilibria" => "hyperbolic equilibria of the thin problem converge to the limit ones at first order",
        "attractor" => "upper and lower semicontinuity of attractors with a positive rate in eps",
        _ => "unclassified",
    }
}

/// `(eps, distance)` series of a rate CSV, grouped by `pair_id` when that
/// column exists.
fn read_series(path: &Path) -> Result<Vec<(String, Vec<(f64, f64)>)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.is_empty());
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name);
    let (Some(ie), Some(id)) = (col("eps"), col("distance")) else {
        return Err(Error::InvalidInput(format!("{} has no eps/distance columns", path.display())));
    };
    let ip = col("pair_id");
    let mut groups: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        let parse = |i: usize| -> Result<f64> {
            cells
                .get(i)
                .and_then(|c| c.parse().ok())
                .ok_or_else(|| Error::InvalidInput(format!("{}: bad row `{line}`", path.display())))
        };
        let key = ip.and_then(|i| cells.get(i)).map(|s| s.to_string()).unwrap_or_default();
        let point = (parse(ie)?, parse(id)?);
        match groups.iter_mut().find(|g| g.0 == key) {
            Some(g) => g.1.push(point),
            None => groups.push((key, vec![point])),
        }
    }
    Ok(groups)
}

/// Writes `report.md` and one two-column `eps distance` plot-data file per
/// rate series of the run in `run_dir`.
pub fn report(run_dir: &Path) -> Result<Report> {
    let manifest = RunManifest::read(run_dir)?;
    let mut md = String::new();
    let _ = writeln!(md, "# peaklab run: {}\n", manifest.command);
    let _ = writeln!(md, "- exit code: {}", manifest.exit_code);
    let _ = writeln!(md, "- config sha256: `{}`", manifest.config_sha256);
    for (k, v) in &manifest.versions {
        let _ = writeln!(md, "- {k} version: {v}");
    }
    let _ = writeln!(md, "- files: {}", manifest.files.len());
    if !manifest.flags.is_empty() {
        let _ = writeln!(md, "- flags: {}", manifest.flags.join("; "));
    }
    let _ = writeln!(md, "\n## Summary\n\n| quantity | value |\n|---|---|");
    for (k, v) in &manifest.summary {
        let _ = writeln!(md, "| {k} | {v} |");
    }

    let mut plot_files = Vec::new();
    if !manifest.results.is_empty() {
        let _ = writeln!(md, "\n## Convergence results\n");
        let _ = writeln!(md, "| result | statement | norm | slope | r^2 | flagged | plot data |\n|---|---|---|---|---|---|---|");
        for res in &manifest.results {
            let series = read_series(&run_dir.join(&res.file))?;
            let stem = res.file.trim_end_matches(".csv");
            let mut names = Vec::new();
            for (key, points) in &series {
                let name = if key.is_empty() || series.len() == 1 {
                    format!("plot_{stem}.dat")
                } else {
                    format!("plot_{stem}_pair{key}.dat")
                };
                let mut text = format!("# eps distance ({})\n", res.norm_kind);
                for (e, d) in points {
                    let _ = writeln!(text, "{e:e} {d:e}");
                }
                let path = run_dir.join(&name);
                std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
                plot_files.push(path);
                names.push(format!("`{name}`"));
            }
            let fmt = |v: Option<f64>, p: usize| v.map(|x| format!("{x:.p$}")).unwrap_or_else(|| "n/a".into());
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} | {} | {} |",
                res.label,
                statement(&res.experiment),
                res.norm_kind,
                fmt(res.slope, 3),
                fmt(res.r_squared, 4),
                res.flagged,
                names.join(", ")
            );
        }
    }

    let _ = writeln!(md, "\n## Steps\n\n| step | seconds |\n|---|---|");
    for s in &manifest.steps {
        let _ = writeln!(md, "| {} | {:.3} |", s.name, s.seconds);
    }
    let _ = writeln!(md, "\n## Files\n\n| path | bytes | sha256 |\n|---|---|---|");
    for f in &manifest.files {
        let _ = writeln!(md, "| {} | {} | `{}` |", f.path, f.bytes, &f.sha256[..16]);
    }
    let path = run_dir.join("report.md");
    std::fs::write(&path, md).map_err(|e| Error::io(&path, e))?;
    Ok(Report {
        markdown: path,
        plot_files,
    })
}
