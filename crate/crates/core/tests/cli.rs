use std::path::{Path, PathBuf};
use std::process::Command as Process;

use peaklab::cli::{report, run, Command, RunManifest, RunOptions, EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION};
use peaklab::config::ExperimentConfig;
use peaklab::Error;
use sha2::{Digest, Sha256};

const BASE: &str = r#"
seed = 3
eps_list = [0.2, 0.1, 0.05, 0.025]

[profile]
kind = "power"
exponent = 1.0

[nonlinearity]
family = "cubic"
lambda = 5.0

[mesh]
n = 64
n_x = 16

[time]
t_star = 1.0
dt = 1e-2
t_max = 2.0

[evolve]
random_initial = 3
"#;

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn opts(out: &Path) -> RunOptions {
    RunOptions {
        out: Some(out.to_path_buf()),
        jobs: Some(2),
    }
}

fn csv_files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            out.extend(csv_files(&p));
        } else if p.extension().is_some_and(|e| e == "csv") {
            out.push(p);
        }
    }
    out.sort();
    out
}

/// Header present, every row has the header's column count.
fn assert_csv_schema(path: &Path) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().expect("header").split(',').collect();
    assert!(header.iter().all(|h| !h.is_empty() && h.chars().next().unwrap().is_ascii_alphabetic()), "{}: {header:?}", path.display());
    let mut rows = 0;
    for line in lines {
        assert_eq!(line.split(',').count(), header.len(), "{}: `{line}`", path.display());
        rows += 1;
    }
    assert!(rows > 0, "{} has no rows", path.display());
}

#[test]
fn check_writes_a_hypothesis_report_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "cusp.toml", BASE);
    let out = tmp.path().join("run");
    let outcome = run(Command::Check, &cfg, &opts(&out));
    assert_eq!(outcome.exit_code, EXIT_OK, "{:?}", outcome.messages);
    let hyp: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("hypotheses.json")).unwrap()).unwrap();
    assert_eq!(hyp["h1_ok"], true);
    assert!(hyp["h2_integral"].as_f64().unwrap() > 0.0);
    let m = RunManifest::read(&out).unwrap();
    assert_eq!(m.command, "check");
    let digest: String = Sha256::digest(BASE.as_bytes()).iter().map(|b| format!("{b:02x}")).collect();
    assert_eq!(m.config_sha256, digest);
    assert!(m.files.iter().any(|f| f.path == "hypotheses.json"));
    assert!(!m.steps.is_empty());
    assert_eq!(m.versions["peaklab"], env!("CARGO_PKG_VERSION"));
    assert!(outcome.render(Command::Check).contains("h2 integral"));
}

#[test]
fn failing_hypotheses_exit_with_validation_code() {
    let tmp = tempfile::tempdir().unwrap();
    // a(x) = x^3 with declared alpha bounds: the weighted integral diverges.
    let text = BASE.replace("exponent = 1.0", "exponent = 3.0");
    let cfg = write_config(tmp.path(), "cube.toml", &text);
    let outcome = run(Command::Check, &cfg, &opts(&tmp.path().join("run")));
    assert_eq!(outcome.exit_code, EXIT_VALIDATION);
    assert!(outcome.messages.iter().any(|m| m.contains("diverges")), "{:?}", outcome.messages);
    assert!(tmp.path().join("run/hypotheses.json").is_file());
}

#[test]
fn increasing_eps_list_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let text = BASE.replace("eps_list = [0.2, 0.1, 0.05, 0.025]", "eps_list = [0.025, 0.05, 0.1]");
    let cfg = write_config(tmp.path(), "bad.toml", &text);
    let out = tmp.path().join("run");
    let outcome = run(Command::Rates, &cfg, &opts(&out));
    assert_eq!(outcome.exit_code, EXIT_VALIDATION);
    assert!(outcome.messages.iter().any(|m| m.starts_with("eps_list:")), "{:?}", outcome.messages);
    assert!(!out.exists());
}

#[test]
fn validation_reports_every_bad_field() {
    let text = BASE
        .replace("eps_list = [0.2, 0.1, 0.05, 0.025]", "eps_list = [0.9, 0.1, 0.05]")
        .replace("n_x = 16", "n_x = 4")
        .replace("t_star = 1.0", "t_star = 9.0");
    let cfg = ExperimentConfig::from_toml(&text).unwrap();
    let fields: Vec<String> = cfg.validate().into_iter().map(|e| e.field).collect();
    for f in ["eps_list", "mesh.n_x", "time.t_star"] {
        assert!(fields.iter().any(|x| x == f), "{f} missing from {fields:?}");
    }
    let cfg = ExperimentConfig::from_toml(&format!("{BASE}\n[coefficients]\neps0 = 1.5\n")).unwrap();
    assert!(cfg.validate().iter().any(|e| e.field == "coefficients.eps0"));
}

#[test]
fn unknown_keys_and_syntax_errors_name_their_line() {
    let errs = ExperimentConfig::from_toml(&format!("{BASE}\n[mesh2]\nn_x = 3\n")).unwrap_err();
    assert!(errs[0].field.starts_with("line "), "{errs:?}");
    let errs = ExperimentConfig::from_toml("eps_list = [0.2,").unwrap_err();
    assert_eq!(errs.len(), 1);
    let errs = ExperimentConfig::from_toml("seed = 1\n").unwrap_err();
    assert!(errs[0].message.contains("profile"), "{errs:?}");
}

#[test]
fn zero_jobs_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", BASE);
    let outcome = run(
        Command::Mesh,
        &cfg,
        &RunOptions {
            out: Some(tmp.path().join("run")),
            jobs: Some(0),
        },
    );
    assert_eq!(outcome.exit_code, EXIT_VALIDATION);
    assert!(outcome.messages[0].starts_with("--jobs"));
}

#[test]
fn out_flag_overrides_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!("out = \"{}\"\n{BASE}", tmp.path().join("from_config").display());
    let cfg = write_config(tmp.path(), "c.toml", &text);
    let outcome = run(Command::Mesh, &cfg, &RunOptions::default());
    assert_eq!(outcome.exit_code, EXIT_OK);
    assert!(tmp.path().join("from_config/mesh.json").is_file());
    let outcome = run(Command::Mesh, &cfg, &opts(&tmp.path().join("from_flag")));
    assert_eq!(outcome.exit_code, EXIT_OK);
    assert!(tmp.path().join("from_flag/mesh.json").is_file());
}

#[test]
fn every_command_writes_headed_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", BASE);
    for command in [Command::Mesh, Command::Solve, Command::Eigs, Command::Evolve] {
        let out = tmp.path().join(command.name());
        let outcome = run(command, &cfg, &opts(&out));
        assert_eq!(outcome.exit_code, EXIT_OK, "{}: {:?}", command.name(), outcome.messages);
        let files = csv_files(&out);
        assert!(!files.is_empty(), "{}", command.name());
        for f in files {
            assert_csv_schema(&f);
        }
        let m = RunManifest::read(&out).unwrap();
        let mut listed: Vec<String> = m.files.iter().map(|f| f.path.clone()).collect();
        let sorted = {
            let mut s = listed.clone();
            s.sort();
            s
        };
        assert_eq!(listed, sorted);
        listed.retain(|p| !out.join(p).is_file());
        assert!(listed.is_empty(), "missing files {listed:?}");
    }
    let eigs = std::fs::read_to_string(tmp.path().join("eigs/eigs.csv")).unwrap();
    assert!(eigs.starts_with("operator,eps,index,eigenvalue,backward_error\n"));
    let diss = std::fs::read_to_string(tmp.path().join("evolve/dissipativity.csv")).unwrap();
    assert_eq!(diss.lines().count(), 1 + 1 + 3);
    assert!(diss.lines().skip(1).all(|l| l.ends_with(",true")), "{diss}");
}

#[test]
fn resolvent_run_has_slope_column_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let text = BASE.replace("n_x = 16", "n_x = 64") + "\n[rates]\nexperiments = [\"resolvent\"]\n";
    let cfg = write_config(tmp.path(), "r.toml", &text);
    let out = tmp.path().join("run");
    let outcome = run(Command::Rates, &cfg, &opts(&out));
    assert_eq!(outcome.exit_code, EXIT_OK, "{:?}", outcome.messages);
    let csv = std::fs::read_to_string(out.join("resolvent_rates.csv")).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let slope_col = header.iter().position(|h| *h == "slope").expect("slope column");
    let slope: f64 = csv.lines().nth(1).unwrap().split(',').nth(slope_col).unwrap().parse().unwrap();
    assert!((0.8..=1.2).contains(&slope), "{slope}");
    assert!(header.contains(&"norm_kind"));

    let rep = report(&out).unwrap();
    assert_eq!(rep.plot_files.len(), 1);
    let plot = std::fs::read_to_string(&rep.plot_files[0]).unwrap();
    let rows: Vec<&str> = plot.lines().filter(|l| !l.starts_with('#')).collect();
    assert!(rows.len() >= 3);
    assert!(rows.iter().all(|r| r.split_whitespace().count() == 2));
    let md = std::fs::read_to_string(&rep.markdown).unwrap();
    assert!(md.contains("resolvent convergence"));
}

#[test]
fn report_of_an_empty_directory_fails() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(matches!(report(tmp.path()), Err(Error::MissingManifest(_))));
}

#[test]
fn full_pipeline_report_covers_all_four_results() {
    let tmp = tempfile::tempdir().unwrap();
    let text = r#"
eps_list = [0.1, 0.05, 0.025]

[profile]
kind = "power"
exponent = 1.0

[coefficients]
a01 = { c0 = 1.0, c1 = 0.5 }

[nonlinearity]
family = "cubic"
lambda = 20.0

[mesh]
n_x = 16

[time]
t_star = 1.0
dt = 1e-2

[rates]
experiments = ["resolvent", "semigroup", "equilibria", "attractor"]
"#;
    let cfg = write_config(tmp.path(), "full.toml", text);
    let out = tmp.path().join("run");
    let outcome = run(Command::Rates, &cfg, &opts(&out));
    assert!([EXIT_OK, EXIT_NUMERICAL].contains(&outcome.exit_code), "{:?}", outcome.messages);
    let m = RunManifest::read(&out).unwrap();
    for exp in ["resolvent", "semigroup", "equilibria", "attractor"] {
        assert!(m.results.iter().any(|r| r.experiment == exp), "{exp}");
    }
    let md = std::fs::read_to_string(report(&out).unwrap().markdown).unwrap();
    for label in [
        "resolvent convergence",
        "semigroup convergence",
        "convergence of hyperbolic equilibria",
        "attractor convergence",
    ] {
        assert!(md.contains(label), "{label}");
    }
}

#[test]
fn numerical_flags_exit_three_with_partial_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    // At lambda = 5 with identity coefficients the thin and limit
    // attractors agree up to sampling, so every d(eps) sits under the
    // sampling floor.
    let text = BASE.replace("eps_list = [0.2, 0.1, 0.05, 0.025]", "eps_list = [0.2, 0.1, 0.05]")
        + "\n[equilibria]\nstrategy = \"constant_seeds\"\n";
    let cfg = write_config(tmp.path(), "a.toml", &text);
    let out = tmp.path().join("run");
    let outcome = run(Command::Attractor, &cfg, &opts(&out));
    assert_eq!(outcome.exit_code, EXIT_NUMERICAL, "{:?}", outcome.messages);
    assert!(outcome.flags.iter().any(|f| f.contains("sampling_dominated")));
    assert!(out.join("attractor_rates.csv").is_file());
    assert_eq!(RunManifest::read(&out).unwrap().exit_code, EXIT_NUMERICAL);
}

#[test]
fn reruns_are_byte_identical_across_job_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let text = BASE.replace("lambda = 5.0", "lambda = 20.0") + "\n[coefficients]\na01 = { c0 = 1.0, c1 = 0.5 }\n";
    let cfg = write_config(tmp.path(), "d.toml", &text);
    for command in [Command::Solve, Command::Evolve, Command::Equilibria] {
        let a = tmp.path().join(format!("{}_a", command.name()));
        let b = tmp.path().join(format!("{}_b", command.name()));
        run(command, &cfg, &RunOptions { out: Some(a.clone()), jobs: Some(1) });
        run(command, &cfg, &RunOptions { out: Some(b.clone()), jobs: Some(3) });
        let (ma, mb) = (RunManifest::read(&a).unwrap(), RunManifest::read(&b).unwrap());
        assert_eq!(ma.files, mb.files, "{}", command.name());
        for f in &ma.files {
            assert_eq!(std::fs::read(a.join(&f.path)).unwrap(), std::fs::read(b.join(&f.path)).unwrap(), "{}", f.path);
        }
    }
}

#[test]
fn binary_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_peaklab");
    let good = write_config(tmp.path(), "good.toml", BASE);
    let status = Process::new(bin)
        .args(["mesh", "--config"])
        .arg(&good)
        .arg("--out")
        .arg(tmp.path().join("run"))
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&status.stdout).contains("vertices"));

    let bad = write_config(tmp.path(), "bad.toml", &BASE.replace("n_x = 16", "n_x = 2"));
    let status = Process::new(bin).args(["mesh", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(status.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&status.stdout).contains("mesh.n_x"));

    let status = Process::new(bin).args(["report"]).arg(tmp.path().join("run")).output().unwrap();
    assert_eq!(status.status.code(), Some(0));
    let status = Process::new(bin).args(["report"]).arg(tmp.path()).output().unwrap();
    assert_ne!(status.status.code(), Some(0));
}

#[test]
fn sample_configs_parse_and_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/configs");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        let (_, _) = ExperimentConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e:?}", p.display()));
        n += 1;
    }
    assert!(n >= 5);
}
