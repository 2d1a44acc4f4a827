use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use peaklab::cli::{report, run, Command, RunOptions, EXIT_FAILURE};

#[derive(Parser)]
#[command(name = "peaklab", version, about = "Reaction-diffusion experiments on thin domains with an outward cusp")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory, overriding `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Profile hypotheses, coefficient ellipticity and nonlinearity checks.
    Check(RunArgs),
    /// Thin mesh and matching interval mesh.
    Mesh(RunArgs),
    /// Elliptic solves on both domains.
    Solve(RunArgs),
    /// Smallest eigenpairs of the limit and thin operators.
    Eigs(RunArgs),
    /// Trajectories with energy and dissipativity monitoring.
    Evolve(RunArgs),
    /// Equilibrium atlas and its pairing across eps.
    Equilibria(RunArgs),
    /// Limit attractor and the attractor distance sweep.
    Attractor(RunArgs),
    /// Convergence-rate sweeps listed under [rates].
    Rates(RunArgs),
    /// Markdown report and plot data for a finished run directory.
    Report {
        run_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::Check(a) => (Command::Check, a),
        Cmd::Mesh(a) => (Command::Mesh, a),
        Cmd::Solve(a) => (Command::Solve, a),
        Cmd::Eigs(a) => (Command::Eigs, a),
        Cmd::Evolve(a) => (Command::Evolve, a),
        Cmd::Equilibria(a) => (Command::Equilibria, a),
        Cmd::Attractor(a) => (Command::Attractor, a),
        Cmd::Rates(a) => (Command::Rates, a),
        Cmd::Report { run_dir } => {
            return match report(&run_dir) {
                Ok(r) => {
                    println!("{}", r.markdown.display());
                    for p in r.plot_files {
                        println!("{}", p.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("peaklab report: {e}");
                    ExitCode::from(EXIT_FAILURE as u8)
                }
            };
        }
    };
    let opts = RunOptions {
        out: args.out,
        jobs: args.jobs,
    };
    let outcome = run(command, &args.config, &opts);
    print!("{}", outcome.render(command));
    ExitCode::from(outcome.exit_code as u8)
}
