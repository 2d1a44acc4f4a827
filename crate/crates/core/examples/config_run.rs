//! Runs one pipeline from a TOML config, as the `peaklab` binary does, and
//! writes the markdown report next to the outputs.
//!
//! `cargo run --example config_run -- examples/configs/resolvent.toml rates /tmp/run`

use std::path::PathBuf;

use peaklab::cli::{report, run, Command, RunOptions};

fn main() {
    let mut args = std::env::args().skip(1);
    let config = PathBuf::from(args.next().unwrap_or_else(|| "examples/configs/resolvent.toml".into()));
    let command: Command = args.next().as_deref().unwrap_or("rates").parse().expect("known command");
    let out = args.next().map(PathBuf::from);
    let outcome = run(command, &config, &RunOptions { out, jobs: None });
    print!("{}", outcome.render(command));
    if let Some(dir) = outcome.out_dir.as_deref().filter(|d| d.join("manifest.json").exists()) {
        match report(dir) {
            Ok(r) => println!("report: {}", r.markdown.display()),
            Err(e) => eprintln!("report failed: {e}"),
        }
    }
    std::process::exit(outcome.exit_code);
}
