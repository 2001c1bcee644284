use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use elastocharge_cli::run::execute;
use elastocharge_cli::scenario::{parse_scenario, Mode};

/// Run an electro-chemo-mechanical scenario and write its ledger,
/// snapshots and diagnostics.
#[derive(Parser, Debug)]
#[command(name = "simulate", version)]
struct Args {
    /// Scenario file (TOML).
    scenario: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the scenario mode: dynamic, static, diffusion, audit or study.
    #[arg(long)]
    mode: Option<Mode>,
    /// Sets a scenario field, e.g. `--override time.dt=5e-4`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let mut overrides = args.overrides.clone();
    if let Some(m) = args.mode {
        overrides.push(format!("mode=\"{}\"", serde_json::to_value(m).unwrap().as_str().unwrap()));
    }
    let result = parse_scenario(&args.scenario, &overrides).and_then(|sc| execute(&sc, &args.out));
    match result {
        Ok(ex) => {
            println!("{}", ex.summary);
            if ex.success {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
