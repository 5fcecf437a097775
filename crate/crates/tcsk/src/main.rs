use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tcsk::config::{parse_config_for, Command, RunConfig};
use tcsk::run::{exit, resolve_output_dir, run, OUTPUT_DIR_ENV};

#[derive(Parser)]
#[command(name = "tcsk", version, about = "Twisted cscK continuity path on flat complex tori")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// TOML run configuration; every key has a default.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the environment and the config).
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Field file for `energy`.
    #[arg(long, global = true)]
    input: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// March t from 0 to 1 with Newton–Krylov solves.
    Continue,
    /// Run the J-flow to its fixed point.
    Jflow,
    /// Run the twisted Calabi flow at the configured t.
    Calabi,
    /// Solve an ε-geodesic and profile the functionals along it.
    Geodesic,
    /// Evaluate all functionals on a stored field.
    Energy,
    /// Run the invariant suite.
    Check,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Continue => Command::Continue,
            Cmd::Jflow => Command::Jflow,
            Cmd::Calabi => Command::Calabi,
            Cmd::Geodesic => Command::Geodesic,
            Cmd::Energy => Command::Energy,
            Cmd::Check => Command::Check,
        }
    }
}

fn load(cli: &Cli) -> Result<RunConfig, (i32, String)> {
    let command = Command::from(cli.command);
    let mut config = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| (exit::IO, format!("{}: {e}", path.display())))?;
            parse_config_for(&text, Some(command)).map_err(|e| (exit::CONFIG, e.to_string()))?
        }
        None => RunConfig::defaults(command),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let env = std::env::var_os(OUTPUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from);
    config.output_dir = Some(resolve_output_dir(cli.output_dir.clone(), env, config.output_dir.take()));
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match load(&cli) {
        Ok(c) => c,
        Err((code, message)) => {
            eprintln!("error: {message}");
            return ExitCode::from(code as u8);
        }
    };
    match run(&config, cli.input.as_deref()) {
        Ok(report) => {
            let s = &report.summary;
            eprintln!("{}: {} ({:.2} s)", s.command.name(), s.status, s.wall_time_s);
            if let Some(m) = &s.message {
                eprintln!("  {m}");
            }
            if config.command == Command::Energy {
                println!("{}", serde_json::to_string_pretty(&s.results).unwrap_or_default());
            }
            ExitCode::from(report.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
