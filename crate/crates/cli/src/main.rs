use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ergodic_cli::{run_scenario, validate_file, CliError, RunOptions, ScenarioKind, OUT_DIR_ENV};

#[derive(Debug, Parser)]
#[command(
    name = "ergodic",
    version,
    about = "Run ergodic-core scenarios from TOML configs"
)]
struct Cli {
    /// Worker threads for the parallel kernels (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Execute a scenario and write its artifacts and manifest.
    Run {
        config: PathBuf,
        /// Replace the config's seed.
        #[arg(long)]
        seed_override: Option<u64>,
        #[arg(long, env = OUT_DIR_ENV)]
        out_dir: Option<PathBuf>,
    },
    /// Parse and validate a config without running it.
    Validate { config: PathBuf },
    /// List the scenario kinds and their artifacts.
    ListScenarios,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result: Result<(), CliError> = match cli.command {
        Command::Run {
            config,
            seed_override,
            out_dir,
        } => run_scenario(
            &config,
            &RunOptions {
                seed_override,
                out_dir,
            },
        )
        .map(|s| {
            for a in &s.artifacts {
                println!("{}", a.display());
            }
            println!("{}", s.manifest.display());
        }),
        Command::Validate { config } => validate_file(&config).map(|c| {
            println!(
                "ok: {} (seed {}), outputs: {}",
                c.kind,
                c.seed,
                c.outputs.join(", ")
            );
        }),
        Command::ListScenarios => {
            for k in ScenarioKind::ALL {
                println!("{:<20} {}", k.name(), k.description());
                println!("{:<20} artifacts: {}", "", k.artifacts().join(", "));
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
