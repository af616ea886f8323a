use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use regional_equalization::report::{run_pipeline, with_threads, RunConfig, Stage};

#[derive(Parser)]
#[command(name = "regeq", version, about = "Regional public-service equalization pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; never changes the output.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Override a config value, e.g. `--set coupling.alpha=0.4`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    Ingest,
    Score,
    Coupling,
    Moran,
    Lisa,
    Theil,
    Shortboard,
    Converge,
    All,
}

impl Command {
    fn stages(self) -> Vec<Stage> {
        match self {
            Command::Ingest => vec![Stage::Ingest],
            Command::Score => vec![Stage::Score],
            Command::Coupling => vec![Stage::Coupling],
            Command::Moran => vec![Stage::Moran],
            Command::Lisa => vec![Stage::Lisa],
            Command::Theil => vec![Stage::Theil],
            Command::Shortboard => vec![Stage::Shortboard],
            Command::Converge => vec![Stage::Converge],
            Command::All => Stage::ANALYSIS.to_vec(),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let Some(config_path) = &cli.config else {
        eprintln!("error: --config <path> is required");
        return ExitCode::from(2);
    };
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    let cfg = match RunConfig::read(config_path, &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("stage config: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let stages = cli.command.stages();
    let run = || run_pipeline(&cfg, &cli.out, &stages);
    let result = match cli.threads {
        Some(n) => match with_threads(n, run) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("stage config: {e}");
                return ExitCode::from(2);
            }
        },
        None => run(),
    };
    match result {
        Ok(out) => {
            if let Some(m) = out.manifest {
                let files: usize = m.stages.iter().map(|s| s.files.len()).sum();
                println!("wrote {files} files for {} stages to {}", m.stages.len(), cli.out.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
