use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use spoafd_cli::config::{ExampleId, ExperimentConfig};
use spoafd_cli::experiment::{demo_config, output_root, run_experiment};
use spoafd_cli::validate::validate_suite;

#[derive(Parser)]
#[command(name = "spoafd", version, about = "Stochastic pre-orthogonal adaptive Fourier decomposition for random boundary and initial value problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run { config: PathBuf },
    /// Run the built-in numerical checks and print one PASS/FAIL line each.
    Validate {
        /// Perturb one Gram entry before the reconstruction check.
        #[arg(long)]
        corrupt_gram: bool,
    },
    /// Write the canonical config of an example and run it.
    Demo {
        /// laplace_bivariate, heat_bivariate or brownian_bridge.
        example: String,
    },
}

fn report(result: anyhow::Result<(spoafd_cli::experiment::RunStatus, PathBuf)>) -> ExitCode {
    match result {
        Ok((status, dir)) => {
            println!("wrote {} ({:?})", dir.display(), status);
            ExitCode::from(status.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn demo(example: &str) -> anyhow::Result<(spoafd_cli::experiment::RunStatus, PathBuf)> {
    let cfg = demo_config(ExampleId::parse(example)?)?;
    let root = output_root();
    let dir = root.join(cfg.output_dir.as_ref().expect("resolved config"));
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml())?;
    run_experiment(&cfg, Path::new("."), &root)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config } => report(ExperimentConfig::load(&config).and_then(|cfg| {
            let base = config.parent().map(Path::to_path_buf).unwrap_or_default();
            run_experiment(&cfg, &base, &output_root())
        })),
        Command::Demo { example } => report(demo(&example)),
        Command::Validate { corrupt_gram } => match validate_suite(corrupt_gram) {
            Ok(true) => ExitCode::SUCCESS,
            Ok(false) => ExitCode::from(1),
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(1)
            }
        },
    }
}
