use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use fsep::dataset_io::{generate_scenario, write_dataset, ScenarioKind, SyntheticScenario};
use fsep::runtime::{run_pipeline, PipelineConfig, RunReport, REPORT_FILE};
use fsep::Result;

#[derive(Parser)]
#[command(name = "fsep", version, about = "Volumetric feature separation in multiphase flow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset.
    Gen {
        #[arg(long)]
        scenario: ScenarioKind,
        #[arg(long, default_value_t = 32)]
        cells: usize,
        #[arg(long, default_value_t = 10)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the analysis described by a config file and export its artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the report of a finished run.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Gen {
            scenario,
            cells,
            steps,
            out,
        } => {
            let s = SyntheticScenario::preset(scenario, cells, steps);
            let ds = generate_scenario(&s)?;
            let manifest = write_dataset(&ds, &out)?;
            println!("{}", manifest.display());
        }
        Command::Run { config } => {
            let cfg = PipelineConfig::read(&config)?;
            let report = run_pipeline(&cfg)?;
            info!(
                "{} particles, {} boundary and {} separation meshes",
                report.particles, report.boundary_meshes, report.separation_meshes
            );
            println!("{}", cfg.output.display());
        }
        Command::Report { run } => {
            let report = RunReport::read(&run.join(REPORT_FILE))?;
            print!("{}", report.to_tsv());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
