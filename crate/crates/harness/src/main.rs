use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cogd_harness::record::Table;
use cogd_harness::{
    parse_config_with, resolve_output_dir, run_to_dir, HarnessError, OUTPUT_ROOT_ENV,
};

#[derive(Parser)]
#[command(name = "cogd", version, about = "Coupled gradient descent experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        /// Output directory; overrides `output_dir` in the config.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Extra `key=value` settings applied after the file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Parse and check a config without running it.
    Validate { config: PathBuf },
    /// Print the summary table of a finished run.
    Report { run_dir: PathBuf },
}

fn read_config(
    path: &Path,
    overrides: &[String],
) -> Result<cogd_harness::ExperimentConfig, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(parse_config_with(&text, overrides)?)
}

fn print_table(t: &Table) {
    let widths: Vec<usize> = (0..t.columns.len())
        .map(|i| {
            t.rows
                .iter()
                .map(|r| r[i].len())
                .chain([t.columns[i].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |cells: &[String]| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
    };
    println!("{}", line(&t.columns).trim_end());
    for r in &t.rows {
        println!("{}", line(r).trim_end());
    }
}

fn execute(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run {
            config,
            output,
            seed,
            mut set,
        } => {
            if let Some(s) = seed {
                set.push(format!("seed={s}"));
            }
            let cfg = read_config(&config, &set)?;
            let root = std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from);
            let dir = resolve_output_dir(&cfg, output.as_deref(), root.as_deref());
            let outcome = run_to_dir(&cfg, &dir)?;
            println!("{}", dir.display());
            if let Some(e) = outcome.failure {
                return Err(HarnessError::core(cfg.experiment.name(), e));
            }
            Ok(())
        }
        Command::Validate { config } => {
            let cfg = read_config(&config, &[])?;
            print!("{}", cfg.to_text());
            Ok(())
        }
        Command::Report { run_dir } => {
            let summary = Table::read(&run_dir.join("summary.csv"))?;
            print_table(&summary);
            let metrics = run_dir.join("metrics.csv");
            if metrics.exists() {
                println!();
                print_table(&Table::read(&metrics)?);
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
