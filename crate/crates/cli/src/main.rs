use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dcmeld_core::models::owl::simulate_owl_to_dir;
use dcmeld_core::{summary_to_csv, EssMethod};
use dcmeld_cli::config::read_owl_truth;
use dcmeld_cli::{run_experiment, summarize_file, CliError, RunConfig};

#[derive(Parser)]
#[command(name = "dcmeld", version, about = "Divide-and-conquer Markov melding experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sampler described by a configuration file.
    Run { config: PathBuf },
    /// Summarise a samples CSV (long format on stdout unless --output).
    Summarize {
        samples: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, value_enum)]
        ess: Option<Ess>,
        /// Number of equal-length chains stacked in the file.
        #[arg(long)]
        chains: Option<usize>,
    },
    /// Simulate an owl dataset from a truth file into a directory.
    SimulateOwl { truth: PathBuf, outdir: PathBuf },
    /// Check a configuration file without running it.
    Validate { config: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Ess {
    Weights,
    Chain,
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run { config } => {
            let config = RunConfig::from_file(&config)?;
            let out = run_experiment(&config)?;
            println!(
                "wrote {} samples of {} parameters to {} in {:.1}s",
                out.samples.len(),
                out.samples.dim(),
                out.dir.display(),
                out.manifest.timings.wall_clock_seconds
            );
        }
        Command::Summarize {
            samples,
            output,
            ess,
            chains,
        } => {
            let ess = ess.map(|e| match e {
                Ess::Weights => EssMethod::Weights,
                Ess::Chain => EssMethod::Chain,
            });
            let csv = summary_to_csv(&summarize_file(&samples, ess, chains)?);
            match output {
                Some(path) => std::fs::write(&path, csv).map_err(|e| CliError::io(format!("writing {}", path.display()), e))?,
                None => std::io::stdout()
                    .write_all(csv.as_bytes())
                    .map_err(|e| CliError::io("writing to stdout", e))?,
            }
        }
        Command::SimulateOwl { truth, outdir } => {
            let truth = read_owl_truth(&truth)?;
            let data = simulate_owl_to_dir(&truth, &outdir)?;
            println!("wrote T = {} owl dataset to {}", data.t, outdir.display());
        }
        Command::Validate { config } => {
            let config = RunConfig::from_file(&config)?;
            let model = config.validate()?;
            println!(
                "ok: {} submodels, {} parameters, sampler {}",
                model.n_submodels(),
                model.dim(),
                config.sampler.kind.name()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
