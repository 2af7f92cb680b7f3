use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use alignlab_core::edit::{
    diff, edit_distance, iterative_simplify, tokenize, Granularity, OpWeights, SimplifyConfig,
};
use alignlab_core::harness::{self, reference_solution, ExperimentConfig, SentenceDropFakes};
use alignlab_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "alignlab",
    version,
    about = "Run and inspect toy alignment experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Mode {
    Word,
    Sentence,
}

impl From<Mode> for Granularity {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Word => Granularity::Word,
            Mode::Sentence => Granularity::Sentence,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run { config: PathBuf },
    /// Compare metrics of two runs or two seed families.
    Compare {
        run_a: PathBuf,
        run_b: PathBuf,
        #[arg(long, value_delimiter = ',')]
        columns: Vec<String>,
    },
    /// Print the changed segments between two text files and their distance.
    Diff {
        source: PathBuf,
        target: PathBuf,
        #[arg(long, value_enum, default_value = "word")]
        mode: Mode,
    },
    /// Shorten a hint sentence by sentence while it still covers the reference answer.
    Simplify {
        hint: PathBuf,
        reference: PathBuf,
        #[arg(long, default_value_t = 4)]
        max_failures: usize,
    },
}

fn read(path: &PathBuf) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let (out, manifest) = harness::run(&cfg)?;
            println!(
                "{} run with seeds {:?} written to {}",
                manifest.kind,
                manifest.seeds,
                out.display()
            );
        }
        Command::Compare {
            run_a,
            run_b,
            columns,
        } => {
            print!("{}", harness::compare(&run_a, &run_b, &columns)?);
        }
        Command::Diff {
            source,
            target,
            mode,
        } => {
            let a = tokenize(&read(&source)?, mode.into());
            let b = tokenize(&read(&target)?, mode.into());
            let script = diff(&a, &b);
            for seg in script.changes() {
                println!("{}", serde_json::to_string(seg)?);
            }
            println!(
                "{}",
                serde_json::json!({ "distance": edit_distance(&script, &OpWeights::default())? })
            );
        }
        Command::Simplify {
            hint,
            reference,
            max_failures,
        } => {
            let initial = tokenize(&read(&hint)?, Granularity::Sentence);
            let reference = reference_solution(&read(&reference)?);
            let limits = SimplifyConfig {
                max_consecutive_failures: max_failures,
                ..SimplifyConfig::default()
            };
            let outcome = iterative_simplify(
                &initial,
                &reference,
                &limits,
                &mut SentenceDropFakes::default(),
            )?;
            println!("{}", serde_json::to_string(&outcome)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
