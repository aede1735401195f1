use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gsot::cli::{self, Command};

#[derive(Parser)]
#[command(
    name = "gsot",
    version,
    about = "Group-structured adversarial training"
)]
struct Args {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model and write model.txt and trace.csv
    Train(Common),
    /// Evaluate a model under the configured attack ladder, write metrics.csv
    Eval(Common),
    /// Write attacked copies of the test set
    Attack(Common),
    /// Rank features by accumulated group-sparse perturbation
    SelectFeatures(Common),
    /// Extract the subspace targeted by low-rank perturbations
    SelectBasis(Common),
    /// Run the oracle suite
    Verify(Common),
}

fn main() -> ExitCode {
    let (cmd, c) = match Args::parse().cmd {
        Cmd::Train(c) => (Command::Train, c),
        Cmd::Eval(c) => (Command::Eval, c),
        Cmd::Attack(c) => (Command::Attack, c),
        Cmd::SelectFeatures(c) => (Command::SelectFeatures, c),
        Cmd::SelectBasis(c) => (Command::SelectBasis, c),
        Cmd::Verify(c) => (Command::Verify, c),
    };
    match cli::run(cmd, &c.config, c.seed, c.out) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
