//! `cognisnn`: runs one experiment per invocation and records it in a
//! manifest under the output directory.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cognisnn::experiment::{error_record, exit_code, rerun, run, Command, ExperimentConfig, RunRequest, MANIFEST_FILE};
use cognisnn::{Error, Result};

#[derive(Parser)]
#[command(name = "cognisnn", version, about = "Random-graph spiking network experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the configured topology.
    GenerateGraph(RunArgs),
    /// Train a fresh model on the first task.
    Train(RunArgs),
    /// Evaluate a checkpoint on the first task's test split.
    Eval(RunArgs),
    /// Rank source-to-sink paths by betweenness.
    Paths(RunArgs),
    /// Critical-path and vanilla LwF on the second synthetic task.
    Continual(RunArgs),
    /// SOP/MAC counts and energy under the OR and ADD gates.
    Energy(RunArgs),
    /// Compare tape gradients with finite differences.
    Gradcheck(RunArgs),
    /// Re-execute a recorded run and compare output hashes.
    Rerun {
        /// Directory of the recorded run.
        #[arg(long)]
        run: PathBuf,
        /// Fresh directory for the re-execution.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; must be new or empty.
    #[arg(long)]
    out: PathBuf,
    /// Replaces every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Train with the smooth surrogate forward pass.
    #[arg(long)]
    smooth_mode: bool,
    /// Model checkpoint to start from.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

impl RunArgs {
    fn request(self, command: Command) -> Result<RunRequest> {
        let mut config = match &self.config {
            Some(p) => ExperimentConfig::from_toml(
                &std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            )?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            config = config.with_seed(seed);
        }
        if self.smooth_mode {
            config.train.smooth_mode = true;
        }
        Ok(RunRequest {
            command,
            config,
            out_dir: self.out,
            checkpoint: self.checkpoint,
        })
    }
}

fn execute(cmd: Cmd) -> Result<ExitCode> {
    let (command, args) = match cmd {
        Cmd::GenerateGraph(a) => (Command::GenerateGraph, a),
        Cmd::Train(a) => (Command::Train, a),
        Cmd::Eval(a) => (Command::Eval, a),
        Cmd::Paths(a) => (Command::Paths, a),
        Cmd::Continual(a) => (Command::Continual, a),
        Cmd::Energy(a) => (Command::Energy, a),
        Cmd::Gradcheck(a) => (Command::GradCheck, a),
        Cmd::Rerun { run, out } => {
            let check = rerun(&run, &out)?;
            if check.identical() {
                println!("identical outputs={}", check.rerun.outputs.len());
                return Ok(ExitCode::SUCCESS);
            }
            for name in &check.mismatched {
                println!("mismatch {name}");
            }
            return Ok(ExitCode::from(1));
        }
    };
    let req = args.request(command)?;
    let outcome = run(&req)?;
    print!("{}", outcome.summary);
    println!("manifest={}", req.out_dir.join(MANIFEST_FILE).display());
    match outcome.failure {
        Some(e) => Err(e),
        None => Ok(ExitCode::SUCCESS),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", error_record(&e));
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
