mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Pretrain, adapt, evaluate and ablate knowledge-conditioned molecular
/// graph encoders.
#[derive(Debug, Parser)]
#[command(name = "moladapt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Molecules in MGF format.
    #[arg(long)]
    data: PathBuf,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Contrastive pre-training of the 2D encoder.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Encoder checkpoint to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Adapt a frozen encoder on one few-shot split.
    Adapt {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Repeated-episode evaluation of the full model.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Encoder checkpoint or adapted-model file.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Per-episode results CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Repeated-episode evaluation of every configured ablation variant.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of the adaptation objective on the first molecule.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Encoder checkpoint; a seeded random encoder is used when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-4)]
        eps: f64,
        #[arg(long, hide = true)]
        fault_sigmoid_scale: Option<f64>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Pretrain { common, out } => commands::pretrain(&common, &out),
        Command::Adapt { common, checkpoint, out } => commands::adapt(&common, &checkpoint, &out),
        Command::Eval { common, checkpoint, out } => commands::eval(&common, &checkpoint, &out),
        Command::Ablate { common, checkpoint, out } => commands::ablate(&common, &checkpoint, &out),
        Command::Gradcheck {
            common,
            checkpoint,
            eps,
            fault_sigmoid_scale,
        } => commands::gradcheck(&common, checkpoint.as_deref(), eps, fault_sigmoid_scale),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
