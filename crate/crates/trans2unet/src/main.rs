use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use trans2unet::commands::{
    cmd_ablation, cmd_eval, cmd_gradcheck, cmd_params, cmd_predict, cmd_synth, cmd_train,
    DataSource,
};

#[derive(Parser)]
#[command(name = "trans2unet", version, about = "Dual-branch nuclei segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file; omitted means built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a single key, e.g. --set train.epochs=50 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Args)]
struct SourceArgs {
    /// Dataset directory containing images/ and masks/.
    #[arg(long, conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    /// Generate this many synthetic samples instead of reading a directory.
    #[arg(long)]
    synthetic: Option<usize>,
}

impl SourceArgs {
    fn resolve(&self, default_synthetic: Option<usize>) -> Result<DataSource, clap::Error> {
        match (&self.data, self.synthetic, default_synthetic) {
            (Some(d), None, _) => Ok(DataSource::Dir(d.clone())),
            (None, Some(n), _) => Ok(DataSource::Synthetic(n)),
            (None, None, Some(n)) => Ok(DataSource::Synthetic(n)),
            (None, None, None) => Err(clap::Error::raw(
                clap::error::ErrorKind::MissingRequiredArgument,
                "either --data <DIR> or --synthetic <N> is required\n",
            )),
            (Some(_), Some(_), _) => unreachable!("clap enforces the conflict"),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoints plus logs to --out.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        source: SourceArgs,
        /// Output directory for config.echo, metrics.csv, checkpoints, summary.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Evaluate a checkpoint on one split of a dataset.
    Eval {
        /// Checkpoint file written by train.
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        source: SourceArgs,
        /// Which split to evaluate: train, val, or test.
        #[arg(long, default_value = "test")]
        split: String,
        /// Seed that reproduces the split used in training.
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Segment a single image with a trained checkpoint.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input image (PGM or PPM) at the checkpoint's native size.
        #[arg(long)]
        image: PathBuf,
        /// Output mask path; probabilities go next to it as .prob.pgm.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic gradients against finite differences.
    Gradcheck {
        /// Operation suite to check, or "all".
        #[arg(long, default_value = "all")]
        op: String,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Print the per-module parameter breakdown for a config.
    Params {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Train the three architecture variants on one synthetic split.
    Ablation {
        #[command(flatten)]
        config: ConfigArgs,
        /// Number of synthetic samples to train each variant on.
        #[arg(long, default_value_t = 8)]
        synthetic: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Write a synthetic dataset (images/ and masks/) to disk.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        count: usize,
        /// Square image side; must be a multiple of 16.
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train { config, source, out, seed } => {
            let src = source.resolve(None).unwrap_or_else(|e| e.exit());
            cmd_train(config.config.as_deref(), &config.sets, &src, out, *seed)
        }
        Command::Eval { checkpoint, source, split, seed } => {
            let src = source.resolve(None).unwrap_or_else(|e| e.exit());
            cmd_eval(checkpoint, &src, split, *seed)
        }
        Command::Predict { checkpoint, image, out } => cmd_predict(checkpoint, image, out),
        Command::Gradcheck { op, seed } => cmd_gradcheck(op, *seed),
        Command::Params { config, seed } => {
            cmd_params(config.config.as_deref(), &config.sets, *seed)
        }
        Command::Ablation { config, synthetic, out, seed } => {
            cmd_ablation(config.config.as_deref(), &config.sets, *synthetic, out, *seed)
        }
        Command::Synth { out, count, size, seed } => cmd_synth(out, *count, *size, *seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
