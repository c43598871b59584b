use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use unilat::commands::{self, Overrides};
use unilat_core::train::Ablations;

#[derive(Parser)]
#[command(name = "unilat", version, about = "Train, sample and evaluate latent diffusion autoencoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct TrainFlags {
    /// Seed for training, sampling and evaluation (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Number of optimizer steps (overrides the config).
    #[arg(long)]
    steps: Option<usize>,
    /// Replace existing artifacts.
    #[arg(long)]
    overwrite: bool,
    /// Stop-gradient into the prior with a discounted N(0, I) KL.
    #[arg(long)]
    stop_gradient_prior: bool,
    /// Encode at log-SNR 10 instead of the configured value.
    #[arg(long)]
    high_precision_latents: bool,
    /// Let the encoder predict its own noise level.
    #[arg(long)]
    learned_variance: bool,
    /// Deterministic decoder trained with MSE.
    #[arg(long)]
    mse_reconstruction: bool,
    /// Closed-form KL to N(0, I) instead of the diffusion prior.
    #[arg(long)]
    normal_prior: bool,
}

impl TrainFlags {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            steps: self.steps,
            ablations: Ablations {
                stop_gradient_prior: self.stop_gradient_prior,
                high_precision_latents: self.high_precision_latents,
                learned_variance: self.learned_variance,
                mse_reconstruction: self.mse_reconstruction,
                normal_prior: self.normal_prior,
            },
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Stage one: train encoder, prior and decoder jointly.
    TrainAe {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        run_dir: PathBuf,
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Stage two: train the base model on the frozen encoder of a stage-one run.
    TrainBase {
        /// Stage-one run directory.
        #[arg(long)]
        ae_run_dir: PathBuf,
        /// Training settings; defaults to the stage-one config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        run_dir: PathBuf,
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Train encoder, decoder, prior and base model in one loop.
    TrainSingle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        run_dir: PathBuf,
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Generate images from the latest checkpoint of a run.
    Sample {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Draw latents from the prior even when a base model was trained.
        #[arg(long)]
        prior: bool,
        #[arg(long)]
        overwrite: bool,
    },
    /// Reconstruct held-out images.
    Reconstruct {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        overwrite: bool,
    },
    /// Write PSNR, rFID and bitrate rows to metrics.csv.
    Eval {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        overwrite: bool,
    },
    /// Train and evaluate one model per value of the configured sweep axis.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        run_dir: PathBuf,
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Parameter and FLOP counts of a configuration.
    Flops {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write a dataset as PNG files.
    ExportDataset {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        overwrite: bool,
    },
    /// Write a complete default configuration.
    InitConfig {
        #[arg(long)]
        out: PathBuf,
        /// Small 200-step configuration on the blobs set.
        #[arg(long)]
        smoke: bool,
        #[arg(long)]
        overwrite: bool,
    },
}

fn run(cli: Cli) -> anyhow::Result<String> {
    let out = match cli.command {
        Command::TrainAe { config, run_dir, flags } => {
            commands::train_ae(&config, &run_dir, &flags.overrides(), flags.overwrite).context("train-ae failed")?
        }
        Command::TrainBase { ae_run_dir, config, run_dir, flags } => {
            commands::train_base(&ae_run_dir, config.as_deref(), &run_dir, &flags.overrides(), flags.overwrite)
                .context("train-base failed")?
        }
        Command::TrainSingle { config, run_dir, flags } => {
            commands::train_single(&config, &run_dir, &flags.overrides(), flags.overwrite).context("train-single failed")?
        }
        Command::Sample { run_dir, n, seed, prior, overwrite } => commands::sample(&run_dir, n, seed, prior, overwrite)?,
        Command::Reconstruct { run_dir, n, overwrite } => commands::reconstruct(&run_dir, n, overwrite)?,
        Command::Eval { run_dir, overwrite } => commands::eval(&run_dir, overwrite)?,
        Command::Sweep { config, run_dir, flags } => {
            commands::sweep(&config, &run_dir, &flags.overrides(), flags.overwrite).context("sweep failed")?
        }
        Command::Flops { config } => commands::flops(config.as_deref())?,
        Command::ExportDataset { config, out, count, overwrite } => commands::export_dataset(&config, &out, count, overwrite)?,
        Command::InitConfig { out, smoke, overwrite } => commands::init_config(&out, smoke, overwrite)?,
    };
    Ok(out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(text) => {
            println!("{}", text.trim_end());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
