//! Thin command-line front end over the library pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use radiolam::cli;

#[derive(Parser)]
#[command(
    name = "radiolam",
    about = "Fine-grained 3D radio map estimation from ultra-sparse RSS samples"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled scene dataset.
    GenScenes {
        /// JSON run configuration.
        config: PathBuf,
        /// Output dataset directory.
        out_dir: PathBuf,
    },
    /// Train the mixture-of-experts generator (cold start + fine-tune).
    Train {
        config: PathBuf,
        /// Dataset directory produced by gen-scenes.
        data_dir: PathBuf,
        /// Output checkpoint directory.
        out_checkpoint: PathBuf,
    },
    /// Estimate the radio map of one target plane.
    Estimate {
        /// Checkpoint directory.
        checkpoint: PathBuf,
        /// Scene directory or manifest path.
        scene: PathBuf,
        /// Samples CSV.
        samples: PathBuf,
        /// Target height index.
        target_h: usize,
        /// Output prefix; writes <prefix>.rmt, <prefix>.pgm, <prefix>.report.json.
        out_prefix: PathBuf,
        /// Number of generated candidates.
        #[arg(long, default_value_t = 16)]
        candidates: usize,
        /// Skip sample projection (ablation).
        #[arg(long)]
        no_augment: bool,
        /// Return candidate 0 instead of electing (ablation).
        #[arg(long)]
        no_election: bool,
        #[arg(long)]
        seed: Option<u64>,
        /// Optional JSON run configuration.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Evaluate methods over a dataset and write a metrics CSV.
    Eval {
        data_dir: PathBuf,
        /// Comma-separated methods: rbf, kriging, radiolam.
        methods: String,
        out_csv: PathBuf,
        /// Heights to evaluate (defaults to all).
        #[arg(long, value_delimiter = ',')]
        heights: Option<Vec<usize>>,
        /// Checkpoint directory (required for method radiolam).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        no_augment: bool,
        #[arg(long)]
        no_election: bool,
    },
    /// Render a 2D RMT tensor as a PGM heatmap.
    Render { map_rmt: PathBuf, out_pgm: PathBuf },
    /// Run an interpolation baseline on one target plane.
    Baseline {
        /// rbf or kriging.
        #[arg(long)]
        method: String,
        scene: PathBuf,
        samples: PathBuf,
        target_h: usize,
        out_rmt: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn run(cmd: Command) -> radiolam::Result<()> {
    match cmd {
        Command::GenScenes { config, out_dir } => cli::cmd_gen_scenes(&config, &out_dir),
        Command::Train { config, data_dir, out_checkpoint } => {
            cli::cmd_train(&config, &data_dir, &out_checkpoint)
        }
        Command::Estimate {
            checkpoint,
            scene,
            samples,
            target_h,
            out_prefix,
            candidates,
            no_augment,
            no_election,
            seed,
            config,
        } => cli::cmd_estimate(&cli::EstimateArgs {
            checkpoint,
            scene,
            samples,
            target_h,
            out_prefix,
            candidates,
            no_augment,
            no_election,
            seed,
            config,
        }),
        Command::Eval {
            data_dir,
            methods,
            out_csv,
            heights,
            checkpoint,
            config,
            seed,
            no_augment,
            no_election,
        } => cli::cmd_eval(&cli::EvalArgs {
            data_dir,
            methods: methods.split(',').map(|s| s.trim().to_string()).collect(),
            heights,
            out_csv,
            checkpoint,
            config,
            seed,
            no_augment,
            no_election,
        }),
        Command::Render { map_rmt, out_pgm } => cli::cmd_render(&map_rmt, &out_pgm),
        Command::Baseline { method, scene, samples, target_h, out_rmt, config } => {
            cli::cmd_baseline(&cli::BaselineArgs {
                method,
                scene,
                samples,
                target_h,
                out_rmt,
                config,
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("radiolam: {e}");
            ExitCode::FAILURE
        }
    }
}
