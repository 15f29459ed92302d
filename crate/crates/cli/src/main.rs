use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use steerlab_cli::{
    cmd_augment_preview, cmd_eval, cmd_ingest, cmd_saliency, cmd_train, CliError, CmdResult, EvalArgs, SaliencyArgs,
    Split, EXIT_USAGE,
};

/// Steering-angle regression: ingest, train, evaluate, preview augmentation
/// and render saliency maps.
#[derive(Parser)]
#[command(name = "steerlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a dataset root and summarise its videos and labels.
    Ingest { root: PathBuf },
    /// Train the model described by a config file.
    Train {
        config: PathBuf,
        /// Override a config key, e.g. `--set epochs=4`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Print the RMSE of a checkpoint and/or the zero-predictor baseline.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Use this config instead of the one stored in the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "val")]
        split: SplitArg,
        /// Also report the RMSE of always predicting 0.
        #[arg(long)]
        baseline: bool,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Write before/after PNG pairs of training augmentation.
    AugmentPreview {
        config: PathBuf,
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Render input-gradient saliency for one frame or one 25-frame window.
    Saliency {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input frame; repeat in sequence-major order for a window.
        #[arg(long = "frame", required = true)]
        frames: Vec<PathBuf>,
        /// True steering value, to draw the angle dial.
        #[arg(long, allow_hyphen_values = true)]
        truth: Option<f64>,
        #[arg(long)]
        k_display: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    All,
}

fn run(cli: Cli) -> CmdResult<()> {
    let mut out = std::io::stdout().lock();
    match cli.command {
        Command::Ingest { root } => cmd_ingest(&root, &mut out).map(drop),
        Command::Train { config, overrides } => cmd_train(&config, &overrides, &mut out).map(drop),
        Command::Eval {
            checkpoint,
            config,
            dataset,
            split,
            baseline,
            overrides,
        } => {
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Val => Split::Val,
                SplitArg::All => Split::All,
            };
            let args = EvalArgs {
                checkpoint,
                config,
                dataset,
                split,
                baseline,
                overrides,
            };
            cmd_eval(&args, &mut out).map(drop)
        }
        Command::AugmentPreview {
            config,
            n,
            out: dir,
            overrides,
        } => cmd_augment_preview(&config, &overrides, n, &dir, &mut out).map(drop),
        Command::Saliency {
            checkpoint,
            frames,
            truth,
            k_display,
            out: dir,
        } => {
            let args = SaliencyArgs {
                checkpoint,
                frames,
                truth,
                k_display,
                out_dir: dir,
            };
            cmd_saliency(&args, &mut out).map(drop)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError { code, error }) => {
            log::debug!("{error:?}");
            eprintln!("error: {error:#}");
            ExitCode::from(code)
        }
    }
}
