use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cribmil_cli::config::Settings;
use cribmil_cli::error::{CliError, CliResult};
use cribmil_cli::{stages, Ctx};

/// Weakly supervised detection of sieve-pattern glands on synthetic whole
/// slides: corpus synthesis, tiling, registration, training, inference and
/// evaluation.
#[derive(Parser)]
#[command(name = "cribmil", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Base seed (overrides the `seed` key).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Artifacts go to `<out-dir>/<stage>/`.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Override one key, e.g. `--set train.folds=5` (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate slides, masks, the manifest and the reader panel.
    Synth,
    /// Tissue masks, patch grids and patch stores.
    Tile,
    /// Align rescans to primary scans and transfer annotations.
    Register,
    /// Cross-validated training of the fold ensemble.
    Train,
    /// Score every non-training scan.
    Infer {
        /// Test-time views per model.
        #[arg(long)]
        n_views: Option<usize>,
        /// Report raw ensemble scores.
        #[arg(long)]
        no_calibration: bool,
        /// Threshold the raw score.
        #[arg(long)]
        threshold_raw: bool,
        /// Checkpoint to use instead of the training directory's (repeatable).
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
    },
    /// Metrics, curves and agreement on primary scans.
    Eval,
    /// Print every configuration key with its resolved value.
    Config,
}

fn settings(cli: &Cli) -> CliResult<Settings> {
    let mut s = Settings::load(cli.common.config.as_deref())?;
    for o in &cli.common.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got {o:?}")))?;
        s.set(k.trim(), v).map_err(|e| CliError::Config(format!("--set: {e}")))?;
    }
    if let Some(seed) = cli.common.seed {
        s.seed = seed;
    }
    if let Command::Infer {
        n_views,
        no_calibration,
        threshold_raw,
        ..
    } = &cli.command
    {
        if let Some(n) = n_views {
            s.infer.n_views = *n;
        }
        if *no_calibration {
            s.infer.calibrate = false;
        }
        if *threshold_raw {
            s.infer.threshold_raw = true;
        }
    }
    s.sync();
    s.validate()?;
    Ok(s)
}

fn run(cli: Cli) -> CliResult<()> {
    if cli.common.jobs == 0 {
        return Err(CliError::Config("--jobs must be at least 1".into()));
    }
    let s = settings(&cli)?;
    if let Command::Config = cli.command {
        print!("{}", s.render_documented());
        return Ok(());
    }
    let ctx = Ctx::new(&cli.common.out_dir, s);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.common.jobs)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Synth => stages::synth::run(&ctx),
        Command::Tile => stages::tile::run(&ctx),
        Command::Register => stages::register::run(&ctx),
        Command::Train => stages::train::run(&ctx),
        Command::Infer { checkpoint, .. } => stages::infer::run(&ctx, checkpoint),
        Command::Eval => stages::eval::run(&ctx),
        Command::Config => Ok(()),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
