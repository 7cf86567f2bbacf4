//! The `gpae-lab` command. Exit status: 0 on success, 1 when a checked claim
//! fails or a run aborts, 2 for config and usage errors.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};
use gpae_core::trainer::TrainConfig;
use gpae_lab::commands::{self, GradcheckCommandConfig, Seeded};
use gpae_lab::compare::CompareConfig;
use gpae_lab::gap::GapConfig;
use gpae_lab::verify::VerifyConfig;
use gpae_lab::{load_config, LabError, RunSummary};
use serde::de::DeserializeOwned;

/// Output root used when `--out` is not given; each subcommand writes to
/// a directory named after itself beneath it.
const OUT_ENV: &str = "GPAE_LAB_OUT";

#[derive(Parser)]
#[command(name = "gpae-lab", version, about = "Exact verification and small-scale experiments for multi-agent advantage estimators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON config file; omitted fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run on a single worker thread.
    #[arg(long, global = true)]
    single_thread: bool,
    /// Also list the files written.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    /// Print nothing on success.
    #[arg(short, long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Certify operator and estimator identities by exact enumeration.
    Verify,
    /// Train actor-critic agents and stream metrics.
    Train,
    /// Compare trace-truncation schemes by their gap statistics.
    Compare,
    /// Measure the advantage gap of each estimator on the anomaly model.
    Gap,
    /// Check analytic gradients against finite differences.
    Gradcheck,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Self::Verify => "verify",
            Self::Train => "train",
            Self::Compare => "compare",
            Self::Gap => "gap",
            Self::Gradcheck => "gradcheck",
        }
    }
}

fn prepare<T: DeserializeOwned + Default + Seeded>(cli: &Cli) -> Result<T, LabError> {
    let mut cfg: T = load_config(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli) -> Result<PathBuf, LabError> {
    let dir = match (&cli.out, std::env::var_os(OUT_ENV)) {
        (Some(dir), _) => dir.clone(),
        (None, Some(root)) => Path::new(&root).join(cli.command.name()),
        (None, None) => return Err(LabError::Usage(format!("--out is required when {OUT_ENV} is unset"))),
    };
    std::fs::create_dir_all(&dir).map_err(|e| LabError::Usage(format!("cannot create output directory {}: {e}", dir.display())))?;
    Ok(dir)
}

fn run(cli: &Cli) -> Result<RunSummary, LabError> {
    if cli.single_thread {
        rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build_global()
            .map_err(|e| LabError::Usage(format!("cannot configure thread pool: {e}")))?;
    }
    match cli.command {
        Command::Verify => {
            let cfg: VerifyConfig = prepare(cli)?;
            commands::verify(&cfg, &out_dir(cli)?)
        }
        Command::Train => {
            let cfg: TrainConfig = prepare(cli)?;
            cfg.validate()?;
            commands::train(&cfg, &out_dir(cli)?)
        }
        Command::Compare => {
            let cfg: CompareConfig = prepare(cli)?;
            commands::compare(&cfg, &out_dir(cli)?)
        }
        Command::Gap => {
            let cfg: GapConfig = prepare(cli)?;
            commands::gap(&cfg, &out_dir(cli)?)
        }
        Command::Gradcheck => {
            let cfg: GradcheckCommandConfig = prepare(cli)?;
            commands::gradcheck(&cfg, &out_dir(cli)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            if !cli.quiet || !summary.passed {
                let mut stdout = std::io::stdout().lock();
                for line in &summary.lines {
                    let _ = writeln!(stdout, "{line}");
                }
                if cli.verbose > 0 {
                    for file in &summary.files {
                        let _ = writeln!(stdout, "wrote {file}");
                    }
                }
            }
            ExitCode::from(summary.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
