use std::path::{Path, PathBuf};
use std::process::ExitCode;

use agentreg::experiment::{self, ExperimentConfig};
use agentreg::model::Variant;
use agentreg::{Error, Result};
use clap::{Args, Parser, Subcommand};

/// Agent-bridged image-to-point-cloud registration on synthetic data.
#[derive(Parser)]
#[command(name = "agentreg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (key = value lines); defaults when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train on the train split.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory.
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// M1, M6, M7 or M8; overrides the config's variant flags.
        #[arg(long, value_name = "NAME")]
        variant: Option<String>,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Replace estimated poses by ground truth.
        #[arg(long)]
        debug_oracle_pose: bool,
    },
    /// Train and evaluate the variant grid over several seeds.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
    },
    /// Print tables for eval or ablate output directories.
    Report {
        /// Directories holding report.json or ablation.json.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Also write summary.txt here.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::read(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn require_dir(p: &Path) -> Result<()> {
    if p.is_dir() {
        Ok(())
    } else {
        Err(Error::io(
            p,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such directory"),
        ))
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = experiment::threads_from_env()? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Synth { common } => {
            let cfg = load_config(&common)?;
            let m = experiment::cmd_synth(&cfg, &common.out)?;
            eprintln!("wrote {} pairs to {}", m.entries.len(), common.out.display());
        }
        Command::Train {
            common,
            data,
            variant,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(v) = variant {
                cfg.set_variant(Variant::named(&v)?);
                cfg.validate()?;
            }
            require_dir(&data)?;
            let ck = experiment::cmd_train(&cfg, &data, &common.out)?;
            eprintln!("wrote {}", ck.display());
        }
        Command::Eval {
            common,
            data,
            checkpoint,
            debug_oracle_pose,
        } => {
            let cfg = load_config(&common)?;
            require_dir(&data)?;
            let rep = experiment::cmd_eval(&cfg, &checkpoint, &data, &common.out, debug_oracle_pose)?;
            if rep.empty {
                eprintln!("test split is empty; wrote an empty report");
            }
            println!(
                "IR {:.3}  FMR {:.3}  RR {:.3}  PIR {:.3}  ({} pairs)",
                rep.ir,
                rep.fmr,
                rep.rr,
                rep.pir,
                rep.pairs.len()
            );
        }
        Command::Ablate { common, data } => {
            let cfg = load_config(&common)?;
            require_dir(&data)?;
            let table = experiment::cmd_ablate(&cfg, &data, &common.out)?;
            print!("{}", table.to_csv());
        }
        Command::Report { runs, out } => {
            print!("{}", experiment::cmd_report(&runs, out.as_deref())?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
