use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tbnn_cli::{commands, load, CliError, CliResult, RunConfig};

#[derive(Parser)]
#[command(name = "tbnn", version, about = "Tempered-posterior SG-MCMC for Bayesian neural networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the master seed of the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// MAP estimate by momentum SGD.
    Train(Common),
    /// Sample chains at the configured prior and temperature.
    Sample(Common),
    /// Score a sample archive on the test set.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Run or chain directory written by `sample`.
        #[arg(long)]
        archive: PathBuf,
    },
    /// Split-R̂ and temperature estimates over archives.
    Diagnose {
        #[command(flatten)]
        common: Common,
        #[arg(required = true)]
        archives: Vec<PathBuf>,
    },
    /// Weight statistics of checkpoints.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(required = true)]
        checkpoints: Vec<PathBuf>,
    },
    /// Sample, evaluate and diagnose every (prior, temperature) cell.
    Sweep(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Train(c) | Command::Sample(c) | Command::Sweep(c) => c,
            Command::Eval { common, .. } | Command::Diagnose { common, .. } | Command::Analyze { common, .. } => common,
        }
    }
}

fn config(c: &Common) -> CliResult<RunConfig> {
    let path = c.config.as_ref().ok_or_else(|| CliError::config("--config is required"))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    let common = cli.command.common().clone();
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(format!("--threads: {e}")))?;
    }
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("."));
    match &cli.command {
        Command::Train(c) => {
            let cfg = config(c)?;
            let s = commands::cmd_train(&cfg, &load::load(&cfg)?, &out)?;
            println!("train error {:.6}, test error {:.6}", s.train_error, s.test_error);
        }
        Command::Sample(c) => {
            let cfg = config(c)?;
            let s = commands::cmd_sample(&cfg, &load::load(&cfg)?, &out)?;
            println!("{} chains written to {}", s.chains.len(), out.display());
        }
        Command::Eval { common, archive } => {
            let cfg = config(common)?;
            let out = common.out.clone().unwrap_or_else(|| archive.clone());
            let r = commands::cmd_eval(&cfg, &load::load(&cfg)?, archive, &out)?;
            println!("error {:.6} nll {:.6} ece {:.6}", r.pooled.error, r.pooled.nll, r.pooled.ece);
        }
        Command::Diagnose { archives, .. } => {
            let r = commands::cmd_diagnose(archives, &out)?;
            for g in &r.groups {
                println!(
                    "{} T={}: R̂ loss {:?} potential {:?} log-prior {:?}",
                    g.prior,
                    g.temperature,
                    g.rhat.loss.value(),
                    g.rhat.potential.value(),
                    g.rhat.log_prior.value()
                );
            }
        }
        Command::Analyze { common, checkpoints } => {
            let r = commands::cmd_analyze(checkpoints, common.seed.unwrap_or(0), &out)?;
            println!("analyzed {} checkpoints into {}", r.len(), out.display());
        }
        Command::Sweep(c) => {
            let cfg = config(c)?;
            let m = commands::cmd_sweep(&cfg, &load::load(&cfg)?, &out)?;
            let failed = m.cells.iter().filter(|c| !c.ok).count();
            println!("{} cells, {failed} failed", m.cells.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
