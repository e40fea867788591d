use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use tbnn_core::posterior::Potential;
use tbnn_core::priors::PriorSpec;
use tbnn_core::rng::derive_seed;
use tbnn_core::samplers::{run_chain, SampleArchive};

use crate::archive::{self, ChainSummary, RunSummary};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::load::Splits;

/// Seeds of chain `index`: `(sampler, initialization)`.
pub fn chain_seeds(master: u64, index: usize) -> (u64, u64) {
    (derive_seed(master, 2 * index as u64), derive_seed(master, 2 * index as u64 + 1))
}

/// Runs `cfg.chains` chains of one (prior, temperature) cell and writes
/// them under `out`.
pub fn run_cell(
    cfg: &RunConfig,
    prior: &PriorSpec,
    temperature: f64,
    splits: &Splits,
    out: &Path,
) -> CliResult<RunSummary> {
    let pot = Potential::new(cfg.model.clone(), prior.clone(), Arc::new(splits.train.clone()))
        .map_err(CliError::config_from)?
        .with_precision(cfg.precision);
    std::fs::create_dir_all(out)?;
    let results: Vec<CliResult<ChainSummary>> = (0..cfg.chains)
        .into_par_iter()
        .map(|c| {
            let (seed, init_seed) = chain_seeds(cfg.seed, c);
            let mut sc = cfg.sampler.clone();
            sc.seed = seed;
            sc.temperature = temperature;
            let init = cfg.model.init_params(sc.init, prior, init_seed)?;
            log::info!("chain {c}: seed {seed}");
            let a: SampleArchive = run_chain(&sc, &pot, init)?;
            let summary = ChainSummary {
                index: c,
                seed,
                init_seed,
                draws: a.draws.len(),
                retained: a.retained().count(),
                diverged: a.diverged(),
                divergence: a.divergence.clone(),
            };
            if let Some(d) = &a.divergence {
                log::warn!("chain {c} diverged at epoch {}: {}", d.epoch, d.reason);
            }
            archive::write_chain(&archive::chain_dir(out, c), &summary, &a, cfg.checkpoint_dtype)?;
            Ok(summary)
        })
        .collect();
    let chains = results.into_iter().collect::<CliResult<Vec<_>>>()?;
    let mut cell_cfg = cfg.clone();
    cell_cfg.prior = prior.clone();
    cell_cfg.sampler.temperature = temperature;
    archive::write_json(&out.join(archive::CONFIG_FILE), &cell_cfg)?;
    let summary = RunSummary {
        prior: prior.family.name().to_string(),
        temperature,
        master_seed: cfg.seed,
        diverged_chains: chains.iter().filter(|c| c.diverged).count(),
        chains,
    };
    archive::write_json(&out.join(archive::SUMMARY_FILE), &summary)?;
    Ok(summary)
}

/// `sample`: one cell at `sampler.temperature`. Exits with the divergence
/// code when any chain diverged; the archive is written either way.
pub fn cmd_sample(cfg: &RunConfig, splits: &Splits, out: &Path) -> CliResult<RunSummary> {
    let summary = run_cell(cfg, &cfg.prior, cfg.sampler.temperature, splits, out)?;
    if summary.diverged_chains > 0 {
        return Err(CliError::diverged(format!(
            "{} of {} chains diverged; see {}",
            summary.diverged_chains,
            summary.chains.len(),
            out.join(archive::SUMMARY_FILE).display()
        )));
    }
    Ok(summary)
}
