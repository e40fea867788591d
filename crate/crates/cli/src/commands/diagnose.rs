use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tbnn_core::diagnostics::{split_rhat, ChainMatrix, Rhat};
use tbnn_core::samplers::DrawMeta;

use super::eval::Excluded;
use crate::archive::{self, write_json, ChainOnDisk};
use crate::error::{CliError, CliResult};

pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RhatSet {
    /// Training-set negative log-likelihood.
    pub loss: Rhat,
    pub potential: Rhat,
    pub log_prior: Rhat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TempSummary {
    /// Mean over chains of the per-chain draw average.
    pub mean: f64,
    /// Standard error across chains.
    pub se: f64,
    pub per_chain: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorTemps {
    pub name: String,
    pub count: usize,
    pub kinetic: f64,
    pub configurational: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupDiagnostics {
    pub prior: String,
    pub temperature: f64,
    /// Chain seeds in the order used, ascending.
    pub seeds: Vec<u64>,
    pub draws_per_chain: usize,
    pub rhat: RhatSet,
    pub kinetic: TempSummary,
    pub configurational: TempSummary,
    pub per_tensor: Vec<TensorTemps>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub groups: Vec<GroupDiagnostics>,
    pub excluded: Vec<Excluded>,
}

fn summarize(per_chain: Vec<f64>) -> TempSummary {
    let n = per_chain.len() as f64;
    let mean = per_chain.iter().sum::<f64>() / n;
    let se = if per_chain.len() > 1 {
        (per_chain.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
    } else {
        f64::NAN
    };
    TempSummary { mean, se, per_chain }
}

fn rhat_of(draws: &[Vec<&DrawMeta>], f: impl Fn(&DrawMeta) -> f64) -> CliResult<Rhat> {
    let rows: Vec<Vec<f64>> = draws.iter().map(|c| c.iter().map(|m| f(m)).collect()).collect();
    Ok(split_rhat(&ChainMatrix::new(&rows)?)?)
}

fn mean_of<'a>(it: impl Iterator<Item = &'a DrawMeta>, f: impl Fn(&DrawMeta) -> f64) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), m| (s + f(m), n + 1));
    s / n as f64
}

/// Diagnostics of one (prior, temperature) group of chains.
pub fn diagnose_group(prior: &str, temperature: f64, chains: &[ChainOnDisk]) -> CliResult<GroupDiagnostics> {
    let mut chains: Vec<&ChainOnDisk> = chains.iter().collect();
    chains.sort_by_key(|c| (c.summary.seed, c.summary.index));
    if chains.len() < 2 {
        return Err(CliError::config(format!(
            "split-R̂ needs at least 2 chains for prior {prior} at T = {temperature}, got {}",
            chains.len()
        )));
    }
    let mut draws: Vec<Vec<&DrawMeta>> = chains.iter().map(|c| c.retained_metas()).collect();
    let len = draws.iter().map(Vec::len).min().unwrap_or(0);
    if draws.iter().any(|d| d.len() != len) {
        log::warn!("chains of {prior} at T = {temperature} differ in length; truncating to {len} draws");
    }
    for d in &mut draws {
        d.truncate(len);
    }
    let rhat = RhatSet {
        loss: rhat_of(&draws, |m| m.nll)?,
        potential: rhat_of(&draws, |m| m.potential)?,
        log_prior: rhat_of(&draws, |m| m.log_prior)?,
    };
    let kinetic = summarize(draws.iter().map(|d| mean_of(d.iter().copied(), |m| m.kinetic.mean)).collect());
    let configurational =
        summarize(draws.iter().map(|d| mean_of(d.iter().copied(), |m| m.configurational.mean)).collect());
    let all = || draws.iter().flatten().copied();
    let per_tensor = all()
        .next()
        .map(|m| {
            m.kinetic
                .groups
                .iter()
                .enumerate()
                .map(|(k, g)| TensorTemps {
                    name: g.name.clone(),
                    count: g.count,
                    kinetic: mean_of(all(), |m| m.kinetic.groups[k].value),
                    configurational: mean_of(all(), |m| m.configurational.groups[k].value),
                })
                .collect()
        })
        .unwrap_or_default();
    Ok(GroupDiagnostics {
        prior: prior.to_string(),
        temperature,
        seeds: chains.iter().map(|c| c.summary.seed).collect(),
        draws_per_chain: len,
        rhat,
        kinetic,
        configurational,
        per_tensor,
    })
}

/// Groups chains from all `archives` by (prior, temperature), dropping
/// diverged ones with a notice, and diagnoses each group.
pub fn diagnose(archives: &[PathBuf]) -> CliResult<DiagnosticsReport> {
    let mut groups: Vec<(String, f64, Vec<ChainOnDisk>)> = Vec::new();
    let mut excluded = Vec::new();
    for path in archives {
        let run = archive::run_summary(path)?;
        let (prior, temperature) = run.map_or(("unknown".to_string(), f64::NAN), |r| (r.prior, r.temperature));
        for c in archive::read_chains(path)? {
            if c.summary.diverged {
                log::warn!("excluding diverged chain {} (seed {}) of {}", c.summary.index, c.summary.seed, path.display());
                excluded.push(Excluded { index: c.summary.index, seed: c.summary.seed, reason: "diverged".into() });
                continue;
            }
            match groups.iter_mut().find(|g| g.0 == prior && g.1.to_bits() == temperature.to_bits()) {
                Some(g) => g.2.push(c),
                None => groups.push((prior.clone(), temperature, vec![c])),
            }
        }
    }
    if groups.is_empty() {
        return Err(CliError::config("no usable chains to diagnose"));
    }
    groups.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    excluded.sort_by_key(|e| (e.seed, e.index));
    let groups = groups.iter().map(|(p, t, c)| diagnose_group(p, *t, c)).collect::<CliResult<_>>()?;
    Ok(DiagnosticsReport { groups, excluded })
}

pub fn cmd_diagnose(archives: &[PathBuf], out: &Path) -> CliResult<DiagnosticsReport> {
    let report = diagnose(archives)?;
    std::fs::create_dir_all(out)?;
    write_json(&out.join(DIAGNOSTICS_FILE), &report)?;
    Ok(report)
}
