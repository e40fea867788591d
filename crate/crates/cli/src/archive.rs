//! On-disk sample archives: one directory per chain, one checkpoint plus a
//! metadata file per draw, and a summary for the whole run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tbnn_core::checkpoint::{self, Dtype};
use tbnn_core::samplers::{DivergenceRecord, DrawMeta, SampleArchive};
use tbnn_core::ParamTree;

use crate::error::{CliError, CliResult};

pub const SUMMARY_FILE: &str = "summary.json";
pub const CHAIN_FILE: &str = "chain.json";
pub const CONFIG_FILE: &str = "config.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub index: usize,
    pub seed: u64,
    pub init_seed: u64,
    pub draws: usize,
    pub retained: usize,
    pub diverged: bool,
    pub divergence: Option<DivergenceRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub prior: String,
    pub temperature: f64,
    pub master_seed: u64,
    pub chains: Vec<ChainSummary>,
    pub diverged_chains: usize,
}

pub fn chain_dir(root: &Path, index: usize) -> PathBuf {
    root.join(format!("chain_{index:02}"))
}

fn draw_stem(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("draw_{index:04}"))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

/// Writes one chain's draws and its `chain.json`.
pub fn write_chain(dir: &Path, summary: &ChainSummary, archive: &SampleArchive, dtype: Dtype) -> CliResult<()> {
    if dir.exists() {
        std::fs::remove_dir_all(dir)?;
    }
    std::fs::create_dir_all(dir)?;
    for d in &archive.draws {
        let stem = draw_stem(dir, d.meta.index);
        checkpoint::write(&d.params, dtype, &stem)?;
        let mut meta = stem.into_os_string();
        meta.push(".meta.json");
        write_json(Path::new(&meta), &d.meta)?;
    }
    write_json(&dir.join(CHAIN_FILE), summary)
}

#[derive(Clone, Debug)]
pub struct ChainOnDisk {
    pub dir: PathBuf,
    pub summary: ChainSummary,
    /// Draw metadata in draw order, burn-in included.
    pub metas: Vec<DrawMeta>,
}

impl ChainOnDisk {
    pub fn read(dir: &Path) -> CliResult<Self> {
        let summary: ChainSummary = read_json(&dir.join(CHAIN_FILE))?;
        let metas = (0..summary.draws)
            .map(|i| {
                let mut p = draw_stem(dir, i).into_os_string();
                p.push(".meta.json");
                read_json(Path::new(&p))
            })
            .collect::<CliResult<Vec<DrawMeta>>>()?;
        Ok(Self { dir: dir.to_path_buf(), summary, metas })
    }

    pub fn retained_metas(&self) -> Vec<&DrawMeta> {
        self.metas.iter().filter(|m| !m.burn_in).collect()
    }

    /// Parameters of the post-burn-in draws.
    pub fn retained_params(&self) -> CliResult<Vec<ParamTree>> {
        self.retained_metas().iter().map(|m| Ok(checkpoint::read(&draw_stem(&self.dir, m.index))?)).collect()
    }
}

/// Chains of a run directory (with `summary.json`) or a single chain
/// directory, ordered by index.
pub fn read_chains(path: &Path) -> CliResult<Vec<ChainOnDisk>> {
    if path.join(CHAIN_FILE).exists() {
        return Ok(vec![ChainOnDisk::read(path)?]);
    }
    let summary: RunSummary = read_json(&path.join(SUMMARY_FILE))?;
    summary.chains.iter().map(|c| ChainOnDisk::read(&chain_dir(path, c.index))).collect()
}

/// `summary.json` of the run containing `path`, if any.
pub fn run_summary(path: &Path) -> CliResult<Option<RunSummary>> {
    for p in [path.to_path_buf(), path.join("..")] {
        let f = p.join(SUMMARY_FILE);
        if f.exists() {
            return read_json(&f).map(Some);
        }
    }
    Ok(None)
}
