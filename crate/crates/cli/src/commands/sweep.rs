use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tbnn_core::metrics::EvalReport;

use super::diagnose::{diagnose_group, GroupDiagnostics, DIAGNOSTICS_FILE};
use super::eval::{evaluate, write_curve, CURVE_FILE, EVAL_FILE};
use super::sample::run_cell;
use crate::archive::{read_chains, write_json};
use crate::config::RunConfig;
use crate::error::CliResult;
use crate::load::Splits;

pub const MANIFEST_FILE: &str = "sweep_manifest.json";
pub const CURVE_SUMMARY_FILE: &str = "curve_summary.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub prior: String,
    pub temperature: f64,
    /// Relative to the sweep directory.
    pub dir: PathBuf,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
    pub diverged_chains: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub max_rhat: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepManifest {
    pub master_seed: u64,
    pub cells: Vec<CellRecord>,
}

/// Mean and standard error across the chains of one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub prior: String,
    pub temperature: f64,
    pub chains: usize,
    pub error_mean: f64,
    pub error_se: f64,
    pub nll_mean: f64,
    pub nll_se: f64,
    pub ece_mean: f64,
    pub ece_se: f64,
    pub ood_auroc_mean: Option<f64>,
    pub ood_auroc_se: Option<f64>,
}

fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (m, f64::NAN);
    }
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

pub fn curve_point(rows: &[EvalReport]) -> CurvePoint {
    let col = |f: &dyn Fn(&EvalReport) -> f64| mean_se(&rows.iter().map(f).collect::<Vec<_>>());
    let (error_mean, error_se) = col(&|r| r.error);
    let (nll_mean, nll_se) = col(&|r| r.nll);
    let (ece_mean, ece_se) = col(&|r| r.ece);
    let ood: Option<Vec<f64>> = rows.iter().map(|r| r.ood_auroc).collect();
    let (ood_auroc_mean, ood_auroc_se) = match ood {
        Some(v) if !v.is_empty() => {
            let (m, s) = mean_se(&v);
            (Some(m), Some(s))
        }
        _ => (None, None),
    };
    CurvePoint {
        prior: rows[0].prior.clone(),
        temperature: rows[0].temperature,
        chains: rows.len(),
        error_mean,
        error_se,
        nll_mean,
        nll_se,
        ece_mean,
        ece_se,
        ood_auroc_mean,
        ood_auroc_se,
    }
}

pub fn cell_dir_name(prior: &str, temperature: f64) -> String {
    format!("{prior}_T{temperature}")
}

struct CellOutcome {
    diverged: usize,
    rows: Vec<EvalReport>,
    diagnostics: Option<GroupDiagnostics>,
}

fn run_one(cfg: &RunConfig, prior: &tbnn_core::priors::PriorSpec, t: f64, splits: &Splits, dir: &Path) -> CliResult<CellOutcome> {
    let summary = run_cell(cfg, prior, t, splits, dir)?;
    let eval = evaluate(cfg, splits, dir)?;
    write_json(&dir.join(EVAL_FILE), &eval)?;
    write_curve(&dir.join(CURVE_FILE), &eval.chains)?;
    let usable: Vec<_> = read_chains(dir)?.into_iter().filter(|c| !c.summary.diverged).collect();
    let diagnostics = if usable.len() >= 2 {
        let d = diagnose_group(&summary.prior, t, &usable)?;
        write_json(&dir.join(DIAGNOSTICS_FILE), &d)?;
        Some(d)
    } else {
        log::warn!("{}: fewer than 2 usable chains, skipping R̂", dir.display());
        None
    };
    Ok(CellOutcome { diverged: summary.diverged_chains, rows: eval.chains, diagnostics })
}

/// `sweep`: every (prior, temperature) cell in configuration order. Cells
/// that fail are recorded in the manifest and the sweep moves on.
pub fn cmd_sweep(cfg: &RunConfig, splits: &Splits, out: &Path) -> CliResult<SweepManifest> {
    std::fs::create_dir_all(out.join("cells"))?;
    let mut cells = Vec::new();
    let mut rows = Vec::new();
    let mut points = Vec::new();
    for prior in cfg.priors() {
        for &t in &cfg.temperature_grid {
            let name = prior.family.name();
            let rel = PathBuf::from("cells").join(cell_dir_name(name, t));
            log::info!("cell {name} T={t}");
            let mut rec = CellRecord {
                prior: name.to_string(),
                temperature: t,
                dir: rel.clone(),
                ok: false,
                error: None,
                diverged_chains: 0,
                max_rhat: None,
            };
            match run_one(cfg, &prior, t, splits, &out.join(&rel)) {
                Ok(c) => {
                    rec.ok = true;
                    rec.diverged_chains = c.diverged;
                    rec.max_rhat = c.diagnostics.and_then(|d| {
                        [d.rhat.loss, d.rhat.potential, d.rhat.log_prior]
                            .iter()
                            .filter_map(|r| r.value())
                            .reduce(f64::max)
                    });
                    if !c.rows.is_empty() {
                        points.push(curve_point(&c.rows));
                    }
                    rows.extend(c.rows);
                }
                Err(e) => {
                    log::error!("cell {name} T={t} failed: {e}");
                    rec.error = Some(e.to_string());
                }
            }
            cells.push(rec);
            let manifest = SweepManifest { master_seed: cfg.seed, cells: cells.clone() };
            write_json(&out.join(MANIFEST_FILE), &manifest)?;
        }
    }
    write_curve(&out.join(CURVE_FILE), &rows)?;
    write_summary(&out.join(CURVE_SUMMARY_FILE), &points)?;
    Ok(SweepManifest { master_seed: cfg.seed, cells })
}

fn write_summary(path: &Path, points: &[CurvePoint]) -> CliResult<()> {
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "prior", "temperature", "chains", "error_mean", "error_se", "nll_mean", "nll_se", "ece_mean", "ece_se",
        "ood_auroc_mean", "ood_auroc_se",
    ])?;
    for p in points {
        w.write_record([
            p.prior.clone(),
            p.temperature.to_string(),
            p.chains.to_string(),
            p.error_mean.to_string(),
            p.error_se.to_string(),
            p.nll_mean.to_string(),
            p.nll_se.to_string(),
            p.ece_mean.to_string(),
            p.ece_se.to_string(),
            opt(p.ood_auroc_mean),
            opt(p.ood_auroc_se),
        ])?;
    }
    w.flush()?;
    Ok(())
}
