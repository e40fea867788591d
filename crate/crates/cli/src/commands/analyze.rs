use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tbnn_core::checkpoint;
use tbnn_core::priors::Kernel;
use tbnn_core::rng::derive_seed;
use tbnn_core::weightstats::{
    fit_kernel_lengthscale, fit_location_scale, fit_student_t, offdiag_distribution, qq_data, singular_values,
    spatial_covariance, LengthscaleFit, MarginalFamily, MarginalFit,
};
use tbnn_core::{ParamEntry, Role};

use crate::archive::write_json;
use crate::error::{CliError, CliResult};

pub const REPORT_FILE: &str = "report.json";
pub const NU_FILE: &str = "nu_by_layer.csv";
pub const LENGTHSCALE_FILE: &str = "lengthscale.csv";
/// Q-Q files keep at most this many evenly spaced pairs.
pub const QQ_POINTS: usize = 1000;
pub const OFFDIAG_BINS: usize = 50;
/// Smaller tensors are listed as skipped; the Student-t fit needs this many.
pub const MIN_VALUES: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyFit {
    pub fit: MarginalFit,
    pub ks_statistic: f64,
    pub ks_ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub name: String,
    pub role: Role,
    pub shape: Vec<usize>,
    pub fits: Vec<FamilyFit>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub lengthscale: Vec<LengthscaleFit>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub kurtosis_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub top_singular_value: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointReport {
    pub checkpoint: PathBuf,
    pub layers: Vec<LayerReport>,
    /// Tensors with fewer than `MIN_VALUES` entries.
    pub skipped: Vec<String>,
}

/// Checkpoint stem of a path given with or without the `.json`/`.bin` suffix.
pub fn checkpoint_stem(p: &Path) -> PathBuf {
    match p.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("bin") => p.with_extension(""),
        _ => p.to_path_buf(),
    }
}

fn safe(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' }).collect()
}

fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn thin<T: Copy>(v: &[T], max: usize) -> Vec<T> {
    if v.len() <= max {
        return v.to_vec();
    }
    (0..max).map(|i| v[i * (v.len() - 1) / (max - 1)]).collect()
}

/// The JSON spelling of a unit enum value.
fn tag(v: &impl Serialize) -> String {
    serde_json::to_value(v).ok().and_then(|j| j.as_str().map(String::from)).unwrap_or_default()
}

fn family_name(f: MarginalFamily) -> &'static str {
    match f {
        MarginalFamily::Gaussian => "gaussian",
        MarginalFamily::Laplace => "laplace",
        MarginalFamily::StudentT => "student_t",
    }
}

fn analyze_layer(e: &ParamEntry, index: usize, seed: u64, dir: &Path) -> CliResult<LayerReport> {
    let x = e.tensor.data();
    let stem = safe(&e.name);
    let mut fits = Vec::new();
    for fam in [MarginalFamily::Gaussian, MarginalFamily::Laplace, MarginalFamily::StudentT] {
        let fit = match fam {
            MarginalFamily::StudentT => fit_student_t(x)?,
            f => fit_location_scale(f, x)?,
        };
        let qq = qq_data(x, &fit);
        write_rows(
            &dir.join(format!("qq_{stem}_{}.csv", family_name(fam))),
            &["theoretical", "empirical"],
            thin(&qq.pairs, QQ_POINTS).into_iter().map(|(t, v)| vec![t.to_string(), v.to_string()]),
        )?;
        fits.push(FamilyFit { fit, ks_statistic: qq.ks_statistic, ks_ok: qq.ks_ok });
    }
    let mut r = LayerReport {
        name: e.name.clone(),
        role: e.role,
        shape: e.tensor.shape().to_vec(),
        fits,
        lengthscale: Vec::new(),
        kurtosis_ratio: None,
        top_singular_value: None,
    };
    match e.role {
        Role::ConvFilter => {
            let cov = spatial_covariance(&e.tensor)?;
            let k = cov.kh * cov.kw;
            let rows = |m: &[f64]| m.chunks(k).map(|row| row.iter().map(f64::to_string).collect()).collect::<Vec<_>>();
            let header: Vec<String> = (0..k).map(|j| format!("p{j}")).collect();
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            write_rows(&dir.join(format!("cov_{stem}.csv")), &header, rows(&cov.matrix))?;
            write_rows(&dir.join(format!("cov_{stem}_normalized.csv")), &header, rows(&cov.max_normalized))?;
            if cov.samples >= 2 {
                for kernel in [Kernel::Exponential, Kernel::SquaredExponential] {
                    r.lengthscale.push(fit_kernel_lengthscale(&e.tensor, cov.kh, cov.kw, kernel)?);
                }
            }
        }
        Role::DenseWeight if e.tensor.rank() == 2 => {
            let sv = singular_values(&e.tensor)?;
            r.top_singular_value = sv.first().copied();
            write_rows(
                &dir.join(format!("spectrum_{stem}.csv")),
                &["index", "singular_value"],
                sv.iter().enumerate().map(|(i, s)| vec![i.to_string(), s.to_string()]),
            )?;
            let (rows, cols) = (e.tensor.shape()[0], e.tensor.shape()[1]);
            if rows >= 2 && cols >= 2 {
                let od = offdiag_distribution(&e.tensor, OFFDIAG_BINS, derive_seed(seed, index as u64))?;
                r.kurtosis_ratio = Some(od.kurtosis_ratio);
                let mut lines = Vec::new();
                for (kind, emp, base) in [
                    ("row", &od.row_histogram, &od.baseline_row_histogram),
                    ("col", &od.col_histogram, &od.baseline_col_histogram),
                ] {
                    for i in 0..emp.counts.len() {
                        lines.push(vec![
                            kind.to_string(),
                            emp.edges[i].to_string(),
                            emp.edges[i + 1].to_string(),
                            emp.counts[i].to_string(),
                            base.counts[i].to_string(),
                        ]);
                    }
                }
                write_rows(
                    &dir.join(format!("offdiag_{stem}.csv")),
                    &["kind", "bin_lo", "bin_hi", "empirical", "baseline"],
                    lines,
                )?;
            }
        }
        _ => {}
    }
    Ok(r)
}

/// Weight statistics of one checkpoint, written under `dir`.
pub fn analyze_checkpoint(path: &Path, seed: u64, dir: &Path) -> CliResult<CheckpointReport> {
    let stem = checkpoint_stem(path);
    let params = checkpoint::read(&stem).map_err(|e| CliError::data(format!("{}: {e}", stem.display())))?;
    std::fs::create_dir_all(dir)?;
    let layers = params
        .entries()
        .par_iter()
        .enumerate()
        .filter(|(_, e)| e.tensor.len() >= MIN_VALUES)
        .map(|(i, e)| analyze_layer(e, i, seed, dir))
        .collect::<CliResult<Vec<_>>>()?;

    write_rows(
        &dir.join(NU_FILE),
        &["layer", "role", "n", "nu", "gaussian_limit", "loglik_gaussian", "loglik_laplace", "loglik_student_t"],
        layers.iter().map(|l| {
            let t = &l.fits[2].fit;
            vec![
                l.name.clone(),
                tag(&l.role),
                t.n.to_string(),
                t.nu.map(|v| v.to_string()).unwrap_or_default(),
                t.gaussian_limit.to_string(),
                l.fits[0].fit.log_lik.to_string(),
                l.fits[1].fit.log_lik.to_string(),
                t.log_lik.to_string(),
            ]
        }),
    )?;
    write_rows(
        &dir.join(LENGTHSCALE_FILE),
        &["layer", "kernel", "sigma", "lengthscale", "log_lik", "at_grid_bound"],
        layers.iter().flat_map(|l| {
            l.lengthscale.iter().map(|f| {
                vec![
                    l.name.clone(),
                    tag(&f.kernel),
                    f.sigma.to_string(),
                    f.lengthscale.to_string(),
                    f.log_lik.to_string(),
                    f.at_grid_bound.to_string(),
                ]
            })
        }),
    )?;
    let skipped = params.iter().filter(|e| e.tensor.len() < MIN_VALUES).map(|e| e.name.clone()).collect();
    let report = CheckpointReport { checkpoint: stem, layers, skipped };
    write_json(&dir.join(REPORT_FILE), &report)?;
    Ok(report)
}

/// `analyze`: one subdirectory `NN_<stem>` per checkpoint.
pub fn cmd_analyze(checkpoints: &[PathBuf], seed: u64, out: &Path) -> CliResult<Vec<CheckpointReport>> {
    if checkpoints.is_empty() {
        return Err(CliError::config("analyze needs at least one checkpoint"));
    }
    checkpoints
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let name = checkpoint_stem(p).file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            analyze_checkpoint(p, seed, &out.join(format!("{i:02}_{}", safe(&name))))
        })
        .collect()
}

