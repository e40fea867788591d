use std::path::Path;

use serde::{Deserialize, Serialize};
use tbnn_core::data::{load_idx, rotate_images};
use tbnn_core::metrics::{self, EvalReport, PredictiveEnsemble, RotationResult};
use tbnn_core::models::{Likelihood, Targets};
use tbnn_core::{ParamTree, Tensor};

use crate::archive::{self, write_json};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::load::{as_images, Splits};

pub const EVAL_FILE: &str = "eval.json";
pub const CURVE_FILE: &str = "curve.csv";
pub const CURVE_HEADER: [&str; 7] = ["prior", "temperature", "seed", "error", "nll", "ece", "ood_auroc"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Excluded {
    pub index: usize,
    pub seed: u64,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    /// One report per usable chain.
    pub chains: Vec<EvalReport>,
    /// All retained draws of all usable chains as one ensemble.
    pub pooled: EvalReport,
    pub excluded: Vec<Excluded>,
}

struct Inputs<'a> {
    cfg: &'a RunConfig,
    splits: &'a Splits,
    ood: Option<Tensor>,
    /// Rotated test images, one set per configured angle.
    rotated: Vec<Tensor>,
}

/// Predictions of one group of draws.
enum Pred {
    Class { test: PredictiveEnsemble, ood: Option<PredictiveEnsemble>, rotated: Vec<PredictiveEnsemble> },
    Reg { outputs: Vec<Tensor> },
}

fn predict(io: &Inputs<'_>, samples: &[&ParamTree]) -> CliResult<Pred> {
    let model = &io.cfg.model;
    let test = &io.splits.test;
    Ok(match &test.targets {
        Targets::Classes(_) => Pred::Class {
            test: metrics::ensemble_predict(samples, model, &test.inputs)?,
            ood: io.ood.as_ref().map(|o| metrics::ensemble_predict(samples, model, o)).transpose()?,
            rotated: io.rotated.iter().map(|r| metrics::ensemble_predict(samples, model, r)).collect::<Result<_, _>>()?,
        },
        Targets::Values(_) => Pred::Reg { outputs: metrics::regression_outputs(samples, model, &test.inputs)? },
    })
}

/// Sample-weighted average of ensembles.
fn average(parts: &[&PredictiveEnsemble]) -> CliResult<PredictiveEnsemble> {
    let total: usize = parts.iter().map(|p| p.samples).sum();
    let mut acc = vec![0.0; parts[0].probs.len()];
    for p in parts {
        let w = p.samples as f64 / total as f64;
        for (a, &x) in acc.iter_mut().zip(p.probs.data()) {
            *a += w * x;
        }
    }
    Ok(PredictiveEnsemble { probs: Tensor::new(parts[0].probs.shape().to_vec(), acc)?, samples: total })
}

fn pool(preds: Vec<Pred>) -> CliResult<Pred> {
    let mut classes = Vec::new();
    let mut outputs = Vec::new();
    for p in preds {
        match p {
            Pred::Class { test, ood, rotated } => classes.push((test, ood, rotated)),
            Pred::Reg { outputs: o } => outputs.extend(o),
        }
    }
    if classes.is_empty() {
        return Ok(Pred::Reg { outputs });
    }
    let test = average(&classes.iter().map(|c| &c.0).collect::<Vec<_>>())?;
    let ood = match classes.iter().map(|c| c.1.as_ref()).collect::<Option<Vec<_>>>() {
        Some(o) if !o.is_empty() => Some(average(&o)?),
        _ => None,
    };
    let rotated = (0..classes[0].2.len())
        .map(|k| average(&classes.iter().map(|c| &c.2[k]).collect::<Vec<_>>()))
        .collect::<CliResult<_>>()?;
    Ok(Pred::Class { test, ood, rotated })
}

fn score(io: &Inputs<'_>, pred: &Pred, prior: &str, temperature: f64, seed: u64, chains: usize) -> CliResult<EvalReport> {
    let cfg = io.cfg;
    let bins = cfg.eval.ece_bins;
    let mut r = EvalReport {
        prior: prior.to_string(),
        temperature,
        seed,
        chains,
        samples: 0,
        error: f64::NAN,
        nll: f64::NAN,
        ece: f64::NAN,
        ood_auroc: None,
        ood_auroc_reversed: None,
        rotation: Vec::new(),
    };
    match (pred, &io.splits.test.targets, &cfg.model.likelihood) {
        (Pred::Class { test, ood, rotated }, Targets::Classes(labels), _) => {
            r.samples = test.samples;
            r.error = metrics::test_error(test, labels)?;
            r.nll = metrics::test_nll(test, labels)?;
            r.ece = metrics::ece(test, labels, bins)?;
            if let Some(o) = ood {
                let a = metrics::ood_auroc(&test.confidences(), &o.confidences())?;
                r.ood_auroc = Some(a);
                r.ood_auroc_reversed = Some(1.0 - a);
            }
            for (angle, ens) in cfg.eval.rotation_angles.iter().zip(rotated) {
                r.rotation.push(RotationResult {
                    angle: *angle,
                    error: metrics::test_error(ens, labels)?,
                    nll: metrics::test_nll(ens, labels)?,
                    ece: metrics::ece(ens, labels, bins)?,
                });
            }
        }
        (Pred::Reg { outputs }, Targets::Values(v), Likelihood::Gaussian { noise_std }) => {
            r.samples = outputs.len();
            r.error = metrics::ensemble_mse(outputs, v)?;
            r.nll = metrics::ensemble_gaussian_nll(outputs, v, *noise_std)?;
        }
        _ => return Err(CliError::config("test targets do not match the model likelihood")),
    }
    Ok(r)
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_curve(path: &Path, rows: &[EvalReport]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CURVE_HEADER)?;
    for r in rows {
        w.write_record([
            r.prior.clone(),
            r.temperature.to_string(),
            r.seed.to_string(),
            r.error.to_string(),
            r.nll.to_string(),
            r.ece.to_string(),
            opt(r.ood_auroc),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Scores the retained draws of every non-diverged chain under `archive_dir`.
pub fn evaluate(cfg: &RunConfig, splits: &Splits, archive_dir: &Path) -> CliResult<EvalOutput> {
    let chains = archive::read_chains(archive_dir)?;
    let run = archive::run_summary(archive_dir)?;
    let prior = run.as_ref().map_or_else(|| cfg.prior.family.name().to_string(), |r| r.prior.clone());
    let temperature = run.as_ref().map_or(cfg.sampler.temperature, |r| r.temperature);
    let master = run.as_ref().map_or(cfg.seed, |r| r.master_seed);

    let classification = matches!(splits.test.targets, Targets::Classes(_));
    let ood = match (&cfg.eval.ood_images, classification) {
        (Some(p), true) => {
            let t = load_idx(p)?;
            let n = t.shape()[0];
            let per = if n == 0 { 0 } else { t.len() / n };
            if per != cfg.model.input_len() {
                return Err(CliError::data(format!("OOD images have {per} values per row, model needs {}", cfg.model.input_len())));
            }
            let mut shape = vec![n];
            shape.extend(splits.test.inputs.shape()[1..].iter().copied());
            Some(t.reshape(&shape)?)
        }
        _ => None,
    };
    let mut rotated = Vec::new();
    if classification && !cfg.eval.rotation_angles.is_empty() {
        let images = as_images(&splits.test.inputs)?;
        for &a in &cfg.eval.rotation_angles {
            rotated.push(rotate_images(&images, a)?.reshape(splits.test.inputs.shape())?);
        }
    }
    let io = Inputs { cfg, splits, ood, rotated };

    let mut excluded = Vec::new();
    let mut reports = Vec::new();
    let mut preds = Vec::new();
    for c in &chains {
        if c.summary.diverged {
            let reason = c.summary.divergence.as_ref().map_or("diverged".into(), |d| format!("diverged at epoch {}: {}", d.epoch, d.reason));
            log::warn!("excluding chain {} (seed {}): {reason}", c.summary.index, c.summary.seed);
            excluded.push(Excluded { index: c.summary.index, seed: c.summary.seed, reason });
            continue;
        }
        let params = c.retained_params()?;
        if params.is_empty() {
            excluded.push(Excluded { index: c.summary.index, seed: c.summary.seed, reason: "no post-burn-in draws".into() });
            continue;
        }
        let refs: Vec<&ParamTree> = params.iter().collect();
        let p = predict(&io, &refs)?;
        reports.push(score(&io, &p, &prior, temperature, c.summary.seed, 1)?);
        preds.push(p);
    }
    if preds.is_empty() {
        return Err(CliError::data(format!("{} holds no usable post-burn-in draws", archive_dir.display())));
    }
    let pooled = score(&io, &pool(preds)?, &prior, temperature, master, reports.len())?;
    Ok(EvalOutput { chains: reports, pooled, excluded })
}

/// `eval`: writes `eval.json` and a one-row-per-chain `curve.csv`.
pub fn cmd_eval(cfg: &RunConfig, splits: &Splits, archive_dir: &Path, out: &Path) -> CliResult<EvalOutput> {
    let res = evaluate(cfg, splits, archive_dir)?;
    std::fs::create_dir_all(out)?;
    write_json(&out.join(EVAL_FILE), &res)?;
    write_curve(&out.join(CURVE_FILE), &res.chains)?;
    Ok(res)
}
