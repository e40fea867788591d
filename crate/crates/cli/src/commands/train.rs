use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use tbnn_core::metrics::{self, forward_chunked};
use tbnn_core::models::{ModelSpec, Targets};
use tbnn_core::posterior::Potential;
use tbnn_core::samplers::{sgd_map, DivergenceRecord};
use tbnn_core::{checkpoint, ParamTree, Result};

use super::sample::chain_seeds;
use crate::archive::write_json;
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::load::Splits;

pub const MODEL_STEM: &str = "model";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const TRAIN_SUMMARY: &str = "train_summary.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub prior: String,
    pub seed: u64,
    pub epochs: usize,
    pub final_loss: f64,
    /// Classification error, or MSE for regression.
    pub train_error: f64,
    pub test_error: f64,
    pub divergence: Option<DivergenceRecord>,
}

/// Classification error or mean squared error of a single network.
pub fn point_error(model: &ModelSpec, params: &ParamTree, inputs: &tbnn_core::Tensor, targets: &Targets) -> Result<f64> {
    let out = forward_chunked(model, params, inputs)?;
    match targets {
        Targets::Classes(labels) => {
            let ens = metrics::PredictiveEnsemble { probs: metrics::softmax_rows(&out)?, samples: 1 };
            metrics::test_error(&ens, labels)
        }
        Targets::Values(v) => metrics::ensemble_mse(&[out], v),
    }
}

/// `train`: momentum-SGD MAP estimate written as a single checkpoint.
pub fn cmd_train(cfg: &RunConfig, splits: &Splits, out: &Path) -> CliResult<TrainSummary> {
    std::fs::create_dir_all(out)?;
    let pot = Potential::new(cfg.model.clone(), cfg.prior.clone(), Arc::new(splits.train.clone()))
        .map_err(CliError::config_from)?
        .with_precision(cfg.precision);
    let (seed, init_seed) = chain_seeds(cfg.seed, 0);
    let mut tc = cfg.train.clone();
    tc.seed = seed;
    let init = cfg.model.init_params(tc.init, &cfg.prior, init_seed)?;
    let train = &splits.train;
    let err = |p: &ParamTree| point_error(&cfg.model, p, &train.inputs, &train.targets);
    let res = sgd_map(&tc, &pot, init, Some(&err))?;

    let mut w = csv::Writer::from_path(out.join(TRAIN_LOG))?;
    w.write_record(["epoch", "lr", "loss", "train_error"])?;
    for r in &res.log {
        let e = r.train_error.map(|e| e.to_string()).unwrap_or_default();
        w.write_record([r.epoch.to_string(), r.lr.to_string(), r.loss.to_string(), e])?;
    }
    w.flush()?;
    checkpoint::write(&res.params, cfg.checkpoint_dtype, &out.join(MODEL_STEM))?;

    let summary = TrainSummary {
        prior: cfg.prior.family.name().to_string(),
        seed,
        epochs: res.log.len(),
        final_loss: res.log.last().map_or(f64::NAN, |r| r.loss),
        train_error: res.log.last().and_then(|r| r.train_error).unwrap_or(f64::NAN),
        test_error: point_error(&cfg.model, &res.params, &splits.test.inputs, &splits.test.targets)?,
        divergence: res.divergence.clone(),
    };
    write_json(&out.join(TRAIN_SUMMARY), &summary)?;
    if let Some(d) = res.divergence {
        return Err(CliError::diverged(format!("training diverged at epoch {}: {}", d.epoch, d.reason)));
    }
    Ok(summary)
}
