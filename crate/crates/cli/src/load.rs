//! Dataset construction from a run configuration.

use tbnn_core::data::{self, Dataset, Split};
use tbnn_core::models::{Likelihood, ModelSpec, Targets};
use tbnn_core::Tensor;

use crate::config::{DataConfig, DataSource, RunConfig};
use crate::error::{CliError, CliResult};

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
}

fn take(ds: Dataset, n: Option<usize>, cfg: &DataConfig, stream: u64) -> CliResult<Dataset> {
    match n {
        Some(n) if n < ds.len() => {
            Ok(data::subsample(&ds, n, tbnn_core::rng::derive_seed(cfg.seed, stream), cfg.stratified)?)
        }
        Some(n) if n > ds.len() => Err(CliError::config(format!("asked for {n} rows, dataset has {}", ds.len()))),
        _ => Ok(ds),
    }
}

/// Train-disjoint halves of one pool.
fn split(pool: Dataset, cfg: &DataConfig) -> CliResult<Splits> {
    let n = pool.len();
    let n_test = cfg.n_test.unwrap_or(n / 6);
    let n_train = cfg.n_train.unwrap_or(n.saturating_sub(n_test));
    let (train, test) = data::split_pool(&pool, n_train, n_test, cfg.seed, cfg.stratified)?;
    Ok(Splits { train, test })
}

pub fn load(cfg: &RunConfig) -> CliResult<Splits> {
    let d = &cfg.data;
    let splits = match &d.source {
        DataSource::Idx { images, labels, test_images, test_labels } => {
            let pool = data::load_idx_dataset(images, labels, Split::Train)?;
            match (test_images, test_labels) {
                (Some(ti), Some(tl)) => Splits {
                    train: take(pool, d.n_train, d, 1)?,
                    test: take(data::load_idx_dataset(ti, tl, Split::Test)?, d.n_test, d, 2)?,
                },
                _ => split(pool, d)?,
            }
        }
        DataSource::Csv { path, target_column, has_header, split_fraction } => {
            let (train, test) = data::load_uci_csv(path, *target_column, d.seed, *split_fraction, *has_header)?;
            Splits { train: take(train, d.n_train, d, 1)?, test: take(test, d.n_test, d, 2)? }
        }
        DataSource::Synthetic { dataset, n, test_n, noise } => {
            let pool = data::make_synthetic(*dataset, n + test_n, *noise, d.seed)?;
            if *test_n == 0 {
                Splits { train: pool.clone(), test: pool.with_split(Split::Test) }
            } else {
                let (train, test) = data::split_pool(&pool, *n, *test_n, d.seed, d.stratified)?;
                Splits { train, test }
            }
        }
    };
    check_compatible(&cfg.model, &splits.train)?;
    check_compatible(&cfg.model, &splits.test)?;
    Ok(splits)
}

/// Input size and target kind agree with the model.
pub fn check_compatible(model: &ModelSpec, ds: &Dataset) -> CliResult<()> {
    let n = ds.len();
    let row = if n == 0 { model.input_len() } else { ds.inputs.len() / n };
    if row != model.input_len() {
        return Err(CliError::config(format!(
            "dataset rows have {row} values, model input {:?} needs {}",
            model.input_shape,
            model.input_len()
        )));
    }
    match (&model.likelihood, &ds.targets) {
        (Likelihood::Categorical, Targets::Classes(c)) => {
            if let Some(&bad) = c.iter().find(|&&l| l >= model.outputs) {
                return Err(CliError::config(format!("label {bad} exceeds model outputs {}", model.outputs)));
            }
        }
        (Likelihood::Gaussian { .. }, Targets::Values(v)) => {
            if n > 0 && v.len() / n != model.outputs {
                return Err(CliError::config(format!("targets have {} columns, model outputs {}", v.len() / n, model.outputs)));
            }
        }
        _ => return Err(CliError::config("dataset targets do not match the model likelihood")),
    }
    Ok(())
}

/// Images as `[n, H, W]` for rotation, from any `[n, ...]` square layout.
pub fn as_images(inputs: &Tensor) -> CliResult<Tensor> {
    let n = inputs.shape()[0];
    let per = if n == 0 { 0 } else { inputs.len() / n };
    let side = (per as f64).sqrt().round() as usize;
    if side * side != per {
        return Err(CliError::config(format!("rows of {per} values are not square images")));
    }
    Ok(inputs.clone().reshape(&[n, side, side])?)
}
