//! Posterior-ensemble prediction and evaluation: error, NLL, calibration,
//! out-of-distribution detection, rotation sweeps.

use serde::{Deserialize, Serialize};

use crate::data::rotate_images;
use crate::diagnostics::average_ranks;
use crate::error::{Error, Result};
use crate::models::{Likelihood, ModelSpec};
use crate::params::ParamTree;
use crate::tensor::Tensor;

pub const DEFAULT_ECE_BINS: usize = 15;
pub const PROB_FLOOR: f64 = 1e-12;
/// Rows per forward pass during evaluation.
const EVAL_CHUNK: usize = 250;

/// Forward pass over `inputs` in row chunks, concatenated.
pub fn forward_chunked(model: &ModelSpec, params: &ParamTree, inputs: &Tensor) -> Result<Tensor> {
    let n = *inputs.shape().first().ok_or_else(|| Error::shape("inputs must be batched"))?;
    if n <= EVAL_CHUNK {
        return model.forward(params, inputs);
    }
    let row = inputs.len() / n;
    let mut data = Vec::new();
    let mut width = 0;
    for start in (0..n).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(n);
        let mut shape = inputs.shape().to_vec();
        shape[0] = end - start;
        let part = Tensor::new(shape, inputs.data()[start * row..end * row].to_vec())?;
        let out = model.forward(params, &part)?;
        width = out.len() / (end - start);
        data.extend_from_slice(out.data());
    }
    Tensor::new(vec![n, width], data)
}

/// Mean class probabilities `[n, classes]` over posterior samples.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveEnsemble {
    pub probs: Tensor,
    pub samples: usize,
}

impl PredictiveEnsemble {
    pub fn rows(&self) -> usize {
        self.probs.shape()[0]
    }

    pub fn classes(&self) -> usize {
        self.probs.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let k = self.classes();
        &self.probs.data()[i * k..(i + 1) * k]
    }

    /// Max probability per row.
    pub fn confidences(&self) -> Vec<f64> {
        (0..self.rows()).map(|i| self.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect()
    }

    /// Argmax per row, lowest index on ties.
    pub fn predictions(&self) -> Vec<usize> {
        (0..self.rows()).map(|i| argmax(self.row(i))).collect()
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &p) in row.iter().enumerate() {
        if p > row[best] {
            best = j;
        }
    }
    best
}

/// Row-wise softmax of `[n, k]` logits.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    if logits.rank() != 2 {
        return Err(Error::shape(format!("softmax needs [n, k] logits, got {:?}", logits.shape())));
    }
    let k = logits.shape()[1];
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for x in row.iter_mut() {
            *x = (*x - m).exp();
            s += *x;
        }
        row.iter_mut().for_each(|x| *x /= s);
    }
    Ok(out)
}

/// Probability-space average of per-sample softmax outputs.
pub fn ensemble_predict(samples: &[&ParamTree], model: &ModelSpec, inputs: &Tensor) -> Result<PredictiveEnsemble> {
    if samples.is_empty() {
        return Err(Error::contract("ensemble needs at least one posterior sample"));
    }
    if !matches!(model.likelihood, Likelihood::Categorical) {
        return Err(Error::contract("class-probability ensemble needs a categorical likelihood"));
    }
    let mut acc: Option<Tensor> = None;
    for p in samples {
        let probs = softmax_rows(&forward_chunked(model, p, inputs)?)?;
        match acc.as_mut() {
            None => acc = Some(probs),
            Some(a) => crate::tensor::axpy(1.0, probs.data(), a.data_mut()),
        }
    }
    let mut probs = acc.expect("non-empty");
    let s = samples.len() as f64;
    if samples.len() > 1 {
        probs.data_mut().iter_mut().for_each(|x| *x /= s);
    }
    Ok(PredictiveEnsemble { probs, samples: samples.len() })
}

/// Per-sample regression outputs `[samples][n × outputs]`.
pub fn regression_outputs(samples: &[&ParamTree], model: &ModelSpec, inputs: &Tensor) -> Result<Vec<Tensor>> {
    if samples.is_empty() {
        return Err(Error::contract("ensemble needs at least one posterior sample"));
    }
    samples.iter().map(|p| forward_chunked(model, p, inputs)).collect()
}

/// Mean squared error of the ensemble-mean prediction.
pub fn ensemble_mse(outputs: &[Tensor], targets: &Tensor) -> Result<f64> {
    let n = targets.len();
    if outputs.iter().any(|o| o.len() != n) {
        return Err(Error::shape("outputs and targets differ in size"));
    }
    let s = outputs.len() as f64;
    let mut sse = 0.0;
    for i in 0..n {
        let mean = outputs.iter().map(|o| o.data()[i]).sum::<f64>() / s;
        sse += (mean - targets.data()[i]).powi(2);
    }
    Ok(sse / n as f64)
}

/// Mean per-row NLL of the Gaussian mixture `1/S Σ_s N(y; f_s(x), σ²)`.
pub fn ensemble_gaussian_nll(outputs: &[Tensor], targets: &Tensor, noise_std: f64) -> Result<f64> {
    let n = targets.len();
    if outputs.iter().any(|o| o.len() != n) {
        return Err(Error::shape("outputs and targets differ in size"));
    }
    let s = outputs.len() as f64;
    let norm = -0.5 * (2.0 * std::f64::consts::PI * noise_std * noise_std).ln();
    let mut total = 0.0;
    let mut lp = vec![0.0; outputs.len()];
    for i in 0..n {
        for (l, o) in lp.iter_mut().zip(outputs) {
            let r = (targets.data()[i] - o.data()[i]) / noise_std;
            *l = norm - 0.5 * r * r;
        }
        let m = lp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + lp.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        total -= lse - s.ln();
    }
    Ok(total / n as f64)
}

fn check_labels(ens: &PredictiveEnsemble, labels: &[usize]) -> Result<()> {
    if ens.rows() != labels.len() {
        return Err(Error::shape(format!("{} predictions but {} labels", ens.rows(), labels.len())));
    }
    if labels.iter().any(|&l| l >= ens.classes()) {
        return Err(Error::contract("label outside the class range"));
    }
    Ok(())
}

pub fn test_error(ens: &PredictiveEnsemble, labels: &[usize]) -> Result<f64> {
    check_labels(ens, labels)?;
    let wrong = ens.predictions().iter().zip(labels).filter(|(p, l)| p != l).count();
    Ok(wrong as f64 / labels.len() as f64)
}

/// `-mean log p(true class)` with probabilities floored at 1e-12.
pub fn test_nll(ens: &PredictiveEnsemble, labels: &[usize]) -> Result<f64> {
    check_labels(ens, labels)?;
    let s: f64 = labels.iter().enumerate().map(|(i, &l)| -ens.row(i)[l].max(PROB_FLOOR).ln()).sum();
    Ok(s / labels.len() as f64)
}

/// Index of the equal-width bin `(b/B, (b+1)/B]` holding `c`; 0 for `c <= 0`.
pub fn ece_bin(c: f64, bins: usize) -> usize {
    let bf = bins as f64;
    let mut b = ((c * bf).ceil() as isize - 1).clamp(0, bins as isize - 1) as usize;
    while b > 0 && c <= b as f64 / bf {
        b -= 1;
    }
    while b + 1 < bins && c > (b + 1) as f64 / bf {
        b += 1;
    }
    b
}

/// `Σ_b (n_b/N)·|acc_b − conf_b|` over equal-width confidence bins.
pub fn ece(ens: &PredictiveEnsemble, labels: &[usize], bins: usize) -> Result<f64> {
    check_labels(ens, labels)?;
    if bins == 0 {
        return Err(Error::contract("ece needs at least one bin"));
    }
    let conf = ens.confidences();
    let pred = ens.predictions();
    let mut count = vec![0usize; bins];
    let mut conf_sum = vec![0.0; bins];
    let mut correct = vec![0.0; bins];
    for i in 0..labels.len() {
        let b = ece_bin(conf[i], bins);
        count[b] += 1;
        conf_sum[b] += conf[i];
        if pred[i] == labels[i] {
            correct[b] += 1.0;
        }
    }
    let n = labels.len() as f64;
    let mut total = 0.0;
    for b in 0..bins {
        if count[b] > 0 {
            let nb = count[b] as f64;
            total += (nb / n) * (correct[b] / nb - conf_sum[b] / nb).abs();
        }
    }
    Ok(total)
}

/// AUROC of in- versus out-of-distribution scores, ties counted half, via
/// the Mann-Whitney statistic on midranks.
pub fn ood_auroc(in_scores: &[f64], out_scores: &[f64]) -> Result<f64> {
    if in_scores.is_empty() || out_scores.is_empty() {
        return Err(Error::contract("AUROC needs non-empty in- and out-of-distribution sets"));
    }
    let all: Vec<f64> = in_scores.iter().chain(out_scores).copied().collect();
    let ranks = average_ranks(&all);
    let n_in = in_scores.len() as f64;
    let rank_sum: f64 = ranks[..in_scores.len()].iter().sum();
    let u = rank_sum - n_in * (n_in + 1.0) / 2.0;
    Ok(u / (n_in * out_scores.len() as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotationResult {
    pub angle: f64,
    pub error: f64,
    pub nll: f64,
    pub ece: f64,
}

/// Evaluates the ensemble on rotated copies of `images` (`[n,H,W]` or
/// `[n,1,H,W]`).
pub fn rotation_sweep(
    samples: &[&ParamTree],
    model: &ModelSpec,
    images: &Tensor,
    labels: &[usize],
    angles: &[f64],
    bins: usize,
) -> Result<Vec<RotationResult>> {
    angles
        .iter()
        .map(|&angle| {
            let rotated = rotate_images(images, angle)?;
            let ens = ensemble_predict(samples, model, &rotated)?;
            Ok(RotationResult {
                angle,
                error: test_error(&ens, labels)?,
                nll: test_nll(&ens, labels)?,
                ece: ece(&ens, labels, bins)?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub prior: String,
    pub temperature: f64,
    pub seed: u64,
    pub chains: usize,
    pub samples: usize,
    pub error: f64,
    pub nll: f64,
    pub ece: f64,
    pub ood_auroc: Option<f64>,
    /// `1 − AUROC`, the reversed axis.
    pub ood_auroc_reversed: Option<f64>,
    #[serde(default)]
    pub rotation: Vec<RotationResult>,
}
