//! The potential energy `U(w) = -Σ log p(yᵢ|w,xᵢ) - log p(w)` and its
//! stochastic gradient.
//!
//! `U` is untempered: the temperature enters only through the sampler noise,
//! so both conventions target `exp(-U/T)`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{self, Graph, Var};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::{ModelSpec, Targets};
use crate::params::{ParamTree, Role};
use crate::priors::{PriorSpec, ResolvedPrior};
use crate::tensor::{Real, Tensor};

/// Full-data evaluation of the potential split into its two terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialTerms {
    /// `-Σ log p(yᵢ|w,xᵢ)`
    pub nll: f64,
    /// `log p(w)`
    pub log_prior: f64,
}

impl PotentialTerms {
    pub fn potential(&self) -> f64 {
        self.nll - self.log_prior
    }
}

/// Anything a sampler can run on.
pub trait Target: Send + Sync {
    /// Number of data points `N` the minibatch estimate is scaled to.
    fn data_len(&self) -> usize;

    fn terms(&self, params: &ParamTree) -> Result<PotentialTerms>;

    /// Full-data terms and exact `∇U`.
    fn full_grad(&self, params: &ParamTree) -> Result<(PotentialTerms, ParamTree)>;

    /// Unbiased estimates of `U` and `∇U` from the data rows in `batch`.
    fn minibatch_grad(&self, params: &ParamTree, batch: &[usize]) -> Result<(f64, ParamTree)>;
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F64,
    /// Forward/backward in 32-bit; sampler state stays 64-bit.
    F32,
}

/// Rows evaluated per graph in full-data passes.
const FULL_PASS_CHUNK: usize = 500;

pub struct Potential {
    pub model: ModelSpec,
    pub prior_spec: PriorSpec,
    prior: ResolvedPrior,
    data: Arc<Dataset>,
    pub precision: Precision,
}

impl Potential {
    pub fn new(model: ModelSpec, prior_spec: PriorSpec, data: Arc<Dataset>) -> Result<Self> {
        let layout = model.zeros()?;
        let prior = prior_spec.resolve(&layout)?;
        if data.inputs.shape().first().copied().unwrap_or(0) != data.targets.len() {
            return Err(Error::shape("dataset inputs and targets differ in length"));
        }
        Ok(Self { model, prior_spec, prior, data, precision: Precision::F64 })
    }

    pub fn with_precision(mut self, precision: Precision) -> Self {
        self.precision = precision;
        self
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn prior(&self) -> &ResolvedPrior {
        &self.prior
    }

    fn batch_nll_grad(&self, params: &ParamTree, x: &Tensor, y: &Targets, want_grad: bool) -> Result<(f64, Option<ParamTree>)> {
        match self.precision {
            Precision::F64 => self.batch_nll_grad_in::<f64>(params, x, y, want_grad),
            Precision::F32 => self.batch_nll_grad_in::<f32>(params, x, y, want_grad),
        }
    }

    fn batch_nll_grad_in<T: Real>(
        &self,
        params: &ParamTree,
        x: &Tensor,
        y: &Targets,
        want_grad: bool,
    ) -> Result<(f64, Option<ParamTree>)> {
        let xt = x.cast::<T>();
        let f = |g: &mut Graph<T>, leaves: &[Var]| {
            let xv = g.constant(xt.clone())?;
            let out = self.model.forward_graph(g, leaves, xv)?;
            self.model.nll_graph(g, out, y)
        };
        if want_grad {
            let (v, gr) = autodiff::value_and_grad::<T>(params, &f)?;
            Ok((v, Some(gr)))
        } else {
            Ok((autodiff::eval::<T>(params, &f)?, None))
        }
    }

    fn full_pass(&self, params: &ParamTree, want_grad: bool) -> Result<(f64, Option<ParamTree>)> {
        let n = self.data.len();
        let mut nll = 0.0;
        let mut grad = want_grad.then(|| params.zeros_like());
        let mut start = 0;
        while start < n {
            let end = (start + FULL_PASS_CHUNK).min(n);
            let rows: Vec<usize> = (start..end).collect();
            let x = self.data.inputs.select_rows(&rows)?;
            let y = self.data.targets.select(&rows)?;
            let (v, g) = self.batch_nll_grad(params, &x, &y, want_grad)?;
            nll += v;
            if let (Some(acc), Some(g)) = (grad.as_mut(), g) {
                acc.axpy(1.0, &g);
            }
            start = end;
        }
        Ok((nll, grad))
    }

    /// `U(w)` on the full dataset.
    pub fn potential(&self, params: &ParamTree) -> Result<f64> {
        self.terms(params).map(|t| t.potential())
    }
}

fn finite_or_err(v: f64, what: &'static str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { node: 0, op: what })
    }
}

impl Target for Potential {
    fn data_len(&self) -> usize {
        self.data.len()
    }

    fn terms(&self, params: &ParamTree) -> Result<PotentialTerms> {
        let (nll, _) = self.full_pass(params, false)?;
        let log_prior = self.prior.log_prob(params)?;
        Ok(PotentialTerms { nll: finite_or_err(nll, "likelihood")?, log_prior: finite_or_err(log_prior, "prior")? })
    }

    fn full_grad(&self, params: &ParamTree) -> Result<(PotentialTerms, ParamTree)> {
        let (nll, grad) = self.full_pass(params, true)?;
        let mut grad = grad.expect("gradient requested");
        let log_prior = self.prior.log_prob(params)?;
        self.prior.add_grad_log_prob(params, -1.0, &mut grad)?;
        Ok((
            PotentialTerms { nll: finite_or_err(nll, "likelihood")?, log_prior: finite_or_err(log_prior, "prior")? },
            grad,
        ))
    }

    /// `(N/B) Σ_{i∈batch} ∇(-log p(yᵢ|w,xᵢ)) - ∇ log p(w)`
    fn minibatch_grad(&self, params: &ParamTree, batch: &[usize]) -> Result<(f64, ParamTree)> {
        if batch.is_empty() {
            return Err(Error::contract("minibatch must be non-empty"));
        }
        let scale = self.data.len() as f64 / batch.len() as f64;
        let x = self.data.inputs.select_rows(batch)?;
        let y = self.data.targets.select(batch)?;
        let (nll, g) = self.batch_nll_grad(params, &x, &y, true)?;
        let mut grad = g.expect("gradient requested");
        grad.scale(scale);
        self.prior.add_grad_log_prob(params, -1.0, &mut grad)?;
        let log_prior = self.prior.log_prob(params)?;
        Ok((scale * nll - log_prior, grad))
    }
}

/// Analytic target `U(w) = ½ Σᵢ pᵢ (wᵢ - μᵢ)²` over a single parameter vector.
#[derive(Clone, Debug)]
pub struct QuadraticTarget {
    pub mean: Vec<f64>,
    pub precision: Vec<f64>,
}

impl QuadraticTarget {
    pub fn standard(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], precision: vec![1.0; dim] }
    }

    pub fn layout(&self) -> ParamTree {
        let mut p = ParamTree::new();
        p.push("w", Role::Bias, Tensor::zeros(&[self.mean.len()]));
        p
    }

    fn eval(&self, params: &ParamTree) -> (f64, ParamTree) {
        let w = params.entries()[0].tensor.data();
        let mut u = 0.0;
        let mut g = Vec::with_capacity(w.len());
        for ((&wi, &mi), &pi) in w.iter().zip(&self.mean).zip(&self.precision) {
            let d = wi - mi;
            u += 0.5 * pi * d * d;
            g.push(pi * d);
        }
        (u, params.unflatten(&g).expect("same layout"))
    }
}

impl Target for QuadraticTarget {
    fn data_len(&self) -> usize {
        1
    }

    fn terms(&self, params: &ParamTree) -> Result<PotentialTerms> {
        Ok(PotentialTerms { nll: self.eval(params).0, log_prior: 0.0 })
    }

    fn full_grad(&self, params: &ParamTree) -> Result<(PotentialTerms, ParamTree)> {
        let (u, g) = self.eval(params);
        Ok((PotentialTerms { nll: u, log_prior: 0.0 }, g))
    }

    fn minibatch_grad(&self, params: &ParamTree, _batch: &[usize]) -> Result<(f64, ParamTree)> {
        Ok(self.eval(params))
    }
}
