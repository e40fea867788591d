//! Network architectures, initialization and likelihoods.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{ParamTree, Role};
use crate::priors::PriorSpec;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    /// No nonlinearity; used for identity and linear-model checks.
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Architecture {
    /// Dense layers with the given hidden widths.
    Fcnn { hidden: Vec<usize> },
    /// `k x k` convolutions (zero padding `k/2`), each followed by the
    /// activation and a 2x2 max-pool, then one dense layer.
    Cnn { channels: Vec<usize>, kernel: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Likelihood {
    Categorical,
    /// Independent Gaussian observation noise with fixed standard deviation.
    Gaussian { noise_std: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub activation: Activation,
    /// Per-example input shape, e.g. `[28, 28]` or `[13]`.
    pub input_shape: Vec<usize>,
    /// Number of classes, or regression output dimension.
    pub outputs: usize,
    pub likelihood: Likelihood,
}

/// Observation noise for standardized regression targets.
pub const DEFAULT_NOISE_STD: f64 = 0.1;

/// Shape and role of one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSlot {
    pub name: String,
    pub role: Role,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug)]
pub enum Targets {
    Classes(Vec<usize>),
    /// `[n, outputs]`
    Values(Tensor),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Values(v) => v.shape().first().copied().unwrap_or(0),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, rows: &[usize]) -> Result<Targets> {
        Ok(match self {
            Targets::Classes(c) => Targets::Classes(rows.iter().map(|&r| c[r]).collect()),
            Targets::Values(v) => Targets::Values(v.select_rows(rows)?),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    He,
    PriorSample,
}

impl ModelSpec {
    /// 784 -> 100 -> 100 -> 10 with ReLU.
    pub fn mnist_fcnn() -> Self {
        Self {
            architecture: Architecture::Fcnn { hidden: vec![100, 100] },
            activation: Activation::Relu,
            input_shape: vec![28, 28],
            outputs: 10,
            likelihood: Likelihood::Categorical,
        }
    }

    /// Two 64-channel 3x3 conv layers with 2x2 pooling, then a dense head.
    pub fn mnist_cnn() -> Self {
        Self {
            architecture: Architecture::Cnn { channels: vec![64, 64], kernel: 3 },
            activation: Activation::Relu,
            input_shape: vec![1, 28, 28],
            outputs: 10,
            likelihood: Likelihood::Categorical,
        }
    }

    /// in -> 64 -> 64 -> 1 regression network.
    pub fn uci_fcnn(features: usize) -> Self {
        Self {
            architecture: Architecture::Fcnn { hidden: vec![64, 64] },
            activation: Activation::Relu,
            input_shape: vec![features],
            outputs: 1,
            likelihood: Likelihood::Gaussian { noise_std: DEFAULT_NOISE_STD },
        }
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    /// Parameter layout in canonical order.
    pub fn layout(&self) -> Result<Vec<ParamSlot>> {
        let mut slots = Vec::new();
        let mut push = |name: String, role, shape: Vec<usize>| slots.push(ParamSlot { name, role, shape });
        match &self.architecture {
            Architecture::Fcnn { hidden } => {
                let mut fan_in = self.input_len();
                let widths = hidden.iter().copied().chain(std::iter::once(self.outputs));
                for (i, w) in widths.enumerate() {
                    push(format!("layer{i}.weight"), Role::DenseWeight, vec![w, fan_in]);
                    push(format!("layer{i}.bias"), Role::Bias, vec![w]);
                    fan_in = w;
                }
            }
            Architecture::Cnn { channels, kernel } => {
                let (c0, mut h, mut w) = self.image_dims()?;
                let mut cin = c0;
                for (i, &c) in channels.iter().enumerate() {
                    push(format!("conv{i}.weight"), Role::ConvFilter, vec![c, cin, *kernel, *kernel]);
                    push(format!("conv{i}.bias"), Role::Bias, vec![c]);
                    let pad = kernel / 2;
                    h = (h + 2 * pad + 1 - kernel) / 2;
                    w = (w + 2 * pad + 1 - kernel) / 2;
                    if h == 0 || w == 0 {
                        return Err(Error::shape("CNN pools the image down to nothing"));
                    }
                    cin = c;
                }
                push("fc.weight".into(), Role::DenseWeight, vec![self.outputs, cin * h * w]);
                push("fc.bias".into(), Role::Bias, vec![self.outputs]);
            }
        }
        Ok(slots)
    }

    fn image_dims(&self) -> Result<(usize, usize, usize)> {
        match self.input_shape.as_slice() {
            [h, w] => Ok((1, *h, *w)),
            [c, h, w] => Ok((*c, *h, *w)),
            s => Err(Error::shape(format!("CNN input shape must be [H,W] or [C,H,W], got {s:?}"))),
        }
    }

    pub fn num_params(&self) -> Result<usize> {
        Ok(self.layout()?.iter().map(|s| s.shape.iter().product::<usize>()).sum())
    }

    /// Builds the forward pass on `g`. `params` are the leaves in layout
    /// order; `inputs` is `[batch, ...input_shape]` (or already flattened).
    pub fn forward_graph<T: Real>(&self, g: &mut Graph<T>, params: &[Var], inputs: Var) -> Result<Var> {
        let batch = *g.value(inputs).shape().first().ok_or_else(|| Error::shape("inputs must be batched"))?;
        if g.value(inputs).len() != batch * self.input_len() {
            return Err(Error::shape(format!(
                "inputs of shape {:?} do not match model input {:?}",
                g.value(inputs).shape(),
                self.input_shape
            )));
        }
        let layout = self.layout()?;
        if params.len() != layout.len() {
            return Err(Error::shape(format!("model needs {} parameter tensors, got {}", layout.len(), params.len())));
        }
        for (slot, &v) in layout.iter().zip(params) {
            if g.value(v).shape() != slot.shape.as_slice() {
                return Err(Error::shape(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    slot.name,
                    g.value(v).shape(),
                    slot.shape
                )));
            }
        }
        match &self.architecture {
            Architecture::Fcnn { .. } => {
                let mut h = g.reshape(inputs, &[batch, self.input_len()])?;
                let layers = params.len() / 2;
                for l in 0..layers {
                    h = g.matmul_nt(h, params[2 * l])?;
                    h = g.add_bias(h, params[2 * l + 1])?;
                    if l + 1 < layers {
                        h = self.activate(g, h)?;
                    }
                }
                Ok(h)
            }
            Architecture::Cnn { channels, kernel } => {
                let (c, hh, ww) = self.image_dims()?;
                let mut h = g.reshape(inputs, &[batch, c, hh, ww])?;
                for l in 0..channels.len() {
                    h = g.conv2d(h, params[2 * l], kernel / 2)?;
                    h = g.add_bias(h, params[2 * l + 1])?;
                    h = self.activate(g, h)?;
                    h = g.max_pool2(h)?;
                }
                let flat: usize = g.value(h).shape()[1..].iter().product();
                h = g.reshape(h, &[batch, flat])?;
                let k = channels.len();
                h = g.matmul_nt(h, params[2 * k])?;
                g.add_bias(h, params[2 * k + 1])
            }
        }
    }

    fn activate<T: Real>(&self, g: &mut Graph<T>, h: Var) -> Result<Var> {
        match self.activation {
            Activation::Relu => g.relu(h),
            Activation::Tanh => g.tanh(h),
            Activation::Sigmoid => g.sigmoid(h),
            Activation::Linear => Ok(h),
        }
    }

    /// Summed negative log-likelihood of `outputs` (logits or predictions).
    pub fn nll_graph<T: Real>(&self, g: &mut Graph<T>, outputs: Var, targets: &Targets) -> Result<Var> {
        match (self.likelihood, targets) {
            (Likelihood::Categorical, Targets::Classes(labels)) => {
                let classes = g.value(outputs).shape()[1];
                if let Some(&bad) = labels.iter().find(|&&c| c >= classes) {
                    return Err(Error::contract(format!("class index {bad} out of range {classes}")));
                }
                let lp = g.log_softmax(outputs)?;
                let picked = g.gather(lp, labels)?;
                let s = g.sum(picked)?;
                g.scale(s, -1.0)
            }
            (Likelihood::Gaussian { noise_std }, Targets::Values(y)) => {
                if g.value(outputs).shape() != y.shape() {
                    return Err(Error::shape(format!(
                        "targets {:?} vs outputs {:?}",
                        y.shape(),
                        g.value(outputs).shape()
                    )));
                }
                let yv = g.constant(y.cast::<T>())?;
                let r = g.sub(outputs, yv)?;
                let sq = g.square(r)?;
                let s = g.sum(sq)?;
                let var = noise_std * noise_std;
                let scaled = g.scale(s, 0.5 / var)?;
                let n = y.len() as f64;
                g.add_scalar(scaled, 0.5 * n * (2.0 * std::f64::consts::PI * var).ln())
            }
            _ => Err(Error::contract("targets do not match the likelihood")),
        }
    }

    /// Deterministic forward pass outside autodiff.
    pub fn forward(&self, params: &ParamTree, inputs: &Tensor) -> Result<Tensor> {
        self.forward_in::<f64>(params, inputs)
    }

    pub fn forward_in<T: Real>(&self, params: &ParamTree, inputs: &Tensor) -> Result<Tensor> {
        let mut g = Graph::<T>::new();
        let leaves = params
            .iter()
            .map(|e| g.constant(e.tensor.cast::<T>()))
            .collect::<Result<Vec<_>>>()?;
        let x = g.constant(inputs.cast::<T>())?;
        let out = self.forward_graph(&mut g, &leaves, x)?;
        Ok(g.value(out).cast::<f64>())
    }

    /// Summed negative log-likelihood of precomputed outputs.
    pub fn nll(&self, outputs: &Tensor, targets: &Targets) -> Result<f64> {
        let mut g = Graph::<f64>::new();
        let o = g.constant(outputs.clone())?;
        let l = self.nll_graph(&mut g, o, targets)?;
        g.value(l).item()
    }

    pub fn zeros(&self) -> Result<ParamTree> {
        let mut p = ParamTree::new();
        for s in self.layout()? {
            p.push(s.name, s.role, Tensor::zeros(&s.shape));
        }
        Ok(p)
    }

    /// He initialization: weights `N(0, 2/fan_in)`, zero biases.
    pub fn init_he(&self, rng: &mut impl Rng) -> Result<ParamTree> {
        let mut p = ParamTree::new();
        for s in self.layout()? {
            let n: usize = s.shape.iter().product();
            let t = match s.role.fan_in(&s.shape) {
                Some(fan_in) => {
                    let d = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                    Tensor::new(s.shape.clone(), (0..n).map(|_| d.sample(rng)).collect())?
                }
                None => Tensor::zeros(&s.shape),
            };
            p.push(s.name, s.role, t);
        }
        Ok(p)
    }

    pub fn init_params(&self, mode: InitMode, prior: &PriorSpec, seed: u64) -> Result<ParamTree> {
        let mut rng = crate::rng::rng_from_seed(seed);
        match mode {
            InitMode::He => self.init_he(&mut rng),
            InitMode::PriorSample => {
                let layout = self.zeros()?;
                prior.resolve(&layout)?.sample_like(&layout, &mut rng)
            }
        }
    }
}
