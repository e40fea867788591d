//! Fixtures shared by the benchmarks.

use std::sync::Arc;

use tbnn_core::data::{make_synthetic, Dataset, SyntheticKind};
use tbnn_core::models::{Activation, Architecture, InitMode, Likelihood, ModelSpec};
use tbnn_core::posterior::Potential;
use tbnn_core::priors::{PriorFamily, PriorSpec};
use tbnn_core::{ParamTree, Tensor};

/// Deterministic pseudo-random values in `[-1, 1)`.
pub fn filled(shape: &[usize], seed: u64) -> Tensor {
    let n = shape.iter().product();
    let mut s = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    let data = (0..n)
        .map(|_| {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 52) as f64 - 1.0
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// A 6x6-image CNN and a two-moons FCNN potential with initial parameters.
pub fn cnn_fixture(batch: usize) -> (ModelSpec, ParamTree, Tensor) {
    let model = ModelSpec {
        architecture: Architecture::Cnn { channels: vec![8, 8], kernel: 3 },
        activation: Activation::Relu,
        input_shape: vec![12, 12],
        outputs: 10,
        likelihood: Likelihood::Categorical,
    };
    let params = model.init_params(InitMode::He, &PriorSpec::default(), 1).expect("valid model");
    (model, params, filled(&[batch, 12, 12], 2))
}

pub fn moons_potential(n: usize) -> (Potential, ParamTree) {
    let data: Dataset = make_synthetic(SyntheticKind::TwoMoons, n, 0.1, 3).expect("synthetic data");
    let model = ModelSpec {
        architecture: Architecture::Fcnn { hidden: vec![32, 32] },
        activation: Activation::Relu,
        input_shape: vec![2],
        outputs: 2,
        likelihood: Likelihood::Categorical,
    };
    let prior = PriorSpec::new(PriorFamily::Gaussian);
    let init = model.init_params(InitMode::He, &prior, 4).expect("valid model");
    (Potential::new(model, prior, Arc::new(data)).expect("compatible data"), init)
}
