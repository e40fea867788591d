//! Weight priors: exact log-densities (normalizing constants included),
//! gradients and samplers.
//!
//! All priors are centered at zero. Non-Gaussian families are scaled so that
//! their variance matches the Gaussian target variance of the tensor they
//! cover: Laplace `2b² = σ²`, Student-t `s²ν/(ν-2) = σ²` (raw scale `s = σ`
//! when `ν ≤ 2`, where the variance is undefined).

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::linalg;
use crate::params::{ParamTree, Role};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorFamily {
    Gaussian,
    Laplace,
    StudentT,
    CorrelatedGaussian,
    /// Improper flat prior, `log p(w) = 0`.
    Uniform,
}

impl PriorFamily {
    pub fn name(self) -> &'static str {
        match self {
            PriorFamily::Gaussian => "gaussian",
            PriorFamily::Laplace => "laplace",
            PriorFamily::StudentT => "student_t",
            PriorFamily::CorrelatedGaussian => "correlated_gaussian",
            PriorFamily::Uniform => "uniform",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMode {
    /// Weight variance `scale_multiplier * 2 / fan_in`.
    He,
    /// Weight variance `scale_multiplier`.
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSpec {
    pub family: PriorFamily,
    pub scale_mode: ScaleMode,
    pub scale_multiplier: f64,
    /// Student-t degrees of freedom.
    pub nu: f64,
    pub kernel_sigma: f64,
    pub kernel_lengthscale: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            family: PriorFamily::Gaussian,
            scale_mode: ScaleMode::He,
            scale_multiplier: 1.0,
            nu: 3.0,
            kernel_sigma: 1.0,
            kernel_lengthscale: 1.0,
        }
    }
}

impl PriorSpec {
    pub fn new(family: PriorFamily) -> Self {
        Self { family, ..Self::default() }
    }

    pub fn fixed(family: PriorFamily, variance: f64) -> Self {
        Self { family, scale_mode: ScaleMode::Fixed, scale_multiplier: variance, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale_multiplier > 0.0) {
            return Err(Error::contract(format!("scale_multiplier must be > 0, got {}", self.scale_multiplier)));
        }
        if self.family == PriorFamily::StudentT && !(self.nu > 0.0) {
            return Err(Error::contract(format!("student-t nu must be > 0, got {}", self.nu)));
        }
        if self.family == PriorFamily::CorrelatedGaussian
            && !(self.kernel_sigma > 0.0 && self.kernel_lengthscale > 0.0)
        {
            return Err(Error::contract("kernel sigma and lengthscale must be > 0"));
        }
        Ok(())
    }

    /// Gaussian-equivalent variance for a tensor of this role and shape.
    /// Biases always get unit variance.
    pub fn target_variance(&self, role: Role, shape: &[usize]) -> f64 {
        match role.fan_in(shape) {
            None => 1.0,
            Some(fan_in) => match self.scale_mode {
                ScaleMode::He => self.scale_multiplier * 2.0 / fan_in as f64,
                ScaleMode::Fixed => self.scale_multiplier,
            },
        }
    }

    /// Binds the prior to a parameter layout, building filter covariances.
    pub fn resolve(&self, layout: &ParamTree) -> Result<ResolvedPrior> {
        self.validate()?;
        let mut tensors = Vec::with_capacity(layout.len());
        let mut cov_cache: Vec<(f64, [usize; 2], Arc<FilterCovariance>)> = Vec::new();
        for e in layout.iter() {
            let var = self.target_variance(e.role, e.tensor.shape());
            let tp = match self.family {
                PriorFamily::Uniform => TensorPrior::Flat,
                PriorFamily::Gaussian => TensorPrior::Iid(ScalarDensity::matched(PriorFamily::Gaussian, var, self.nu)),
                PriorFamily::Laplace => TensorPrior::Iid(ScalarDensity::matched(PriorFamily::Laplace, var, self.nu)),
                PriorFamily::StudentT => TensorPrior::Iid(ScalarDensity::matched(PriorFamily::StudentT, var, self.nu)),
                PriorFamily::CorrelatedGaussian => {
                    if e.role == Role::ConvFilter {
                        let s = e.tensor.shape();
                        let key = [s[2], s[3]];
                        let cov = match cov_cache.iter().find(|(v, k, _)| *v == var && *k == key) {
                            Some((_, _, c)) => c.clone(),
                            None => {
                                let c = Arc::new(build_matern_covariance(
                                    s[2],
                                    s[3],
                                    self.kernel_sigma * var.sqrt(),
                                    self.kernel_lengthscale,
                                )?);
                                cov_cache.push((var, key, c.clone()));
                                c
                            }
                        };
                        TensorPrior::Correlated(cov)
                    } else {
                        TensorPrior::Iid(ScalarDensity::Gaussian { std: var.sqrt() })
                    }
                }
            };
            tensors.push(tp);
        }
        Ok(ResolvedPrior { tensors })
    }
}

/// A zero-centered univariate density.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ScalarDensity {
    Gaussian { std: f64 },
    Laplace { b: f64 },
    StudentT { nu: f64, scale: f64 },
}

impl ScalarDensity {
    /// Density of `family` with variance `var` under the matched-variance convention.
    pub fn matched(family: PriorFamily, var: f64, nu: f64) -> Self {
        match family {
            PriorFamily::Laplace => ScalarDensity::Laplace { b: (var / 2.0).sqrt() },
            PriorFamily::StudentT => {
                let scale = if nu > 2.0 { (var * (nu - 2.0) / nu).sqrt() } else { var.sqrt() };
                ScalarDensity::StudentT { nu, scale }
            }
            _ => ScalarDensity::Gaussian { std: var.sqrt() },
        }
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        match *self {
            ScalarDensity::Gaussian { std } => -0.5 * (2.0 * PI * std * std).ln() - 0.5 * (x / std).powi(2),
            ScalarDensity::Laplace { b } => -(2.0 * b).ln() - x.abs() / b,
            ScalarDensity::StudentT { nu, scale } => {
                let z = x / scale;
                ln_gamma((nu + 1.0) / 2.0) - ln_gamma(nu / 2.0) - 0.5 * (nu * PI).ln() - scale.ln()
                    - 0.5 * (nu + 1.0) * (z * z / nu).ln_1p()
            }
        }
    }

    /// `d/dx log p(x)`; the Laplace kink uses `sign(0) = 0`.
    pub fn grad_log_pdf(&self, x: f64) -> f64 {
        match *self {
            ScalarDensity::Gaussian { std } => -x / (std * std),
            ScalarDensity::Laplace { b } => {
                if x > 0.0 {
                    -1.0 / b
                } else if x < 0.0 {
                    1.0 / b
                } else {
                    0.0
                }
            }
            ScalarDensity::StudentT { nu, scale } => -(nu + 1.0) * x / (nu * scale * scale + x * x),
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            ScalarDensity::Gaussian { std } => std * rng.sample::<f64, _>(StandardNormal),
            ScalarDensity::Laplace { b } => {
                // Inverse CDF on u in (-1/2, 1/2).
                let u: f64 = rng.random::<f64>() - 0.5;
                -b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
            ScalarDensity::StudentT { nu, scale } => {
                let t = rand_distr::StudentT::new(nu).expect("nu > 0");
                scale * t.sample(rng)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    /// Matérn-1/2: `σ² exp(-d/λ)`.
    Exponential,
    /// `σ² exp(-d²/(2λ²))`.
    SquaredExponential,
}

/// Covariance of the `kh*kw` weights of one filter, with its Cholesky factor.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterCovariance {
    pub kh: usize,
    pub kw: usize,
    pub kernel: Kernel,
    pub sigma: f64,
    pub lengthscale: f64,
    /// Row-major `K x K`, `K = kh*kw`, pixels in row-major order.
    pub matrix: Vec<f64>,
    /// Lower-triangular Cholesky factor of `matrix`.
    pub chol: Vec<f64>,
    pub log_det: f64,
}

/// Pixel-distance kernel matrix over a `kh x kw` grid.
pub fn kernel_matrix(kernel: Kernel, kh: usize, kw: usize, sigma: f64, lengthscale: f64) -> Vec<f64> {
    let k = kh * kw;
    let mut m = vec![0.0; k * k];
    for a in 0..k {
        for b in 0..k {
            let dr = (a / kw) as f64 - (b / kw) as f64;
            let dc = (a % kw) as f64 - (b % kw) as f64;
            let d2 = dr * dr + dc * dc;
            let corr = match kernel {
                Kernel::Exponential => (-(d2.sqrt()) / lengthscale).exp(),
                Kernel::SquaredExponential => (-d2 / (2.0 * lengthscale * lengthscale)).exp(),
            };
            m[a * k + b] = sigma * sigma * corr;
        }
    }
    m
}

impl FilterCovariance {
    pub fn new(kernel: Kernel, kh: usize, kw: usize, sigma: f64, lengthscale: f64) -> Result<Self> {
        if kh == 0 || kw == 0 {
            return Err(Error::contract("filter extents must be >= 1"));
        }
        if !(sigma > 0.0 && lengthscale > 0.0) {
            return Err(Error::contract("kernel sigma and lengthscale must be > 0"));
        }
        let matrix = kernel_matrix(kernel, kh, kw, sigma, lengthscale);
        let k = kh * kw;
        let chol = linalg::cholesky(&matrix, k)?;
        let log_det = linalg::cholesky_log_det(&chol, k);
        Ok(Self { kh, kw, kernel, sigma, lengthscale, matrix, chol, log_det })
    }

    pub fn dim(&self) -> usize {
        self.kh * self.kw
    }

    pub fn log_pdf(&self, v: &[f64]) -> f64 {
        let k = self.dim();
        let mut z = v.to_vec();
        linalg::solve_lower(&self.chol, k, &mut z);
        let quad: f64 = z.iter().map(|x| x * x).sum();
        -0.5 * (k as f64 * (2.0 * PI).ln() + self.log_det + quad)
    }

    /// `-Σ⁻¹ v`
    pub fn grad_log_pdf(&self, v: &[f64], out: &mut [f64]) {
        let k = self.dim();
        out.copy_from_slice(v);
        linalg::solve_lower(&self.chol, k, out);
        linalg::solve_lower_transpose(&self.chol, k, out);
        for x in out.iter_mut() {
            *x = -*x;
        }
    }

    /// `L z`, `z ~ N(0, I)`
    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        let z: Vec<f64> = (0..self.dim()).map(|_| rng.sample(StandardNormal)).collect();
        linalg::lower_mul(&self.chol, self.dim(), &z)
    }
}

/// Matérn-1/2 filter covariance `σ² exp(-d(j,j')/λ)` over pixel positions.
pub fn build_matern_covariance(kh: usize, kw: usize, sigma: f64, lengthscale: f64) -> Result<FilterCovariance> {
    FilterCovariance::new(Kernel::Exponential, kh, kw, sigma, lengthscale)
}

#[derive(Clone, Debug, PartialEq)]
pub enum TensorPrior {
    Iid(ScalarDensity),
    /// Independent filter vectors, each with the shared covariance.
    Correlated(Arc<FilterCovariance>),
    Flat,
}

/// A prior bound to a specific parameter layout.
#[derive(Clone, Debug)]
pub struct ResolvedPrior {
    tensors: Vec<TensorPrior>,
}

impl ResolvedPrior {
    pub fn tensor_priors(&self) -> &[TensorPrior] {
        &self.tensors
    }

    fn check(&self, params: &ParamTree) -> Result<()> {
        if params.len() != self.tensors.len() {
            return Err(Error::shape(format!(
                "prior bound to {} tensors, got {}",
                self.tensors.len(),
                params.len()
            )));
        }
        Ok(())
    }

    pub fn log_prob(&self, params: &ParamTree) -> Result<f64> {
        self.check(params)?;
        let mut total = 0.0;
        for (tp, e) in self.tensors.iter().zip(params.iter()) {
            let x = e.tensor.data();
            total += match tp {
                TensorPrior::Flat => 0.0,
                TensorPrior::Iid(d) => x.iter().map(|&w| d.log_pdf(w)).sum::<f64>(),
                TensorPrior::Correlated(c) => x.chunks(c.dim()).map(|v| c.log_pdf(v)).sum::<f64>(),
            };
        }
        Ok(total)
    }

    pub fn grad_log_prob(&self, params: &ParamTree) -> Result<ParamTree> {
        let mut out = params.zeros_like();
        self.add_grad_log_prob(params, 1.0, &mut out)?;
        Ok(out)
    }

    /// `acc += alpha * ∇ log p(w)`
    pub fn add_grad_log_prob(&self, params: &ParamTree, alpha: f64, acc: &mut ParamTree) -> Result<()> {
        self.check(params)?;
        params.check_layout(acc)?;
        for ((tp, e), a) in self.tensors.iter().zip(params.iter()).zip(acc.entries_mut()) {
            let x = e.tensor.data();
            let out = a.tensor.data_mut();
            match tp {
                TensorPrior::Flat => {}
                TensorPrior::Iid(d) => {
                    for (o, &w) in out.iter_mut().zip(x) {
                        *o += alpha * d.grad_log_pdf(w);
                    }
                }
                TensorPrior::Correlated(c) => {
                    let mut buf = vec![0.0; c.dim()];
                    for (o, v) in out.chunks_mut(c.dim()).zip(x.chunks(c.dim())) {
                        c.grad_log_pdf(v, &mut buf);
                        for (oi, &g) in o.iter_mut().zip(&buf) {
                            *oi += alpha * g;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Exact draw with the layout of `layout`.
    pub fn sample_like(&self, layout: &ParamTree, rng: &mut impl Rng) -> Result<ParamTree> {
        self.check(layout)?;
        let mut out = layout.zeros_like();
        for (tp, e) in self.tensors.iter().zip(out.entries_mut()) {
            let data = e.tensor.data_mut();
            match tp {
                TensorPrior::Flat => return Err(Error::Unsupported("sampling from the improper uniform prior".into())),
                TensorPrior::Iid(d) => {
                    for x in data.iter_mut() {
                        *x = d.sample(rng);
                    }
                }
                TensorPrior::Correlated(c) => {
                    for chunk in data.chunks_mut(c.dim()) {
                        chunk.copy_from_slice(&c.sample(rng));
                    }
                }
            }
        }
        Ok(out)
    }
}

pub fn log_prob(prior: &PriorSpec, params: &ParamTree) -> Result<f64> {
    prior.resolve(params)?.log_prob(params)
}

pub fn grad_log_prob(prior: &PriorSpec, params: &ParamTree) -> Result<ParamTree> {
    prior.resolve(params)?.grad_log_prob(params)
}

/// Draw from `prior` with the layout of `layout`.
pub fn sample(prior: &PriorSpec, layout: &ParamTree, seed: u64) -> Result<ParamTree> {
    if prior.family == PriorFamily::Uniform {
        return Err(Error::Unsupported("sampling from the improper uniform prior".into()));
    }
    let mut rng = crate::rng::rng_from_seed(seed);
    prior.resolve(layout)?.sample_like(layout, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn single(x: f64) -> ParamTree {
        let mut p = ParamTree::new();
        p.push("b", Role::Bias, Tensor::from_vec(vec![x]));
        p
    }

    #[test]
    fn scalar_log_density_values() {
        let g = ScalarDensity::Gaussian { std: 1.0 };
        assert!((g.log_pdf(0.0) + 0.918_938_533_204_672_7).abs() < 1e-12);
        assert_eq!(g.grad_log_pdf(2.0), -2.0);
        let l = ScalarDensity::Laplace { b: 1.0 };
        assert!((l.log_pdf(0.0) - 0.5f64.ln()).abs() < 1e-15);
        assert_eq!(l.grad_log_pdf(0.0), 0.0);
        let t = ScalarDensity::StudentT { nu: 3.0, scale: 1.0 };
        assert!((t.log_pdf(0.0) + 1.000_888_849_623_509_5).abs() < 1e-12);
    }

    #[test]
    fn matched_variances() {
        assert_eq!(ScalarDensity::matched(PriorFamily::Laplace, 2.0, 3.0), ScalarDensity::Laplace { b: 1.0 });
        let ScalarDensity::StudentT { scale, .. } = ScalarDensity::matched(PriorFamily::StudentT, 3.0, 3.0) else {
            panic!()
        };
        assert!((scale - 1.0).abs() < 1e-15);
        let ScalarDensity::StudentT { scale, .. } = ScalarDensity::matched(PriorFamily::StudentT, 4.0, 1.0) else {
            panic!()
        };
        assert_eq!(scale, 2.0);
    }

    #[test]
    fn he_and_bias_variances() {
        let spec = PriorSpec::default();
        assert_eq!(spec.target_variance(Role::DenseWeight, &[100, 50]), 2.0 / 50.0);
        assert_eq!(spec.target_variance(Role::ConvFilter, &[8, 4, 3, 3]), 2.0 / 36.0);
        assert_eq!(spec.target_variance(Role::Bias, &[8]), 1.0);
        assert_eq!(PriorSpec::fixed(PriorFamily::Gaussian, 0.3).target_variance(Role::DenseWeight, &[2, 2]), 0.3);
    }

    #[test]
    fn matern_entries() {
        let c = build_matern_covariance(3, 3, 1.0, 1.0).unwrap();
        for i in 0..9 {
            assert_eq!(c.matrix[i * 9 + i], 1.0);
        }
        assert!((c.matrix[1] - (-1.0f64).exp()).abs() < 1e-15);
        assert!((c.matrix[8] - (-2.0 * 2f64.sqrt()).exp()).abs() < 1e-15);
        // L Lᵀ reproduces Σ
        for a in 0..9 {
            for b in 0..9 {
                let s: f64 = (0..9).map(|k| c.chol[a * 9 + k] * c.chol[b * 9 + k]).sum();
                assert!((s - c.matrix[a * 9 + b]).abs() < 1e-10);
            }
        }
        assert!(FilterCovariance::new(Kernel::Exponential, 3, 3, 0.0, 1.0).is_err());
    }

    #[test]
    fn matern_is_grid_symmetric() {
        let c = build_matern_covariance(3, 3, 1.3, 0.7).unwrap();
        let rot = |j: usize| (2 - j % 3) * 3 + j / 3;
        let flip = |j: usize| (j / 3) * 3 + (2 - j % 3);
        for a in 0..9 {
            for b in 0..9 {
                let v = c.matrix[a * 9 + b];
                assert!((c.matrix[rot(a) * 9 + rot(b)] - v).abs() < 1e-15);
                assert!((c.matrix[flip(a) * 9 + flip(b)] - v).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn uniform_is_flat_and_unsampleable() {
        let p = single(3.0);
        let spec = PriorSpec::new(PriorFamily::Uniform);
        assert_eq!(log_prob(&spec, &p).unwrap(), 0.0);
        assert_eq!(grad_log_prob(&spec, &p).unwrap().flatten(), vec![0.0]);
        assert!(matches!(sample(&spec, &p, 0), Err(Error::Unsupported(_))));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = PriorSpec::new(PriorFamily::StudentT);
        s.nu = 0.0;
        assert!(s.validate().is_err());
        assert!(PriorSpec::fixed(PriorFamily::Gaussian, -1.0).validate().is_err());
    }

    fn layout() -> ParamTree {
        let mut p = ParamTree::new();
        p.push("conv0.weight", Role::ConvFilter, Tensor::zeros(&[2, 3, 3, 3]));
        p.push("conv0.bias", Role::Bias, Tensor::zeros(&[2]));
        p.push("fc.weight", Role::DenseWeight, Tensor::zeros(&[4, 5]));
        p
    }

    #[test]
    fn gradients_match_finite_differences() {
        let families = [PriorFamily::Gaussian, PriorFamily::Laplace, PriorFamily::StudentT, PriorFamily::CorrelatedGaussian];
        for (i, &family) in families.iter().enumerate() {
            let spec = PriorSpec::new(family);
            let lay = layout();
            let params = sample(&PriorSpec::new(PriorFamily::Gaussian), &lay, i as u64).unwrap();
            let prior = spec.resolve(&lay).unwrap();
            let g = prior.grad_log_prob(&params).unwrap().flatten();
            let flat = params.flatten();
            for k in 0..flat.len() {
                if family == PriorFamily::Laplace && flat[k].abs() < 1e-4 {
                    continue;
                }
                let h = 1e-6;
                let mut up = flat.clone();
                up[k] += h;
                let mut dn = flat.clone();
                dn[k] -= h;
                let fd = (prior.log_prob(&params.unflatten(&up).unwrap()).unwrap()
                    - prior.log_prob(&params.unflatten(&dn).unwrap()).unwrap())
                    / (2.0 * h);
                let rel = (fd - g[k]).abs() / g[k].abs().max(1e-3);
                assert!(rel < 1e-6, "{family:?} coord {k}: {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn gaussian_sample_variance() {
        let mut p = ParamTree::new();
        p.push("b", Role::Bias, Tensor::zeros(&[1_000_000]));
        let s = sample(&PriorSpec::new(PriorFamily::Gaussian), &p, 3).unwrap().flatten();
        let var = s.iter().map(|x| x * x).sum::<f64>() / s.len() as f64;
        assert!((0.995..=1.005).contains(&var), "{var}");
    }

    #[test]
    fn laplace_and_student_t_samples_are_heavy_tailed() {
        let mut p = ParamTree::new();
        p.push("b", Role::Bias, Tensor::zeros(&[200_000]));
        let kurt = |family| {
            let s = sample(&PriorSpec::new(family), &p, 5).unwrap().flatten();
            let m2 = s.iter().map(|x| x * x).sum::<f64>() / s.len() as f64;
            let m4 = s.iter().map(|x| x.powi(4)).sum::<f64>() / s.len() as f64;
            (m2, m4 / (m2 * m2))
        };
        let (v_l, k_l) = kurt(PriorFamily::Laplace);
        assert!((v_l - 1.0).abs() < 0.02 && (k_l - 6.0).abs() < 0.5, "{v_l} {k_l}");
        let (_, k_g) = kurt(PriorFamily::Gaussian);
        let (_, k_t) = kurt(PriorFamily::StudentT);
        assert!(k_t > 2.0 * k_g, "{k_t} vs {k_g}");
    }

    #[test]
    fn correlated_family_falls_back_to_gaussian_off_filters() {
        let prior = PriorSpec::new(PriorFamily::CorrelatedGaussian).resolve(&layout()).unwrap();
        let tp = prior.tensor_priors();
        assert!(matches!(tp[0], TensorPrior::Correlated(_)));
        assert_eq!(tp[1], TensorPrior::Iid(ScalarDensity::Gaussian { std: 1.0 }));
        assert_eq!(tp[2], TensorPrior::Iid(ScalarDensity::Gaussian { std: (2.0f64 / 5.0).sqrt() }));
        let TensorPrior::Correlated(c) = &tp[0] else { unreachable!() };
        assert!((c.matrix[0] - 2.0 / 27.0).abs() < 1e-15);
    }

    #[test]
    fn tails_order_at_unit_variance() {
        let g = ScalarDensity::matched(PriorFamily::Gaussian, 1.0, 3.0);
        let l = ScalarDensity::matched(PriorFamily::Laplace, 1.0, 3.0);
        let t = ScalarDensity::matched(PriorFamily::StudentT, 1.0, 3.0);
        for w in [6.0, 10.0, 30.0] {
            assert!(t.log_pdf(w) > l.log_pdf(w) && l.log_pdf(w) > g.log_pdf(w), "w={w}");
        }
    }
}
