//! Empirical weight statistics: marginal fits, Q-Q data, filter covariances,
//! kernel lengthscale fits, off-diagonal covariance distributions, spectra.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::linalg;
use crate::priors::{kernel_matrix, Kernel};
use crate::rng::rng_from_seed;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginalFamily {
    Gaussian,
    Laplace,
    StudentT,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalFit {
    pub family: MarginalFamily,
    pub loc: f64,
    /// Gaussian σ, Laplace b, Student-t σ.
    pub scale: f64,
    pub nu: Option<f64>,
    pub log_lik: f64,
    pub n: usize,
    /// ν̂ reached the upper bracket; the fit is reported as ≈ Gaussian.
    #[serde(default)]
    pub gaussian_limit: bool,
    /// The optimizer stopped at its evaluation budget.
    #[serde(default)]
    pub budget_exhausted: bool,
}

pub const NU_MIN: f64 = 0.5;
pub const NU_MAX: f64 = 1000.0;
const MAX_NU_EVALS: usize = 500;

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn median(x: &[f64]) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn gaussian_log_lik(x: &[f64], mu: f64, sigma: f64) -> f64 {
    let n = x.len() as f64;
    let ss: f64 = x.iter().map(|v| (v - mu).powi(2)).sum();
    -0.5 * n * (2.0 * std::f64::consts::PI * sigma * sigma).ln() - ss / (2.0 * sigma * sigma)
}

/// Maximum-likelihood Gaussian (mean, biased variance) or Laplace
/// (median, mean absolute deviation) fit.
pub fn fit_location_scale(family: MarginalFamily, samples: &[f64]) -> Result<MarginalFit> {
    if samples.len() < 2 {
        return Err(Error::contract("marginal fits need at least 2 samples"));
    }
    let n = samples.len();
    let (loc, scale, log_lik) = match family {
        MarginalFamily::Gaussian => {
            let mu = mean(samples);
            let var = samples.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n as f64;
            if var <= 0.0 {
                return Err(Error::DegenerateFit("zero variance".into()));
            }
            (mu, var.sqrt(), gaussian_log_lik(samples, mu, var.sqrt()))
        }
        MarginalFamily::Laplace => {
            let mu = median(samples);
            let b = samples.iter().map(|v| (v - mu).abs()).sum::<f64>() / n as f64;
            if b <= 0.0 {
                return Err(Error::DegenerateFit("zero absolute deviation".into()));
            }
            let ll = -(n as f64) * (2.0 * b).ln() - samples.iter().map(|v| (v - mu).abs()).sum::<f64>() / b;
            (mu, b, ll)
        }
        MarginalFamily::StudentT => return fit_student_t(samples),
    };
    Ok(MarginalFit { family, loc, scale, nu: None, log_lik, n, gaussian_limit: false, budget_exhausted: false })
}

fn student_t_log_lik(x: &[f64], mu: f64, sigma: f64, nu: f64) -> f64 {
    let n = x.len() as f64;
    let c = ln_gamma((nu + 1.0) / 2.0) - ln_gamma(nu / 2.0) - 0.5 * (nu * std::f64::consts::PI).ln() - sigma.ln();
    let tail: f64 = x.iter().map(|v| ((v - mu) / sigma).powi(2) / nu).map(f64::ln_1p).sum();
    n * c - (nu + 1.0) / 2.0 * tail
}

/// EM for `(μ, σ)` at fixed ν, from a warm start.
fn student_t_em(x: &[f64], nu: f64, mut mu: f64, mut sigma: f64) -> (f64, f64) {
    let n = x.len() as f64;
    for _ in 0..2000 {
        let mut sw = 0.0;
        let mut swx = 0.0;
        for &v in x {
            let z = (v - mu) / sigma;
            let u = (nu + 1.0) / (nu + z * z);
            sw += u;
            swx += u * v;
        }
        let mu_new = swx / sw;
        let mut s2 = 0.0;
        for &v in x {
            let z = (v - mu) / sigma;
            let u = (nu + 1.0) / (nu + z * z);
            s2 += u * (v - mu_new).powi(2);
        }
        let sigma_new = (s2 / n).sqrt();
        let done = (mu_new - mu).abs() <= 1e-8 * sigma && (sigma_new - sigma).abs() <= 1e-8 * sigma;
        mu = mu_new;
        sigma = sigma_new;
        if done {
            break;
        }
    }
    (mu, sigma)
}

/// Profile-likelihood Student-t fit: EM for `(μ, σ)` at each ν, golden
/// section over `log ν ∈ [log 0.5, log 1000]`.
pub fn fit_student_t(samples: &[f64]) -> Result<MarginalFit> {
    if samples.len() < 10 {
        return Err(Error::contract("student-t fit needs at least 10 samples"));
    }
    let gauss = fit_location_scale(MarginalFamily::Gaussian, samples)?;
    let med = median(samples);
    let mad = median(&samples.iter().map(|v| (v - med).abs()).collect::<Vec<_>>()) * 1.4826;
    let start = (med, if mad > 0.0 { mad } else { gauss.scale });
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0, 0.0); // (ll, log ν, μ, σ)
    let profile = |log_nu: f64, best: &mut (f64, f64, f64, f64)| -> f64 {
        let nu = log_nu.exp();
        let (mu, sigma) = student_t_em(samples, nu, start.0, start.1);
        let ll = student_t_log_lik(samples, mu, sigma, nu);
        if ll > best.0 {
            *best = (ll, log_nu, mu, sigma);
        }
        ll
    };
    let (mut lo, mut hi) = (NU_MIN.ln(), NU_MAX.ln());
    profile(lo, &mut best);
    profile(hi, &mut best);
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let mut f1 = profile(x1, &mut best);
    let mut f2 = profile(x2, &mut best);
    let mut iters = 4;
    while hi - lo > 1e-6 && iters < MAX_NU_EVALS {
        if f1 > f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = profile(x1, &mut best);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = profile(x2, &mut best);
        }
        iters += 1;
    }
    let budget_exhausted = hi - lo > 1e-6;
    let (ll, log_nu, mu, sigma) = best;
    let nu = log_nu.exp();
    let at_upper = NU_MAX.ln() - log_nu < 1e-3;
    if at_upper && gauss.log_lik > ll {
        return Ok(MarginalFit {
            family: MarginalFamily::StudentT,
            loc: gauss.loc,
            scale: gauss.scale,
            nu: Some(NU_MAX),
            log_lik: gauss.log_lik,
            n: samples.len(),
            gaussian_limit: true,
            budget_exhausted,
        });
    }
    Ok(MarginalFit {
        family: MarginalFamily::StudentT,
        loc: mu,
        scale: sigma,
        nu: Some(nu),
        log_lik: ll,
        n: samples.len(),
        gaussian_limit: at_upper,
        budget_exhausted,
    })
}

impl MarginalFit {
    pub fn cdf(&self, x: f64) -> f64 {
        let z = (x - self.loc) / self.scale;
        match self.family {
            MarginalFamily::Gaussian => Normal::new(0.0, 1.0).expect("standard").cdf(z),
            MarginalFamily::Laplace => {
                if z < 0.0 {
                    0.5 * z.exp()
                } else {
                    1.0 - 0.5 * (-z).exp()
                }
            }
            MarginalFamily::StudentT => StudentsT::new(0.0, 1.0, self.nu.unwrap_or(NU_MAX)).expect("valid ν").cdf(z),
        }
    }

    pub fn inverse_cdf(&self, p: f64) -> f64 {
        match self.family {
            MarginalFamily::Gaussian => self.loc + self.scale * Normal::new(0.0, 1.0).expect("standard").inverse_cdf(p),
            MarginalFamily::Laplace => {
                let d = p - 0.5;
                self.loc - self.scale * d.signum() * (1.0 - 2.0 * d.abs()).ln()
            }
            MarginalFamily::StudentT => {
                if p == 0.5 {
                    return self.loc;
                }
                let (mut lo, mut hi) = (-1.0, 1.0);
                while self.cdf(self.loc + self.scale * lo) > p {
                    lo *= 2.0;
                }
                while self.cdf(self.loc + self.scale * hi) < p {
                    hi *= 2.0;
                }
                while hi - lo > 1e-10 {
                    let mid = 0.5 * (lo + hi);
                    if self.cdf(self.loc + self.scale * mid) < p {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                self.loc + self.scale * 0.5 * (lo + hi)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QqData {
    /// `(theoretical, empirical)` quantile pairs.
    pub pairs: Vec<(f64, f64)>,
    /// `max |F̂ - F|` over the sample.
    pub ks_statistic: f64,
    /// Whether `ks_statistic <= 1.63/√n`.
    pub ks_ok: bool,
}

/// Sorted samples against fitted quantiles at plotting positions `(i−½)/n`.
pub fn qq_data(samples: &[f64], fit: &MarginalFit) -> QqData {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut ks: f64 = 0.0;
    let pairs = s
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = fit.cdf(x);
            ks = ks.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs());
            (fit.inverse_cdf((i as f64 + 0.5) / n), x)
        })
        .collect();
    QqData { pairs, ks_statistic: ks, ks_ok: ks <= 1.63 / n.sqrt() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialCovariance {
    pub kh: usize,
    pub kw: usize,
    /// Row-major `K x K`.
    pub matrix: Vec<f64>,
    /// `matrix` divided by its largest diagonal entry.
    pub max_normalized: Vec<f64>,
    /// Number of `(out, in)` filter vectors.
    pub samples: usize,
}

/// Sample covariance of the flattened `kh x kw` filters of
/// `[out, in, kh, kw]` weights, one sample per channel pair.
pub fn spatial_covariance(weights: &Tensor) -> Result<SpatialCovariance> {
    if weights.rank() != 4 {
        return Err(Error::shape(format!("expected [out, in, kh, kw], got {:?}", weights.shape())));
    }
    let s = weights.shape();
    let (c, kh, kw) = (s[0] * s[1], s[2], s[3]);
    if c < 2 {
        return Err(Error::contract("spatial covariance needs at least 2 filters"));
    }
    let k = kh * kw;
    let rows: Vec<&[f64]> = weights.data().chunks(k).collect();
    let mut mu = vec![0.0; k];
    for r in &rows {
        for (m, v) in mu.iter_mut().zip(r.iter()) {
            *m += v;
        }
    }
    mu.iter_mut().for_each(|m| *m /= c as f64);
    let mut cov = vec![0.0; k * k];
    let mut d = vec![0.0; k];
    for r in &rows {
        for j in 0..k {
            d[j] = r[j] - mu[j];
        }
        for a in 0..k {
            for b in a..k {
                cov[a * k + b] += d[a] * d[b];
            }
        }
    }
    for a in 0..k {
        for b in a..k {
            let v = cov[a * k + b] / (c as f64 - 1.0);
            cov[a * k + b] = v;
            cov[b * k + a] = v;
        }
    }
    let max_diag = (0..k).map(|i| cov[i * k + i]).fold(0.0, f64::max);
    let max_normalized = if max_diag > 0.0 { cov.iter().map(|v| v / max_diag).collect() } else { cov.clone() };
    Ok(SpatialCovariance { kh, kw, matrix: cov, max_normalized, samples: c })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthscaleFit {
    pub kernel: Kernel,
    pub sigma: f64,
    pub lengthscale: f64,
    pub log_lik: f64,
    /// λ̂ sits on an end of the search grid.
    pub at_grid_bound: bool,
}

pub const LENGTHSCALE_GRID: (f64, f64, usize) = (0.05, 50.0, 80);

/// `(log-likelihood, σ̂)` at lengthscale λ with σ² profiled out, given the
/// scatter matrix `S = Σ vvᵀ` of `c` filters.
fn lengthscale_profile(kernel: Kernel, kh: usize, kw: usize, scatter: &[f64], c: usize, lambda: f64) -> Option<(f64, f64)> {
    let k = kh * kw;
    let mut r = kernel_matrix(kernel, kh, kw, 1.0, lambda);
    let chol = match linalg::cholesky(&r, k) {
        Ok(l) => l,
        Err(_) => {
            for i in 0..k {
                r[i * k + i] += 1e-8;
            }
            linalg::cholesky(&r, k).ok()?
        }
    };
    let log_det = linalg::cholesky_log_det(&chol, k);
    // tr(R⁻¹ S) column by column
    let mut tr = 0.0;
    let mut col = vec![0.0; k];
    for j in 0..k {
        for i in 0..k {
            col[i] = scatter[i * k + j];
        }
        linalg::solve_lower(&chol, k, &mut col);
        linalg::solve_lower_transpose(&chol, k, &mut col);
        tr += col[j];
    }
    let ck = (c * k) as f64;
    let s2 = tr / ck;
    if !(s2 > 0.0) {
        return None;
    }
    let ll = -0.5 * ck * ((2.0 * std::f64::consts::PI).ln() + s2.ln() + 1.0) - 0.5 * c as f64 * log_det;
    Some((ll, s2.sqrt()))
}

/// Maximum-likelihood `(σ, λ)` of a zero-mean Gaussian with kernel
/// covariance over `kh x kw` filters (rows of `filters`): log-λ grid, then
/// golden-section refinement around the best grid point.
pub fn fit_kernel_lengthscale(filters: &Tensor, kh: usize, kw: usize, kernel: Kernel) -> Result<LengthscaleFit> {
    let k = kh * kw;
    if k == 0 || filters.len() % k != 0 {
        return Err(Error::shape(format!("{} values do not form {kh}x{kw} filters", filters.len())));
    }
    let c = filters.len() / k;
    if c < 2 {
        return Err(Error::contract("lengthscale fit needs at least 2 filters"));
    }
    let mut scatter = vec![0.0; k * k];
    for v in filters.data().chunks(k) {
        for a in 0..k {
            for b in a..k {
                scatter[a * k + b] += v[a] * v[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            scatter[a * k + b] = scatter[b * k + a];
        }
    }
    let (lo, hi, n) = LENGTHSCALE_GRID;
    let grid: Vec<f64> = (0..n).map(|i| lo.ln() + (hi / lo).ln() * i as f64 / (n - 1) as f64).collect();
    let eval = |log_l: f64| lengthscale_profile(kernel, kh, kw, &scatter, c, log_l.exp()).map(|p| p.0).unwrap_or(f64::NEG_INFINITY);
    let vals: Vec<f64> = grid.iter().map(|&g| eval(g)).collect();
    let best = (0..n).max_by(|&a, &b| vals[a].total_cmp(&vals[b])).expect("non-empty grid");
    if !vals[best].is_finite() {
        return Err(Error::DegenerateFit("no lengthscale gave a positive-definite covariance".into()));
    }
    let (mut a, mut b) = (grid[best.saturating_sub(1)], grid[(best + 1).min(n - 1)]);
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - r * (b - a);
    let mut x2 = a + r * (b - a);
    let (mut f1, mut f2) = (eval(x1), eval(x2));
    while b - a > 1e-9 {
        if f1 > f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = eval(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = eval(x2);
        }
    }
    let mut log_l = 0.5 * (a + b);
    if eval(log_l) < vals[best] {
        log_l = grid[best];
    }
    let (ll, sigma) = lengthscale_profile(kernel, kh, kw, &scatter, c, log_l.exp()).expect("evaluated above");
    Ok(LengthscaleFit {
        kernel,
        sigma,
        lengthscale: log_l.exp(),
        log_lik: ll,
        at_grid_bound: best == 0 || best == n - 1,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Counts on the given edges; the last bin is closed on the right.
pub fn histogram(values: &[f64], edges: &[f64]) -> Histogram {
    let nb = edges.len().saturating_sub(1);
    let mut counts = vec![0; nb];
    for &v in values {
        if nb == 0 || v < edges[0] || v > edges[nb] {
            continue;
        }
        let idx = edges.partition_point(|&e| e <= v).saturating_sub(1).min(nb - 1);
        counts[idx] += 1;
    }
    Histogram { edges: edges.to_vec(), counts }
}

fn kurtosis(x: &[f64]) -> f64 {
    let m = mean(x);
    let m2 = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64;
    let m4 = x.iter().map(|v| (v - m).powi(4)).sum::<f64>() / x.len() as f64;
    m4 / (m2 * m2)
}

/// Off-diagonal entries of the `r x r` covariance between rows of an
/// `r x c` matrix (each row a variable observed over `c` columns).
fn row_cov_offdiag(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let centered: Vec<f64> = a
        .chunks(c)
        .flat_map(|row| {
            let m = mean(row);
            row.iter().map(move |v| v - m)
        })
        .collect();
    let mut out = Vec::with_capacity(r * (r - 1));
    let mut cov = vec![0.0; r * r];
    for i in 0..r {
        for j in i + 1..r {
            let v = crate::tensor::dot(&centered[i * c..(i + 1) * c], &centered[j * c..(j + 1) * c]) / (c as f64 - 1.0);
            cov[i * r + j] = v;
            cov[j * r + i] = v;
        }
    }
    for i in 0..r {
        for j in 0..r {
            if i != j {
                out.push(cov[i * r + j]);
            }
        }
    }
    out
}

fn transpose(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut t = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            t[j * r + i] = a[i * c + j];
        }
    }
    t
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OffDiagonal {
    pub row_offdiag: Vec<f64>,
    pub col_offdiag: Vec<f64>,
    pub baseline_row_offdiag: Vec<f64>,
    pub baseline_col_offdiag: Vec<f64>,
    pub row_histogram: Histogram,
    pub baseline_row_histogram: Histogram,
    pub col_histogram: Histogram,
    pub baseline_col_histogram: Histogram,
    /// Kurtosis of the pooled empirical off-diagonals over the baseline's.
    pub kurtosis_ratio: f64,
    pub baseline_seed: u64,
}

/// Row- and column-covariance off-diagonals of `matrix` against an iid
/// Gaussian matrix of the same shape and total variance.
pub fn offdiag_distribution(matrix: &Tensor, bins: usize, seed: u64) -> Result<OffDiagonal> {
    if matrix.rank() != 2 || matrix.shape()[0] < 2 || matrix.shape()[1] < 2 {
        return Err(Error::shape(format!("expected a matrix of at least 2x2, got {:?}", matrix.shape())));
    }
    let (r, c) = (matrix.shape()[0], matrix.shape()[1]);
    let a = matrix.data();
    let m = mean(a);
    let var = a.iter().map(|v| (v - m).powi(2)).sum::<f64>() / a.len() as f64;
    let mut rng = rng_from_seed(seed);
    let base: Vec<f64> = (0..a.len()).map(|_| m + var.sqrt() * rng.sample::<f64, _>(StandardNormal)).collect();

    let row = row_cov_offdiag(a, r, c);
    let col = row_cov_offdiag(&transpose(a, r, c), c, r);
    let brow = row_cov_offdiag(&base, r, c);
    let bcol = row_cov_offdiag(&transpose(&base, r, c), c, r);

    let edges_for = |x: &[f64], y: &[f64]| -> Vec<f64> {
        let lo = x.iter().chain(y).copied().fold(f64::INFINITY, f64::min);
        let hi = x.iter().chain(y).copied().fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
        let nb = bins.max(1);
        (0..=nb).map(|i| lo + (hi - lo) * i as f64 / nb as f64).collect()
    };
    let re = edges_for(&row, &brow);
    let ce = edges_for(&col, &bcol);
    let emp: Vec<f64> = row.iter().chain(&col).copied().collect();
    let bas: Vec<f64> = brow.iter().chain(&bcol).copied().collect();
    Ok(OffDiagonal {
        row_histogram: histogram(&row, &re),
        baseline_row_histogram: histogram(&brow, &re),
        col_histogram: histogram(&col, &ce),
        baseline_col_histogram: histogram(&bcol, &ce),
        kurtosis_ratio: kurtosis(&emp) / kurtosis(&bas),
        row_offdiag: row,
        col_offdiag: col,
        baseline_row_offdiag: brow,
        baseline_col_offdiag: bcol,
        baseline_seed: seed,
    })
}

/// Descending singular values of a 2-D tensor.
pub fn singular_values(matrix: &Tensor) -> Result<Vec<f64>> {
    if matrix.rank() != 2 {
        return Err(Error::shape(format!("expected a matrix, got {:?}", matrix.shape())));
    }
    Ok(linalg::singular_values(matrix.data(), matrix.shape()[0], matrix.shape()[1]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StudentT};

    #[test]
    fn location_scale_examples() {
        let g = fit_location_scale(MarginalFamily::Gaussian, &[-1.0, 1.0]).unwrap();
        assert_eq!((g.loc, g.scale), (0.0, 1.0));
        let l = fit_location_scale(MarginalFamily::Laplace, &[-1.0, 0.0, 1.0]).unwrap();
        assert_eq!(l.loc, 0.0);
        assert!((l.scale - 2.0 / 3.0).abs() < 1e-15);
        assert!(matches!(fit_location_scale(MarginalFamily::Gaussian, &[2.0, 2.0]), Err(Error::DegenerateFit(_))));
    }

    #[test]
    fn student_t_recovers_heavy_tails() {
        let mut rng = rng_from_seed(4);
        let t = StudentT::new(3.0).unwrap();
        let x: Vec<f64> = (0..20_000).map(|_| 0.5 * t.sample(&mut rng)).collect();
        let f = fit_student_t(&x).unwrap();
        let nu = f.nu.unwrap();
        assert!((2.4..3.8).contains(&nu), "{nu}");
        assert!((f.scale - 0.5).abs() < 0.05);
    }

    #[test]
    fn student_t_gaussian_limit_never_loses_to_gaussian() {
        let mut rng = rng_from_seed(2);
        let x: Vec<f64> = (0..2_000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let f = fit_student_t(&x).unwrap();
        let g = fit_location_scale(MarginalFamily::Gaussian, &x).unwrap();
        assert!(f.nu.unwrap() > 50.0);
        if f.gaussian_limit {
            assert!(f.log_lik >= g.log_lik - 1e-6);
        }
    }

    #[test]
    fn quantiles_invert_cdf() {
        for family in [MarginalFamily::Gaussian, MarginalFamily::Laplace, MarginalFamily::StudentT] {
            let f = MarginalFit {
                family,
                loc: 0.3,
                scale: 2.0,
                nu: Some(4.0),
                log_lik: 0.0,
                n: 0,
                gaussian_limit: false,
                budget_exhausted: false,
            };
            for p in [0.01, 0.3, 0.5, 0.9] {
                assert!((f.cdf(f.inverse_cdf(p)) - p).abs() < 1e-9, "{family:?} {p}");
            }
        }
    }

    #[test]
    fn qq_single_sample() {
        let f = fit_location_scale(MarginalFamily::Gaussian, &[-1.0, 1.0]).unwrap();
        let q = qq_data(&[0.7], &f);
        assert_eq!(q.pairs, vec![(0.0, 0.7)]);
    }

    #[test]
    fn identical_filters_have_zero_covariance() {
        let w = Tensor::new(vec![2, 3, 2, 2], [1.0, 2.0, 3.0, 4.0].repeat(6)).unwrap();
        let s = spatial_covariance(&w).unwrap();
        assert!(s.matrix.iter().all(|&v| v == 0.0));
        assert!(spatial_covariance(&Tensor::zeros(&[1, 1, 3, 3])).is_err());
    }

    #[test]
    fn singular_values_of_rank_one() {
        let u = [1.0, 2.0, 2.0];
        let v = [3.0, 4.0];
        let a: Vec<f64> = u.iter().flat_map(|x| v.iter().map(move |y| x * y)).collect();
        let s = singular_values(&Tensor::new(vec![3, 2], a).unwrap()).unwrap();
        assert!((s[0] - 15.0).abs() < 1e-12 && s[1].abs() < 1e-12);
    }

    #[test]
    fn lengthscale_fit_is_scale_homogeneous() {
        let cov = crate::priors::build_matern_covariance(3, 3, 1.0, 1.0).unwrap();
        let mut rng = rng_from_seed(8);
        let data: Vec<f64> = (0..2000).flat_map(|_| cov.sample(&mut rng)).collect();
        let t = Tensor::new(vec![2000, 9], data).unwrap();
        let a = fit_kernel_lengthscale(&t, 3, 3, Kernel::Exponential).unwrap();
        let b = fit_kernel_lengthscale(&t.map(|v| 3.0 * v), 3, 3, Kernel::Exponential).unwrap();
        assert!((b.sigma / a.sigma - 3.0).abs() < 1e-6);
        assert!((b.lengthscale / a.lengthscale - 1.0).abs() < 1e-6);
        assert!((a.lengthscale - 1.0).abs() < 0.15, "{}", a.lengthscale);
    }

    #[test]
    fn iid_filters_push_lengthscale_to_lower_bound() {
        let mut rng = rng_from_seed(9);
        let data: Vec<f64> = (0..9 * 3000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let f = fit_kernel_lengthscale(&Tensor::new(vec![3000, 9], data).unwrap(), 3, 3, Kernel::Exponential).unwrap();
        assert!(f.lengthscale < 0.3, "{}", f.lengthscale);
    }

    #[test]
    fn orthogonal_rows_have_small_offdiagonals() {
        let mut a = vec![0.0; 4 * 8];
        for i in 0..4 {
            a[i * 8 + 2 * i] = 1.0;
            a[i * 8 + 2 * i + 1] = -1.0;
        }
        let d = offdiag_distribution(&Tensor::new(vec![4, 8], a).unwrap(), 10, 1).unwrap();
        assert!(d.row_offdiag.iter().all(|v| v.abs() < 1e-12));
        assert_eq!(d.row_offdiag.len(), 12);
        assert_eq!(d.col_offdiag.len(), 56);
    }
}
