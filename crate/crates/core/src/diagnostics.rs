//! Sampler-correctness estimators: kinetic and configurational temperature,
//! rank-normalized split-R̂.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::params::ParamTree;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupTemp {
    pub name: String,
    pub count: usize,
    pub value: f64,
}

/// Per-tensor temperature estimates and their element-count-weighted summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TempEstimate {
    pub groups: Vec<GroupTemp>,
    pub mean: f64,
    pub std: f64,
}

impl TempEstimate {
    pub fn from_groups(groups: Vec<GroupTemp>) -> Self {
        let total: usize = groups.iter().map(|g| g.count).sum();
        if total == 0 {
            return Self { groups, mean: 0.0, std: 0.0 };
        }
        let t = total as f64;
        let mean = groups.iter().map(|g| g.count as f64 * g.value).sum::<f64>() / t;
        let var = groups.iter().map(|g| g.count as f64 * (g.value - mean).powi(2)).sum::<f64>() / t;
        Self { groups, mean, std: var.sqrt() }
    }
}

fn per_tensor(a: &ParamTree, b: &ParamTree, f: impl Fn(f64, f64) -> f64) -> Result<TempEstimate> {
    a.check_layout(b)?;
    let groups = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| {
            let n = x.tensor.len();
            let s: f64 = x.tensor.data().iter().zip(y.tensor.data()).map(|(&u, &v)| f(u, v)).sum();
            GroupTemp { name: x.name.clone(), count: n, value: if n == 0 { 0.0 } else { s / n as f64 } }
        })
        .collect();
    Ok(TempEstimate::from_groups(groups))
}

/// `(1/d) Σ mᵢ²/Mᵢᵢ` per tensor.
pub fn kinetic_temperature(momenta: &ParamTree, mass: &ParamTree) -> Result<TempEstimate> {
    per_tensor(momenta, mass, |m, mm| m * m / mm)
}

/// `(1/d) Σ wᵢ (∇U)ᵢ` per tensor. Not sign-constrained.
pub fn configurational_temperature(params: &ParamTree, grad: &ParamTree) -> Result<TempEstimate> {
    per_tensor(params, grad, |w, g| w * g)
}

/// Scalar series arranged as `[chains, draws]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainMatrix {
    chains: usize,
    draws: usize,
    values: Vec<f64>,
}

impl ChainMatrix {
    pub fn new(rows: &[Vec<f64>]) -> Result<Self> {
        let draws = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != draws) {
            return Err(Error::shape("chains must have equal length"));
        }
        Ok(Self { chains: rows.len(), draws, values: rows.concat() })
    }

    pub fn chains(&self) -> usize {
        self.chains
    }

    pub fn draws(&self) -> usize {
        self.draws
    }

    pub fn chain(&self, c: usize) -> &[f64] {
        &self.values[c * self.draws..(c + 1) * self.draws]
    }
}

/// R̂ outcome; undefined when the within-chain variance vanishes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum Rhat {
    Defined { value: f64 },
    Undefined { reason: String },
}

impl Rhat {
    pub fn value(&self) -> Option<f64> {
        match self {
            Rhat::Defined { value } => Some(*value),
            Rhat::Undefined { .. } => None,
        }
    }
}

/// Average ranks (1-based) with ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i+1 ..= j
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Bulk rank-normalized split-R̂. Odd chain lengths drop the first draw.
pub fn split_rhat(chains: &ChainMatrix) -> Result<Rhat> {
    if chains.chains() < 2 {
        return Err(Error::contract(format!("split-R̂ needs at least 2 chains, got {}", chains.chains())));
    }
    let skip = chains.draws() % 2;
    let n = chains.draws() - skip;
    if n < 4 {
        return Err(Error::contract(format!("split-R̂ needs at least 4 draws per chain, got {}", chains.draws())));
    }
    let half = n / 2;
    let mut pooled = Vec::with_capacity(chains.chains() * n);
    for c in 0..chains.chains() {
        pooled.extend_from_slice(&chains.chain(c)[skip..]);
    }
    if pooled.iter().any(|v| !v.is_finite()) {
        return Ok(Rhat::Undefined { reason: "non-finite values".into() });
    }
    let ranks = average_ranks(&pooled);
    let s = pooled.len() as f64;
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let z: Vec<f64> = ranks.iter().map(|r| normal.inverse_cdf((r - 0.375) / (s + 0.25))).collect();

    let stats: Vec<(f64, f64)> = z.chunks(half).map(mean_var).collect();
    let w = stats.iter().map(|s| s.1).sum::<f64>() / stats.len() as f64;
    if w <= 0.0 {
        return Ok(Rhat::Undefined { reason: "within-chain variance is zero (all values identical)".into() });
    }
    let means: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let b = half as f64 * mean_var(&means).1;
    let hn = half as f64;
    let var_plus = (hn - 1.0) / hn * w + b / hn;
    Ok(Rhat::Defined { value: (var_plus / w).sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Role;
    use crate::tensor::Tensor;

    fn tree(v: Vec<f64>) -> ParamTree {
        let mut p = ParamTree::new();
        let n = v.len();
        p.push("x", Role::Bias, Tensor::new(vec![n], v).unwrap());
        p
    }

    #[test]
    fn temperature_examples() {
        let m = tree(vec![1.0; 4]);
        assert_eq!(kinetic_temperature(&m, &tree(vec![1.0; 4])).unwrap().mean, 1.0);
        assert_eq!(kinetic_temperature(&tree(vec![0.0; 4]), &tree(vec![1.0; 4])).unwrap().mean, 0.0);
        assert_eq!(configurational_temperature(&tree(vec![2.0]), &tree(vec![2.0])).unwrap().mean, 4.0);
        assert_eq!(configurational_temperature(&tree(vec![1.0, 0.0]), &tree(vec![0.0, 1.0])).unwrap().mean, 0.0);
    }

    #[test]
    fn weighted_summary() {
        let e = TempEstimate::from_groups(vec![
            GroupTemp { name: "a".into(), count: 3, value: 1.0 },
            GroupTemp { name: "b".into(), count: 1, value: 5.0 },
        ]);
        assert_eq!(e.mean, 2.0);
        assert!((e.std - 3.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn rhat_rejects_bad_shapes_and_constant_data() {
        assert!(split_rhat(&ChainMatrix::new(&[vec![1.0; 10]]).unwrap()).is_err());
        assert!(split_rhat(&ChainMatrix::new(&[vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]]).unwrap()).is_err());
        let r = split_rhat(&ChainMatrix::new(&[vec![1.0; 8], vec![1.0; 8]]).unwrap()).unwrap();
        assert!(r.value().is_none());
    }

    #[test]
    fn separated_chains_have_large_rhat() {
        let a: Vec<f64> = (0..100).map(|i| (i as f64 * 0.7).sin()).collect();
        let b: Vec<f64> = a.iter().map(|v| v + 10.0).collect();
        let r = split_rhat(&ChainMatrix::new(&[a, b]).unwrap()).unwrap().value().unwrap();
        assert!(r > 1.5, "{r}");
    }
}
