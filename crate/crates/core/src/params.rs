//! Named parameter collections.
//!
//! A [`ParamTree`] keeps its entries in a fixed order: layer order, and within
//! a layer the weight before the bias. Flattening follows that order, so a
//! flat vector and a tree are interchangeable given the layout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// `[out, in]`
    DenseWeight,
    /// `[out_ch, in_ch, kh, kw]`
    ConvFilter,
    /// `[out]`
    Bias,
}

impl Role {
    /// Fan-in of a weight tensor with this role and shape; `None` for biases.
    pub fn fan_in(self, shape: &[usize]) -> Option<usize> {
        match self {
            Role::DenseWeight => shape.get(1).copied(),
            Role::ConvFilter => Some(shape[1..].iter().product()),
            Role::Bias => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub role: Role,
    pub tensor: Tensor,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamTree {
    entries: Vec<ParamEntry>,
}

impl ParamTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, role: Role, tensor: Tensor) {
        self.entries.push(ParamEntry { name: name.into(), role, tensor });
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamEntry> {
        self.entries.iter()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|e| e.name == name).map(|e| &e.tensor)
    }

    /// Number of tensors.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalars.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    /// Same names, roles and shapes, all values `value`.
    pub fn full_like(&self, value: f64) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    role: e.role,
                    tensor: Tensor::full(e.tensor.shape(), value),
                })
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        self.full_like(0.0)
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|(a, b)| {
                a.name == b.name && a.role == b.role && a.tensor.shape() == b.tensor.shape()
            })
    }

    pub fn check_layout(&self, other: &Self) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::shape("parameter trees have different layouts".to_string()))
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_scalars());
        for e in &self.entries {
            out.extend_from_slice(e.tensor.data());
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten) using `self` as the layout.
    pub fn unflatten(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.num_scalars() {
            return Err(Error::shape(format!(
                "flat vector has {} values, layout needs {}",
                flat.len(),
                self.num_scalars()
            )));
        }
        let mut off = 0;
        let mut entries = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let n = e.tensor.len();
            entries.push(ParamEntry {
                name: e.name.clone(),
                role: e.role,
                tensor: Tensor::from_parts(e.tensor.shape().to_vec(), flat[off..off + n].to_vec()),
            });
            off += n;
        }
        Ok(Self { entries })
    }

    /// Elementwise `f(self_i, other_i)` into a new tree with `self`'s layout.
    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert!(self.same_layout(other));
        let mut out = self.clone();
        for (o, b) in out.entries.iter_mut().zip(&other.entries) {
            for (x, &y) in o.tensor.data_mut().iter_mut().zip(b.tensor.data()) {
                *x = f(*x, y);
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let mut out = self.clone();
        for e in &mut out.entries {
            for x in e.tensor.data_mut() {
                *x = f(*x);
            }
        }
        out
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        debug_assert!(self.same_layout(other));
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            crate::tensor::axpy(alpha, b.tensor.data(), a.tensor.data_mut());
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for e in &mut self.entries {
            for x in e.tensor.data_mut() {
                *x *= alpha;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|e| e.tensor.all_finite())
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| crate::tensor::dot(a.tensor.data(), b.tensor.data()))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tree() -> ParamTree {
        let mut t = ParamTree::new();
        t.push("w", Role::DenseWeight, Tensor::new(vec![2, 3], (0..6).map(f64::from).collect()).unwrap());
        t.push("b", Role::Bias, Tensor::from_vec(vec![7.0, 8.0]));
        t
    }

    #[test]
    fn flatten_follows_entry_order() {
        let t = tree();
        assert_eq!(t.flatten(), vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 7.0, 8.0]);
        let back = t.unflatten(&t.flatten()).unwrap();
        assert_eq!(back, t);
        assert!(t.unflatten(&[1.0]).is_err());
    }

    #[test]
    fn fan_in_by_role() {
        assert_eq!(Role::DenseWeight.fan_in(&[100, 784]), Some(784));
        assert_eq!(Role::ConvFilter.fan_in(&[64, 3, 3, 3]), Some(27));
        assert_eq!(Role::Bias.fan_in(&[10]), None);
    }
}
