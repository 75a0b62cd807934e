//! Flat named parameter storage shared by weights, gradients and optimizer
//! moments.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::invalid_arg;

/// One named block of parameters (a kernel or a bias vector).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl ParamBlock {
    pub fn zeros(name: &str, shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self { name: name.to_string(), shape: shape.to_vec(), data: vec![0.0; numel] }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// Ordered collection of parameter blocks. The same structure holds model
/// weights, their gradients and the Adam moment estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub blocks: Vec<ParamBlock>,
}

impl ParamSet {
    pub fn zeros_like(other: &ParamSet) -> Self {
        ParamSet {
            blocks: other
                .blocks
                .iter()
                .map(|b| ParamBlock::zeros(&b.name, &b.shape))
                .collect(),
        }
    }

    pub fn numel(&self) -> usize {
        self.blocks.iter().map(|b| b.numel()).sum()
    }

    pub fn block(&self, name: &str) -> Option<&ParamBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }

    /// Element-wise accumulate `other` into `self`.
    pub fn add_assign(&mut self, other: &ParamSet) -> Result<()> {
        if !self.congruent(other) {
            return Err(invalid_arg!("parameter sets are not shape-congruent"));
        }
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for b in &mut self.blocks {
            for x in &mut b.data {
                *x *= factor;
            }
        }
    }

    pub fn congruent(&self, other: &ParamSet) -> bool {
        self.blocks.len() == other.blocks.len()
            && self
                .blocks
                .iter()
                .zip(&other.blocks)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }

    /// Flatten every element in block order (used by tests and the optimizer
    /// reference fixtures).
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.numel());
        for b in &self.blocks {
            out.extend_from_slice(&b.data);
        }
        out
    }
}
