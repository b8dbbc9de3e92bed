//! The HydroNet computation graph and the flat linear baseline.

mod checkpoint;
mod flat;
mod hydronet;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, LoadedModel};
pub use flat::{forward_flat, init_flat, FlatLinearParams};
pub use hydronet::{forward_hydronet, init_hydronet, ForwardTrace, HydroNetParams};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Example;
use crate::region::{RegionError, RegionGraph};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("model graph does not match the example set graph")]
    IncompatibleGraph,
    #[error("invalid dims: {0}")]
    InvalidDims(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Region(#[from] RegionError),
}

/// Window length, embedding size, features per step and horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    pub window: usize,
    pub embedding: usize,
    pub features: usize,
    pub horizon: usize,
}

impl Dims {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.window == 0 || self.embedding == 0 || self.features == 0 || self.horizon == 0 {
            return Err(ModelError::InvalidDims(format!("{self:?}: all must be >= 1")));
        }
        Ok(())
    }
}

/// A named, shaped slice of a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParamLayout {
    blocks: Vec<Block>,
    total: usize,
}

impl ParamLayout {
    pub(crate) fn push(&mut self, name: String, rows: usize, cols: usize) -> usize {
        let offset = self.total;
        self.blocks.push(Block {
            name,
            rows,
            cols,
            offset,
        });
        self.total += rows * cols;
        offset
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn total(&self) -> usize {
        self.total
    }
}

/// Anything that turns an example into per-basin forecasts.
pub trait Forecaster {
    fn graph(&self) -> &RegionGraph;

    fn dims(&self) -> Dims;

    /// `(basin index, forecast)` for every basin the model reports on.
    fn predict(&self, ex: &Example) -> Result<Vec<(usize, f64)>, ModelError>;

    fn param_count(&self) -> usize;
}

/// Number of learnable scalars.
pub fn param_count(model: &dyn Forecaster) -> usize {
    model.param_count()
}

pub(crate) fn check_example(ex: &Example, n: usize, dims: &Dims) -> Result<(), ModelError> {
    let expect = n * dims.window * dims.features;
    if ex.features.len() != expect || ex.labels.len() != n || ex.persist.len() != n {
        return Err(ModelError::ShapeMismatch(format!(
            "example has {} features / {} labels, model expects {expect} / {n}",
            ex.features.len(),
            ex.labels.len()
        )));
    }
    Ok(())
}
