use std::sync::Arc;

use super::{check_example, Dims, Forecaster, ModelError, ParamLayout};
use crate::data::Example;
use crate::region::{prune_to_depth, topological_indices, RegionGraph};

/// Linear model over the concatenated windows of a target's depth-`d` subtree.
///
/// The graph it carries is the pruned subtree, so compatible example sets
/// are restricted to exactly those basins.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatLinearParams {
    graph: Arc<RegionGraph>,
    target: String,
    depth: usize,
    dims: Dims,
    /// Included basin indices (into `graph`) in topological order.
    included: Vec<usize>,
    layout: Arc<ParamLayout>,
    /// Weights followed by the bias.
    values: Vec<f64>,
}

/// Zero-initialized flat model for `target` over `prune_to_depth(g, target, depth)`.
///
/// `dims.embedding` is ignored.
pub fn init_flat(
    g: &RegionGraph,
    target: &str,
    depth: usize,
    dims: Dims,
) -> Result<FlatLinearParams, ModelError> {
    dims.validate()?;
    let sub = prune_to_depth(g, target, depth)?;
    let included = topological_indices(&sub)?;
    let mut layout = ParamLayout::default();
    layout.push("flat.weight".into(), included.len() * dims.window * dims.features, 1);
    layout.push("flat.bias".into(), 1, 1);
    Ok(FlatLinearParams {
        values: vec![0.0; layout.total()],
        graph: Arc::new(sub),
        target: target.to_string(),
        depth,
        dims,
        included,
        layout: Arc::new(layout),
    })
}

impl FlatLinearParams {
    pub fn graph(&self) -> &RegionGraph {
        &self.graph
    }

    pub fn shared_graph(&self) -> Arc<RegionGraph> {
        Arc::clone(&self.graph)
    }

    pub fn target(&self) -> &str {
        &self.target
    }

    pub fn target_index(&self) -> usize {
        self.graph.index_of(&self.target).expect("target is in its own subtree")
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// Included basin ids in topological order.
    pub fn included(&self) -> Vec<&str> {
        self.included.iter().map(|&i| self.graph.id(i)).collect()
    }

    pub(crate) fn included_indices(&self) -> &[usize] {
        &self.included
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn weights(&self) -> &[f64] {
        &self.values[..self.values.len() - 1]
    }

    pub fn bias(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// `(#included)·T·d_x + 1`.
    pub fn param_count(&self) -> usize {
        self.values.len()
    }

    pub(crate) fn predict_unchecked(&self, ex: &Example) -> f64 {
        let stride = self.dims.window * self.dims.features;
        let w = self.weights();
        let mut acc = self.bias();
        for (slot, &b) in self.included.iter().enumerate() {
            let x = ex.window(b);
            acc += w[slot * stride..(slot + 1) * stride]
                .iter()
                .zip(x)
                .map(|(a, b)| a * b)
                .sum::<f64>();
        }
        acc
    }
}

/// `w · concat(flatten(X_i))` over included basins in topological order, plus bias.
pub fn forward_flat(p: &FlatLinearParams, ex: &Example) -> Result<f64, ModelError> {
    check_example(ex, p.graph.len(), &p.dims)?;
    Ok(p.predict_unchecked(ex))
}

impl Forecaster for FlatLinearParams {
    fn graph(&self) -> &RegionGraph {
        &self.graph
    }

    fn dims(&self) -> Dims {
        self.dims
    }

    fn predict(&self, ex: &Example) -> Result<Vec<(usize, f64)>, ModelError> {
        Ok(vec![(self.target_index(), forward_flat(self, ex)?)])
    }

    fn param_count(&self) -> usize {
        self.values.len()
    }
}
