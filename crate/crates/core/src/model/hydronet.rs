use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{check_example, Dims, Forecaster, ModelError, ParamLayout};
use crate::data::Example;
use crate::region::{topological_indices, RegionGraph};

/// One basin's slot in the computation graph.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Node {
    pub basin: usize,
    /// Source basin indices, ascending by id.
    pub sources: Vec<usize>,
    /// Offset of the combiner weight (`K × |S|·K`), followed by its bias (`K`).
    pub combiner: Option<usize>,
    /// Offset of the head weight (`T·K`), followed by its scalar bias.
    pub head: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Plan {
    /// Nodes in topological order.
    pub nodes: Vec<Node>,
    pub shared_bias: usize,
}

/// All learnable weights of a linear HydroNet over one region graph.
///
/// Parameters live in one flat vector: the shared model first, then every
/// combiner, then every prediction head, each group in topological order.
#[derive(Debug, Clone, PartialEq)]
pub struct HydroNetParams {
    graph: Arc<RegionGraph>,
    dims: Dims,
    plan: Arc<Plan>,
    layout: Arc<ParamLayout>,
    values: Vec<f64>,
}

impl HydroNetParams {
    /// Zero parameters laid out for `graph`.
    pub fn zeros(graph: Arc<RegionGraph>, dims: Dims) -> Result<Self, ModelError> {
        dims.validate()?;
        let order = topological_indices(&graph)?;
        let (t, k, dx) = (dims.window, dims.embedding, dims.features);
        let mut layout = ParamLayout::default();
        layout.push("shared.weight".into(), k, dx + k);
        let shared_bias = layout.push("shared.bias".into(), k, 1);
        let mut nodes: Vec<Node> = order
            .iter()
            .map(|&b| Node {
                basin: b,
                sources: graph.upstream_indices(b).to_vec(),
                combiner: None,
                head: 0,
            })
            .collect();
        for node in &mut nodes {
            if !node.sources.is_empty() {
                let id = graph.id(node.basin);
                let off = layout.push(format!("combiner.{id}.weight"), k, node.sources.len() * k);
                layout.push(format!("combiner.{id}.bias"), k, 1);
                node.combiner = Some(off);
            }
        }
        for node in &mut nodes {
            let id = graph.id(node.basin);
            node.head = layout.push(format!("head.{id}.weight"), t, k);
            layout.push(format!("head.{id}.bias"), 1, 1);
        }
        let values = vec![0.0; layout.total()];
        Ok(HydroNetParams {
            graph,
            dims,
            plan: Arc::new(Plan { nodes, shared_bias }),
            layout: Arc::new(layout),
            values,
        })
    }

    pub fn graph(&self) -> &RegionGraph {
        &self.graph
    }

    pub fn shared_graph(&self) -> Arc<RegionGraph> {
        Arc::clone(&self.graph)
    }

    pub fn dims(&self) -> Dims {
        self.dims
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

    pub(crate) fn plan(&self) -> &Plan {
        &self.plan
    }

    /// Named parameter block, e.g. `shared.weight` or `head.b01.bias`.
    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.layout.block(name).map(|b| &self.values[b.range()])
    }

    pub fn block_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.layout.block(name)?.range();
        Some(&mut self.values[range])
    }

    /// Same layout, values replaced. Panics if the length differs.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.values.len(), "parameter vector length");
        HydroNetParams {
            values,
            ..self.clone()
        }
    }

    /// `K(d_x+K) + K + Σ_{|S(i)|>0} (K·|S(i)|·K + K) + Σ_i (T·K + 1)`.
    pub fn param_count(&self) -> usize {
        self.values.len()
    }

    /// Forward pass into a reusable trace.
    pub fn forward_into(&self, ex: &Example, trace: &mut ForwardTrace) -> Result<(), ModelError> {
        let n = self.graph.len();
        check_example(ex, n, &self.dims)?;
        trace.reset(n, &self.dims);
        let (t_len, k, dx) = (self.dims.window, self.dims.embedding, self.dims.features);
        let tk = t_len * k;
        let w = &self.values;
        let sha_w = &w[..k * (dx + k)];
        let sha_b = &w[self.plan.shared_bias..self.plan.shared_bias + k];

        for node in &self.plan.nodes {
            let b = node.basin;
            if let Some(off) = node.combiner {
                let width = node.sources.len() * k;
                let cw = &w[off..off + k * width];
                let cb = &w[off + k * width..off + k * width + k];
                for s in 0..t_len {
                    for row in 0..k {
                        let wrow = &cw[row * width..(row + 1) * width];
                        let mut acc = cb[row];
                        for (j, &src) in node.sources.iter().enumerate() {
                            let e = &trace.embedding[src * tk + s * k..src * tk + (s + 1) * k];
                            for m in 0..k {
                                acc += wrow[j * k + m] * e[m];
                            }
                        }
                        trace.combiner[b * tk + s * k + row] = acc;
                    }
                }
            }
            let x = ex.window(b);
            for s in 0..t_len {
                let xs = &x[s * dx..(s + 1) * dx];
                for row in 0..k {
                    let wrow = &sha_w[row * (dx + k)..(row + 1) * (dx + k)];
                    let mut acc = sha_b[row];
                    for c in 0..dx {
                        acc += wrow[c] * xs[c];
                    }
                    let cs = &trace.combiner[b * tk + s * k..b * tk + (s + 1) * k];
                    for m in 0..k {
                        acc += wrow[dx + m] * cs[m];
                    }
                    trace.embedding[b * tk + s * k + row] = acc;
                }
            }
            let head = &w[node.head..node.head + tk];
            let e = &trace.embedding[b * tk..(b + 1) * tk];
            let dot: f64 = head.iter().zip(e).map(|(a, b)| a * b).sum();
            trace.predictions[b] = dot + w[node.head + tk];
        }
        Ok(())
    }
}

/// Intermediate values of one forward pass, indexed by basin declaration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ForwardTrace {
    /// Combiner outputs, `basins × T × K`. Zero for region sources.
    pub combiner: Vec<f64>,
    /// Temporal embeddings, `basins × T × K`.
    pub embedding: Vec<f64>,
    pub predictions: Vec<f64>,
    window: usize,
    embedding_size: usize,
}

impl ForwardTrace {
    fn reset(&mut self, n: usize, dims: &Dims) {
        let len = n * dims.window * dims.embedding;
        self.combiner.clear();
        self.combiner.resize(len, 0.0);
        self.embedding.clear();
        self.embedding.resize(len, 0.0);
        self.predictions.clear();
        self.predictions.resize(n, 0.0);
        self.window = dims.window;
        self.embedding_size = dims.embedding;
    }

    /// `T × K` combiner output of a basin.
    pub fn combiner_of(&self, basin: usize) -> &[f64] {
        let tk = self.window * self.embedding_size;
        &self.combiner[basin * tk..(basin + 1) * tk]
    }

    /// `T × K` embedding of a basin.
    pub fn embedding_of(&self, basin: usize) -> &[f64] {
        let tk = self.window * self.embedding_size;
        &self.embedding[basin * tk..(basin + 1) * tk]
    }
}

/// Gaussian(0, 1/fan_in) weights, zero biases.
pub fn init_hydronet(
    g: Arc<RegionGraph>,
    d: Dims,
    seed: u64,
) -> Result<HydroNetParams, ModelError> {
    let mut p = HydroNetParams::zeros(g, d)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = Arc::clone(&p.layout);
    for block in layout.blocks().iter().filter(|b| b.name.ends_with(".weight")) {
        let fan_in = block.cols * if block.name.starts_with("head.") { block.rows } else { 1 };
        let normal = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).expect("positive std");
        for v in &mut p.values[block.range()] {
            *v = normal.sample(&mut rng);
        }
    }
    Ok(p)
}

pub fn forward_hydronet(p: &HydroNetParams, ex: &Example) -> Result<ForwardTrace, ModelError> {
    let mut trace = ForwardTrace::default();
    p.forward_into(ex, &mut trace)?;
    Ok(trace)
}

impl Forecaster for HydroNetParams {
    fn graph(&self) -> &RegionGraph {
        &self.graph
    }

    fn dims(&self) -> Dims {
        self.dims
    }

    fn predict(&self, ex: &Example) -> Result<Vec<(usize, f64)>, ModelError> {
        let trace = forward_hydronet(self, ex)?;
        Ok(trace.predictions.into_iter().enumerate().collect())
    }

    fn param_count(&self) -> usize {
        self.values.len()
    }
}
