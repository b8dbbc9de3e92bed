//! Reverse-mode gradients of the weighted MSE through the HydroNet tree.
//!
//! The forward pass runs sources-first; adjoints flow back drain-first, so
//! every embedding's adjoint is complete (own head plus downstream combiner)
//! before its basin is processed.

use super::{LossWeights, TrainError};
use crate::data::Example;
use crate::model::{forward_flat, FlatLinearParams, ForwardTrace, HydroNetParams, ParamLayout};

/// Gradient vector laid out exactly like the parameters it differentiates.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    layout: ParamLayout,
    pub values: Vec<f64>,
}

impl Gradients {
    pub fn new(layout: ParamLayout, values: Vec<f64>) -> Self {
        assert_eq!(layout.total(), values.len(), "gradient length");
        Gradients { layout, values }
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.layout.block(name).map(|b| &self.values[b.range()])
    }
}

#[derive(Debug, Default)]
pub(crate) struct HydroScratch {
    trace: ForwardTrace,
    d_embed: Vec<f64>,
    d_comb: Vec<f64>,
}

#[derive(Debug, Default)]
pub(crate) struct FlatScratch;

pub(crate) fn hydronet_loss(
    p: &HydroNetParams,
    batch: &[&Example],
    w: &[f64],
    scratch: &mut HydroScratch,
) -> f64 {
    let mut loss = 0.0;
    for ex in batch {
        p.forward_into(ex, &mut scratch.trace)
            .expect("example shapes checked against the model graph");
        for (b, &wb) in w.iter().enumerate() {
            let r = scratch.trace.predictions[b] - ex.labels[b];
            loss += wb * r * r;
        }
    }
    loss / batch.len() as f64
}

/// Accumulates the batch gradient into `grad` and returns the batch loss.
pub(crate) fn hydronet_loss_grad(
    p: &HydroNetParams,
    batch: &[&Example],
    w: &[f64],
    grad: &mut [f64],
    scratch: &mut HydroScratch,
) -> f64 {
    let dims = p.dims();
    let (t_len, k, dx) = (dims.window, dims.embedding, dims.features);
    let tk = t_len * k;
    let n = p.graph().len();
    let plan = p.plan();
    let values = p.values();
    let sha_width = dx + k;
    let sha_w = &values[..k * sha_width];
    let sha_b_off = plan.shared_bias;
    let inv_batch = 1.0 / batch.len() as f64;
    let mut loss = 0.0;

    for ex in batch {
        p.forward_into(ex, &mut scratch.trace)
            .expect("example shapes checked against the model graph");
        let trace = &scratch.trace;
        scratch.d_embed.clear();
        scratch.d_embed.resize(n * tk, 0.0);
        scratch.d_comb.clear();
        scratch.d_comb.resize(tk, 0.0);

        for node in plan.nodes.iter().rev() {
            let b = node.basin;
            let r = trace.predictions[b] - ex.labels[b];
            loss += w[b] * r * r;
            let g = 2.0 * w[b] * r * inv_batch;
            let e = &trace.embedding[b * tk..(b + 1) * tk];

            // Prediction head.
            let head = node.head;
            if g != 0.0 {
                let hw = &values[head..head + tk];
                for i in 0..tk {
                    grad[head + i] += g * e[i];
                    scratch.d_embed[b * tk + i] += g * hw[i];
                }
                grad[head + tk] += g;
            }

            // Shared model, step by step.
            let x = ex.window(b);
            let c = &trace.combiner[b * tk..(b + 1) * tk];
            scratch.d_comb.iter_mut().for_each(|v| *v = 0.0);
            for s in 0..t_len {
                let de = &scratch.d_embed[b * tk + s * k..b * tk + (s + 1) * k];
                let xs = &x[s * dx..(s + 1) * dx];
                let cs = &c[s * k..(s + 1) * k];
                for row in 0..k {
                    let d = de[row];
                    if d == 0.0 {
                        continue;
                    }
                    let g_row = &mut grad[row * sha_width..(row + 1) * sha_width];
                    for ch in 0..dx {
                        g_row[ch] += d * xs[ch];
                    }
                    for m in 0..k {
                        g_row[dx + m] += d * cs[m];
                    }
                    grad[sha_b_off + row] += d;
                    if node.combiner.is_some() {
                        let w_row = &sha_w[row * sha_width..(row + 1) * sha_width];
                        for m in 0..k {
                            scratch.d_comb[s * k + m] += w_row[dx + m] * d;
                        }
                    }
                }
            }

            // Combiner, then hand adjoints to the sources.
            if let Some(off) = node.combiner {
                let width = node.sources.len() * k;
                let cw = &values[off..off + k * width];
                let cb_off = off + k * width;
                for s in 0..t_len {
                    for row in 0..k {
                        let d = scratch.d_comb[s * k + row];
                        if d == 0.0 {
                            continue;
                        }
                        grad[cb_off + row] += d;
                        for (j, &src) in node.sources.iter().enumerate() {
                            for m in 0..k {
                                let idx = row * width + j * k + m;
                                grad[off + idx] += d * trace.embedding[src * tk + s * k + m];
                                scratch.d_embed[src * tk + s * k + m] += cw[idx] * d;
                            }
                        }
                    }
                }
            }
        }
    }
    loss * inv_batch
}

/// Loss and exact gradient of the weighted MSE over `batch`.
pub fn backward_hydronet(
    p: &HydroNetParams,
    batch: &[Example],
    w: &LossWeights,
) -> Result<(f64, Gradients), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    if w.as_slice().len() != p.graph().len() {
        return Err(TrainError::ShapeMismatch(format!(
            "{} loss weights for {} basins",
            w.as_slice().len(),
            p.graph().len()
        )));
    }
    let mut scratch = HydroScratch::default();
    for ex in batch {
        p.forward_into(ex, &mut scratch.trace)?;
    }
    let refs: Vec<&Example> = batch.iter().collect();
    let mut grad = vec![0.0; p.param_count()];
    let loss = hydronet_loss_grad(p, &refs, w.as_slice(), &mut grad, &mut scratch);
    Ok((loss, Gradients::new(p.layout().clone(), grad)))
}

pub(crate) fn flat_loss(p: &FlatLinearParams, batch: &[&Example]) -> f64 {
    let t = p.target_index();
    batch
        .iter()
        .map(|ex| {
            let r = p.predict_unchecked(ex) - ex.labels[t];
            r * r
        })
        .sum::<f64>()
        / batch.len() as f64
}

pub(crate) fn flat_loss_grad(p: &FlatLinearParams, batch: &[&Example], grad: &mut [f64]) -> f64 {
    let t = p.target_index();
    let dims = p.dims();
    let stride = dims.window * dims.features;
    let bias = grad.len() - 1;
    let inv_batch = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for ex in batch {
        let r = p.predict_unchecked(ex) - ex.labels[t];
        loss += r * r;
        let g = 2.0 * r * inv_batch;
        for (slot, &b) in p.included_indices().iter().enumerate() {
            let x = ex.window(b);
            for (gi, xi) in grad[slot * stride..(slot + 1) * stride].iter_mut().zip(x) {
                *gi += g * xi;
            }
        }
        grad[bias] += g;
    }
    loss * inv_batch
}

/// Loss and gradient of the target-basin MSE for a flat model.
pub fn backward_flat(p: &FlatLinearParams, batch: &[Example]) -> Result<(f64, Gradients), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    for ex in batch {
        forward_flat(p, ex)?;
    }
    let refs: Vec<&Example> = batch.iter().collect();
    let mut grad = vec![0.0; p.param_count()];
    let loss = flat_loss_grad(p, &refs, &mut grad);
    Ok((loss, Gradients::new(p.layout().clone(), grad)))
}
