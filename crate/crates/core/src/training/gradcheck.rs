//! Central finite differences, used as an independent check on the analytic gradients.
//!
//! These only call the public forward passes and the loss, never the backward code.

use super::{weighted_mse_loss, LossWeights, TrainError};
use crate::data::Example;
use crate::model::{forward_flat, forward_hydronet, FlatLinearParams, HydroNetParams};

pub const FD_STEP: f64 = 1e-5;

/// `(f(x + h e_i) − f(x − h e_i)) / 2h` for every coordinate `i`.
pub fn central_difference<F>(x: &[f64], h: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn hydronet_batch_loss(p: &HydroNetParams, batch: &[Example], w: &LossWeights) -> Result<f64, TrainError> {
    let mut preds = Vec::with_capacity(batch.len());
    for ex in batch {
        preds.push(forward_hydronet(p, ex)?.predictions);
    }
    let labels: Vec<Vec<f64>> = batch.iter().map(|ex| ex.labels.clone()).collect();
    weighted_mse_loss(&preds, &labels, w)
}

/// Numerical gradient of the weighted MSE with respect to every HydroNet parameter.
pub fn finite_difference_grad(
    p: &HydroNetParams,
    batch: &[Example],
    w: &LossWeights,
    h: f64,
) -> Result<Vec<f64>, TrainError> {
    hydronet_batch_loss(p, batch, w)?;
    let mut probe = p.clone();
    Ok(central_difference(p.values(), h, |v| {
        probe.values_mut().copy_from_slice(v);
        hydronet_batch_loss(&probe, batch, w).expect("shapes checked above")
    }))
}

/// Numerical gradient of the target MSE with respect to every flat-model parameter.
pub fn finite_difference_grad_flat(
    p: &FlatLinearParams,
    batch: &[Example],
    h: f64,
) -> Result<Vec<f64>, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    let t = p.target_index();
    let loss = |m: &FlatLinearParams| -> Result<f64, TrainError> {
        let mut acc = 0.0;
        for ex in batch {
            let r = forward_flat(m, ex)? - ex.labels[t];
            acc += r * r;
        }
        Ok(acc / batch.len() as f64)
    };
    loss(p)?;
    let mut probe = p.clone();
    Ok(central_difference(p.values(), h, |v| {
        probe.values_mut().copy_from_slice(v);
        loss(&probe).expect("shapes checked above")
    }))
}
