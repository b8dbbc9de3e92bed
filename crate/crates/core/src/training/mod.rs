//! Weighted multi-basin MSE training for HydroNets and the flat baseline.

mod backward;
mod gradcheck;
mod optim;

pub use backward::{backward_flat, backward_hydronet, Gradients};
pub use gradcheck::{central_difference, finite_difference_grad, finite_difference_grad_flat, FD_STEP};
pub use optim::{Optimizer, OptimizerKind};

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Example, ExampleSet};
use crate::model::{FlatLinearParams, HydroNetParams, ModelError};
use crate::region::RegionGraph;

use backward::{FlatScratch, HydroScratch};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("all loss weights are zero")]
    ZeroWeights,
    #[error("invalid loss weights: {0}")]
    InvalidWeights(String),
    #[error("loss became non-finite in epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Normalized per-basin loss weights, indexed by basin declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights {
    weights: Vec<f64>,
}

impl LossWeights {
    /// Normalizes `raw` to sum to one.
    pub fn new(raw: Vec<f64>) -> Result<Self, TrainError> {
        if raw.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(TrainError::InvalidWeights("weights must be finite and non-negative".into()));
        }
        let total: f64 = raw.iter().sum();
        if !(total > 0.0) {
            return Err(TrainError::ZeroWeights);
        }
        Ok(LossWeights {
            weights: raw.into_iter().map(|w| w / total).collect(),
        })
    }

    pub fn uniform(g: &RegionGraph) -> Self {
        LossWeights::new(vec![1.0; g.len()]).expect("non-empty graph")
    }

    pub fn one_hot(g: &RegionGraph, basin: &str) -> Result<Self, TrainError> {
        LossWeights::focused(g, basin, 1.0)
    }

    /// `alpha` on `target`, the remainder spread evenly over the other basins.
    pub fn focused(g: &RegionGraph, target: &str, alpha: f64) -> Result<Self, TrainError> {
        let t = g
            .index_of(target)
            .ok_or_else(|| TrainError::InvalidWeights(format!("unknown basin `{target}`")))?;
        if !(0.0..=1.0).contains(&alpha) {
            return Err(TrainError::InvalidWeights(format!("alpha {alpha} outside [0, 1]")));
        }
        let n = g.len();
        let rest = if n > 1 { (1.0 - alpha) / (n - 1) as f64 } else { 0.0 };
        let raw = (0..n).map(|i| if i == t { alpha } else { rest }).collect();
        LossWeights::new(raw)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }
}

/// Serializable description of loss weights, resolved against a model graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightSpec {
    #[default]
    Uniform,
    Focused { target: String, alpha: f64 },
    Explicit { weights: BTreeMap<String, f64> },
}

impl WeightSpec {
    pub fn resolve(&self, g: &RegionGraph) -> Result<LossWeights, TrainError> {
        match self {
            WeightSpec::Uniform => Ok(LossWeights::uniform(g)),
            WeightSpec::Focused { target, alpha } => LossWeights::focused(g, target, *alpha),
            WeightSpec::Explicit { weights } => {
                if let Some(id) = weights.keys().find(|id| !g.contains(id)) {
                    return Err(TrainError::InvalidWeights(format!("unknown basin `{id}`")));
                }
                LossWeights::new(
                    g.basin_ids()
                        .map(|id| weights.get(id).copied().unwrap_or(0.0))
                        .collect(),
                )
            }
        }
    }
}

fn default_optimizer() -> OptimizerKind {
    OptimizerKind::adam()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub weights: WeightSpec,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            epochs: 40,
            batch_size: 32,
            seed: 0,
            weights: WeightSpec::Uniform,
            optimizer: OptimizerKind::adam(),
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidConfig("learning rate must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

/// `Σ_i w_i · mean_batch((l_i − y_i)²)`; rows are batch entries, columns basins.
pub fn weighted_mse_loss(
    preds: &[Vec<f64>],
    labels: &[Vec<f64>],
    w: &LossWeights,
) -> Result<f64, TrainError> {
    if preds.len() != labels.len() || preds.is_empty() {
        return Err(TrainError::ShapeMismatch(format!(
            "{} prediction rows vs {} label rows",
            preds.len(),
            labels.len()
        )));
    }
    let n = w.weights.len();
    let mut loss = 0.0;
    for (p, y) in preds.iter().zip(labels) {
        if p.len() != n || y.len() != n {
            return Err(TrainError::ShapeMismatch(format!(
                "rows must have {n} basins, got {} and {}",
                p.len(),
                y.len()
            )));
        }
        for i in 0..n {
            let r = p[i] - y[i];
            loss += w.weights[i] * r * r;
        }
    }
    Ok(loss / preds.len() as f64)
}

/// Something with a flat parameter vector and a differentiable batch loss.
trait Objective {
    type Scratch: Default;

    fn values(&self) -> &[f64];
    fn values_mut(&mut self) -> &mut [f64];
    fn loss(&self, batch: &[&Example], scratch: &mut Self::Scratch) -> f64;
    fn loss_grad(&self, batch: &[&Example], grad: &mut [f64], scratch: &mut Self::Scratch) -> f64;
}

struct WeightedHydroNet {
    params: HydroNetParams,
    weights: LossWeights,
}

impl Objective for WeightedHydroNet {
    type Scratch = HydroScratch;

    fn values(&self) -> &[f64] {
        self.params.values()
    }

    fn values_mut(&mut self) -> &mut [f64] {
        self.params.values_mut()
    }

    fn loss(&self, batch: &[&Example], scratch: &mut HydroScratch) -> f64 {
        backward::hydronet_loss(&self.params, batch, self.weights.as_slice(), scratch)
    }

    fn loss_grad(&self, batch: &[&Example], grad: &mut [f64], scratch: &mut HydroScratch) -> f64 {
        backward::hydronet_loss_grad(&self.params, batch, self.weights.as_slice(), grad, scratch)
    }
}

struct FlatObjective {
    params: FlatLinearParams,
}

impl Objective for FlatObjective {
    type Scratch = FlatScratch;

    fn values(&self) -> &[f64] {
        self.params.values()
    }

    fn values_mut(&mut self) -> &mut [f64] {
        self.params.values_mut()
    }

    fn loss(&self, batch: &[&Example], _: &mut FlatScratch) -> f64 {
        backward::flat_loss(&self.params, batch)
    }

    fn loss_grad(&self, batch: &[&Example], grad: &mut [f64], _: &mut FlatScratch) -> f64 {
        backward::flat_loss_grad(&self.params, batch, grad)
    }
}

/// Mini-batch loop shared by both model kinds. Returns per-epoch full-set loss.
fn fit<O: Objective>(
    objective: &mut O,
    set: &ExampleSet,
    cfg: &TrainConfig,
) -> Result<Vec<f64>, TrainError> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    let all: Vec<&Example> = set.examples().iter().collect();
    let mut scratch = O::Scratch::default();
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate, objective.values().len());
    let mut grad = vec![0.0; objective.values().len()];
    let mut order: Vec<usize> = (0..all.len()).collect();
    let mut batch: Vec<&Example> = Vec::with_capacity(cfg.batch_size);
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| all[i]));
            grad.iter_mut().for_each(|g| *g = 0.0);
            let loss = objective.loss_grad(&batch, &mut grad, &mut scratch);
            if !loss.is_finite() {
                return Err(TrainError::Divergence { epoch });
            }
            optimizer.step(objective.values_mut(), &grad);
        }
        let loss = objective.loss(&all, &mut scratch);
        if !loss.is_finite() || objective.values().iter().any(|v| !v.is_finite()) {
            return Err(TrainError::Divergence { epoch });
        }
        history.push(loss);
    }
    Ok(history)
}

fn check_graph(model: &RegionGraph, set: &ExampleSet) -> Result<(), TrainError> {
    if model.fingerprint() != set.graph().fingerprint()
        || model.basin_ids().ne(set.graph().basin_ids())
    {
        return Err(ModelError::IncompatibleGraph.into());
    }
    Ok(())
}

/// Train a HydroNet under the weighted multi-basin MSE.
pub fn train(
    p: HydroNetParams,
    train_set: &ExampleSet,
    cfg: &TrainConfig,
) -> Result<(HydroNetParams, Vec<f64>), TrainError> {
    check_graph(p.graph(), train_set)?;
    let weights = cfg.weights.resolve(p.graph())?;
    let mut objective = WeightedHydroNet { params: p, weights };
    let history = fit(&mut objective, train_set, cfg)?;
    Ok((objective.params, history))
}

/// Train a flat baseline under single-output MSE on its target. `cfg.weights` is ignored.
pub fn train_flat(
    p: FlatLinearParams,
    train_set: &ExampleSet,
    cfg: &TrainConfig,
) -> Result<(FlatLinearParams, Vec<f64>), TrainError> {
    check_graph(p.graph(), train_set)?;
    let mut objective = FlatObjective { params: p };
    let history = fit(&mut objective, train_set, cfg)?;
    Ok((objective.params, history))
}

/// `epoch,loss` lines, 1-based epochs.
pub fn history_csv(history: &[f64]) -> String {
    let mut out = String::from("epoch,loss\n");
    for (i, loss) in history.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i + 1, loss));
    }
    out
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::data::Example;
    use crate::model::{forward_flat, init_flat, Dims};
    use crate::region::{balanced_tree, Basin};

    fn solo() -> RegionGraph {
        RegionGraph::new(vec![Basin::new("x")], vec![]).unwrap()
    }

    #[test]
    fn loss_arithmetic() {
        let g = balanced_tree(1, 2).unwrap();
        let w = LossWeights::uniform(&g);
        let loss = weighted_mse_loss(&[vec![1.0, 3.0]], &[vec![0.0, 0.0]], &w).unwrap();
        assert!((loss - 5.0).abs() < 1e-15);
        let same = weighted_mse_loss(&[vec![1.0, 3.0]], &[vec![1.0, 3.0]], &w).unwrap();
        assert_eq!(same, 0.0);
        let hot = LossWeights::one_hot(&g, "b02").unwrap();
        let preds = [vec![1.0, 2.0], vec![5.0, 0.0]];
        let labels = [vec![0.0, 0.0], vec![0.0, 1.0]];
        let loss = weighted_mse_loss(&preds, &labels, &hot).unwrap();
        assert!((loss - (4.0 + 1.0) / 2.0).abs() < 1e-15);
        assert!(weighted_mse_loss(&preds, &labels[..1], &hot).is_err());
        assert!(weighted_mse_loss(&[vec![1.0]], &[vec![1.0]], &hot).is_err());
    }

    #[test]
    fn weights_normalize_and_reject_zero() {
        let w = LossWeights::new(vec![2.0, 6.0]).unwrap();
        assert_eq!(w.as_slice(), &[0.25, 0.75]);
        assert_eq!(LossWeights::new(vec![0.0, 0.0]).unwrap_err(), TrainError::ZeroWeights);
        assert!(LossWeights::new(vec![-1.0, 2.0]).is_err());
        let g = balanced_tree(2, 2).unwrap();
        let f = LossWeights::focused(&g, "b01", 0.9).unwrap();
        assert!((f.as_slice()[0] - 0.9).abs() < 1e-15);
        assert!((f.as_slice()[1] - 0.05).abs() < 1e-15);
        assert_eq!(LossWeights::focused(&solo(), "x", 0.9).unwrap().as_slice(), &[1.0]);
        let spec = WeightSpec::Explicit {
            weights: [("b02".to_string(), 1.0)].into_iter().collect(),
        };
        assert_eq!(spec.resolve(&g).unwrap().as_slice(), &[0.0, 1.0, 0.0]);
    }

    fn one_feature_set(x: f64, y: f64) -> ExampleSet {
        // A single basin, T=1, with precip x and level 0, labelled y.
        let g = solo();
        let store = crate::data::SeriesStore::new(
            vec!["x".into()],
            0,
            1,
            vec![vec![x, 0.0]],
            vec![vec![0.0, y]],
        )
        .unwrap();
        crate::data::window_examples(&store, &g, 1, 1).unwrap()
    }

    fn sgd(lr: f64, epochs: usize) -> TrainConfig {
        TrainConfig {
            learning_rate: lr,
            epochs,
            batch_size: 1,
            seed: 0,
            weights: WeightSpec::Uniform,
            optimizer: OptimizerKind::Sgd,
        }
    }

    #[test]
    fn flat_matches_hand_recurrence() {
        let (x, y, lr) = (1.5, 2.0, 0.05);
        let set = one_feature_set(x, y);
        let dims = Dims {
            window: 1,
            embedding: 1,
            features: 2,
            horizon: 1,
        };
        let p = init_flat(&solo(), "x", 1, dims).unwrap();
        let (trained, history) = train_flat(p.clone(), &set, &sgd(lr, 5)).unwrap();
        // theta_{k+1} = theta_k - lr * 2 (theta_k x - y) x for the precip weight;
        // the bias follows its own recurrence with x = 1.
        let (mut w, mut b) = (0.0f64, 0.0f64);
        for _ in 0..5 {
            let r = w * x + b - y;
            w -= lr * 2.0 * r * x;
            b -= lr * 2.0 * r;
        }
        assert!((trained.values()[0] - w).abs() < 1e-14);
        assert!((trained.bias() - b).abs() < 1e-14);
        assert_eq!(trained.values()[1], 0.0);
        assert_eq!(history.len(), 5);
        let pred = forward_flat(&trained, &set.examples()[0]).unwrap();
        assert!((history[4] - (pred - y).powi(2)).abs() < 1e-14);

        let (frozen, flat_history) = train_flat(p.clone(), &set, &sgd(0.0, 3)).unwrap();
        assert_eq!(frozen, p);
        assert!(flat_history.iter().all(|&l| l == flat_history[0]));
    }

    #[test]
    fn flat_bias_converges_to_label_mean() {
        let g = Arc::new(solo());
        let examples: Vec<Example> = [3.0, 5.0, 4.0, 4.0]
            .iter()
            .enumerate()
            .map(|(i, &y)| Example {
                anchor: i,
                features: vec![0.0, 0.0],
                labels: vec![y],
                persist: vec![0.0],
            })
            .collect();
        let set = ExampleSet::from_examples(g, 1, 1, examples).unwrap();
        let dims = Dims {
            window: 1,
            embedding: 1,
            features: 2,
            horizon: 1,
        };
        let p = init_flat(&solo(), "x", 1, dims).unwrap();
        let cfg = TrainConfig {
            batch_size: 16,
            ..sgd(0.1, 200)
        };
        let (trained, history) = train_flat(p, &set, &cfg).unwrap();
        assert!((trained.bias() - 4.0).abs() < 1e-9);
        assert!(trained.weights().iter().all(|&w| w == 0.0));
        assert!((history[199] - 0.5).abs() < 1e-9);
    }

    /// `l = theta * x` on one example.
    struct OneParam {
        theta: [f64; 1],
        x: f64,
        y: f64,
    }

    impl Objective for OneParam {
        type Scratch = ();

        fn values(&self) -> &[f64] {
            &self.theta
        }

        fn values_mut(&mut self) -> &mut [f64] {
            &mut self.theta
        }

        fn loss(&self, _: &[&Example], _: &mut ()) -> f64 {
            (self.theta[0] * self.x - self.y).powi(2)
        }

        fn loss_grad(&self, batch: &[&Example], grad: &mut [f64], s: &mut ()) -> f64 {
            grad[0] += 2.0 * (self.theta[0] * self.x - self.y) * self.x;
            self.loss(batch, s)
        }
    }

    #[test]
    fn loop_matches_one_parameter_recurrence() {
        let set = one_feature_set(1.0, 1.0);
        let (x, y, lr) = (1.7, -0.4, 0.08);
        let mut model = OneParam { theta: [0.3], x, y };
        let history = fit(&mut model, &set, &sgd(lr, 6)).unwrap();
        let mut theta = 0.3f64;
        for epoch in 0..6 {
            theta -= lr * 2.0 * (theta * x - y) * x;
            assert!((history[epoch] - (theta * x - y).powi(2)).abs() < 1e-15);
        }
        assert!((model.theta[0] - theta).abs() < 1e-15);
    }

    #[test]
    fn hydronet_single_basin_recurrence() {
        // Single basin with T=K=1 and a zero level channel: l = h·(a·x + sb) + hb.
        // The level and combiner columns of the shared weight see zero inputs.
        let g = Arc::new(solo());
        let dims = Dims {
            window: 1,
            embedding: 1,
            features: 2,
            horizon: 1,
        };
        let mut p = HydroNetParams::zeros(Arc::clone(&g), dims).unwrap();
        p.block_mut("shared.weight").unwrap()[0] = 1.0;
        let (x, y, lr) = (0.8, 1.0, 0.1);
        let set = one_feature_set(x, y);
        let (trained, _) = train(p, &set, &sgd(lr, 4)).unwrap();
        let (mut a, mut sb, mut h, mut hb) = (1.0f64, 0.0f64, 0.0f64, 0.0f64);
        for _ in 0..4 {
            let e = a * x + sb;
            let g = 2.0 * (h * e + hb - y);
            let (ga, gsb, gh, ghb) = (g * h * x, g * h, g * e, g);
            a -= lr * ga;
            sb -= lr * gsb;
            h -= lr * gh;
            hb -= lr * ghb;
        }
        let shared = trained.block("shared.weight").unwrap();
        assert!((shared[0] - a).abs() < 1e-14);
        assert_eq!(&shared[1..], &[0.0, 0.0]);
        assert!((trained.block("shared.bias").unwrap()[0] - sb).abs() < 1e-14);
        assert!((trained.block("head.x.weight").unwrap()[0] - h).abs() < 1e-14);
        assert!((trained.block("head.x.bias").unwrap()[0] - hb).abs() < 1e-14);
        assert_eq!(trained.param_count(), 6);
    }

    #[test]
    fn deterministic_and_divergence_guard() {
        let (_, store) = crate::data::generate_synthetic(&crate::data::SynthConfig {
            branching: 2,
            height: 2,
            basins: None,
            steps: 300,
            start: 0,
            step_seconds: 3600,
            kernel_scale: crate::data::ValueRange { min: 1.0, max: 3.0 },
            delay: (1, 3),
            attenuation: crate::data::ValueRange { min: 0.6, max: 0.9 },
            burst_rate: 0.1,
            burst_scale: 5.0,
            noise: crate::data::NoiseSpec::Absolute { std: 0.01 },
            seed: 1,
        })
        .unwrap();
        let g = balanced_tree(2, 2).unwrap();
        let set = crate::data::window_examples(&store, &g, 4, 1).unwrap();
        let dims = Dims {
            window: 4,
            embedding: 2,
            features: 2,
            horizon: 1,
        };
        let p = crate::model::init_hydronet(set.shared_graph(), dims, 3).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.01,
            epochs: 3,
            batch_size: 8,
            seed: 4,
            ..TrainConfig::default()
        };
        let a = train(p.clone(), &set, &cfg).unwrap();
        let b = train(p.clone(), &set, &cfg).unwrap();
        assert_eq!(a, b);
        let blowup = TrainConfig {
            learning_rate: 1e6,
            optimizer: OptimizerKind::Sgd,
            ..cfg
        };
        assert!(matches!(train(p, &set, &blowup).unwrap_err(), TrainError::Divergence { .. }));
    }
}
