//! MSE, NSE-style R² and R²-persist, plus per-basin evaluation reports.

use std::fmt::Write as _;

use thiserror::Error;

use crate::data::{Channel, ExampleSet, NormStats};
use crate::model::{Forecaster, ModelError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {0} predictions vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("no values to score")]
    Empty,
    #[error("labels are constant, so R² is undefined")]
    ConstantLabels,
    #[error("persistence forecast is perfect, so R²-persist is undefined")]
    ZeroPersistError,
    #[error("model is not compatible with the example set: {0}")]
    IncompatibleModel(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn check(preds: &[f64], labels: &[f64]) -> Result<(), MetricsError> {
    if preds.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(preds.len(), labels.len()));
    }
    if preds.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

pub fn mse(preds: &[f64], labels: &[f64]) -> Result<f64, MetricsError> {
    check(preds, labels)?;
    let sum: f64 = preds.iter().zip(labels).map(|(p, y)| (p - y) * (p - y)).sum();
    Ok(sum / preds.len() as f64)
}

/// `1 − mse(preds, labels) / mse(mean(labels), labels)`.
pub fn r2_nse(preds: &[f64], labels: &[f64]) -> Result<f64, MetricsError> {
    let model = mse(preds, labels)?;
    let mean = labels.iter().sum::<f64>() / labels.len() as f64;
    let baseline = labels.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / labels.len() as f64;
    if !(baseline > 0.0) {
        return Err(MetricsError::ConstantLabels);
    }
    Ok(1.0 - model / baseline)
}

/// `1 − mse(preds, labels) / mse(persist, labels)`.
pub fn r2_persist(preds: &[f64], labels: &[f64], persist: &[f64]) -> Result<f64, MetricsError> {
    let model = mse(preds, labels)?;
    let baseline = mse(persist, labels)?;
    if !(baseline > 0.0) {
        return Err(MetricsError::ZeroPersistError);
    }
    Ok(1.0 - model / baseline)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasinMetrics {
    pub basin: String,
    pub n: usize,
    pub mse: f64,
    pub r2: f64,
    pub r2_persist: f64,
}

/// Per-basin scores, in the model graph's declaration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    pub rows: Vec<BasinMetrics>,
}

impl MetricsReport {
    pub fn get(&self, basin: &str) -> Option<&BasinMetrics> {
        self.rows.iter().find(|r| r.basin == basin)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("basin,n,mse,r2,r2_persist\n");
        for r in &self.rows {
            writeln!(out, "{},{},{},{},{}", r.basin, r.n, r.mse, r.r2, r.r2_persist).unwrap();
        }
        out
    }
}

/// Score `model` on `set` in label units.
///
/// `set` may cover more basins than the model; it is projected onto the model's
/// graph, which must then be an induced part of the set's graph.
pub fn evaluate(
    model: &dyn Forecaster,
    set: &ExampleSet,
    norm: Option<&NormStats>,
) -> Result<MetricsReport, MetricsError> {
    if set.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mg = model.graph();
    let dims = model.dims();
    if dims.window != set.window() || dims.horizon != set.horizon() || dims.features != set.features_per_step() {
        return Err(MetricsError::IncompatibleModel(format!(
            "model dims {dims:?} vs set window {} horizon {}",
            set.window(),
            set.horizon()
        )));
    }
    let projected;
    let set = if mg.fingerprint() == set.graph().fingerprint() && mg.basin_ids().eq(set.graph().basin_ids()) {
        set
    } else {
        let sg = set.graph();
        for (from, to) in mg.edges() {
            let ok = sg
                .index_of(from)
                .and_then(|i| sg.downstream_index(i))
                .is_some_and(|d| sg.id(d) == to);
            if !ok {
                return Err(MetricsError::IncompatibleModel(format!("edge {from} -> {to} not in set graph")));
            }
        }
        projected = set
            .restrict(mg)
            .map_err(|e| MetricsError::IncompatibleModel(e.to_string()))?;
        &projected
    };

    let first = model.predict(&set.examples()[0])?;
    let basins: Vec<usize> = first.iter().map(|&(b, _)| b).collect();
    let n = set.len();
    let mut preds = vec![Vec::with_capacity(n); basins.len()];
    let mut labels = vec![Vec::with_capacity(n); basins.len()];
    let mut persist = vec![Vec::with_capacity(n); basins.len()];
    for ex in set.examples() {
        let out = model.predict(ex)?;
        for (slot, (b, l)) in out.into_iter().enumerate() {
            preds[slot].push(l);
            labels[slot].push(ex.labels[b]);
            persist[slot].push(ex.persist[b]);
        }
    }

    let mut rows = Vec::with_capacity(basins.len());
    for (slot, &b) in basins.iter().enumerate() {
        let id = mg.id(b);
        if let Some(stats) = norm {
            let s = stats
                .get(id, Channel::Level)
                .ok_or_else(|| MetricsError::IncompatibleModel(format!("no normalization stats for `{id}`")))?;
            for v in preds[slot].iter_mut().chain(&mut labels[slot]).chain(&mut persist[slot]) {
                *v = s.invert(*v);
            }
        }
        rows.push(BasinMetrics {
            basin: id.to_string(),
            n,
            mse: mse(&preds[slot], &labels[slot])?,
            r2: r2_nse(&preds[slot], &labels[slot])?,
            r2_persist: r2_persist(&preds[slot], &labels[slot], &persist[slot])?,
        });
    }
    Ok(MetricsReport { rows })
}
