use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{init_flat, Dims, FlatLinearParams, Forecaster, HydroNetParams, ModelError, ParamLayout};
use crate::data::Example;
use crate::region::RegionGraph;

const FORMAT: &str = "hydronets-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockRecord {
    pub name: String,
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub kind: String,
    pub dims: Dims,
    pub graph_fingerprint: String,
    /// Basins of the model's graph, in declaration order.
    pub basins: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    pub blocks: Vec<BlockRecord>,
}

/// Either model kind, as restored from a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadedModel {
    HydroNet(HydroNetParams),
    Flat(FlatLinearParams),
}

impl LoadedModel {
    pub fn values(&self) -> &[f64] {
        match self {
            LoadedModel::HydroNet(p) => p.values(),
            LoadedModel::Flat(p) => p.values(),
        }
    }

    fn layout(&self) -> &ParamLayout {
        match self {
            LoadedModel::HydroNet(p) => p.layout(),
            LoadedModel::Flat(p) => p.layout(),
        }
    }

    fn values_mut(&mut self) -> &mut [f64] {
        match self {
            LoadedModel::HydroNet(p) => p.values_mut(),
            LoadedModel::Flat(p) => p.values_mut(),
        }
    }
}

impl Forecaster for LoadedModel {
    fn graph(&self) -> &RegionGraph {
        match self {
            LoadedModel::HydroNet(p) => p.graph(),
            LoadedModel::Flat(p) => p.graph(),
        }
    }

    fn dims(&self) -> Dims {
        match self {
            LoadedModel::HydroNet(p) => p.dims(),
            LoadedModel::Flat(p) => p.dims(),
        }
    }

    fn predict(&self, ex: &Example) -> Result<Vec<(usize, f64)>, ModelError> {
        match self {
            LoadedModel::HydroNet(p) => p.predict(ex),
            LoadedModel::Flat(p) => p.predict(ex),
        }
    }

    fn param_count(&self) -> usize {
        self.values().len()
    }
}

impl From<HydroNetParams> for LoadedModel {
    fn from(p: HydroNetParams) -> Self {
        LoadedModel::HydroNet(p)
    }
}

impl From<FlatLinearParams> for LoadedModel {
    fn from(p: FlatLinearParams) -> Self {
        LoadedModel::Flat(p)
    }
}

/// Serialize a model with its dims, graph fingerprint and named parameter blocks.
pub fn save_checkpoint(model: &LoadedModel) -> String {
    let (kind, target, depth) = match model {
        LoadedModel::HydroNet(_) => ("hydronet", None, None),
        LoadedModel::Flat(p) => ("flat", Some(p.target().to_string()), Some(p.depth())),
    };
    let values = model.values();
    let blocks = model
        .layout()
        .blocks()
        .iter()
        .map(|b| BlockRecord {
            name: b.name.clone(),
            shape: [b.rows, b.cols],
            values: values[b.range()].to_vec(),
        })
        .collect();
    let graph = model.graph();
    let ckpt = Checkpoint {
        format: FORMAT.to_string(),
        kind: kind.to_string(),
        dims: model.dims(),
        graph_fingerprint: graph.fingerprint(),
        basins: graph.basin_ids().map(str::to_string).collect(),
        target,
        depth,
        blocks,
    };
    let mut text = serde_json::to_string_pretty(&ckpt).expect("checkpoint serializes");
    text.push('\n');
    text
}

/// Restore a model against `region`, which must contain the model's basins.
pub fn load_checkpoint(text: &str, region: &RegionGraph) -> Result<LoadedModel, ModelError> {
    let ckpt: Checkpoint =
        serde_json::from_str(text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    if ckpt.format != FORMAT {
        return Err(ModelError::Checkpoint(format!("unsupported format `{}`", ckpt.format)));
    }
    let graph = region.subgraph(&ckpt.basins)?;
    if graph.fingerprint() != ckpt.graph_fingerprint {
        return Err(ModelError::IncompatibleGraph);
    }
    let mut model: LoadedModel = match ckpt.kind.as_str() {
        "hydronet" => HydroNetParams::zeros(Arc::new(graph), ckpt.dims)?.into(),
        "flat" => {
            let (Some(target), Some(depth)) = (&ckpt.target, ckpt.depth) else {
                return Err(ModelError::Checkpoint("flat checkpoint needs target and depth".into()));
            };
            init_flat(&graph, target, depth, ckpt.dims)?.into()
        }
        other => return Err(ModelError::Checkpoint(format!("unknown model kind `{other}`"))),
    };
    let layout = model.layout().clone();
    if layout.blocks().len() != ckpt.blocks.len() {
        return Err(ModelError::Checkpoint(format!(
            "expected {} blocks, found {}",
            layout.blocks().len(),
            ckpt.blocks.len()
        )));
    }
    let values = model.values_mut();
    for (block, record) in layout.blocks().iter().zip(&ckpt.blocks) {
        if block.name != record.name
            || [block.rows, block.cols] != record.shape
            || record.values.len() != block.len()
        {
            return Err(ModelError::Checkpoint(format!(
                "block `{}` {:?} does not match expected `{}` [{}, {}]",
                record.name, record.shape, block.name, block.rows, block.cols
            )));
        }
        if record.values.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Checkpoint(format!("non-finite value in `{}`", record.name)));
        }
        values[block.range()].copy_from_slice(&record.values);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_hydronet;
    use crate::region::{balanced_tree, prune_to_depth};

    fn dims() -> Dims {
        Dims {
            window: 3,
            embedding: 2,
            features: 2,
            horizon: 1,
        }
    }

    #[test]
    fn hydronet_round_trip_is_bit_exact() {
        let region = balanced_tree(2, 3).unwrap();
        let sub = prune_to_depth(&region, "b02", 2).unwrap();
        let p = init_hydronet(Arc::new(sub), dims(), 9).unwrap();
        let model = LoadedModel::from(p);
        let text = save_checkpoint(&model);
        let back = load_checkpoint(&text, &region).unwrap();
        assert_eq!(back, model);
        assert_eq!(save_checkpoint(&back), text);
    }

    #[test]
    fn flat_round_trip() {
        let region = balanced_tree(2, 2).unwrap();
        let mut p = init_flat(&region, "b01", 2, dims()).unwrap();
        for (i, v) in p.values_mut().iter_mut().enumerate() {
            *v = (i as f64 * 0.1).exp() / 3.0;
        }
        let model = LoadedModel::from(p);
        let back = load_checkpoint(&save_checkpoint(&model), &region).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn rejects_foreign_graph() {
        let region = balanced_tree(2, 2).unwrap();
        let text = save_checkpoint(&init_hydronet(Arc::new(region), dims(), 1).unwrap().into());
        let other = RegionGraph::new(
            ["b01", "b02", "b03"].into_iter().map(crate::region::Basin::new).collect(),
            vec![("b03".into(), "b02".into()), ("b02".into(), "b01".into())],
        )
        .unwrap();
        assert_eq!(load_checkpoint(&text, &other).unwrap_err(), ModelError::IncompatibleGraph);
        let tiny = balanced_tree(1, 1).unwrap();
        assert!(load_checkpoint(&text, &tiny).is_err());
    }
}
