#![allow(dead_code)]

use std::path::Path;

use rand::Rng;

use hydronets::data::Example;
use hydronets::experiment::ExperimentConfig;
use hydronets::model::Dims;
use hydronets::region::{Basin, RegionGraph};

/// The synthetic fixture shared by the trend criteria.
pub const FIXTURE: &str = r#"
seeds = [0, 1, 2, 3, 4]
metric = "r2_persist"
train_fraction = 0.82

[dims]
window = 24
horizon = 2
embedding = 4

[train]
learning_rate = 0.005
epochs = 30
batch_size = 32

[synth]
branching = 2
height = 3
basins = 7
steps = 4000
kernel_scale = { min = 2.0, max = 6.0 }
delay = [1, 1]
attenuation = { min = 0.8, max = 1.0 }
burst_rate = 0.05
burst_scale = 10.0
noise = { kind = "relative_to_drain", fraction = 0.05 }
seed = 7

[scarcity]
counts = [200, 800, 3200]
"#;

/// A small, fast variant of the fixture.
pub const SMALL: &str = r#"
seeds = [0, 1]
train_fraction = 0.75

[dims]
window = 6
horizon = 2
embedding = 2

[train]
learning_rate = 0.01
epochs = 4
batch_size = 16

[synth]
branching = 2
height = 3
steps = 600
kernel_scale = { min = 2.0, max = 4.0 }
delay = [1, 2]
attenuation = { min = 0.8, max = 1.0 }
burst_rate = 0.08
burst_scale = 10.0
noise = { kind = "relative_to_drain", fraction = 0.05 }
seed = 3

[scarcity]
counts = [50, 200]
"#;

pub fn config(text: &str, out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml(text, Path::new(".")).unwrap();
    cfg.out = out.to_path_buf();
    cfg
}

/// Random inverted tree on `n` basins: basin `i > 0` drains into a random earlier basin.
pub fn random_tree(n: usize, rng: &mut impl Rng) -> RegionGraph {
    let id = |i: usize| format!("n{i}");
    let basins = (0..n).map(|i| Basin::new(id(i))).collect();
    let edges = (1..n).map(|i| (id(i), id(rng.random_range(0..i)))).collect();
    RegionGraph::new(basins, edges).unwrap()
}

pub fn random_example(n: usize, dims: &Dims, rng: &mut impl Rng) -> Example {
    let width = n * dims.window * dims.features;
    Example {
        anchor: 0,
        features: (0..width).map(|_| rng.random_range(-1.0..1.0)).collect(),
        labels: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        persist: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    }
}

/// Indices of `b` and every basin upstream of it.
pub fn subtree(g: &RegionGraph, b: usize) -> Vec<usize> {
    let mut out = vec![b];
    let mut i = 0;
    while i < out.len() {
        out.extend_from_slice(g.upstream_indices(out[i]));
        i += 1;
    }
    out
}
