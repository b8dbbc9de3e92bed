//! Data pipeline and the three experiment runners behind the CLI.

mod config;
mod report;

pub use config::{DimsConfig, ExperimentConfig, Metric, ScarcityConfig};
pub use report::{
    comparison_csv, diff_summary_csv, fmt6, median, round6, runs_csv, summarize, ReportFormat,
    ReportRow, ReportTable, RunRecord, REPORT_HEADER,
};

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{
    apply_norm, fit_norm_stats, generate_synthetic, load_series, split_chronological,
    window_examples, DataError, ExampleSet, NormStats,
};
use crate::metrics::{evaluate, MetricsError};
use crate::model::{init_flat, init_hydronet, FlatLinearParams, HydroNetParams, ModelError};
use crate::region::{parse_region, prune_to_depth, validate, RegionError, RegionGraph};
use crate::training::{train, train_flat, TrainConfig, TrainError, WeightSpec};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid region: {0}")]
    Region(#[from] RegionError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl ExperimentError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        ExperimentError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }

    /// True for problems with the inputs themselves rather than the run.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            ExperimentError::Config(_) | ExperimentError::Region(_) | ExperimentError::Data(DataError::Region(_))
        )
    }
}

pub const HYDRONETS: &str = "hydronets";
pub const LINEAR: &str = "linear";
pub const DIFF: &str = "diff";

/// Hash of one input, computed like a git blob id but with SHA-256.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InputHash {
    pub name: String,
    pub sha256: String,
}

pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

/// Normalized, windowed and split data ready for training.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub graph: Arc<RegionGraph>,
    pub norm: NormStats,
    pub train: ExampleSet,
    pub test: ExampleSet,
    pub inputs: Vec<InputHash>,
}

fn read(path: &Path) -> Result<String, ExperimentError> {
    std::fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))
}

/// Load (or synthesize), normalize on the training range, window and split.
///
/// Training examples are those whose label falls before the split point, so
/// normalization statistics and training labels never see the test range.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared, ExperimentError> {
    let (graph, store, inputs) = match (&cfg.synth, &cfg.region, &cfg.series) {
        (Some(sc), _, _) => {
            let (g, s) = generate_synthetic(sc)?;
            let inputs = vec![
                InputHash {
                    name: "synth:region".into(),
                    sha256: content_hash(g.to_json().as_bytes()),
                },
                InputHash {
                    name: "synth:series".into(),
                    sha256: content_hash(s.to_csv().as_bytes()),
                },
            ];
            (g, s, inputs)
        }
        (None, Some(rp), Some(sp)) => {
            let (rt, st) = (read(rp)?, read(sp)?);
            let g = parse_region(&rt)?;
            let report = validate(&g);
            if !report.ok {
                return Err(ExperimentError::Config(format!("{}: {report}", rp.display())));
            }
            let s = load_series(&st, &g)?;
            let inputs = vec![
                InputHash {
                    name: rp.display().to_string(),
                    sha256: content_hash(rt.as_bytes()),
                },
                InputHash {
                    name: sp.display().to_string(),
                    sha256: content_hash(st.as_bytes()),
                },
            ];
            (g, s, inputs)
        }
        _ => return Err(ExperimentError::Config("no data source".into())),
    };
    let dims = cfg.dims;
    let boundary = (store.len() as f64 * cfg.train_fraction).floor() as usize;
    let norm = fit_norm_stats(&store, 0..boundary)?;
    let normalized = apply_norm(&store, &norm)?;
    let set = window_examples(&normalized, &graph, dims.window, dims.horizon)?;
    let cut = boundary.checked_sub(dims.horizon).ok_or(DataError::EmptyTrain)?;
    let (train, test) = split_chronological(&set, cut)?;
    Ok(Prepared {
        graph: set.shared_graph(),
        norm,
        train,
        test,
        inputs,
    })
}

fn train_cfg(cfg: &ExperimentConfig, seed: u64, weights: WeightSpec) -> TrainConfig {
    TrainConfig {
        seed,
        weights,
        ..cfg.train.clone()
    }
}

/// HydroNet on `sub` (a subtree of the prepared graph), loss focused on `target`.
pub fn fit_hydronet(
    cfg: &ExperimentConfig,
    sub: &RegionGraph,
    target: &str,
    train_set: &ExampleSet,
    seed: u64,
) -> Result<HydroNetParams, ExperimentError> {
    let set = train_set.restrict(sub)?;
    let p = init_hydronet(set.shared_graph(), cfg.dims.dims(), seed)?;
    let weights = WeightSpec::Focused {
        target: target.to_string(),
        alpha: cfg.alpha,
    };
    let (p, _) = train(p, &set, &train_cfg(cfg, seed, weights))?;
    Ok(p)
}

/// Flat baseline over the depth-`depth` subtree of `target`.
pub fn fit_flat(
    cfg: &ExperimentConfig,
    data: &Prepared,
    target: &str,
    depth: usize,
    train_set: &ExampleSet,
    seed: u64,
) -> Result<FlatLinearParams, ExperimentError> {
    let p = init_flat(&data.graph, target, depth, cfg.dims.dims())?;
    let set = train_set.restrict(p.graph())?;
    let (p, _) = train_flat(p, &set, &train_cfg(cfg, seed, WeightSpec::Uniform))?;
    Ok(p)
}

#[derive(Debug, Clone)]
struct Job {
    key: String,
    basin: String,
    model: &'static str,
    seed: u64,
    /// Subtree depth around `basin`: the HydroNet graph or the flat radius.
    depth: Option<usize>,
    train_size: Option<usize>,
}

fn run_job(cfg: &ExperimentConfig, data: &Prepared, job: &Job) -> Result<RunRecord, ExperimentError> {
    let train_set = match job.train_size {
        Some(n) => data.train.most_recent(n),
        None => data.train.clone(),
    };
    let report = if job.model == HYDRONETS {
        let sub = match job.depth {
            Some(d) => prune_to_depth(&data.graph, &job.basin, d)?,
            None => (*data.graph).clone(),
        };
        let p = fit_hydronet(cfg, &sub, &job.basin, &train_set, job.seed)?;
        evaluate(&p, &data.test, Some(&data.norm))?
    } else {
        let depth = job.depth.unwrap_or(cfg.flat_depth);
        let p = fit_flat(cfg, data, &job.basin, depth, &train_set, job.seed)?;
        evaluate(&p, &data.test, Some(&data.norm))?
    };
    let m = report
        .get(&job.basin)
        .ok_or_else(|| ExperimentError::Config(format!("basin `{}` missing from report", job.basin)))?;
    Ok(RunRecord {
        key: job.key.clone(),
        basin: job.basin.clone(),
        model: job.model.to_string(),
        seed: job.seed,
        mse: m.mse,
        r2: m.r2,
        r2_persist: m.r2_persist,
    })
}

fn run_jobs(cfg: &ExperimentConfig, data: &Prepared, jobs: &[Job]) -> Result<Vec<RunRecord>, ExperimentError> {
    if cfg.parallel {
        jobs.par_iter().map(|j| run_job(cfg, data, j)).collect()
    } else {
        jobs.iter().map(|j| run_job(cfg, data, j)).collect()
    }
}

fn metric_of(r: &RunRecord, m: Metric) -> f64 {
    match m {
        Metric::R2 => r.r2,
        Metric::R2Persist => r.r2_persist,
    }
}

/// Seed-aggregate runs into rows, keeping first-appearance order of
/// `(key, basin, model)`. With `with_diff`, a `diff` row follows each basin's pair.
fn aggregate(runs: &[RunRecord], metric: Metric, with_diff: bool) -> ReportTable {
    let mut cells: Vec<(String, String, String)> = Vec::new();
    for r in runs {
        let cell = (r.key.clone(), r.basin.clone(), r.model.clone());
        if !cells.contains(&cell) {
            cells.push(cell);
        }
    }
    let values = |k: &str, b: &str, m: &str| -> Vec<(u64, f64)> {
        runs.iter()
            .filter(|r| r.key == k && r.basin == b && r.model == m)
            .map(|r| (r.seed, metric_of(r, metric)))
            .collect()
    };
    let mut rows = Vec::new();
    for (k, b, m) in &cells {
        let v: Vec<f64> = values(k, b, m).into_iter().map(|(_, x)| x).collect();
        let (mean, std, median) = summarize(&v);
        rows.push(ReportRow {
            key: k.clone(),
            basin: b.clone(),
            model: m.clone(),
            metric: metric.name().into(),
            mean,
            std,
            median,
            n_seeds: v.len(),
        });
        if with_diff && m == LINEAR {
            let hn = values(k, b, HYDRONETS);
            let lin = values(k, b, LINEAR);
            let paired: Vec<f64> = hn
                .iter()
                .filter_map(|&(s, h)| lin.iter().find(|&&(t, _)| t == s).map(|&(_, l)| h - l))
                .collect();
            if !paired.is_empty() {
                let hn_mean = hn.iter().map(|x| x.1).sum::<f64>() / hn.len() as f64;
                let (_, std, median) = summarize(&paired);
                rows.push(ReportRow {
                    key: k.clone(),
                    basin: b.clone(),
                    model: DIFF.into(),
                    metric: metric.name().into(),
                    mean: hn_mean - mean,
                    std,
                    median,
                    n_seeds: paired.len(),
                });
            }
        }
    }
    ReportTable { rows }
}

/// Everything an experiment produces, before it is written to disk.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub name: &'static str,
    pub table: ReportTable,
    pub runs: Vec<RunRecord>,
    /// Extra files, `(file name, contents)`.
    pub companions: Vec<(String, String)>,
    pub inputs: Vec<InputHash>,
}

fn jobs_for_models(key: &str, basin: &str, seeds: &[u64], hn_depth: Option<usize>, flat_depth: Option<usize>, size: Option<usize>) -> Vec<Job> {
    let mut jobs = Vec::with_capacity(2 * seeds.len());
    for (model, depth) in [(HYDRONETS, hn_depth), (LINEAR, flat_depth)] {
        for &seed in seeds {
            jobs.push(Job {
                key: key.to_string(),
                basin: basin.to_string(),
                model,
                seed,
                depth,
                train_size: size,
            });
        }
    }
    jobs
}

fn drain_of(g: &RegionGraph) -> Result<String, ExperimentError> {
    g.drain()
        .map(str::to_string)
        .ok_or_else(|| ExperimentError::Config("region has no single drain".into()))
}

/// Prune around the drain to every depth and compare both models there.
pub fn run_depth_experiment(cfg: &ExperimentConfig, data: &Prepared) -> Result<ExperimentOutput, ExperimentError> {
    let drain = drain_of(&data.graph)?;
    let height = data.graph.height()?;
    let jobs: Vec<Job> = (1..=height)
        .flat_map(|d| jobs_for_models(&format!("depth={d}"), &drain, &cfg.seeds, Some(d), Some(d), None))
        .collect();
    let runs = run_jobs(cfg, data, &jobs)?;
    Ok(ExperimentOutput {
        name: "depth",
        table: aggregate(&runs, cfg.metric, false),
        runs,
        companions: Vec::new(),
        inputs: data.inputs.clone(),
    })
}

fn targets(cfg: &ExperimentConfig, g: &RegionGraph, default_all: bool) -> Result<Vec<String>, ExperimentError> {
    if cfg.basins.is_empty() {
        return Ok(if default_all {
            g.basin_ids().map(str::to_string).collect()
        } else {
            vec![drain_of(g)?]
        });
    }
    for b in &cfg.basins {
        if !g.contains(b) {
            return Err(ExperimentError::Config(format!("unknown basin `{b}`")));
        }
    }
    Ok(cfg.basins.clone())
}

/// Per basin: a focused HydroNet on the full region versus a flat subtree model.
pub fn run_all_basins(cfg: &ExperimentConfig, data: &Prepared) -> Result<ExperimentOutput, ExperimentError> {
    let basins = targets(cfg, &data.graph, true)?;
    let jobs: Vec<Job> = basins
        .iter()
        .flat_map(|b| jobs_for_models("all", b, &cfg.seeds, None, Some(cfg.flat_depth), None))
        .collect();
    let runs = run_jobs(cfg, data, &jobs)?;
    let table = aggregate(&runs, cfg.metric, true);
    let diffs: Vec<f64> = table.rows.iter().filter(|r| r.model == DIFF).map(|r| r.mean).collect();
    let companions = vec![
        ("basins_table.csv".to_string(), comparison_csv(&table)),
        ("diff_summary.csv".to_string(), diff_summary_csv(&diffs, 10)),
    ];
    Ok(ExperimentOutput {
        name: "basins",
        table,
        runs,
        companions,
        inputs: data.inputs.clone(),
    })
}

/// Train on only the most recent periods, always testing on the same tail.
pub fn run_scarcity(cfg: &ExperimentConfig, data: &Prepared) -> Result<ExperimentOutput, ExperimentError> {
    let sc = cfg
        .scarcity
        .as_ref()
        .ok_or_else(|| ExperimentError::Config("missing [scarcity] section".into()))?;
    let basins = targets(cfg, &data.graph, false)?;
    let mut jobs = Vec::new();
    for &c in &sc.counts {
        let n = c * sc.period;
        if n > data.train.len() {
            return Err(ExperimentError::Config(format!(
                "{c} periods need {n} training examples, only {} available",
                data.train.len()
            )));
        }
        for b in &basins {
            jobs.extend(jobs_for_models(&format!("train={c}"), b, &cfg.seeds, None, Some(cfg.flat_depth), Some(n)));
        }
    }
    let runs = run_jobs(cfg, data, &jobs)?;
    Ok(ExperimentOutput {
        name: "scarcity",
        table: aggregate(&runs, cfg.metric, false),
        runs,
        companions: Vec::new(),
        inputs: data.inputs.clone(),
    })
}

#[derive(Serialize)]
struct Manifest<'a> {
    experiment: &'a str,
    version: &'a str,
    seeds: &'a [u64],
    metric: &'a str,
    inputs: &'a [InputHash],
    outputs: Vec<InputHash>,
    config: String,
}

/// Write the table, per-seed runs, companions and a manifest into `cfg.out`.
/// Returns the written paths.
pub fn write_output(
    cfg: &ExperimentConfig,
    out: &ExperimentOutput,
    format: ReportFormat,
) -> Result<Vec<PathBuf>, ExperimentError> {
    let dir = &cfg.out;
    std::fs::create_dir_all(dir).map_err(|e| ExperimentError::io(dir, e))?;
    let mut files = vec![
        (format!("{}.{}", out.name, format.extension()), out.table.render(format)),
        (format!("{}_runs.csv", out.name), runs_csv(&out.runs)),
    ];
    files.extend(out.companions.iter().map(|(n, c)| (format!("{}_{n}", out.name), c.clone())));
    let mut written = Vec::new();
    let mut outputs = Vec::new();
    for (name, text) in &files {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| ExperimentError::io(&path, e))?;
        outputs.push(InputHash {
            name: name.clone(),
            sha256: content_hash(text.as_bytes()),
        });
        written.push(path);
    }
    let mut echo = cfg.clone();
    echo.out = PathBuf::from(".");
    let manifest = Manifest {
        experiment: out.name,
        version: env!("CARGO_PKG_VERSION"),
        seeds: &cfg.seeds,
        metric: cfg.metric.name(),
        inputs: &out.inputs,
        outputs,
        config: echo.to_toml(),
    };
    let path = dir.join(format!("{}_manifest.json", out.name));
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| ExperimentError::io(&path, e))?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(key: &str, model: &str, seed: u64, v: f64) -> RunRecord {
        RunRecord {
            key: key.into(),
            basin: "b01".into(),
            model: model.into(),
            seed,
            mse: 0.0,
            r2: v,
            r2_persist: v,
        }
    }

    #[test]
    fn aggregate_orders_rows_and_diffs() {
        let runs = vec![
            rec("all", HYDRONETS, 0, 0.6),
            rec("all", HYDRONETS, 1, 0.8),
            rec("all", LINEAR, 0, 0.5),
            rec("all", LINEAR, 1, 0.5),
        ];
        let t = aggregate(&runs, Metric::R2Persist, true);
        let models: Vec<&str> = t.rows.iter().map(|r| r.model.as_str()).collect();
        assert_eq!(models, [HYDRONETS, LINEAR, DIFF]);
        assert!((t.rows[0].mean - 0.7).abs() < 1e-12);
        assert!((t.rows[0].std - 0.1).abs() < 1e-12);
        assert!((t.rows[2].mean - 0.2).abs() < 1e-12);
        assert_eq!(t.rows[2].n_seeds, 2);
        let single = aggregate(&runs[..1], Metric::R2, false);
        assert_eq!(single.rows[0].std, 0.0);
    }

    #[test]
    fn content_hash_matches_git_style_framing() {
        let mut h = Sha256::new();
        h.update(b"blob 3\0abc");
        assert_eq!(content_hash(b"abc"), hex::encode(h.finalize()));
    }
}
