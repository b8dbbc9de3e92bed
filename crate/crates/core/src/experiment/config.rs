use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::data::{SynthConfig, FEATURES_PER_STEP};
use crate::model::Dims;
use crate::training::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    R2,
    #[default]
    R2Persist,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::R2 => "r2",
            Metric::R2Persist => "r2_persist",
        }
    }

    pub fn parse(s: &str) -> Option<Metric> {
        match s {
            "r2" => Some(Metric::R2),
            "r2_persist" => Some(Metric::R2Persist),
            _ => None,
        }
    }
}

/// Window, horizon and embedding size; features per step are fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimsConfig {
    pub window: usize,
    pub horizon: usize,
    pub embedding: usize,
}

impl DimsConfig {
    pub fn dims(&self) -> Dims {
        Dims {
            window: self.window,
            embedding: self.embedding,
            features: FEATURES_PER_STEP,
            horizon: self.horizon,
        }
    }
}

/// Training-set sizes for the scarcity runner, in periods of `period` examples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScarcityConfig {
    pub counts: Vec<usize>,
    #[serde(default = "one")]
    pub period: usize,
}

fn one() -> usize {
    1
}

fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_train_fraction() -> f64 {
    0.8
}

fn default_alpha() -> f64 {
    0.9
}

fn default_flat_depth() -> usize {
    2
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub series: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    pub dims: DimsConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub metric: Metric,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Fraction of the timeline (from the start) used for fitting.
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    /// Loss weight on the target basin when a HydroNet is trained for one basin.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Subtree depth of the flat baseline in the all-basins and scarcity runners.
    #[serde(default = "default_flat_depth")]
    pub flat_depth: usize,
    /// Target basins; empty means every basin (all-basins) or the drain (scarcity).
    #[serde(default)]
    pub basins: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scarcity: Option<ScarcityConfig>,
    /// Execution detail only; results never depend on it, so it is not echoed.
    #[serde(default = "yes", skip_serializing)]
    pub parallel: bool,
}

impl ExperimentConfig {
    /// Parse and resolve relative paths against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<ExperimentConfig, ExperimentError> {
        let mut cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        for p in [&mut cfg.region, &mut cfg.series].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if cfg.out.is_relative() {
            cfg.out = base.join(&cfg.out);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
        ExperimentConfig::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        match (&self.synth, &self.region, &self.series) {
            (Some(_), None, None) | (None, Some(_), Some(_)) => {}
            _ => return bad("give either `synth` or both `region` and `series`".into()),
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        self.dims.dims().validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train_fraction {} must lie in (0, 1)", self.train_fraction));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha {} must lie in [0, 1]", self.alpha));
        }
        if self.flat_depth == 0 {
            return bad("flat_depth must be at least 1".into());
        }
        if let Some(s) = &self.scarcity {
            if s.counts.is_empty() || s.counts.contains(&0) || s.period == 0 {
                return bad("scarcity counts and period must be positive".into());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
region = "r.json"
series = "s.csv"
[dims]
window = 24
horizon = 2
embedding = 4
"#;

    #[test]
    fn defaults_and_paths() {
        let cfg = ExperimentConfig::from_toml(MINIMAL, Path::new("/data")).unwrap();
        assert_eq!(cfg.seeds, (0..10).collect::<Vec<_>>());
        assert_eq!(cfg.metric, Metric::R2Persist);
        assert_eq!(cfg.region.as_deref(), Some(Path::new("/data/r.json")));
        assert_eq!(cfg.out, Path::new("/data/out"));
        assert_eq!(cfg.alpha, 0.9);
        let again = ExperimentConfig::from_toml(&cfg.to_toml(), Path::new("/elsewhere")).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn rejects_bad_configs() {
        let no_seeds = format!("seeds = []\n{MINIMAL}");
        assert!(ExperimentConfig::from_toml(&no_seeds, Path::new(".")).is_err());
        let no_data = "[dims]\nwindow = 2\nhorizon = 1\nembedding = 1\n";
        assert!(ExperimentConfig::from_toml(no_data, Path::new(".")).is_err());
        let typo = format!("seedz = [1]\n{MINIMAL}");
        assert!(ExperimentConfig::from_toml(&typo, Path::new(".")).is_err());
    }
}
