//! Per-basin time series: ingestion, normalization, windowing and synthesis.

mod norm;
mod series;
mod synth;
mod window;

pub use norm::{apply_norm, fit_norm_stats, invert_norm, ChannelStats, NormStats};
pub use series::{load_series, Channel, SeriesStore};
pub use synth::{generate_synthetic, kernel, simulate, BasinHydrology, NoiseSpec, SynthConfig, ValueRange};
pub use window::{split_chronological, window_examples, Example, ExampleSet};

use thiserror::Error;

use crate::region::RegionError;

/// Features per time step: precipitation and water level.
pub const FEATURES_PER_STEP: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("series file line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("series file header must be `timestamp,basin_id,precip,level`, found `{0}`")]
    BadHeader(String),
    #[error("series file has no rows")]
    NoRows,
    #[error("unknown basin `{0}` in series file")]
    UnknownBasin(String),
    #[error("basin `{0}` has no series data")]
    MissingBasin(String),
    #[error("duplicate row for basin `{basin}` at timestamp {timestamp}")]
    DuplicateRow { basin: String, timestamp: i64 },
    #[error("timestamps are not on a uniform grid: {0}")]
    NonUniformGrid(String),
    #[error("empty or out-of-bounds index range {start}..{end} (series length {len})")]
    EmptyRange { start: usize, end: usize, len: usize },
    #[error("channel {channel} of basin `{basin}` is constant over the fitting range")]
    ConstantChannel { basin: String, channel: Channel },
    #[error("no normalization statistics for basin `{0}`")]
    MissingStats(String),
    #[error("series of length {len} too short for window {window} and horizon {horizon}")]
    SeriesTooShort {
        len: usize,
        window: usize,
        horizon: usize,
    },
    #[error("window and horizon must be at least 1")]
    ZeroWindow,
    #[error("split leaves the training set empty")]
    EmptyTrain,
    #[error("split leaves the test set empty")]
    EmptyTest,
    #[error("invalid synthetic configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Region(#[from] RegionError),
}

impl DataError {
    pub fn code(&self) -> &'static str {
        match self {
            DataError::Parse { .. } => "parse-error",
            DataError::BadHeader(_) => "bad-header",
            DataError::NoRows => "no-rows",
            DataError::UnknownBasin(_) => "unknown-basin",
            DataError::MissingBasin(_) => "missing-basin",
            DataError::DuplicateRow { .. } => "duplicate-row",
            DataError::NonUniformGrid(_) => "non-uniform-grid",
            DataError::EmptyRange { .. } => "empty-range",
            DataError::ConstantChannel { .. } => "constant-channel",
            DataError::MissingStats(_) => "missing-stats",
            DataError::SeriesTooShort { .. } => "series-too-short",
            DataError::ZeroWindow => "zero-window",
            DataError::EmptyTrain => "empty-train",
            DataError::EmptyTest => "empty-test",
            DataError::InvalidConfig(_) => "invalid-config",
            DataError::Region(e) => e.code(),
        }
    }
}
