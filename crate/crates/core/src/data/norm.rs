use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{Channel, DataError, SeriesStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: f64,
    pub std: f64,
}

impl ChannelStats {
    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Per-basin, per-channel z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub range: (usize, usize),
    pub basins: Vec<String>,
    /// Indexed like `basins`, then by [`Channel::offset`].
    pub stats: Vec<[ChannelStats; 2]>,
}

impl NormStats {
    pub fn get(&self, basin: &str, channel: Channel) -> Option<ChannelStats> {
        self.basins
            .iter()
            .position(|b| b == basin)
            .map(|i| self.stats[i][channel.offset()])
    }
}

/// Population mean and standard deviation over the non-missing entries of `range`.
pub fn fit_norm_stats(s: &SeriesStore, range: Range<usize>) -> Result<NormStats, DataError> {
    if range.start >= range.end || range.end > s.len() {
        return Err(DataError::EmptyRange {
            start: range.start,
            end: range.end,
            len: s.len(),
        });
    }
    let mut stats = Vec::with_capacity(s.basin_ids().len());
    for (b, id) in s.basin_ids().iter().enumerate() {
        let mut per_channel = [ChannelStats { mean: 0.0, std: 0.0 }; 2];
        for channel in Channel::ALL {
            let values: Vec<f64> = s.series(b, channel)[range.clone()]
                .iter()
                .copied()
                .filter(|v| !v.is_nan())
                .collect();
            if values.is_empty() {
                return Err(DataError::EmptyRange {
                    start: range.start,
                    end: range.end,
                    len: s.len(),
                });
            }
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let std = var.sqrt();
            if !(std > 0.0) {
                return Err(DataError::ConstantChannel {
                    basin: id.clone(),
                    channel,
                });
            }
            per_channel[channel.offset()] = ChannelStats { mean, std };
        }
        stats.push(per_channel);
    }
    Ok(NormStats {
        range: (range.start, range.end),
        basins: s.basin_ids().to_vec(),
        stats,
    })
}

fn map_values(
    s: &SeriesStore,
    stats: &NormStats,
    f: impl Fn(&ChannelStats, f64) -> f64,
) -> Result<SeriesStore, DataError> {
    let mut out = s.clone();
    for (b, id) in s.basin_ids().iter().enumerate() {
        for channel in Channel::ALL {
            let cs = stats
                .get(id, channel)
                .ok_or_else(|| DataError::MissingStats(id.clone()))?;
            for v in out.series_mut(b, channel) {
                // NaN stays NaN.
                *v = f(&cs, *v);
            }
        }
    }
    Ok(out)
}

/// `v -> (v - mean) / std` for every basin and channel.
pub fn apply_norm(s: &SeriesStore, stats: &NormStats) -> Result<SeriesStore, DataError> {
    map_values(s, stats, ChannelStats::apply)
}

pub fn invert_norm(s: &SeriesStore, stats: &NormStats) -> Result<SeriesStore, DataError> {
    map_values(s, stats, ChannelStats::invert)
}
