use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::DataError;
use crate::region::RegionGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Precip,
    Level,
}

impl Channel {
    pub const ALL: [Channel; 2] = [Channel::Precip, Channel::Level];

    /// Position of the channel inside a per-step feature vector.
    pub fn offset(self) -> usize {
        match self {
            Channel::Precip => 0,
            Channel::Level => 1,
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Channel::Precip => "precip",
            Channel::Level => "level",
        })
    }
}

/// Aligned per-basin series on a uniform time grid.
///
/// Missing values are stored as NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesStore {
    basin_ids: Vec<String>,
    start: i64,
    step: i64,
    precip: Vec<Vec<f64>>,
    level: Vec<Vec<f64>>,
}

impl SeriesStore {
    pub fn new(
        basin_ids: Vec<String>,
        start: i64,
        step: i64,
        precip: Vec<Vec<f64>>,
        level: Vec<Vec<f64>>,
    ) -> Result<Self, DataError> {
        if step <= 0 {
            return Err(DataError::NonUniformGrid(format!("step {step} is not positive")));
        }
        if precip.len() != basin_ids.len() || level.len() != basin_ids.len() {
            return Err(DataError::InvalidConfig(
                "one precipitation and one level series per basin".into(),
            ));
        }
        let len = precip.first().map_or(0, Vec::len);
        if precip.iter().chain(&level).any(|s| s.len() != len) {
            return Err(DataError::InvalidConfig("series lengths differ".into()));
        }
        if len == 0 {
            return Err(DataError::NoRows);
        }
        Ok(SeriesStore {
            basin_ids,
            start,
            step,
            precip,
            level,
        })
    }

    pub fn basin_ids(&self) -> &[String] {
        &self.basin_ids
    }

    pub fn index_of(&self, basin: &str) -> Option<usize> {
        self.basin_ids.iter().position(|b| b == basin)
    }

    pub fn len(&self) -> usize {
        self.precip[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn start(&self) -> i64 {
        self.start
    }

    pub fn step(&self) -> i64 {
        self.step
    }

    pub fn timestamp(&self, index: usize) -> i64 {
        self.start + self.step * index as i64
    }

    pub fn series(&self, basin: usize, channel: Channel) -> &[f64] {
        match channel {
            Channel::Precip => &self.precip[basin],
            Channel::Level => &self.level[basin],
        }
    }

    pub(crate) fn series_mut(&mut self, basin: usize, channel: Channel) -> &mut [f64] {
        match channel {
            Channel::Precip => &mut self.precip[basin],
            Channel::Level => &mut self.level[basin],
        }
    }

    /// Serialize as `timestamp,basin_id,precip,level`, time-major, basins in store order.
    pub fn to_csv(&self) -> String {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(["timestamp", "basin_id", "precip", "level"])
            .expect("in-memory write");
        let fmt = |v: f64| if v.is_nan() { String::new() } else { v.to_string() };
        for t in 0..self.len() {
            let ts = self.timestamp(t).to_string();
            for (b, id) in self.basin_ids.iter().enumerate() {
                wtr.write_record([
                    ts.as_str(),
                    id.as_str(),
                    &fmt(self.precip[b][t]),
                    &fmt(self.level[b][t]),
                ])
                .expect("in-memory write");
            }
        }
        String::from_utf8(wtr.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }
}

fn parse_value(field: &str, line: u64, name: &str) -> Result<f64, DataError> {
    let field = field.trim();
    if field.is_empty() {
        return Ok(f64::NAN);
    }
    field.parse::<f64>().map_err(|e| DataError::Parse {
        line,
        message: format!("{name} `{field}`: {e}"),
    })
}

/// Read a series file against a region. Rows may come in any order; every
/// region basin must appear at least once.
pub fn load_series(text: &str, g: &RegionGraph) -> Result<SeriesStore, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr
        .headers()
        .map_err(|e| DataError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    if header.iter().collect::<Vec<_>>() != ["timestamp", "basin_id", "precip", "level"] {
        return Err(DataError::BadHeader(header.iter().collect::<Vec<_>>().join(",")));
    }

    let mut rows: Vec<(i64, usize, f64, f64)> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| DataError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let ts: i64 = record[0].parse().map_err(|e| DataError::Parse {
            line,
            message: format!("timestamp `{}`: {e}", &record[0]),
        })?;
        let basin = g
            .index_of(&record[1])
            .ok_or_else(|| DataError::UnknownBasin(record[1].to_string()))?;
        let precip = parse_value(&record[2], line, "precip")?;
        let level = parse_value(&record[3], line, "level")?;
        rows.push((ts, basin, precip, level));
    }
    if rows.is_empty() {
        return Err(DataError::NoRows);
    }

    let stamps: Vec<i64> = rows
        .iter()
        .map(|r| r.0)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let step = if stamps.len() > 1 { stamps[1] - stamps[0] } else { 1 };
    if let Some(w) = stamps.windows(2).find(|w| w[1] - w[0] != step) {
        return Err(DataError::NonUniformGrid(format!(
            "step {} between {} and {}, expected {step}",
            w[1] - w[0],
            w[0],
            w[1]
        )));
    }
    let start = stamps[0];
    let len = stamps.len();
    let slot: HashMap<i64, usize> = stamps.iter().enumerate().map(|(i, &t)| (t, i)).collect();

    let n = g.len();
    let mut precip = vec![vec![f64::NAN; len]; n];
    let mut level = vec![vec![f64::NAN; len]; n];
    let mut filled = vec![vec![false; len]; n];
    for (ts, b, p, l) in rows {
        let t = slot[&ts];
        if std::mem::replace(&mut filled[b][t], true) {
            return Err(DataError::DuplicateRow {
                basin: g.id(b).to_string(),
                timestamp: ts,
            });
        }
        precip[b][t] = p;
        level[b][t] = l;
    }
    if let Some(b) = (0..n).find(|&b| !filled[b].iter().any(|&f| f)) {
        return Err(DataError::MissingBasin(g.id(b).to_string()));
    }
    SeriesStore::new(
        g.basin_ids().map(str::to_string).collect(),
        start,
        step,
        precip,
        level,
    )
}
