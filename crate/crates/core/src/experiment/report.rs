use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// Fixed-point rendering used by every report file.
pub fn fmt6(v: f64) -> String {
    let s = format!("{v:.6}");
    // avoid "-0.000000"
    if s.trim_start_matches('-').bytes().all(|b| b == b'0' || b == b'.') {
        s.trim_start_matches('-').to_string()
    } else {
        s
    }
}

/// Round to the six decimals shown in CSV output.
pub fn round6(v: f64) -> f64 {
    fmt6(v).parse().expect("formatted float parses")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        }
    }
}

/// One seed-aggregated cell of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    /// Experiment key, e.g. `depth=2` or `train=800`.
    pub key: String,
    pub basin: String,
    /// `hydronets`, `linear` or `diff`.
    pub model: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub n_seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReportTable {
    pub rows: Vec<ReportRow>,
}

pub const REPORT_HEADER: &str = "key,basin,model,metric,mean,std,median,n_seeds";

impl ReportTable {
    pub fn find(&self, key: &str, basin: &str, model: &str) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.key == key && r.basin == basin && r.model == model)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{REPORT_HEADER}\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.key,
                r.basin,
                r.model,
                r.metric,
                fmt6(r.mean),
                fmt6(r.std),
                fmt6(r.median),
                r.n_seeds
            )
            .unwrap();
        }
        out
    }

    /// Pretty JSON with the same six-decimal rounding as the CSV.
    pub fn to_json(&self) -> String {
        let rounded = ReportTable {
            rows: self
                .rows
                .iter()
                .map(|r| ReportRow {
                    mean: round6(r.mean),
                    std: round6(r.std),
                    median: round6(r.median),
                    ..r.clone()
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&rounded).expect("table serializes");
        s.push('\n');
        s
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Csv => self.to_csv(),
            ReportFormat::Json => self.to_json(),
        }
    }

    pub fn from_csv(text: &str) -> Result<ReportTable, csv::Error> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let rows = reader.deserialize().collect::<Result<Vec<ReportRow>, _>>()?;
        Ok(ReportTable { rows })
    }
}

/// Mean, population std and median.
pub fn summarize(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt(), median(values))
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Per-seed score of one trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub key: String,
    pub basin: String,
    pub model: String,
    pub seed: u64,
    pub mse: f64,
    pub r2: f64,
    pub r2_persist: f64,
}

pub fn runs_csv(runs: &[RunRecord]) -> String {
    let mut out = String::from("key,basin,model,seed,mse,r2,r2_persist\n");
    for r in runs {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.key,
            r.basin,
            r.model,
            r.seed,
            fmt6(r.mse),
            fmt6(r.r2),
            fmt6(r.r2_persist)
        )
        .unwrap();
    }
    out
}

/// The per-basin Linear / HydroNets / Diff layout, one line per basin.
pub fn comparison_csv(t: &ReportTable) -> String {
    let mut out = String::from("basin,linear,hydronets,diff\n");
    for r in t.rows.iter().filter(|r| r.model == "diff") {
        let (Some(lin), Some(hn)) = (t.find(&r.key, &r.basin, "linear"), t.find(&r.key, &r.basin, "hydronets")) else {
            continue;
        };
        writeln!(out, "{},{},{},{}", r.basin, fmt6(lin.mean), fmt6(hn.mean), fmt6(r.mean)).unwrap();
    }
    out
}

/// Summary statistics and a fixed-width histogram of the diff column.
pub fn diff_summary_csv(diffs: &[f64], bins: usize) -> String {
    let mut out = String::new();
    if diffs.is_empty() {
        out.push_str("stat,value\ncount,0\n");
        return out;
    }
    let (mean, std, med) = summarize(diffs);
    let lo = diffs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = diffs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let positive = diffs.iter().filter(|&&d| d > 0.0).count();
    out.push_str("stat,value\n");
    writeln!(out, "count,{}", diffs.len()).unwrap();
    writeln!(out, "positive,{positive}").unwrap();
    for (name, v) in [("mean", mean), ("std", std), ("median", med), ("min", lo), ("max", hi)] {
        writeln!(out, "{name},{}", fmt6(v)).unwrap();
    }
    out.push_str("\nbin_low,bin_high,count\n");
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for &d in diffs {
        let i = (((d - lo) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    for (i, c) in counts.iter().enumerate() {
        let a = lo + i as f64 * width;
        writeln!(out, "{},{},{c}", fmt6(a), fmt6(a + width)).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(model: &str, mean: f64) -> ReportRow {
        ReportRow {
            key: "all".into(),
            basin: "b01".into(),
            model: model.into(),
            metric: "r2_persist".into(),
            mean,
            std: 0.0,
            median: mean,
            n_seeds: 1,
        }
    }

    #[test]
    fn six_decimals() {
        assert_eq!(fmt6(0.008919174), "0.008919");
        assert_eq!(fmt6(-1e-9), "0.000000");
        assert_eq!(fmt6(-0.5), "-0.500000");
        assert_eq!(round6(0.565764 - 0.556844), 0.00892);
    }

    #[test]
    fn csv_round_trip_and_empty() {
        let t = ReportTable {
            rows: vec![row("linear", 0.556844), row("hydronets", 0.565764)],
        };
        let back = ReportTable::from_csv(&t.to_csv()).unwrap();
        assert_eq!(back, t);
        assert_eq!(ReportTable::default().to_csv(), format!("{REPORT_HEADER}\n"));
        let json: ReportTable = serde_json::from_str(&t.to_json()).unwrap();
        assert_eq!(json, t);
    }

    #[test]
    fn stats() {
        let (m, s, med) = summarize(&[1.0, 2.0, 3.0, 10.0]);
        assert_eq!(m, 4.0);
        assert!((s - (9.0f64 + 4.0 + 1.0 + 36.0).sqrt() / 2.0).abs() < 1e-12);
        assert_eq!(med, 2.5);
        assert_eq!(summarize(&[0.3]).1, 0.0);
    }

    #[test]
    fn histogram_counts_everything() {
        let text = diff_summary_csv(&[-0.1, 0.0, 0.02, 0.05, 0.3], 4);
        assert!(text.contains("count,5\n"));
        assert!(text.contains("positive,3\n"));
        let total: usize = text
            .lines()
            .skip_while(|l| !l.starts_with("bin_low"))
            .skip(1)
            .map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap())
            .sum();
        assert_eq!(total, 5);
    }
}
