//! Normalized ratios, percentile summaries and their CSV forms.

use std::io::{Read, Write};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// `scheme / oracle`, with `0 / 0` read as a perfect match. For MLU this is
/// at least one, for the flow objectives at most one.
pub fn normalized_ratio(scheme: f64, oracle: f64) -> f64 {
    if scheme == 0.0 && oracle == 0.0 {
        1.0
    } else {
        scheme / oracle
    }
}

/// Candlestick statistics over a set of values (nearest-rank percentiles).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PercentileSummary {
    pub count: usize,
    pub min: f64,
    pub p25: f64,
    pub median: f64,
    pub p75: f64,
    pub p90: f64,
    pub p99: f64,
    pub max: f64,
    pub mean: f64,
}

/// Value at nearest rank `ceil(p N / 100)` of already sorted data.
fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

pub fn percentile_summary(values: &[f64]) -> Result<PercentileSummary> {
    if values.is_empty() {
        return Err(Error::Config("cannot summarize an empty list".into()));
    }
    if let Some(v) = values.iter().find(|v| v.is_nan()) {
        return Err(Error::NonFinite(format!("summary input contains {v}")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(PercentileSummary {
        count: sorted.len(),
        min: sorted[0],
        p25: nearest_rank(&sorted, 25.0),
        median: nearest_rank(&sorted, 50.0),
        p75: nearest_rank(&sorted, 75.0),
        p90: nearest_rank(&sorted, 90.0),
        p99: nearest_rank(&sorted, 99.0),
        max: sorted[sorted.len() - 1],
        mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
    })
}

/// One line of `ratios.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub scheme: String,
    pub epoch: usize,
    pub value: f64,
    pub ratio: f64,
}

/// One line of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scheme: String,
    pub count: usize,
    pub min: f64,
    pub p25: f64,
    pub median: f64,
    pub p75: f64,
    pub p90: f64,
    pub p99: f64,
    pub max: f64,
    pub mean: f64,
}

impl SummaryRow {
    pub fn new(scheme: &str, s: PercentileSummary) -> Self {
        Self {
            scheme: scheme.to_string(),
            count: s.count,
            min: s.min,
            p25: s.p25,
            median: s.median,
            p75: s.p75,
            p90: s.p90,
            p99: s.p99,
            max: s.max,
            mean: s.mean,
        }
    }

    pub fn summary(&self) -> PercentileSummary {
        PercentileSummary {
            count: self.count,
            min: self.min,
            p25: self.p25,
            median: self.median,
            p75: self.p75,
            p90: self.p90,
            p99: self.p99,
            max: self.max,
            mean: self.mean,
        }
    }
}

/// One line of `latency.csv`; times in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub scheme: String,
    pub repetitions: usize,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl LatencyRow {
    pub fn from_samples(scheme: &str, samples: &[Duration]) -> Result<Self> {
        let secs: Vec<f64> = samples.iter().map(Duration::as_secs_f64).collect();
        let s = percentile_summary(&secs)?;
        Ok(Self {
            scheme: scheme.to_string(),
            repetitions: samples.len(),
            median: s.median,
            min: s.min,
            max: s.max,
        })
    }
}

fn csv_error(what: &'static str) -> impl Fn(csv::Error) -> Error {
    move |e| Error::parse(what, e)
}

/// Writes serializable rows with a header line. Floats use Rust's shortest
/// round-trip formatting, so reading back is exact.
pub fn write_rows<T: Serialize>(writer: impl Write, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row).map_err(csv_error("csv output"))?;
    }
    w.flush().map_err(|e| Error::io("csv output", e))
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(reader: impl Read) -> Result<Vec<T>> {
    csv::Reader::from_reader(reader)
        .deserialize()
        .map(|r| r.map_err(csv_error("csv input")))
        .collect()
}

pub fn save_rows<T: Serialize>(path: impl AsRef<std::path::Path>, rows: &[T]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_rows(&mut buf, rows)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_rows<T: for<'de> Deserialize<'de>>(
    path: impl AsRef<std::path::Path>,
) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_rows(file)
}

/// Groups ratio rows by scheme (first-seen order) and summarizes each.
pub fn summarize_ratios(rows: &[RatioRow]) -> Result<Vec<SummaryRow>> {
    let mut order: Vec<&str> = Vec::new();
    for r in rows {
        if !order.contains(&r.scheme.as_str()) {
            order.push(&r.scheme);
        }
    }
    order
        .into_iter()
        .map(|scheme| {
            let ratios: Vec<f64> = rows
                .iter()
                .filter(|r| r.scheme == scheme)
                .map(|r| r.ratio)
                .collect();
            Ok(SummaryRow::new(scheme, percentile_summary(&ratios)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_examples() {
        let s = percentile_summary(&[4.0, 2.0, 1.0, 3.0]).unwrap();
        assert_eq!(
            (s.min, s.p25, s.median, s.p75, s.max),
            (1.0, 1.0, 2.0, 3.0, 4.0)
        );
        assert_eq!(s.p99, 4.0);
        assert_eq!(s.mean, 2.5);
        let one = percentile_summary(&[7.5]).unwrap();
        for v in [
            one.min, one.p25, one.median, one.p75, one.p90, one.p99, one.max, one.mean,
        ] {
            assert_eq!(v, 7.5);
        }
        let flat = percentile_summary(&[2.0; 9]).unwrap();
        assert_eq!(flat.max - flat.min, 0.0);
        assert!(percentile_summary(&[]).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let rows = vec![
            RatioRow {
                scheme: "dote".into(),
                epoch: 12,
                value: 1.0 / 3.0,
                ratio: 1.000_000_000_1,
            },
            RatioRow {
                scheme: "pred".into(),
                epoch: 12,
                value: 10.0 / 9.0,
                ratio: std::f64::consts::PI,
            },
        ];
        let mut buf = Vec::new();
        write_rows(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("scheme,epoch,value,ratio\n"));
        assert_eq!(read_rows::<RatioRow>(&buf[..]).unwrap(), rows);

        let summary = summarize_ratios(&rows).unwrap();
        let mut buf = Vec::new();
        write_rows(&mut buf, &summary).unwrap();
        assert!(String::from_utf8(buf.clone())
            .unwrap()
            .starts_with("scheme,count,min,p25,median,p75,p90,p99,max,mean\n"));
        assert_eq!(read_rows::<SummaryRow>(&buf[..]).unwrap(), summary);
    }

    #[test]
    fn ratio_of_zeros_is_one() {
        assert_eq!(normalized_ratio(0.0, 0.0), 1.0);
        assert_eq!(normalized_ratio(1.2, 1.0), 1.2);
    }
}
