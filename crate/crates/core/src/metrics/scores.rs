use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;

use super::ScoreMatrix;
use crate::error::{Error, Result};
use crate::util::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    Msfi,
    MiCorr,
    Iou,
    Rating,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Msfi, Metric::MiCorr, Metric::Iou, Metric::Rating];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Msfi => "msfi",
            Metric::MiCorr => "mi_corr",
            Metric::Iou => "iou",
            Metric::Rating => "rating",
        }
    }

    /// Admissible value range.
    pub fn range(self) -> (f64, f64) {
        match self {
            Metric::MiCorr => (-1.0, 1.0),
            Metric::Rating => (f64::NEG_INFINITY, f64::INFINITY),
            _ => (0.0, 1.0),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == norm)
            .ok_or_else(|| Error::Config(format!("unknown metric {s:?}")))
    }
}

/// One score of one method on one sample. `tag` names the experiment (fold,
/// dataset); it is not stored in the CSV but taken from the file name.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub sample_id: String,
    pub method: String,
    pub metric: Metric,
    pub value: f64,
    pub tag: String,
}

impl MetricRecord {
    pub fn new(
        sample_id: impl Into<String>,
        method: impl Into<String>,
        metric: Metric,
        value: f64,
        tag: impl Into<String>,
    ) -> Result<Self> {
        let (lo, hi) = metric.range();
        if !value.is_finite() || value < lo || value > hi {
            return Err(Error::Invariant(format!("{metric} value {value} outside [{lo}, {hi}]")));
        }
        Ok(MetricRecord {
            sample_id: sample_id.into(),
            method: method.into(),
            metric,
            value,
            tag: tag.into(),
        })
    }
}

#[derive(Deserialize)]
struct Row {
    sample_id: String,
    method: String,
    metric: String,
    value: f64,
}

/// Writes `sample_id,method,metric,value` rows in the given order.
pub fn write_scores(records: &[MetricRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |e: csv::Error| Error::Invariant(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["sample_id", "method", "metric", "value"]).map_err(csv_err)?;
    for r in records {
        w.write_record([&r.sample_id, &r.method, r.metric.name(), &fmt_f64(r.value)])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a scores CSV; every record is tagged with the file stem.
pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<MetricRecord>> {
    let path = path.as_ref();
    let tag = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let bad = |msg: String| Error::Invariant(format!("{}: {msg}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let headers = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    if headers != vec!["sample_id", "method", "metric", "value"] {
        return Err(bad(format!("unexpected header {headers:?}")));
    }
    reader
        .deserialize::<Row>()
        .map(|row| {
            let row = row.map_err(|e| bad(e.to_string()))?;
            MetricRecord::new(row.sample_id, row.method, row.metric.parse()?, row.value, &tag)
        })
        .collect()
}

/// Pivots the records of one metric into samples x methods. Rows are keyed
/// by `(tag, sample_id)`, both sorted; methods are sorted by name.
pub fn score_matrix(records: &[MetricRecord], metric: Metric) -> Result<ScoreMatrix> {
    let mut cells: BTreeMap<(String, String), BTreeMap<String, f64>> = BTreeMap::new();
    let mut methods = BTreeSet::new();
    for r in records.iter().filter(|r| r.metric == metric) {
        methods.insert(r.method.clone());
        let row = cells.entry((r.tag.clone(), r.sample_id.clone())).or_default();
        if row.insert(r.method.clone(), r.value).is_some() {
            return Err(Error::Stats(format!(
                "duplicate {metric} score for sample {:?}, method {:?}",
                r.sample_id, r.method
            )));
        }
    }
    if cells.is_empty() {
        return Err(Error::Stats(format!("no {metric} scores")));
    }
    let methods: Vec<String> = methods.into_iter().collect();
    let multiple_tags = cells.keys().map(|k| &k.0).collect::<BTreeSet<_>>().len() > 1;
    let mut rows = Vec::with_capacity(cells.len());
    let mut values = Vec::with_capacity(cells.len());
    for ((tag, id), row) in cells {
        let vals = methods
            .iter()
            .map(|m| {
                row.get(m).copied().ok_or_else(|| {
                    Error::Stats(format!("incomplete matrix: no {metric} for {id:?} / {m:?}"))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(if multiple_tags { format!("{tag}/{id}") } else { id });
        values.push(vals);
    }
    ScoreMatrix::new(rows, methods, values)
}

/// Matches records of `a` and `b` on `(sample_id, method)` and returns the
/// paired values in key order. Keys present on one side only are dropped.
pub fn join_pairs(a: &[MetricRecord], b: &[MetricRecord]) -> Result<(Vec<f64>, Vec<f64>)> {
    let index = |recs: &[MetricRecord]| -> Result<BTreeMap<(String, String), f64>> {
        let mut m = BTreeMap::new();
        for r in recs {
            if m.insert((r.sample_id.clone(), r.method.clone()), r.value).is_some() {
                return Err(Error::Stats(format!(
                    "duplicate score for sample {:?}, method {:?}",
                    r.sample_id, r.method
                )));
            }
        }
        Ok(m)
    };
    let (ia, ib) = (index(a)?, index(b)?);
    Ok(ia
        .iter()
        .filter_map(|(k, &va)| ib.get(k).map(|&vb| (va, vb)))
        .unzip())
}
