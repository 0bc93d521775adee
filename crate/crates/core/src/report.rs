//! Per-method summaries and the SVG comparison matrix / strip plots.
//!
//! Every output is a pure function of its inputs: values are grouped in
//! sorted order, numbers are printed with fixed precision and nothing
//! time-dependent is embedded.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::metrics::{friedman, score_matrix, Metric, MetricRecord};
use crate::saliency::RunLog;
use crate::util::{fmt_f64, stable_hash};

/// Which run-log cost the speed score is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpeedSource {
    WallTime,
    /// Target evaluations per sample; reproducible across reruns.
    Evaluations,
}

impl SpeedSource {
    fn describe(self) -> &'static str {
        match self {
            SpeedSource::WallTime => "1-minmax(log mean wall_seconds)",
            SpeedSource::Evaluations => "1-minmax(log mean evaluations)",
        }
    }
}

impl FromStr for SpeedSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wall" | "wall_time" => Ok(SpeedSource::WallTime),
            "evaluations" | "evals" => Ok(SpeedSource::Evaluations),
            _ => Err(Error::Config(format!("speed source must be wall or evaluations, got {s:?}"))),
        }
    }
}

/// Statistics of one metric for one method. `normalized` maps the mean
/// onto [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSummary {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
    pub normalized: f64,
}

impl MetricSummary {
    fn from_values(mut values: Vec<f64>, normalize: impl Fn(f64) -> f64) -> Self {
        // sorting first makes every sum independent of input order
        values.sort_by(f64::total_cmp);
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let median = if n % 2 == 1 {
            values[n / 2]
        } else {
            (values[n / 2 - 1] + values[n / 2]) / 2.0
        };
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        MetricSummary { n, mean, median, std, normalized: normalize(mean) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: String,
    pub metrics: BTreeMap<Metric, MetricSummary>,
    /// Per-sample cost statistics; `normalized` is the speed score.
    pub speed: Option<MetricSummary>,
    /// Sort key: sum of all MSFI values of the method.
    pub msfi_sum: f64,
}

/// How a metric's values map onto [0, 1] in summaries and plots.
pub fn normalization(metric: Metric) -> &'static str {
    match metric {
        Metric::Msfi | Metric::Iou => "identity",
        Metric::MiCorr => "(tau+1)/2",
        Metric::Rating => "rating/100",
    }
}

fn normalize(metric: Metric, v: f64) -> f64 {
    let x = match metric {
        Metric::Msfi | Metric::Iou => v,
        Metric::MiCorr => (v + 1.0) / 2.0,
        Metric::Rating => v / 100.0,
    };
    x.clamp(0.0, 1.0)
}

/// Groups records by method and summarizes every metric. Methods are
/// ordered by summed MSFI, highest first, then by name. Run logs whose
/// label matches a method supply its speed score.
pub fn summarize(
    records: &[MetricRecord],
    runlogs: &[RunLog],
    speed_source: SpeedSource,
) -> Result<Vec<MethodSummary>> {
    if records.is_empty() {
        return Err(Error::Stats("nothing to summarize".into()));
    }
    let mut grouped: BTreeMap<&str, BTreeMap<Metric, Vec<f64>>> = BTreeMap::new();
    for r in records {
        if r.metric == Metric::Rating && !(0.0..=100.0).contains(&r.value) {
            return Err(Error::Stats(format!(
                "rating {} of {:?} outside [0, 100]",
                r.value, r.sample_id
            )));
        }
        grouped
            .entry(&r.method)
            .or_default()
            .entry(r.metric)
            .or_default()
            .push(r.value);
    }

    let mut out = Vec::with_capacity(grouped.len());
    for (method, by_metric) in grouped {
        let metrics: BTreeMap<Metric, MetricSummary> = by_metric
            .into_iter()
            .map(|(metric, values)| {
                (metric, MetricSummary::from_values(values, |v| normalize(metric, v)))
            })
            .collect();
        let msfi = metrics.get(&Metric::Msfi).ok_or_else(|| {
            Error::Stats(format!("method {method:?} has no msfi scores to sort by"))
        })?;
        out.push(MethodSummary {
            method: method.to_string(),
            msfi_sum: msfi.mean * msfi.n as f64,
            metrics,
            speed: None,
        });
    }
    attach_speed(&mut out, runlogs, speed_source)?;
    out.sort_by(|a, b| b.msfi_sum.total_cmp(&a.msfi_sum).then(a.method.cmp(&b.method)));
    Ok(out)
}

fn attach_speed(
    summaries: &mut [MethodSummary],
    runlogs: &[RunLog],
    source: SpeedSource,
) -> Result<()> {
    let mut costs: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for log in runlogs {
        let entry = costs.entry(&log.label).or_default();
        entry.extend(log.samples.iter().map(|s| match source {
            SpeedSource::WallTime => s.wall_seconds,
            SpeedSource::Evaluations => s.evaluations as f64,
        }));
    }
    let mut stats = BTreeMap::new();
    for s in summaries.iter() {
        if let Some(c) = costs.get(s.method.as_str()).filter(|c| !c.is_empty()) {
            if c.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::Stats(format!("invalid cost in run log of {:?}", s.method)));
            }
            stats.insert(s.method.clone(), MetricSummary::from_values(c.clone(), |v| v));
        }
    }
    // a run that finished within a nanosecond would otherwise give log(0)
    let logs: BTreeMap<String, f64> = stats
        .iter()
        .map(|(m, st)| (m.clone(), st.mean.max(1e-9).ln()))
        .collect();
    let lo = logs.values().copied().fold(f64::INFINITY, f64::min);
    let hi = logs.values().copied().fold(f64::NEG_INFINITY, f64::max);
    for s in summaries.iter_mut() {
        if let Some(mut st) = stats.remove(&s.method) {
            st.normalized = if hi > lo { 1.0 - (logs[&s.method] - lo) / (hi - lo) } else { 1.0 };
            s.speed = Some(st);
        }
    }
    Ok(())
}

/// `method,metric,n,mean,median,std,normalized,normalization` rows.
pub fn write_summary_csv(
    summaries: &[MethodSummary],
    speed_source: SpeedSource,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |e: csv::Error| Error::Invariant(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["method", "metric", "n", "mean", "median", "std", "normalized", "normalization"])
        .map_err(csv_err)?;
    for s in summaries {
        let rows = s
            .metrics
            .iter()
            .map(|(m, st)| (m.name(), st, normalization(*m)))
            .chain(s.speed.iter().map(|st| ("speed", st, speed_source.describe())));
        for (name, st, how) in rows {
            w.write_record([
                s.method.as_str(),
                name,
                &st.n.to_string(),
                &fmt_f64(st.mean),
                &fmt_f64(st.median),
                &fmt_f64(st.std),
                &fmt_f64(st.normalized),
                how,
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

const CELL: f64 = 36.0;
const LABEL_W: f64 = 110.0;
const HEADER_H: f64 = 120.0;
const FILL: &str = "#1f5f8b";

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn svg_open(out: &mut String, width: f64, height: f64) {
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{width:.0}" height="{height:.0}" fill="white"/>"#);
}

/// Methods as columns, metrics (then speed) as rows. Each cell holds a
/// square whose side and opacity grow with the normalized value; a value
/// of 1 fills the cell minus 2px, a value of 0 draws nothing.
pub fn render_matrix(summaries: &[MethodSummary]) -> String {
    let mut rows: Vec<(String, Vec<Option<f64>>)> = Metric::ALL
        .iter()
        .filter(|m| summaries.iter().any(|s| s.metrics.contains_key(m)))
        .map(|m| {
            let vals = summaries.iter().map(|s| s.metrics.get(m).map(|x| x.normalized)).collect();
            (m.name().to_string(), vals)
        })
        .collect();
    if summaries.iter().any(|s| s.speed.is_some()) {
        let vals = summaries.iter().map(|s| s.speed.as_ref().map(|x| x.normalized)).collect();
        rows.push(("speed".into(), vals));
    }

    let width = LABEL_W + CELL * summaries.len() as f64 + 10.0;
    let height = HEADER_H + CELL * rows.len() as f64 + 10.0;
    let mut out = String::new();
    svg_open(&mut out, width, height);
    for (j, s) in summaries.iter().enumerate() {
        let x = LABEL_W + CELL * (j as f64 + 0.5);
        let _ = writeln!(
            out,
            r#"<text x="{x:.2}" y="{:.2}" transform="rotate(-60 {x:.2} {:.2})">{}</text>"#,
            HEADER_H - 6.0,
            HEADER_H - 6.0,
            escape(&s.method)
        );
    }
    for (i, (name, vals)) in rows.iter().enumerate() {
        let y0 = HEADER_H + CELL * i as f64;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LABEL_W - 6.0,
            y0 + CELL / 2.0 + 4.0,
            escape(name)
        );
        for (j, v) in vals.iter().enumerate() {
            let x0 = LABEL_W + CELL * j as f64;
            let _ = writeln!(
                out,
                r##"<rect x="{x0:.2}" y="{y0:.2}" width="{CELL:.2}" height="{CELL:.2}" fill="none" stroke="#dddddd"/>"##
            );
            let Some(v) = v.filter(|v| *v > 0.0) else { continue };
            let side = v * (CELL - 2.0);
            let off = (CELL - side) / 2.0;
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{side:.2}" height="{side:.2}" fill="{FILL}" fill-opacity="{:.4}"><title>{:.4}</title></rect>"#,
                x0 + off,
                y0 + off,
                v,
                v
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

const STRIP_H: f64 = 240.0;
const STRIP_COL: f64 = 70.0;

/// Strip plot of one metric's normalized per-sample values, one column per
/// method in `methods` order. Horizontal jitter is a hash of the sample id.
/// A Friedman line is added when the scores form a complete matrix.
pub fn render_strip(records: &[MetricRecord], metric: Metric, methods: &[String]) -> Result<String> {
    let mut cols: BTreeMap<&str, Vec<&MetricRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.metric == metric) {
        cols.entry(&r.method).or_default().push(r);
    }
    if cols.is_empty() {
        return Err(Error::Stats(format!("no {metric} scores to plot")));
    }
    let top = 40.0;
    let left = 40.0;
    let width = left + STRIP_COL * methods.len() as f64 + 10.0;
    let height = top + STRIP_H + 90.0;
    let mut out = String::new();
    svg_open(&mut out, width, height);
    let title = match score_matrix(records, metric).and_then(|m| friedman(&m)) {
        Ok(f) => format!("{metric} ({})  Friedman chi2={:.3} p={:.4}", normalization(metric), f.chi2, f.p_value),
        Err(_) => format!("{metric} ({})", normalization(metric)),
    };
    let _ = writeln!(out, r#"<text x="{left:.2}" y="20">{}</text>"#, escape(&title));
    let _ = writeln!(
        out,
        r##"<line x1="{left:.2}" y1="{top:.2}" x2="{left:.2}" y2="{:.2}" stroke="#888888"/>"##,
        top + STRIP_H
    );
    for t in [0.0, 0.5, 1.0] {
        let y = top + (1.0 - t) * STRIP_H;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{t:.1}</text>"#,
            left - 4.0,
            y + 4.0
        );
    }
    for (j, method) in methods.iter().enumerate() {
        let cx = left + STRIP_COL * (j as f64 + 0.5);
        let mut points = cols.get(method.as_str()).cloned().unwrap_or_default();
        points.sort_by(|a, b| a.sample_id.cmp(&b.sample_id).then(a.tag.cmp(&b.tag)));
        let mut ys = Vec::with_capacity(points.len());
        for r in &points {
            let v = normalize(metric, r.value);
            let u = stable_hash(&format!("{}/{}", r.tag, r.sample_id)) as f64 / u64::MAX as f64;
            let x = cx + (u - 0.5) * STRIP_COL * 0.6;
            let y = top + (1.0 - v) * STRIP_H;
            ys.push(v);
            let _ = writeln!(
                out,
                r#"<circle cx="{x:.2}" cy="{y:.2}" r="2" fill="{FILL}" fill-opacity="0.6"/>"#
            );
        }
        if !ys.is_empty() {
            let med = MetricSummary::from_values(ys, |v| v).median;
            let y = top + (1.0 - med) * STRIP_H;
            let _ = writeln!(
                out,
                r##"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#c0392b" stroke-width="2"/>"##,
                cx - STRIP_COL * 0.35,
                cx + STRIP_COL * 0.35
            );
        }
        let ly = top + STRIP_H + 14.0;
        let _ = writeln!(
            out,
            r#"<text x="{cx:.2}" y="{ly:.2}" transform="rotate(30 {cx:.2} {ly:.2})">{}</text>"#,
            escape(method)
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}
