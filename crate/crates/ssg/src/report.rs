//! Metric reports as CSV, one row per (metric, K, constraint), with a JSON
//! mirror, plus the tables written by `analyze` and `ablate`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use ssg_core::eval::diagnostics::{EmbeddingDiagnostics, EntropyAnalysis, ErrorCategories};
use ssg_core::eval::{MetricEntry, MetricsReport};

use crate::{read_text, write_bytes, Error, Result};

pub const GC: &str = "gc";
pub const NO_GC: &str = "no_gc";

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    metric: String,
    k: usize,
    constraint: String,
    value: Option<f64>,
}

fn constraint_label(c: Option<bool>) -> &'static str {
    match c {
        Some(true) => GC,
        Some(false) => NO_GC,
        None => "",
    }
}

fn csv_error(e: impl std::fmt::Display) -> Error {
    Error::invalid(format!("csv: {e}"))
}

/// Serializes rows of any table through the `csv` writer.
pub fn to_csv<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(csv_error)?;
    String::from_utf8(bytes).map_err(csv_error)
}

pub fn report_csv(report: &MetricsReport) -> Result<String> {
    to_csv(report.entries.iter().map(|e| Row {
        metric: e.metric.clone(),
        k: e.k,
        constraint: constraint_label(e.constraint).into(),
        value: e.value,
    }))
}

pub fn parse_report_csv(text: &str) -> Result<MetricsReport> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut report = MetricsReport::default();
    for row in r.deserialize::<Row>() {
        let row = row.map_err(csv_error)?;
        let constraint = match row.constraint.as_str() {
            GC => Some(true),
            NO_GC => Some(false),
            "" => None,
            other => return Err(Error::invalid(format!("unknown constraint `{other}`"))),
        };
        report.entries.push(MetricEntry {
            metric: row.metric,
            k: row.k,
            constraint,
            value: row.value,
        });
    }
    Ok(report)
}

/// JSON mirror path: the CSV path with a `.json` extension.
pub fn json_mirror_path(csv_path: &Path) -> std::path::PathBuf {
    csv_path.with_extension("json")
}

pub fn save_report(csv_path: &Path, report: &MetricsReport) -> Result<()> {
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::invalid(e.to_string()))?;
    write_bytes(csv_path, report_csv(report)?.as_bytes())?;
    write_bytes(&json_mirror_path(csv_path), (json + "\n").as_bytes())
}

pub fn load_report(csv_path: &Path) -> Result<MetricsReport> {
    parse_report_csv(&read_text(csv_path)?)
}

/// Keeps rows whose K is in `ks` (when given) and whose constraint is
/// `gc` or absent (when given).
pub fn filter_report(report: &MetricsReport, ks: Option<&[usize]>, gc: Option<bool>) -> MetricsReport {
    MetricsReport {
        entries: report
            .entries
            .iter()
            .filter(|e| ks.is_none_or(|ks| ks.contains(&e.k)))
            .filter(|e| gc.is_none() || e.constraint.is_none() || e.constraint == gc)
            .cloned()
            .collect(),
    }
}

#[derive(Serialize)]
struct BinRow {
    bin: usize,
    lo: f64,
    hi: f64,
    count: usize,
    errors: usize,
    rate: Option<f64>,
}

pub fn entropy_histogram_csv(a: &EntropyAnalysis) -> Result<String> {
    to_csv(a.bins.iter().enumerate().map(|(bin, b)| BinRow {
        bin,
        lo: b.lo,
        hi: b.hi,
        count: b.count,
        errors: b.errors,
        rate: b.rate,
    }))
}

#[derive(Serialize)]
struct CategoryRow {
    group: &'static str,
    edges: usize,
    error_pct: Option<f64>,
}

pub fn error_table_csv(t: &ErrorCategories) -> Result<String> {
    let groups = [("both_correct", t.both_correct), ("one_correct", t.one_correct), ("both_wrong", t.both_wrong)];
    to_csv(groups.iter().zip(t.counts).map(|(&(group, error_pct), edges)| CategoryRow { group, edges, error_pct }))
}

#[derive(Serialize)]
struct CosineRow {
    class_a: usize,
    class_b: usize,
    mean_cosine: Option<f64>,
}

/// The class-pair cosine matrix in long form.
pub fn class_cosine_csv(d: &EmbeddingDiagnostics) -> Result<String> {
    let mut rows = Vec::new();
    for (a, &ca) in d.classes.iter().enumerate() {
        for (b, &cb) in d.classes.iter().enumerate() {
            rows.push(CosineRow {
                class_a: ca,
                class_b: cb,
                mean_cosine: d.matrix[a][b],
            });
        }
    }
    to_csv(rows)
}

/// Raw embeddings: `label,e0,e1,...`.
pub fn embeddings_csv(embeddings: &[Vec<f64>], labels: &[usize]) -> Result<String> {
    let dim = embeddings.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<String> = std::iter::once("label".to_string()).chain((0..dim).map(|i| format!("e{i}"))).collect();
    w.write_record(&header).map_err(csv_error)?;
    for (e, l) in embeddings.iter().zip(labels) {
        let rec: Vec<String> = std::iter::once(l.to_string()).chain(e.iter().map(|x| x.to_string())).collect();
        w.write_record(&rec).map_err(csv_error)?;
    }
    String::from_utf8(w.into_inner().map_err(csv_error)?).map_err(csv_error)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> MetricsReport {
        let mut r = MetricsReport::default();
        r.push("object_R", 1, None, Some(75.0));
        r.push("triplet_mR", 50, Some(true), Some(12.5));
        r.push("triplet_mR", 50, Some(false), None);
        r
    }

    #[test]
    fn csv_layout() {
        let text = report_csv(&report()).unwrap();
        assert_eq!(
            text,
            "metric,k,constraint,value\nobject_R,1,,75.0\ntriplet_mR,50,gc,12.5\ntriplet_mR,50,no_gc,\n"
        );
        assert_eq!(parse_report_csv(&text).unwrap(), report());
    }

    #[test]
    fn filter_keeps_unconstrained_rows() {
        let f = filter_report(&report(), Some(&[1, 50]), Some(false));
        let kept: Vec<Option<bool>> = f.entries.iter().map(|e| e.constraint).collect();
        assert_eq!(kept, [None, Some(false)]);
        assert_eq!(filter_report(&report(), Some(&[50]), None).entries.len(), 2);
    }
}
