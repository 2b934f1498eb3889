//! Metric reports as CSV (fixed columns) or JSON.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::manifest::{json_error, json_pointer};
use crate::error::{Error, Result};
use crate::metrics::{ImageMetrics, MetricReport};

pub const CSV_HEADER: [&str; 6] = ["method", "dataset", "image_id", "delta1", "absrel", "degenerate"];

/// Row id used when a report without per-image rows is written as CSV.
pub const AGGREGATE_ROW: &str = "aggregate";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("csv") => Ok(ReportFormat::Csv),
            Some("json") => Ok(ReportFormat::Json),
            _ => Err(Error::invalid(format!("{}: report files must end in .csv or .json", path.display()))),
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        }
    }
}

/// Describes how a report was produced. Only written on request so that
/// default outputs stay byte-identical across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub tool: String,
    pub version: String,
    pub argv: Vec<String>,
    pub unix_time: u64,
}

#[derive(Serialize, Deserialize)]
struct JsonReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    run_metadata: Option<RunMetadata>,
    #[serde(flatten)]
    report: MetricReport,
}

pub fn report_csv(reports: &[MetricReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in reports {
        if r.per_image.is_empty() {
            w.write_record([
                r.method.as_str(),
                &r.dataset,
                AGGREGATE_ROW,
                &r.aggregate_delta1.to_string(),
                &r.aggregate_absrel.to_string(),
                "false",
            ])?;
        }
        for m in &r.per_image {
            w.write_record([
                r.method.as_str(),
                &r.dataset,
                &m.id,
                &m.delta1.to_string(),
                &m.absrel.to_string(),
                if m.degenerate { "true" } else { "false" },
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::io("flushing CSV", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("CSV of UTF-8 fields"))
}

pub fn report_json(report: &MetricReport, metadata: Option<&RunMetadata>) -> Result<String> {
    let doc = JsonReport { run_metadata: metadata.cloned(), report: report.clone() };
    Ok(serde_json::to_string_pretty(&doc)? + "\n")
}

pub fn write_report(report: &MetricReport, path: impl AsRef<Path>, format: ReportFormat, metadata: Option<&RunMetadata>) -> Result<()> {
    let path = path.as_ref();
    let text = match format {
        ReportFormat::Csv => report_csv(std::slice::from_ref(report))?,
        ReportFormat::Json => report_json(report, metadata)?,
    };
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Parses CSV rows into one report per (method, dataset), in order of
/// first appearance.
pub fn parse_reports_csv(text: &str) -> Result<Vec<MetricReport>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::malformed("report CSV", format!("header {header:?}, expected {CSV_HEADER:?}")));
    }
    let mut groups: Vec<(String, String, Vec<ImageMetrics>)> = Vec::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row?;
        if row.len() != CSV_HEADER.len() {
            return Err(Error::malformed("report CSV", format!("row {} has {} fields", line + 1, row.len())));
        }
        let bad = |i: usize| Error::malformed("report CSV", format!("row {}: bad {} {:?}", line + 1, CSV_HEADER[i], &row[i]));
        let num = |i: usize| -> Result<f64> { row[i].parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| bad(i)) };
        let image = ImageMetrics {
            id: row[2].to_string(),
            delta1: num(3)?,
            absrel: num(4)?,
            valid_pixels: 0,
            degenerate: match &row[5] {
                "true" => true,
                "false" => false,
                _ => return Err(bad(5)),
            },
            category: None,
        };
        match groups.iter_mut().find(|(m, d, _)| m == &row[0] && d == &row[1]) {
            Some(g) => g.2.push(image),
            None => groups.push((row[0].to_string(), row[1].to_string(), vec![image])),
        }
    }
    if groups.is_empty() {
        return Err(Error::malformed("report CSV", "no rows"));
    }
    groups
        .into_iter()
        .map(|(m, d, rows)| match rows.as_slice() {
            [only] if only.id == AGGREGATE_ROW => Ok(MetricReport::summary(m, d, only.delta1, only.absrel)),
            _ => MetricReport::from_images(m, d, rows),
        })
        .collect()
}

/// A single report object or an array of them.
pub fn parse_reports_json(text: &str) -> Result<Vec<MetricReport>> {
    let mut de = serde_json::Deserializer::from_str(text);
    let value: serde_json::Value = serde_path_to_error::deserialize(&mut de).map_err(json_error)?;
    let docs = match value {
        serde_json::Value::Array(items) => items,
        other => vec![other],
    };
    let mut out = Vec::with_capacity(docs.len());
    for (i, doc) in docs.into_iter().enumerate() {
        let parsed: JsonReport = serde_path_to_error::deserialize(doc).map_err(|e| {
            let inner = json_pointer(e.path());
            let pointer = format!("/{i}{}", if inner == "/" { "" } else { inner.as_str() });
            Error::Schema { pointer, detail: e.into_inner().to_string() }
        })?;
        out.push(parsed.report);
    }
    Ok(out)
}

pub fn read_reports(path: impl AsRef<Path>) -> Result<Vec<MetricReport>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    match ReportFormat::from_path(path)? {
        ReportFormat::Csv => parse_reports_csv(&text),
        ReportFormat::Json => parse_reports_json(&text),
    }
}
