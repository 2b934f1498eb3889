use serde::Serialize;

use super::{Metric, MetricReport};
use crate::error::{Error, Result};

/// Quantile by linear interpolation between order statistics at position
/// `p·(n − 1)` of the sorted sample.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoxStats {
    pub count: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    /// Most extreme values inside `[q1 − 1.5·iqr, q3 + 1.5·iqr]`.
    pub whisker_low: f64,
    pub whisker_high: f64,
    /// Indices into the input of values outside the whisker fences.
    pub outliers: Vec<usize>,
}

pub fn box_stats(values: &[f64]) -> Result<BoxStats> {
    if values.is_empty() {
        return Err(Error::invalid("box statistics need at least one value"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("box statistics input".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (q1, median, q3) = (quantile(&sorted, 0.25), quantile(&sorted, 0.5), quantile(&sorted, 0.75));
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside = |v: f64| v >= lo_fence && v <= hi_fence;
    let whisker_low = sorted.iter().copied().find(|&v| inside(v)).unwrap_or(median);
    let whisker_high = sorted.iter().rev().copied().find(|&v| inside(v)).unwrap_or(median);
    let outliers = values.iter().enumerate().filter(|(_, &v)| !inside(v)).map(|(i, _)| i).collect();
    Ok(BoxStats { count: values.len(), median, q1, q3, iqr, whisker_low, whisker_high, outliers })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CategoryStats {
    pub category: String,
    pub metric: Metric,
    #[serde(flatten)]
    pub stats: BoxStats,
    pub outlier_ids: Vec<String>,
    pub outlier_values: Vec<f64>,
}

/// Box statistics of `metric` per image category, categories sorted by
/// name. Degenerate images are left out.
pub fn category_stats(report: &MetricReport, metric: Metric) -> Result<Vec<CategoryStats>> {
    if report.per_image.is_empty() {
        return Err(Error::invalid(format!("report {} on {} has no per-image rows", report.method, report.dataset)));
    }
    let uncategorised: Vec<&str> = report.per_image.iter().filter(|m| m.category.is_none()).map(|m| m.id.as_str()).collect();
    if !uncategorised.is_empty() {
        return Err(Error::invalid(format!("images without a category: {}", uncategorised.join(", "))));
    }
    let mut names: Vec<&str> = report.per_image.iter().filter_map(|m| m.category.as_deref()).collect();
    names.sort_unstable();
    names.dedup();
    let mut out = Vec::with_capacity(names.len());
    for name in names {
        let rows: Vec<_> = report
            .per_image
            .iter()
            .filter(|m| m.category.as_deref() == Some(name) && !m.degenerate)
            .collect();
        if rows.is_empty() {
            return Err(Error::invalid(format!("category {name} has no non-degenerate image")));
        }
        let values: Vec<f64> = rows
            .iter()
            .map(|m| match metric {
                Metric::Delta1 => m.delta1,
                Metric::AbsRel => m.absrel,
            })
            .collect();
        let stats = box_stats(&values)?;
        let outlier_ids = stats.outliers.iter().map(|&i| rows[i].id.clone()).collect();
        let outlier_values = stats.outliers.iter().map(|&i| values[i]).collect();
        out.push(CategoryStats { category: name.to_string(), metric, stats, outlier_ids, outlier_values });
    }
    Ok(out)
}
