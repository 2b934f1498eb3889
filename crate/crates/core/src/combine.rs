//! Two-method combiners: pixel-wise averaging after alignment to the
//! ground truth, and the per-image oracle that keeps the better method.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::manifest::Manifest;
use crate::losses::align_lsq;
use crate::metrics::{par_entries, DepthMap, ImageMetrics, Metric, MetricReport, PredictionMaps, PredictionSource};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Average,
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Choice {
    A,
    B,
}

/// Least-squares scale and shift of `pred` onto `reference` over pixels
/// valid in both, applied to every valid pixel of `pred`. Also returns the
/// degeneracy flag of the fit.
pub fn align_to_reference(pred: &DepthMap, reference: &DepthMap) -> Result<(DepthMap, bool)> {
    if (pred.height, pred.width) != (reference.height, reference.width) {
        return Err(Error::shape(
            "align_to_reference",
            format!("prediction {}×{}, reference {}×{}", pred.height, pred.width, reference.height, reference.width),
        ));
    }
    let joint: Vec<bool> = (0..pred.values.len()).map(|i| pred.valid[i] && reference.valid[i]).collect();
    let shape = vec![1, pred.height, pred.width];
    let zeroed = |m: &DepthMap| -> Result<Tensor> {
        Tensor::new(shape.clone(), m.values.iter().zip(&joint).map(|(&v, &ok)| if ok { v } else { 0.0 }).collect())
    };
    let mask = Tensor::new(shape.clone(), joint.iter().map(|&v| f64::from(u8::from(v))).collect())?;
    let fit = align_lsq(&zeroed(reference)?, &zeroed(pred)?, Some(&mask))?;
    let (s, t) = (fit.scale_value(), fit.shift_value());
    let values = pred.values.iter().zip(&pred.valid).map(|(&v, &ok)| if ok { s * v + t } else { f64::NAN }).collect();
    Ok((DepthMap::with_mask(pred.height, pred.width, values, pred.valid.clone(), reference.space)?, fit.degenerate))
}

/// Element-wise mean of two maps already aligned to `reference`; valid
/// where both inputs are.
pub fn pixel_average(a: &DepthMap, b: &DepthMap, reference: &DepthMap) -> Result<DepthMap> {
    for (name, m) in [("a", a), ("b", b)] {
        if (m.height, m.width) != (reference.height, reference.width) {
            return Err(Error::shape(
                "pixel_average",
                format!("map {name} is {}×{}, reference {}×{}", m.height, m.width, reference.height, reference.width),
            ));
        }
    }
    let valid: Vec<bool> = a.valid.iter().zip(&b.valid).map(|(&x, &y)| x && y).collect();
    if !valid.iter().any(|&v| v) {
        return Err(Error::invalid("pixel_average: the two validity masks are disjoint"));
    }
    let values = (0..valid.len()).map(|i| if valid[i] { 0.5 * (a.values[i] + b.values[i]) } else { f64::NAN }).collect();
    DepthMap::with_mask(a.height, a.width, values, valid, reference.space)
}

/// Averages two prediction sources over a manifest: each prediction is
/// aligned to its ground truth, then the two are averaged. Maps are keyed
/// by image id.
pub fn average_dataset(manifest: &Manifest, a: &dyn PredictionSource, b: &dyn PredictionSource, jobs: usize) -> Result<PredictionMaps> {
    let mut missing: Vec<String> = Vec::new();
    for e in &manifest.entries {
        if !a.contains(e) || !b.contains(e) {
            missing.push(e.id.clone());
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingPredictions { ids: missing });
    }
    let maps = par_entries(manifest, jobs, |entry| -> Result<DepthMap> {
        let gt = manifest.load_gt(entry)?;
        let (pa, _) = align_to_reference(&a.load(manifest, entry, &gt)?, &gt)?;
        let (pb, _) = align_to_reference(&b.load(manifest, entry, &gt)?, &gt)?;
        pixel_average(&pa, &pb, &gt).map_err(|e| Error::invalid(format!("image {}: {e}", entry.id)))
    })?;
    let mut out = BTreeMap::new();
    for (entry, m) in manifest.entries.iter().zip(maps) {
        out.insert(entry.id.clone(), m?);
    }
    Ok(PredictionMaps(out))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleResult {
    pub criterion: Metric,
    pub report: MetricReport,
    /// Selection percentages.
    pub fraction_a: f64,
    pub fraction_b: f64,
    pub choices: Vec<Choice>,
    /// Images where both methods scored equally; these went to `a`.
    pub ties: Vec<String>,
}

/// Per image, keeps the metrics of whichever method is better on
/// `criterion`. A degenerate image loses to a non-degenerate one.
pub fn image_oracle(a: &MetricReport, b: &MetricReport, criterion: Metric) -> Result<OracleResult> {
    if a.dataset != b.dataset {
        return Err(Error::invalid(format!("oracle inputs cover different datasets: {} and {}", a.dataset, b.dataset)));
    }
    if a.per_image.is_empty() || b.per_image.is_empty() {
        return Err(Error::invalid("oracle selection needs per-image rows in both reports"));
    }
    let by_id: BTreeMap<&str, &ImageMetrics> = b.per_image.iter().map(|m| (m.id.as_str(), m)).collect();
    let only_a: Vec<&str> = a.per_image.iter().map(|m| m.id.as_str()).filter(|id| !by_id.contains_key(id)).collect();
    let ids_a: std::collections::BTreeSet<&str> = a.per_image.iter().map(|m| m.id.as_str()).collect();
    let only_b: Vec<&str> = b.per_image.iter().map(|m| m.id.as_str()).filter(|id| !ids_a.contains(id)).collect();
    if !only_a.is_empty() || !only_b.is_empty() || a.per_image.len() != b.per_image.len() {
        return Err(Error::invalid(format!(
            "image sets differ: only in {}: [{}]; only in {}: [{}]",
            a.method,
            only_a.join(", "),
            b.method,
            only_b.join(", ")
        )));
    }
    let value = |m: &ImageMetrics| match criterion {
        Metric::Delta1 => m.delta1,
        Metric::AbsRel => m.absrel,
    };
    let mut rows = Vec::with_capacity(a.per_image.len());
    let mut choices = Vec::with_capacity(a.per_image.len());
    let mut ties = Vec::new();
    for ma in &a.per_image {
        let mb = by_id[ma.id.as_str()];
        let pick = match (ma.degenerate, mb.degenerate) {
            (true, false) => Choice::B,
            (false, true) => Choice::A,
            _ => {
                let (va, vb) = (value(ma), value(mb));
                if va == vb {
                    ties.push(ma.id.clone());
                    Choice::A
                } else if (va > vb) == criterion.higher_is_better() {
                    Choice::A
                } else {
                    Choice::B
                }
            }
        };
        let mut row = if pick == Choice::A { ma.clone() } else { mb.clone() };
        row.category = row.category.or_else(|| ma.category.clone()).or_else(|| mb.category.clone());
        rows.push(row);
        choices.push(pick);
    }
    let n = choices.len() as f64;
    let count_a = choices.iter().filter(|&&c| c == Choice::A).count() as f64;
    let report = MetricReport::from_images(format!("oracle({},{})", a.method, b.method), a.dataset.clone(), rows)?;
    Ok(OracleResult {
        criterion,
        report,
        fraction_a: 100.0 * count_a / n,
        fraction_b: 100.0 * (n - count_a) / n,
        choices,
        ties,
    })
}
