//! Affine-invariant depth evaluation: per-image alignment, δ1 and AbsRel,
//! dataset aggregation, method ranking and per-category box statistics.

mod category;
mod evaluate;
mod rank;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::align_lsq;
use crate::tensor::{kernels, Tensor};

pub use category::{box_stats, category_stats, quantile, BoxStats, CategoryStats};
pub(crate) use evaluate::par_entries;
pub use evaluate::{evaluate_dataset, read_prediction, Conversion, PredictionDir, PredictionMaps, PredictionSource};
pub use rank::{average_rank, average_rank_with, round_half_up, Metric, MethodRanking, ScoreGrid, TieRule};

/// Ratio bound of the δ1 accuracy.
pub const DELTA1_THRESHOLD: f64 = 1.25;
/// Aligned predictions are clamped to at least this before ratios are taken.
pub const MIN_ALIGNED: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    Depth,
    Disparity,
}

impl Space {
    pub fn name(self) -> &'static str {
        match self {
            Space::Depth => "depth",
            Space::Disparity => "disparity",
        }
    }
}

/// A single-channel raster with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
    pub space: Space,
}

impl DepthMap {
    /// Marks non-finite values invalid, and non-positive values too in
    /// depth space.
    pub fn new(height: usize, width: usize, values: Vec<f64>, space: Space) -> Result<Self> {
        let valid = values.iter().map(|&v| v.is_finite() && (space != Space::Depth || v > 0.0)).collect();
        Self::with_mask(height, width, values, valid, space)
    }

    /// An affine-ambiguous prediction: only non-finite values are invalid,
    /// since sign and offset are fixed by alignment.
    pub fn relative(height: usize, width: usize, values: Vec<f64>, space: Space) -> Result<Self> {
        let valid = values.iter().map(|v| v.is_finite()).collect();
        Self::with_mask(height, width, values, valid, space)
    }

    /// Explicit mask; it is narrowed to finite values.
    pub fn with_mask(height: usize, width: usize, values: Vec<f64>, valid: Vec<bool>, space: Space) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::shape("depth map", format!("empty {height}×{width} raster")));
        }
        if values.len() != height * width || valid.len() != values.len() {
            return Err(Error::shape(
                "depth map",
                format!("{height}×{width} needs {} values, got {} values and {} mask entries", height * width, values.len(), valid.len()),
            ));
        }
        let valid = valid.iter().zip(&values).map(|(&m, v)| m && v.is_finite()).collect();
        Ok(DepthMap { height, width, values, valid, space })
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Values as a `1×H×W` tensor with invalid pixels zeroed.
    pub fn to_tensor(&self) -> Result<Tensor> {
        let data = self.values.iter().zip(&self.valid).map(|(&v, &ok)| if ok { v } else { 0.0 }).collect();
        Tensor::new(vec![1, self.height, self.width], data)
    }

    pub fn mask_tensor(&self) -> Result<Tensor> {
        Tensor::new(vec![1, self.height, self.width], self.valid.iter().map(|&v| f64::from(u8::from(v))).collect())
    }

    /// Reciprocal of every valid value, switching depth and disparity.
    /// Zero becomes invalid.
    pub fn reciprocal(&self) -> Result<Self> {
        let space = match self.space {
            Space::Depth => Space::Disparity,
            Space::Disparity => Space::Depth,
        };
        let values: Vec<f64> = self.values.iter().map(|v| 1.0 / v).collect();
        let valid = self.valid.iter().zip(&self.values).map(|(&ok, &v)| ok && v != 0.0).collect();
        Self::with_mask(self.height, self.width, values, valid, space)
    }

    /// Half-pixel bilinear resampling. An output pixel is valid only when
    /// every contributing input pixel is.
    pub fn resize(&self, height: usize, width: usize) -> Result<Self> {
        if (height, width) == (self.height, self.width) {
            return Ok(self.clone());
        }
        if height == 0 || width == 0 {
            return Err(Error::shape("resize", format!("target {height}×{width} is empty")));
        }
        let ty = kernels::bilinear_taps(self.height, height);
        let tx = kernels::bilinear_taps(self.width, width);
        let mut values = vec![0.0; height * width];
        let mut valid = vec![false; height * width];
        for (y, a) in ty.iter().enumerate() {
            for (x, b) in tx.iter().enumerate() {
                let taps = [
                    (a.lo, b.lo, (1.0 - a.frac) * (1.0 - b.frac)),
                    (a.lo, b.hi, (1.0 - a.frac) * b.frac),
                    (a.hi, b.lo, a.frac * (1.0 - b.frac)),
                    (a.hi, b.hi, a.frac * b.frac),
                ];
                let mut acc = 0.0;
                let mut ok = true;
                for (r, c, wgt) in taps {
                    if wgt == 0.0 {
                        continue;
                    }
                    let i = r * self.width + c;
                    ok &= self.valid[i];
                    acc += wgt * self.values[i];
                }
                values[y * width + x] = if ok { acc } else { f64::NAN };
                valid[y * width + x] = ok;
            }
        }
        Self::with_mask(height, width, values, valid, self.space)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignMode {
    /// Per-image least-squares scale and shift over the joint mask.
    LeastSquares,
    /// Use the prediction as given.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelMetrics {
    /// Fraction in `[0, 1]`.
    pub delta1: f64,
    pub absrel: f64,
    pub valid_pixels: usize,
    /// Alignment fell back to a shift because the prediction was constant.
    pub degenerate: bool,
}

pub fn compute_metrics(gt: &DepthMap, pred: &DepthMap) -> Result<PixelMetrics> {
    compute_metrics_with(gt, pred, AlignMode::LeastSquares)
}

/// δ1 and AbsRel of `pred` against `gt` over pixels valid in both with a
/// positive reference value.
pub fn compute_metrics_with(gt: &DepthMap, pred: &DepthMap, align: AlignMode) -> Result<PixelMetrics> {
    if (gt.height, gt.width) != (pred.height, pred.width) {
        return Err(Error::shape(
            "compute_metrics",
            format!("ground truth is {}×{}, prediction {}×{}", gt.height, gt.width, pred.height, pred.width),
        ));
    }
    let joint: Vec<bool> = (0..gt.values.len()).map(|i| gt.valid[i] && pred.valid[i] && gt.values[i] > 0.0).collect();
    let count = joint.iter().filter(|&&v| v).count();
    if count == 0 {
        return Err(Error::DegenerateGroundTruth("no pixel is valid in both ground truth and prediction".into()));
    }
    let (aligned, degenerate) = match align {
        AlignMode::None => (pred.values.clone(), false),
        AlignMode::LeastSquares => {
            if count < 2 {
                return Err(Error::DegenerateGroundTruth("alignment needs at least 2 jointly valid pixels".into()));
            }
            let mask = Tensor::new(vec![1, gt.height, gt.width], joint.iter().map(|&v| f64::from(u8::from(v))).collect())?;
            let zeroed = |m: &DepthMap| -> Result<Tensor> {
                let data = m.values.iter().zip(&joint).map(|(&v, &ok)| if ok { v } else { 0.0 }).collect();
                Tensor::new(vec![1, m.height, m.width], data)
            };
            let a = align_lsq(&zeroed(gt)?, &zeroed(pred)?, Some(&mask))?;
            (a.aligned.to_vec(), a.degenerate)
        }
    };
    let mut hits = 0usize;
    let mut absrel = 0.0;
    for i in (0..joint.len()).filter(|&i| joint[i]) {
        let d = gt.values[i];
        let raw = aligned[i];
        let a = raw.max(MIN_ALIGNED);
        absrel += (d - a).abs() / d;
        if raw > 0.0 && (a / d).max(d / a) < DELTA1_THRESHOLD {
            hits += 1;
        }
    }
    Ok(PixelMetrics {
        delta1: hits as f64 / count as f64,
        absrel: absrel / count as f64,
        valid_pixels: count,
        degenerate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub id: String,
    pub delta1: f64,
    pub absrel: f64,
    pub valid_pixels: usize,
    pub degenerate: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

/// Metrics of one method on one dataset. Aggregates are unweighted means
/// over the non-degenerate images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: String,
    pub dataset: String,
    pub per_image: Vec<ImageMetrics>,
    pub aggregate_delta1: f64,
    pub aggregate_absrel: f64,
}

impl MetricReport {
    pub fn from_images(method: impl Into<String>, dataset: impl Into<String>, per_image: Vec<ImageMetrics>) -> Result<Self> {
        let (method, dataset) = (method.into(), dataset.into());
        let kept: Vec<&ImageMetrics> = per_image.iter().filter(|m| !m.degenerate).collect();
        if kept.is_empty() {
            return Err(Error::invalid(format!("{method} on {dataset}: no non-degenerate image to aggregate")));
        }
        let n = kept.len() as f64;
        let aggregate_delta1 = kept.iter().map(|m| m.delta1).sum::<f64>() / n;
        let aggregate_absrel = kept.iter().map(|m| m.absrel).sum::<f64>() / n;
        Ok(MetricReport { method, dataset, per_image, aggregate_delta1, aggregate_absrel })
    }

    /// A report that carries only aggregates, e.g. numbers copied from a
    /// published table.
    pub fn summary(method: impl Into<String>, dataset: impl Into<String>, delta1: f64, absrel: f64) -> Self {
        MetricReport {
            method: method.into(),
            dataset: dataset.into(),
            per_image: Vec::new(),
            aggregate_delta1: delta1,
            aggregate_absrel: absrel,
        }
    }

    pub fn aggregate(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Delta1 => self.aggregate_delta1,
            Metric::AbsRel => self.aggregate_absrel,
        }
    }
}
