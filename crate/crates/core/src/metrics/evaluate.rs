use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{compute_metrics, DepthMap, ImageMetrics, MetricReport, Space};
use crate::error::{Error, Result};
use crate::io::manifest::{Manifest, ManifestEntry};
use crate::io::pfm::read_pfm;

/// Explicit change of space applied to predictions before evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Conversion {
    DepthToDisparity,
    DisparityToDepth,
}

impl Conversion {
    pub fn source_space(self) -> Space {
        match self {
            Conversion::DepthToDisparity => Space::Depth,
            Conversion::DisparityToDepth => Space::Disparity,
        }
    }

    pub fn target_space(self) -> Space {
        match self {
            Conversion::DepthToDisparity => Space::Disparity,
            Conversion::DisparityToDepth => Space::Depth,
        }
    }
}

/// Supplies one prediction per manifest entry.
pub trait PredictionSource: Sync {
    fn contains(&self, entry: &ManifestEntry) -> bool;

    /// The prediction in the manifest's space at the ground-truth
    /// resolution.
    fn load(&self, manifest: &Manifest, entry: &ManifestEntry, gt: &DepthMap) -> Result<DepthMap>;
}

/// A directory of `<id>.pfm` files.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionDir {
    pub dir: PathBuf,
    pub conversion: Option<Conversion>,
}

impl PredictionDir {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        PredictionDir { dir: dir.into(), conversion: None }
    }

    pub fn with_conversion(mut self, conversion: Option<Conversion>) -> Self {
        self.conversion = conversion;
        self
    }

    pub fn path_for(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.pfm"))
    }
}

/// Reads a prediction PFM. Predictions are affine-ambiguous, so only
/// non-finite values are treated as invalid.
pub fn read_prediction(path: &Path, space: Space) -> Result<DepthMap> {
    let m = read_pfm(path, space)?;
    DepthMap::relative(m.height, m.width, m.values, space)
}

impl PredictionSource for PredictionDir {
    fn contains(&self, entry: &ManifestEntry) -> bool {
        self.path_for(&entry.id).is_file()
    }

    fn load(&self, manifest: &Manifest, entry: &ManifestEntry, gt: &DepthMap) -> Result<DepthMap> {
        let mut pred = match self.conversion {
            None => read_prediction(&self.path_for(&entry.id), manifest.space)?,
            Some(c) => {
                if c.target_space() != manifest.space {
                    return Err(Error::invalid(format!(
                        "conversion to {} does not match the manifest's {} space",
                        c.target_space().name(),
                        manifest.space.name()
                    )));
                }
                read_prediction(&self.path_for(&entry.id), c.source_space())?.reciprocal()?
            }
        };
        if (pred.height, pred.width) != (gt.height, gt.width) {
            pred = pred.resize(gt.height, gt.width)?;
        }
        Ok(pred)
    }
}

/// Predictions held in memory, keyed by image id and already in the
/// manifest's space.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictionMaps(pub BTreeMap<String, DepthMap>);

impl PredictionSource for PredictionMaps {
    fn contains(&self, entry: &ManifestEntry) -> bool {
        self.0.contains_key(&entry.id)
    }

    fn load(&self, manifest: &Manifest, entry: &ManifestEntry, gt: &DepthMap) -> Result<DepthMap> {
        let pred = self.0.get(&entry.id).ok_or_else(|| Error::MissingPredictions { ids: vec![entry.id.clone()] })?;
        if pred.space != manifest.space {
            return Err(Error::invalid(format!("prediction {} is in {} space, manifest in {}", entry.id, pred.space.name(), manifest.space.name())));
        }
        pred.resize(gt.height, gt.width)
    }
}

/// Runs `f` over the manifest entries on `jobs` worker threads, returning
/// results in manifest order.
pub(crate) fn par_entries<R: Send>(
    manifest: &Manifest,
    jobs: usize,
    f: impl Fn(&ManifestEntry) -> R + Sync + Send,
) -> Result<Vec<R>> {
    if jobs <= 1 {
        return Ok(manifest.entries.iter().map(f).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start {jobs} workers: {e}")))?;
    Ok(pool.install(|| manifest.entries.par_iter().map(f).collect()))
}

/// Per-image metrics in manifest order. The result does not depend on
/// `jobs`.
pub fn evaluate_dataset(manifest: &Manifest, source: &dyn PredictionSource, method: &str, jobs: usize) -> Result<MetricReport> {
    if manifest.entries.is_empty() {
        return Err(Error::invalid(format!("manifest {} lists no images", manifest.dataset)));
    }
    let missing: Vec<String> = manifest.entries.iter().filter(|e| !source.contains(e)).map(|e| e.id.clone()).collect();
    if !missing.is_empty() {
        return Err(Error::MissingPredictions { ids: missing });
    }
    enum Outcome {
        Done(ImageMetrics),
        BadPrediction,
        Failed(Error),
    }
    let outcomes = par_entries(manifest, jobs, |entry| {
        let gt = match manifest.load_gt(entry) {
            Ok(g) => g,
            Err(e) => return Outcome::Failed(e),
        };
        let pred = match source.load(manifest, entry, &gt) {
            Ok(p) => p,
            Err(Error::InvalidArgument(msg)) => return Outcome::Failed(Error::InvalidArgument(msg)),
            Err(_) => return Outcome::BadPrediction,
        };
        match compute_metrics(&gt, &pred) {
            Ok(m) => Outcome::Done(ImageMetrics {
                id: entry.id.clone(),
                delta1: m.delta1,
                absrel: m.absrel,
                valid_pixels: m.valid_pixels,
                degenerate: m.degenerate,
                category: entry.category.clone(),
            }),
            Err(Error::DegenerateGroundTruth(d)) => Outcome::Failed(Error::DegenerateGroundTruth(format!("image {}: {d}", entry.id))),
            Err(e) => Outcome::Failed(e),
        }
    })?;
    let mut rows = Vec::with_capacity(outcomes.len());
    let mut unreadable = Vec::new();
    for (entry, outcome) in manifest.entries.iter().zip(outcomes) {
        match outcome {
            Outcome::Done(m) => rows.push(m),
            Outcome::BadPrediction => unreadable.push(entry.id.clone()),
            Outcome::Failed(e) => return Err(e),
        }
    }
    if !unreadable.is_empty() {
        return Err(Error::MissingPredictions { ids: unreadable });
    }
    MetricReport::from_images(method, manifest.dataset.clone(), rows)
}
