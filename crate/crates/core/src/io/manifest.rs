//! Versioned JSON description of an evaluation dataset.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::pfm::read_pfm;
use super::png16::{default_sidecar_path, read_depth_png16};
use crate::error::{Error, Result};
use crate::metrics::{DepthMap, Space};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GtFormat {
    Pfm,
    Png16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub gt: PathBuf,
    pub format: GtFormat,
    /// Png16 only; defaults to the image path with a `.json` extension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sidecar: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    /// Image whose non-zero pixels are valid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub dataset: String,
    pub space: Space,
    /// Ground-truth values above this are invalid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_cap: Option<f64>,
    pub entries: Vec<ManifestEntry>,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub root: PathBuf,
}

pub(crate) fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut pointer = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => pointer.push_str(&format!("/{index}")),
            Segment::Map { key } => pointer.push_str(&format!("/{}", key.replace('~', "~0").replace('/', "~1"))),
            Segment::Enum { variant } => pointer.push_str(&format!("/{variant}")),
            Segment::Unknown => pointer.push_str("/?"),
        }
    }
    if pointer.is_empty() {
        pointer.push('/');
    }
    pointer
}

pub(crate) fn json_error(e: serde_path_to_error::Error<serde_json::Error>) -> Error {
    Error::Schema { pointer: json_pointer(e.path()), detail: e.inner().to_string() }
}

fn schema(pointer: impl Into<String>, detail: impl Into<String>) -> Error {
    Error::Schema { pointer: pointer.into(), detail: detail.into() }
}

impl Manifest {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn sidecar_path(&self, entry: &ManifestEntry) -> PathBuf {
        match &entry.sidecar {
            Some(s) => self.resolve(s),
            None => default_sidecar_path(&self.resolve(&entry.gt)),
        }
    }

    /// Structural checks and, when `check_files` is set, file existence.
    pub fn validate(&self, check_files: bool) -> Result<()> {
        if self.format_version != MANIFEST_VERSION {
            return Err(schema(
                "/format_version",
                format!("unsupported version {}, expected {MANIFEST_VERSION}", self.format_version),
            ));
        }
        if self.dataset.trim().is_empty() {
            return Err(schema("/dataset", "dataset name is empty"));
        }
        if let Some(cap) = self.depth_cap {
            if !(cap > 0.0 && cap.is_finite()) {
                return Err(schema("/depth_cap", format!("cap must be positive, got {cap}")));
            }
        }
        if self.entries.is_empty() {
            return Err(schema("/entries", "manifest lists no images"));
        }
        let mut seen = HashSet::new();
        for (i, e) in self.entries.iter().enumerate() {
            let at = |field: &str| format!("/entries/{i}/{field}");
            if e.id.is_empty() || e.id.contains(['/', '\\']) || e.id == "." || e.id == ".." {
                return Err(schema(at("id"), format!("{:?} is not usable as a file name", e.id)));
            }
            if !seen.insert(e.id.as_str()) {
                return Err(schema(at("id"), format!("duplicate image id {:?}", e.id)));
            }
            if e.sidecar.is_some() && e.format != GtFormat::Png16 {
                return Err(schema(at("sidecar"), "sidecars apply to png16 ground truth only"));
            }
            if !check_files {
                continue;
            }
            let gt = self.resolve(&e.gt);
            if !gt.is_file() {
                return Err(schema(at("gt"), format!("file not found: {}", gt.display())));
            }
            if let Some(m) = &e.mask {
                let m = self.resolve(m);
                if !m.is_file() {
                    return Err(schema(at("mask"), format!("file not found: {}", m.display())));
                }
            }
            if e.format == GtFormat::Png16 {
                let side = self.sidecar_path(e);
                if !side.is_file() {
                    return Err(Error::MissingSidecar(side));
                }
            }
        }
        Ok(())
    }

    /// Ground truth of `entry` with mask and cap applied.
    pub fn load_gt(&self, entry: &ManifestEntry) -> Result<DepthMap> {
        let path = self.resolve(&entry.gt);
        let mut map = match entry.format {
            GtFormat::Pfm => read_pfm(&path, self.space)?,
            GtFormat::Png16 => read_depth_png16(&path, Some(&self.sidecar_path(entry)), self.space)?,
        };
        if let Some(m) = &entry.mask {
            let mask = read_mask(&self.resolve(m))?;
            if mask.len() != map.values.len() {
                return Err(Error::shape("load_gt", format!("mask of {} does not match its ground truth", entry.id)));
            }
            for (v, keep) in map.valid.iter_mut().zip(mask) {
                *v &= keep;
            }
        }
        if let Some(cap) = self.depth_cap {
            for (v, &x) in map.valid.iter_mut().zip(&map.values) {
                *v &= x <= cap;
            }
        }
        Ok(map)
    }
}

fn read_mask(path: &Path) -> Result<Vec<bool>> {
    let img = image::open(path)?;
    Ok(img.to_luma16().as_raw().iter().map(|&v| v != 0).collect())
}

pub fn parse_manifest(text: &str, root: impl Into<PathBuf>) -> Result<Manifest> {
    let mut de = serde_json::Deserializer::from_str(text);
    let mut manifest: Manifest = serde_path_to_error::deserialize(&mut de).map_err(json_error)?;
    de.end().map_err(|e| schema("/", e.to_string()))?;
    manifest.root = root.into();
    Ok(manifest)
}

/// Parses and validates a manifest, resolving relative paths against its
/// directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let manifest = parse_manifest(&text, root)?;
    manifest.validate(true)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"format_version":1,"dataset":"toy","space":"depth",
        "entries":[{"id":"a","gt":"a.pfm","format":"pfm"}]}"#;

    #[test]
    fn minimal_manifest_parses() {
        let m = parse_manifest(MINIMAL, "/data").unwrap();
        m.validate(false).unwrap();
        assert_eq!(m.resolve(&m.entries[0].gt), PathBuf::from("/data/a.pfm"));
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let text = r#"{"format_version":1,"dataset":"toy","space":"depth","entries":[
            {"id":"a","gt":"a.pfm","format":"pfm"},{"id":"a","gt":"b.pfm","format":"pfm"}]}"#;
        match parse_manifest(text, "").unwrap().validate(false) {
            Err(Error::Schema { pointer, .. }) => assert_eq!(pointer, "/entries/1/id"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn schema_errors_carry_a_pointer() {
        let text = r#"{"format_version":1,"dataset":"toy","space":"depth","entries":[
            {"id":"a","gt":"a.pfm","format":"tiff"}]}"#;
        match parse_manifest(text, "") {
            Err(Error::Schema { pointer, .. }) => assert_eq!(pointer, "/entries/0/format"),
            other => panic!("{other:?}"),
        }
        let text = r#"{"format_version":1,"dataset":"toy","space":"depth","entries":[],"extra":1}"#;
        assert!(matches!(parse_manifest(text, ""), Err(Error::Schema { .. })));
        let text = r#"{"format_version":2,"dataset":"toy","space":"depth","entries":[{"id":"a","gt":"a","format":"pfm"}]}"#;
        assert!(matches!(parse_manifest(text, "").unwrap().validate(false), Err(Error::Schema { .. })));
    }
}
