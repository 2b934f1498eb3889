//! File formats: PFM and 16-bit PNG depth, dataset manifests, the raster
//! container, metric reports and box-plot SVG.

pub mod container;
pub mod manifest;
pub mod pfm;
pub mod png16;
pub mod report;
pub mod svg;

pub use container::{read_container, write_container, Payload, RasterContainer, Record, Role};
pub use manifest::{load_manifest, parse_manifest, GtFormat, Manifest, ManifestEntry};
pub use pfm::{decode_pfm, encode_pfm, read_pfm, write_pfm};
pub use png16::{read_depth_png16, write_depth_png16, Png16Sidecar};
pub use report::{read_reports, report_csv, report_json, write_report, ReportFormat, RunMetadata};
pub use svg::{boxplot_svg, render_boxplot_svg};

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::preimage::{fold_cross_attention, pool_self_attention, CrossAttnMap, FeatureMap, PreimageStage, SelfAttnMap};
use crate::refiner::{init_params, RefinerConfig, RefinerParams};

/// One record per refiner weight, named as in
/// [`RefinerParams::named_tensors`].
pub fn params_to_container(params: &RefinerParams) -> Result<RasterContainer> {
    let records = params
        .named_tensors()
        .into_iter()
        .map(|(name, t)| Record::from_tensor(name, Role::Parameter, t))
        .collect::<Result<_>>()?;
    Ok(RasterContainer { records })
}

/// Rebuilds parameters for `config` from a container written by
/// [`params_to_container`].
pub fn params_from_container(config: &RefinerConfig, c: &RasterContainer) -> Result<RefinerParams> {
    let template = init_params(config, 0)?;
    let names = template.named_tensors();
    if c.records.len() != names.len() {
        return Err(Error::malformed("parameter container", format!("{} records, config needs {}", c.records.len(), names.len())));
    }
    let mut tensors = Vec::with_capacity(names.len());
    for (name, _) in &names {
        let rec = c.get(name).ok_or_else(|| Error::malformed("parameter container", format!("record {name} is missing")))?;
        tensors.push(rec.to_tensor()?);
    }
    let params = template.with_tensors(tensors)?;
    if params.tensors().iter().any(|t| !t.all_finite()) {
        return Err(Error::NonFinite("refiner parameters".into()));
    }
    Ok(params)
}

/// Records named `stage{s}/{kind}{i}` with roles per member kind.
pub fn preimage_to_container(stages: &[PreimageStage]) -> Result<RasterContainer> {
    let mut records = Vec::new();
    for st in stages {
        let s = st.scale_index;
        for (i, m) in st.features.iter().enumerate() {
            records.push(Record::from_tensor(format!("stage{s}/feature{i}"), Role::Feature, m.data())?);
        }
        for (i, m) in st.self_attn.iter().enumerate() {
            records.push(Record::from_tensor(format!("stage{s}/self{i}"), Role::SelfAttention, m.data())?);
        }
        for (i, m) in st.cross_attn.iter().enumerate() {
            records.push(Record::from_tensor(format!("stage{s}/cross{i}"), Role::CrossAttention, m.data())?);
        }
    }
    Ok(RasterContainer { records })
}

/// Groups feature and attention records by the `stage{s}/` name prefix,
/// returning stages coarsest first.
pub fn preimage_from_container(c: &RasterContainer) -> Result<Vec<PreimageStage>> {
    let mut stages: Vec<PreimageStage> = Vec::new();
    for rec in &c.records {
        let kind = match rec.role {
            Role::Feature | Role::SelfAttention | Role::CrossAttention => rec.role,
            _ => continue,
        };
        let scale = rec
            .name
            .strip_prefix("stage")
            .and_then(|rest| rest.split('/').next())
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| Error::malformed("preimage container", format!("record {} lacks a stage<N>/ prefix", rec.name)))?;
        let t = rec.to_tensor()?;
        let (h, w) = match kind {
            Role::Feature => (t.chw()?.1, t.chw()?.2),
            _ if rec.shape.len() == 4 => (rec.shape[1], rec.shape[2]),
            _ => return Err(Error::shape("preimage container", format!("{}: attention records are rank 4", rec.name))),
        };
        let idx = match stages.iter().position(|s| s.scale_index == scale) {
            Some(i) => i,
            None => {
                stages.push(PreimageStage::new(scale, h, w));
                stages.len() - 1
            }
        };
        let stage = &mut stages[idx];
        match kind {
            Role::Feature => stage.push_feature(FeatureMap::new(t)?)?,
            Role::SelfAttention => stage.push_self_attn(SelfAttnMap::new(t)?)?,
            _ => stage.push_cross_attn(CrossAttnMap::new(t)?)?,
        }
    }
    if stages.is_empty() {
        return Err(Error::malformed("preimage container", "no feature or attention records"));
    }
    stages.sort_by_key(|s| std::cmp::Reverse(s.scale_index));
    Ok(stages)
}

/// Replaces every attention record by its pooled form: self-attention is
/// averaged over the region grid and cross-attention folded onto channels,
/// both stored as `Pooled` records under the same name and scalar width.
/// Other records are copied.
pub fn pool_container(c: &RasterContainer) -> Result<RasterContainer> {
    let mut records = Vec::with_capacity(c.records.len());
    for rec in &c.records {
        let pooled = match rec.role {
            Role::SelfAttention => pool_self_attention(&SelfAttnMap::new(rec.to_tensor()?)?)?,
            Role::CrossAttention => fold_cross_attention(&CrossAttnMap::new(rec.to_tensor()?)?)?,
            _ => {
                records.push(rec.clone());
                continue;
            }
        };
        records.push(match rec.payload {
            Payload::F32(_) => Record::from_tensor(rec.name.clone(), Role::Pooled, &pooled.cast::<f32>()?)?,
            Payload::F64(_) => Record::from_tensor(rec.name.clone(), Role::Pooled, &pooled)?,
        });
    }
    Ok(RasterContainer { records })
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))
}
