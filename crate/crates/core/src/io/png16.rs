//! 16-bit grayscale PNG depth with a JSON sidecar mapping raw codes to
//! values: `value = raw·scale + offset`, `raw == invalid_value` is a hole.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

use super::manifest::json_error;
use crate::error::{Error, Result};
use crate::metrics::{DepthMap, Space};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Png16Sidecar {
    pub scale: f64,
    #[serde(default)]
    pub offset: f64,
    #[serde(default)]
    pub invalid_value: Option<u16>,
}

/// `depth.png` → `depth.json`.
pub fn default_sidecar_path(image: &Path) -> PathBuf {
    image.with_extension("json")
}

pub fn read_sidecar(path: &Path) -> Result<Png16Sidecar> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::MissingSidecar(path.to_path_buf())),
        Err(e) => return Err(Error::io(format!("reading {}", path.display()), e)),
    };
    let mut de = serde_json::Deserializer::from_str(&text);
    let sidecar: Png16Sidecar = serde_path_to_error::deserialize(&mut de).map_err(json_error)?;
    if !(sidecar.scale.is_finite() && sidecar.scale != 0.0 && sidecar.offset.is_finite()) {
        return Err(Error::Schema { pointer: "/scale".into(), detail: "scale must be finite and non-zero, offset finite".into() });
    }
    Ok(sidecar)
}

/// Reads `path` using the sidecar at `sidecar`, or next to the image when
/// `None`.
pub fn read_depth_png16(path: impl AsRef<Path>, sidecar: Option<&Path>, space: Space) -> Result<DepthMap> {
    let path = path.as_ref();
    let sidecar_path = sidecar.map(Path::to_path_buf).unwrap_or_else(|| default_sidecar_path(path));
    let sidecar = read_sidecar(&sidecar_path)?;
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_depth_png16(&bytes, &sidecar, space).map_err(|e| match e {
        Error::Unsupported { detail, .. } => Error::Unsupported { path: path.to_path_buf(), detail },
        other => other,
    })
}

pub fn decode_depth_png16(bytes: &[u8], sidecar: &Png16Sidecar, space: Space) -> Result<DepthMap> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?;
    let DynamicImage::ImageLuma16(buf) = img else {
        return Err(Error::Unsupported {
            path: PathBuf::new(),
            detail: format!("expected 16-bit single-channel PNG, found {:?}", img.color()),
        });
    };
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let mut values = Vec::with_capacity(w * h);
    let mut valid = Vec::with_capacity(w * h);
    for &raw in buf.as_raw() {
        let hole = sidecar.invalid_value == Some(raw);
        let v = if hole { f64::NAN } else { f64::from(raw) * sidecar.scale + sidecar.offset };
        values.push(v);
        valid.push(!hole && (space != Space::Depth || v > 0.0));
    }
    DepthMap::with_mask(h, w, values, valid, space)
}

/// Quantises `map` with `sidecar`; holes and out-of-range codes are
/// written as the invalid code, which must be set.
pub fn encode_depth_png16(map: &DepthMap, sidecar: &Png16Sidecar) -> Result<Vec<u8>> {
    let invalid = sidecar.invalid_value;
    let mut raw = Vec::with_capacity(map.values.len());
    for (&v, &ok) in map.values.iter().zip(&map.valid) {
        let code = ((v - sidecar.offset) / sidecar.scale).round();
        let code = if ok && (0.0..=65535.0).contains(&code) && Some(code as u16) != invalid {
            code as u16
        } else {
            invalid.ok_or_else(|| Error::invalid(format!("value {v} cannot be encoded and the sidecar has no invalid code")))?
        };
        raw.push(code);
    }
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(map.width as u32, map.height as u32, raw)
        .ok_or_else(|| Error::shape("encode_depth_png16", "buffer size"))?;
    let mut out = std::io::Cursor::new(Vec::new());
    DynamicImage::ImageLuma16(buf).write_to(&mut out, image::ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// Writes the PNG and its sidecar next to it.
pub fn write_depth_png16(map: &DepthMap, path: impl AsRef<Path>, sidecar: &Png16Sidecar) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_depth_png16(map, sidecar)?).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    let json = serde_json::to_string_pretty(sidecar)?;
    let side = default_sidecar_path(path);
    fs::write(&side, json).map_err(|e| Error::io(format!("writing {}", side.display()), e))
}
