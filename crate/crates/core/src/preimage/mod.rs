//! Preimage data model: per-resolution bundles of feature maps and
//! self-/cross-attention maps, plus the transforms that turn attention maps
//! into resolution-independent channel stacks.

mod fusion;
mod synth;

use crate::error::{Error, Result};
use crate::tensor::{kernels, ops, Scalar, Tensor};

pub(crate) use fusion::fuse_input;
pub use fusion::{fuse_stage, stage_input, FusionParams};
pub use synth::{synth_layout, synth_preimage, synth_preimage_with, SynthConfig};

/// Side length of the region grid laid over the key axis of a
/// self-attention map.
pub const REGION_GRID: usize = 8;
/// Regions per self-attention row after pooling.
pub const REGIONS: usize = REGION_GRID * REGION_GRID;
/// Text-token slots of a cross-attention map.
pub const TEXT_TOKENS: usize = 77;

const ROW_SUM_TOLERANCE: f64 = 1e-6;

fn check_rows<T: Scalar>(what: &str, data: &[T], row_len: usize) -> Result<()> {
    for (i, row) in data.chunks(row_len).enumerate() {
        let sum: f64 = row.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).sum();
        if !((sum - 1.0).abs() <= ROW_SUM_TOLERANCE) {
            return Err(Error::malformed(what, format!("row {i} sums to {sum}, expected 1")));
        }
    }
    Ok(())
}

/// `C×h×w` activations of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T: Scalar = f64> {
    data: Tensor<T>,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn new(data: Tensor<T>) -> Result<Self> {
        data.chw()?;
        if !data.all_finite() {
            return Err(Error::NonFinite("feature map".into()));
        }
        Ok(FeatureMap { data: data.detach() })
    }

    pub fn data(&self) -> &Tensor<T> {
        &self.data
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.data.shape()[1], self.data.shape()[2])
    }
}

/// `heads×h×w×(h·w)`: every query pixel holds a distribution over all key
/// pixels of the same map.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfAttnMap<T: Scalar = f64> {
    heads: usize,
    height: usize,
    width: usize,
    data: Tensor<T>,
}

impl<T: Scalar> SelfAttnMap<T> {
    pub fn new(data: Tensor<T>) -> Result<Self> {
        let (heads, height, width, keys) = match *data.shape() {
            [a, b, c, d] => (a, b, c, d),
            _ => return Err(Error::shape("self_attention", format!("expected 4 axes, got {:?}", data.shape()))),
        };
        if keys != height * width {
            return Err(Error::shape(
                "self_attention",
                format!("key axis has {keys} entries, expected h·w = {}", height * width),
            ));
        }
        check_rows("self-attention map", data.data(), keys)?;
        Ok(SelfAttnMap { heads, height, width, data: data.detach() })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &Tensor<T> {
        &self.data
    }
}

/// `heads×h×w×77`: every pixel holds a distribution over the text tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossAttnMap<T: Scalar = f64> {
    heads: usize,
    height: usize,
    width: usize,
    data: Tensor<T>,
}

impl<T: Scalar> CrossAttnMap<T> {
    pub fn new(data: Tensor<T>) -> Result<Self> {
        let (heads, height, width) = match *data.shape() {
            [a, b, c, TEXT_TOKENS] => (a, b, c),
            _ => {
                return Err(Error::shape(
                    "cross_attention",
                    format!("expected heads×h×w×{TEXT_TOKENS}, got {:?}", data.shape()),
                ))
            }
        };
        check_rows("cross-attention map", data.data(), TEXT_TOKENS)?;
        Ok(CrossAttnMap { heads, height, width, data: data.detach() })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &Tensor<T> {
        &self.data
    }
}

/// All preimage members sharing one resolution.
///
/// Member order (features, then self-attention, then cross-attention, each
/// in insertion order) fixes the channel layout seen by the fusion module.
#[derive(Debug, Clone, PartialEq)]
pub struct PreimageStage<T: Scalar = f64> {
    pub scale_index: usize,
    pub height: usize,
    pub width: usize,
    pub features: Vec<FeatureMap<T>>,
    pub self_attn: Vec<SelfAttnMap<T>>,
    pub cross_attn: Vec<CrossAttnMap<T>>,
}

impl<T: Scalar> PreimageStage<T> {
    pub fn new(scale_index: usize, height: usize, width: usize) -> Self {
        PreimageStage { scale_index, height, width, features: vec![], self_attn: vec![], cross_attn: vec![] }
    }

    fn check_resolution(&self, what: &str, res: (usize, usize)) -> Result<()> {
        if res != (self.height, self.width) {
            return Err(Error::shape(
                "preimage_stage",
                format!("{what} is {}×{}, stage is {}×{}", res.0, res.1, self.height, self.width),
            ));
        }
        Ok(())
    }

    pub fn push_feature(&mut self, m: FeatureMap<T>) -> Result<()> {
        self.check_resolution("feature map", m.resolution())?;
        self.features.push(m);
        Ok(())
    }

    pub fn push_self_attn(&mut self, m: SelfAttnMap<T>) -> Result<()> {
        self.check_resolution("self-attention map", m.resolution())?;
        self.self_attn.push(m);
        Ok(())
    }

    pub fn push_cross_attn(&mut self, m: CrossAttnMap<T>) -> Result<()> {
        self.check_resolution("cross-attention map", m.resolution())?;
        self.cross_attn.push(m);
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty() && self.self_attn.is_empty() && self.cross_attn.is_empty()
    }

    /// Channel count of the concatenated fusion input.
    pub fn fused_input_channels(&self) -> usize {
        self.features.iter().map(FeatureMap::channels).sum::<usize>()
            + self.self_attn.iter().map(|m| REGIONS * m.heads).sum::<usize>()
            + self.cross_attn.iter().map(|m| TEXT_TOKENS * m.heads).sum::<usize>()
    }

    /// Element-type conversion; values were validated at construction.
    pub fn cast<U: Scalar>(&self) -> Result<PreimageStage<U>> {
        Ok(PreimageStage {
            scale_index: self.scale_index,
            height: self.height,
            width: self.width,
            features: self.features.iter().map(|m| Ok(FeatureMap { data: m.data.cast()? })).collect::<Result<_>>()?,
            self_attn: self
                .self_attn
                .iter()
                .map(|m| Ok(SelfAttnMap { heads: m.heads, height: m.height, width: m.width, data: m.data.cast()? }))
                .collect::<Result<_>>()?,
            cross_attn: self
                .cross_attn
                .iter()
                .map(|m| Ok(CrossAttnMap { heads: m.heads, height: m.height, width: m.width, data: m.data.cast()? }))
                .collect::<Result<_>>()?,
        })
    }
}

/// Regional averaging of a self-attention map.
///
/// The key axis of every row is viewed as an `h×w` image and averaged over
/// an 8×8 grid of regions. Heads are kept apart: output channel
/// `head·64 + region` holds the pooled value, giving `(64·heads)×h×w`
/// regardless of resolution.
pub fn pool_self_attention<T: Scalar>(m: &SelfAttnMap<T>) -> Result<Tensor<T>> {
    let (h, w) = (m.height, m.width);
    if h % REGION_GRID != 0 {
        return Err(Error::shape(
            "pool_self_attention",
            format!("height {h} is not divisible by the {REGION_GRID}×{REGION_GRID} region grid"),
        ));
    }
    if w % REGION_GRID != 0 {
        return Err(Error::shape(
            "pool_self_attention",
            format!("width {w} is not divisible by the {REGION_GRID}×{REGION_GRID} region grid"),
        ));
    }
    let plane = h * w;
    let data = m.data.data();
    let mut out = vec![T::zero(); m.heads * REGIONS * plane];
    for head in 0..m.heads {
        for q in 0..plane {
            let row = &data[(head * plane + q) * plane..(head * plane + q + 1) * plane];
            let pooled = kernels::block_mean_pool(row, (1, h, w), (REGION_GRID, REGION_GRID));
            for (r, v) in pooled.into_iter().enumerate() {
                out[(head * REGIONS + r) * plane + q] = v;
            }
        }
    }
    Tensor::new(vec![m.heads * REGIONS, h, w], out)
}

/// Moves the token axis of a cross-attention map onto channels:
/// output channel `head·77 + token`.
pub fn fold_cross_attention<T: Scalar>(m: &CrossAttnMap<T>) -> Result<Tensor<T>> {
    let folded = m.data.permuted(&[0, 3, 1, 2])?;
    ops::reshape(&folded, vec![m.heads * TEXT_TOKENS, m.height, m.width])
}

/// Inverse of [`fold_cross_attention`].
pub fn unfold_cross_attention<T: Scalar>(folded: &Tensor<T>, heads: usize) -> Result<CrossAttnMap<T>> {
    let (c, h, w) = folded.chw()?;
    if heads == 0 || c != heads * TEXT_TOKENS {
        return Err(Error::shape(
            "unfold_cross_attention",
            format!("{c} channels do not split into {heads} heads of {TEXT_TOKENS} tokens"),
        ));
    }
    let split = ops::reshape(&folded.detach(), vec![heads, TEXT_TOKENS, h, w])?;
    CrossAttnMap::new(split.permuted(&[0, 2, 3, 1])?)
}
