//! Procedural stand-in for a frozen diffusion backbone.
//!
//! Produces a deterministic multi-scale preimage from an RGB image using
//! fixed random projections; no learned weights are involved.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use rand_chacha::ChaCha8Rng;

use super::{CrossAttnMap, FeatureMap, PreimageStage, SelfAttnMap, REGIONS, REGION_GRID, TEXT_TOKENS};
use crate::error::{Error, Result};
use crate::tensor::{kernels, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub feature_maps: usize,
    pub feature_channels: usize,
    pub heads: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { feature_maps: 2, feature_channels: 4, heads: 2 }
    }
}

impl SynthConfig {
    fn has_self_attn(h: usize, w: usize) -> bool {
        h % REGION_GRID == 0 && w % REGION_GRID == 0
    }

    fn stage_channels(&self, h: usize, w: usize) -> usize {
        let attn = if Self::has_self_attn(h, w) { REGIONS * self.heads } else { 0 };
        self.feature_maps * self.feature_channels + attn + TEXT_TOKENS * self.heads
    }
}

/// Fusion input channels per stage, coarsest first, for an image of
/// `height×width` synthesised with `config`.
pub fn synth_layout(config: &SynthConfig, height: usize, width: usize, stages: usize) -> Result<Vec<usize>> {
    check_divisible(height, width, stages)?;
    Ok((0..stages)
        .rev()
        .map(|s| config.stage_channels(height >> s, width >> s))
        .collect())
}

fn check_divisible(height: usize, width: usize, stages: usize) -> Result<()> {
    if stages == 0 {
        return Err(Error::invalid("at least one preimage stage is required"));
    }
    let f = 1usize << (stages - 1);
    if height % f != 0 || width % f != 0 {
        return Err(Error::shape(
            "synth_preimage",
            format!("{height}×{width} is not divisible by 2^{} = {f}", stages - 1),
        ));
    }
    Ok(())
}

/// [`synth_preimage_with`] using [`SynthConfig::default`].
pub fn synth_preimage(image: &Tensor, seed: u64, stages: usize) -> Result<Vec<PreimageStage>> {
    synth_preimage_with(image, seed, stages, &SynthConfig::default())
}

/// Builds `stages` preimage stages, ordered coarsest to finest; stage `s`
/// has the image resolution divided by `2^s`.
///
/// Per stage: feature maps are `tanh` of random colour projections of an
/// average-pooled pyramid level; self-attention is a row softmax of an
/// intensity-and-position similarity kernel (only where the resolution
/// admits the 8×8 region grid); cross-attention is a softmax over distances
/// to 77 random colour prototypes.
pub fn synth_preimage_with(image: &Tensor, seed: u64, stages: usize, config: &SynthConfig) -> Result<Vec<PreimageStage>> {
    let (c, h, w) = image.chw()?;
    if c != 3 {
        return Err(Error::shape("synth_preimage", format!("expected an RGB image, got {c} channels")));
    }
    if !image.all_finite() {
        return Err(Error::NonFinite("input image".into()));
    }
    check_divisible(h, w, stages)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prototypes: Vec<[f64; 3]> = (0..TEXT_TOKENS).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();

    let mut level = image.to_vec();
    let (mut lh, mut lw) = (h, w);
    let mut out = Vec::with_capacity(stages);
    for s in 0..stages {
        if s > 0 {
            level = kernels::block_mean_pool(&level, (3, lh, lw), (lh / 2, lw / 2));
            lh /= 2;
            lw /= 2;
        }
        let mut stage = PreimageStage::new(s, lh, lw);
        for m in 0..config.feature_maps {
            stage.push_feature(FeatureMap::new(project_features(&level, lh, lw, m, config.feature_channels, &mut rng)?)?)?;
        }
        if SynthConfig::has_self_attn(lh, lw) {
            for head in 0..config.heads {
                let spread = 0.05 * (head + 1) as f64;
                stage.push_self_attn(self_attention(&level, lh, lw, spread)?)?;
            }
        }
        for head in 0..config.heads {
            let temperature = 0.05 * (1 + 3 * head) as f64;
            stage.push_cross_attn(cross_attention(&level, lh, lw, &prototypes, temperature)?)?;
        }
        out.push(stage);
    }
    out.reverse();
    Ok(out)
}

fn project_features(
    rgb: &[f64],
    h: usize,
    w: usize,
    map: usize,
    channels: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor> {
    let plane = h * w;
    let mean: [f64; 3] = std::array::from_fn(|k| rgb[k * plane..(k + 1) * plane].iter().sum::<f64>() / plane as f64);
    let mut data = vec![0.0; channels * plane];
    for ch in 0..channels {
        let weights: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-2.0..2.0));
        let bias: f64 = rng.gen_range(-0.5..0.5);
        for p in 0..plane {
            let mut acc = bias;
            for k in 0..3 {
                // Odd maps see contrast against the level mean.
                let v = if map % 2 == 1 { rgb[k * plane + p] - mean[k] } else { rgb[k * plane + p] };
                acc += weights[k] * v;
            }
            data[ch * plane + p] = acc.tanh();
        }
    }
    Tensor::new(vec![channels, h, w], data)
}

fn softmax_row(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

fn self_attention(rgb: &[f64], h: usize, w: usize, spread: f64) -> Result<SelfAttnMap> {
    let n = h * w;
    let intensity: Vec<f64> = (0..n).map(|p| (rgb[p] + rgb[n + p] + rgb[2 * n + p]) / 3.0).collect();
    let pos = |p: usize| ((p / w) as f64 / h as f64, (p % w) as f64 / w as f64);
    let mut data = vec![0.0; n * n];
    for q in 0..n {
        let (qy, qx) = pos(q);
        let row = &mut data[q * n..(q + 1) * n];
        for (k, v) in row.iter_mut().enumerate() {
            let (ky, kx) = pos(k);
            let di = intensity[q] - intensity[k];
            let dp = (qy - ky).powi(2) + (qx - kx).powi(2);
            *v = -di * di / (0.5 * spread) - dp / spread;
        }
        softmax_row(row);
    }
    SelfAttnMap::new(Tensor::new(vec![1, h, w, n], data)?)
}

fn cross_attention(rgb: &[f64], h: usize, w: usize, prototypes: &[[f64; 3]], temperature: f64) -> Result<CrossAttnMap> {
    let n = h * w;
    let mut data = vec![0.0; n * TEXT_TOKENS];
    for p in 0..n {
        let row = &mut data[p * TEXT_TOKENS..(p + 1) * TEXT_TOKENS];
        for (v, proto) in row.iter_mut().zip(prototypes) {
            let d: f64 = (0..3).map(|k| (rgb[k * n + p] - proto[k]).powi(2)).sum();
            *v = -d / temperature;
        }
        softmax_row(row);
    }
    CrossAttnMap::new(Tensor::new(vec![1, h, w, TEXT_TOKENS], data)?)
}
