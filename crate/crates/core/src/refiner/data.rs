//! Procedural training scenes: a ground plane receding to a horizon, a far
//! backdrop above it, and a few upright boxes standing on the plane.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{stage_inputs, RefinerConfig};
use crate::error::{Error, Result};
use crate::losses::{normalize_gt, NormalizedDepth};
use crate::preimage::{synth_preimage_with, PreimageStage};
use crate::tensor::{ops, Tensor};

/// Seed of the frozen synthetic backbone; shared by every sample so all
/// preimages come from the same projections.
const BACKBONE_SEED: u64 = 0x0b5e_55ed;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    /// Upper bound on boxes per scene; at least one is always placed.
    pub max_objects: usize,
    /// Standard deviation of per-pixel colour noise.
    pub noise: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig { max_objects: 4, noise: 0.03 }
    }
}

#[derive(Debug, Clone)]
pub struct Sample {
    /// `3×H×W` in `[0, 1]`.
    pub image: Tensor,
    /// `1×H×W`, strictly positive.
    pub depth: Tensor,
    /// `C×H×W` one-hot.
    pub segmentation: Tensor,
    /// Preimage of the half-resolution image, coarsest stage first.
    pub preimage: Vec<PreimageStage>,
    /// Concatenated fusion inputs of `preimage`.
    pub inputs: Vec<Tensor>,
    /// Normalised depth at pixel and at quarter resolution.
    pub target: NormalizedDepth,
    pub target_quarter: NormalizedDepth,
}

fn palette(classes: usize) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    (0..classes).map(|_| [rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)]).collect()
}

/// Gaussian noise from two uniforms (Box-Muller).
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

struct Scene {
    depth: Vec<f64>,
    class: Vec<usize>,
}

fn compose(h: usize, w: usize, classes: usize, scene: &SceneConfig, rng: &mut ChaCha8Rng) -> Scene {
    let horizon = rng.gen_range(h / 4..h / 2);
    let ground = |y: usize| 1.0 + 10.0 / (1.0 + (y - horizon) as f64);
    let mut depth = vec![0.0; h * w];
    let mut class = vec![0; h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if y < horizon {
                depth[i] = 14.0;
            } else {
                depth[i] = ground(y);
                class[i] = 1;
            }
        }
    }
    let count = rng.gen_range(1..=scene.max_objects.max(1));
    let mut boxes: Vec<(usize, usize, usize, usize, usize)> = (0..count)
        .map(|_| {
            let bw = rng.gen_range(3..=w / 3);
            let bh = rng.gen_range(3..=h / 3);
            let foot = rng.gen_range(horizon + 2..h);
            let left = rng.gen_range(0..w - bw);
            let label = rng.gen_range(2..classes.max(3));
            (foot, left, bw, bh, label.min(classes - 1))
        })
        .collect();
    // Far boxes first so nearer ones occlude them.
    boxes.sort_by_key(|b| b.0);
    for (foot, left, bw, bh, label) in boxes {
        let d = ground(foot);
        for y in foot.saturating_sub(bh - 1)..=foot {
            for x in left..left + bw {
                depth[y * w + x] = d;
                class[y * w + x] = label;
            }
        }
    }
    Scene { depth, class }
}

/// `count` deterministic scenes at twice the latent resolution of `config`.
pub fn synthetic_dataset(config: &RefinerConfig, count: usize, seed: u64) -> Result<Vec<Sample>> {
    synthetic_dataset_with(config, count, seed, &SceneConfig::default())
}

pub fn synthetic_dataset_with(config: &RefinerConfig, count: usize, seed: u64, scene: &SceneConfig) -> Result<Vec<Sample>> {
    config.validate()?;
    if count == 0 {
        return Err(Error::invalid("dataset must contain at least one sample"));
    }
    let (h, w) = config.output_resolution();
    if h < 16 || w < 16 {
        return Err(Error::invalid(format!("scenes need at least 16×16 pixels, got {h}×{w}")));
    }
    let classes = config.seg_classes;
    let colours = palette(classes);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plane = h * w;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let Scene { depth, class } = compose(h, w, classes, scene, &mut rng);
        let mut image = vec![0.0; 3 * plane];
        let mut onehot = vec![0.0; classes * plane];
        for i in 0..plane {
            let shade = 0.45 + 0.55 * (-depth[i] / 10.0).exp();
            for k in 0..3 {
                let v = colours[class[i]][k] * shade + scene.noise * normal(&mut rng);
                image[k * plane + i] = v.clamp(0.0, 1.0);
            }
            onehot[class[i] * plane + i] = 1.0;
        }
        let image = Tensor::new(vec![3, h, w], image)?;
        let depth = Tensor::new(vec![1, h, w], depth)?;
        let latent = ops::downsample_avg_x2(&image)?;
        let preimage = synth_preimage_with(&latent, BACKBONE_SEED, config.stages, &config.preimage)?;
        let quarter = ops::downsample_avg_x2(&ops::downsample_avg_x2(&depth)?)?;
        out.push(Sample {
            inputs: stage_inputs(&preimage)?,
            target: normalize_gt(&depth, None)?,
            target_quarter: normalize_gt(&quarter, None)?,
            segmentation: Tensor::new(vec![classes, h, w], onehot)?,
            image,
            depth,
            preimage,
        });
    }
    Ok(out)
}
