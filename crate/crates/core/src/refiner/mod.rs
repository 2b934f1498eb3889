//! Miniature preimage refiner: fused preimage stages drive a residual
//! decoder that ends in a depth head and a segmentation head.
//!
//! Two wirings share one decoder body. `Stagewise` injects every fused stage
//! at its own resolution; `Block` resizes all fused stages to the
//! second-finest resolution, projects them once and feeds the result only at
//! the decoder entry.

mod data;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preimage::{fuse_input, stage_input, synth_layout, FusionParams, PreimageStage, SynthConfig};
use crate::tensor::{ops, Graph, Scalar, Tensor};

pub use data::{synthetic_dataset, synthetic_dataset_with, Sample, SceneConfig};
pub use train::{dataset_loss, evaluate_delta1, train_toy, LossRecord, TrainOptions, TrainReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionMode {
    Stagewise,
    Block,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMode {
    /// Depth loss on the pixel-resolution head output.
    Pixel,
    /// Depth loss on a quarter-resolution readout of the pre-head activation.
    LatentSurrogate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefinerConfig {
    pub stages: usize,
    pub base_channels: usize,
    pub seg_classes: usize,
    pub injection_mode: InjectionMode,
    pub head_mode: HeadMode,
    /// Resolution of the finest preimage stage.
    pub latent_height: usize,
    pub latent_width: usize,
    /// Layout of the preimage the fusion modules expect.
    pub preimage: SynthConfig,
}

impl Default for RefinerConfig {
    fn default() -> Self {
        RefinerConfig {
            stages: 3,
            base_channels: 8,
            seg_classes: 8,
            injection_mode: InjectionMode::Stagewise,
            head_mode: HeadMode::Pixel,
            latent_height: 16,
            latent_width: 16,
            preimage: SynthConfig::default(),
        }
    }
}

impl RefinerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages < 2 {
            return Err(Error::invalid(format!("refiner needs at least 2 stages, got {}", self.stages)));
        }
        if self.base_channels < 4 {
            return Err(Error::invalid(format!("base_channels must be at least 4, got {}", self.base_channels)));
        }
        if self.seg_classes < 2 {
            return Err(Error::invalid(format!("seg_classes must be at least 2, got {}", self.seg_classes)));
        }
        self.stage_input_channels().map(|_| ())
    }

    /// Fusion input channels per stage, coarsest first.
    pub fn stage_input_channels(&self) -> Result<Vec<usize>> {
        synth_layout(&self.preimage, self.latent_height, self.latent_width, self.stages)
    }

    /// Resolution of the depth and segmentation outputs.
    pub fn output_resolution(&self) -> (usize, usize) {
        (2 * self.latent_height, 2 * self.latent_width)
    }
}

/// Fan-in scaled uniform weights in `±sqrt(1/(c_in·k·k))`, shaped
/// `c_out×c_in×k×k`.
pub fn uniform_kernel<R: Rng>(c_out: usize, c_in: usize, k: usize, rng: &mut R) -> Result<Tensor> {
    let bound = (1.0 / (c_in * k * k) as f64).sqrt();
    let data = (0..c_out * c_in * k * k).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(vec![c_out, c_in, k, k], data)
}

/// `silu(conv3(silu(conv3(x))) + skip(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResBlock<T: Scalar = f64> {
    pub conv1: Tensor<T>,
    pub conv2: Tensor<T>,
    pub skip: Tensor<T>,
}

impl<T: Scalar> ResBlock<T> {
    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = ops::silu(&ops::conv2d_3x3(x, &self.conv1)?)?;
        let y = ops::conv2d_3x3(&y, &self.conv2)?;
        ops::silu(&ops::add(&y, &ops::conv2d_1x1(x, &self.skip)?)?)
    }
}

/// `conv3(silu(conv3(x)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Head<T: Scalar = f64> {
    pub conv1: Tensor<T>,
    pub conv2: Tensor<T>,
}

impl<T: Scalar> Head<T> {
    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        ops::conv2d_3x3(&ops::silu(&ops::conv2d_3x3(x, &self.conv1)?)?, &self.conv2)
    }
}

/// All refiner weights. Per-stage vectors follow the stage list order,
/// coarsest first. No layer carries a bias.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinerParams<T: Scalar = f64> {
    pub config: RefinerConfig,
    pub fusion: Vec<FusionParams<T>>,
    pub blocks: Vec<ResBlock<T>>,
    /// Block wiring only: projection of the concatenated resized stages.
    pub block_proj: Option<Tensor<T>>,
    pub depth_head: Head<T>,
    pub seg_head: Head<T>,
}

pub fn init_params(config: &RefinerConfig, seed: u64) -> Result<RefinerParams> {
    config.validate()?;
    let b = config.base_channels;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fusion = Vec::with_capacity(config.stages);
    for c_in in config.stage_input_channels()? {
        fusion.push(FusionParams::init(c_in, b, &mut rng)?);
    }
    let mut blocks = Vec::with_capacity(config.stages);
    for _ in 0..config.stages {
        blocks.push(ResBlock {
            conv1: uniform_kernel(b, 2 * b, 3, &mut rng)?,
            conv2: uniform_kernel(b, b, 3, &mut rng)?,
            skip: uniform_kernel(b, 2 * b, 1, &mut rng)?,
        });
    }
    let block_proj = match config.injection_mode {
        InjectionMode::Block => Some(uniform_kernel(b, config.stages * b, 1, &mut rng)?),
        InjectionMode::Stagewise => None,
    };
    let mut head = |out: usize| -> Result<Head> {
        Ok(Head { conv1: uniform_kernel(b, b, 3, &mut rng)?, conv2: uniform_kernel(out, b, 3, &mut rng)? })
    };
    let depth_head = head(1)?;
    let seg_head = head(config.seg_classes)?;
    Ok(RefinerParams { config: config.clone(), fusion, blocks, block_proj, depth_head, seg_head })
}

impl<T: Scalar> RefinerParams<T> {
    /// Every weight tensor with a stable dotted name.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, f) in self.fusion.iter().enumerate() {
            out.push((format!("fusion.{i}.project"), &f.project));
            out.push((format!("fusion.{i}.output"), &f.output));
        }
        for (i, r) in self.blocks.iter().enumerate() {
            out.push((format!("block.{i}.conv1"), &r.conv1));
            out.push((format!("block.{i}.conv2"), &r.conv2));
            out.push((format!("block.{i}.skip"), &r.skip));
        }
        if let Some(p) = &self.block_proj {
            out.push(("block_proj".into(), p));
        }
        for (name, h) in [("depth_head", &self.depth_head), ("seg_head", &self.seg_head)] {
            out.push((format!("{name}.conv1"), &h.conv1));
            out.push((format!("{name}.conv2"), &h.conv2));
        }
        out
    }

    pub fn tensors(&self) -> Vec<Tensor<T>> {
        self.named_tensors().into_iter().map(|(_, t)| t.clone()).collect()
    }

    /// Copy with tensors replaced, in [`Self::named_tensors`] order.
    pub fn with_tensors(&self, tensors: Vec<Tensor<T>>) -> Result<Self> {
        let names = self.named_tensors();
        if tensors.len() != names.len() {
            return Err(Error::invalid(format!("expected {} tensors, got {}", names.len(), tensors.len())));
        }
        for ((name, old), new) in names.iter().zip(&tensors) {
            if old.shape() != new.shape() {
                return Err(Error::shape("with_tensors", format!("{name}: {:?} vs {:?}", old.shape(), new.shape())));
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("length checked");
        let fusion = self
            .fusion
            .iter()
            .map(|f| FusionParams { project: next(), output: next(), activation: f.activation })
            .collect();
        let blocks = self.blocks.iter().map(|_| ResBlock { conv1: next(), conv2: next(), skip: next() }).collect();
        let block_proj = self.block_proj.as_ref().map(|_| next());
        let depth_head = Head { conv1: next(), conv2: next() };
        let seg_head = Head { conv1: next(), conv2: next() };
        Ok(RefinerParams { config: self.config.clone(), fusion, blocks, block_proj, depth_head, seg_head })
    }

    /// Copy whose tensors are leaves of `graph`.
    pub fn attach(&self, graph: &Graph<T>) -> Self {
        let leaves = self.tensors().iter().map(|t| graph.leaf(t)).collect();
        self.with_tensors(leaves).expect("same layout")
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Weights of the residual blocks and heads, which both wirings share.
    pub fn decoder_parameter_count(&self) -> usize {
        self.named_tensors()
            .iter()
            .filter(|(n, _)| n.starts_with("block.") || n.contains("_head."))
            .map(|(_, t)| t.len())
            .sum()
    }

    pub fn cast<U: Scalar>(&self) -> Result<RefinerParams<U>> {
        let head = |h: &Head<T>| -> Result<Head<U>> { Ok(Head { conv1: h.conv1.cast()?, conv2: h.conv2.cast()? }) };
        Ok(RefinerParams {
            config: self.config.clone(),
            fusion: self
                .fusion
                .iter()
                .map(|f| Ok(FusionParams { project: f.project.cast()?, output: f.output.cast()?, activation: f.activation }))
                .collect::<Result<_>>()?,
            blocks: self
                .blocks
                .iter()
                .map(|r| Ok(ResBlock { conv1: r.conv1.cast()?, conv2: r.conv2.cast()?, skip: r.skip.cast()? }))
                .collect::<Result<_>>()?,
            block_proj: self.block_proj.as_ref().map(Tensor::cast).transpose()?,
            depth_head: head(&self.depth_head)?,
            seg_head: head(&self.seg_head)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct RefinerOutput<T: Scalar = f64> {
    /// `1×H×W`, unconstrained.
    pub depth: Tensor<T>,
    /// `C×H×W`; apply a channel softmax for class probabilities.
    pub seg_logits: Tensor<T>,
    /// Decoder activation at the finest stage resolution, before the heads.
    pub features: Tensor<T>,
}

/// Concatenated fusion inputs of a stage list, computed once so repeated
/// forward passes skip attention pooling.
pub fn stage_inputs<T: Scalar>(stages: &[PreimageStage<T>]) -> Result<Vec<Tensor<T>>> {
    stages.iter().map(stage_input).collect()
}

fn check_chain<T: Scalar>(inputs: &[Tensor<T>], params: &RefinerParams<T>) -> Result<Vec<(usize, usize)>> {
    if inputs.len() != params.fusion.len() {
        return Err(Error::invalid(format!(
            "refiner expects {} stages, got {}",
            params.fusion.len(),
            inputs.len()
        )));
    }
    let mut dims = Vec::with_capacity(inputs.len());
    for (i, x) in inputs.iter().enumerate() {
        let (_, h, w) = x.chw()?;
        if let Some(&(ph, pw)) = dims.last() {
            if (h, w) != (2 * ph, 2 * pw) {
                return Err(Error::shape(
                    "refine",
                    format!("stage {i} is {h}×{w}, expected {}×{} (twice the previous stage)", 2 * ph, 2 * pw),
                ));
            }
        }
        dims.push((h, w));
    }
    Ok(dims)
}

fn fuse_all<T: Scalar>(inputs: &[Tensor<T>], params: &RefinerParams<T>) -> Result<Vec<Tensor<T>>> {
    let b = params.config.base_channels;
    inputs.iter().zip(&params.fusion).map(|(x, f)| fuse_input(x, b, f)).collect()
}

fn heads<T: Scalar>(features: Tensor<T>, params: &RefinerParams<T>) -> Result<RefinerOutput<T>> {
    let up = ops::upsample_bilinear_x2(&features)?;
    Ok(RefinerOutput {
        depth: params.depth_head.forward(&up)?,
        seg_logits: params.seg_head.forward(&up)?,
        features,
    })
}

pub fn refine_stagewise<T: Scalar>(stages: &[PreimageStage<T>], params: &RefinerParams<T>) -> Result<RefinerOutput<T>> {
    refine_stagewise_inputs(&stage_inputs(stages)?, params)
}

/// [`refine_stagewise`] on precomputed [`stage_inputs`].
pub fn refine_stagewise_inputs<T: Scalar>(inputs: &[Tensor<T>], params: &RefinerParams<T>) -> Result<RefinerOutput<T>> {
    check_chain(inputs, params)?;
    let fused = fuse_all(inputs, params)?;
    let mut act = fused[0].clone();
    for (i, (f, block)) in fused.iter().zip(&params.blocks).enumerate() {
        if i > 0 {
            act = ops::upsample_bilinear_x2(&act)?;
        }
        act = block.forward(&ops::concat_channels(&[&act, f])?)?;
    }
    heads(act, params)
}

pub fn refine_block<T: Scalar>(stages: &[PreimageStage<T>], params: &RefinerParams<T>) -> Result<RefinerOutput<T>> {
    refine_block_inputs(&stage_inputs(stages)?, params)
}

/// Fused stages resized to the second-finest resolution and concatenated,
/// before projection.
pub fn block_input<T: Scalar>(inputs: &[Tensor<T>], params: &RefinerParams<T>) -> Result<Tensor<T>> {
    let dims = check_chain(inputs, params)?;
    if dims.len() < 2 {
        return Err(Error::invalid("block aggregation needs at least 2 stages"));
    }
    let (th, tw) = dims[dims.len() - 2];
    let resized = fuse_all(inputs, params)?
        .iter()
        .map(|f| ops::resize_bilinear(f, th, tw))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Tensor<T>> = resized.iter().collect();
    ops::concat_channels(&refs)
}

/// [`refine_block`] on precomputed [`stage_inputs`].
pub fn refine_block_inputs<T: Scalar>(inputs: &[Tensor<T>], params: &RefinerParams<T>) -> Result<RefinerOutput<T>> {
    let proj = params
        .block_proj
        .as_ref()
        .ok_or_else(|| Error::invalid("parameters were initialised for stagewise injection"))?;
    let entry = ops::conv2d_1x1(&block_input(inputs, params)?, proj)?;
    let (_, h, w) = entry.chw()?;
    let quiet = Tensor::zeros(vec![params.config.base_channels, h, w])?;
    let last = params.blocks.len() - 1;
    let mut act = entry.clone();
    for (i, block) in params.blocks[..last].iter().enumerate() {
        let injection = if i == 0 { &entry } else { &quiet };
        act = block.forward(&ops::concat_channels(&[&act, injection])?)?;
    }
    act = ops::upsample_bilinear_x2(&act)?;
    let quiet = Tensor::zeros(vec![params.config.base_channels, 2 * h, 2 * w])?;
    act = params.blocks[last].forward(&ops::concat_channels(&[&act, &quiet])?)?;
    heads(act, params)
}

/// Dispatches on the configured injection mode.
pub fn refine<T: Scalar>(inputs: &[Tensor<T>], params: &RefinerParams<T>) -> Result<RefinerOutput<T>> {
    match params.config.injection_mode {
        InjectionMode::Stagewise => refine_stagewise_inputs(inputs, params),
        InjectionMode::Block => refine_block_inputs(inputs, params),
    }
}
