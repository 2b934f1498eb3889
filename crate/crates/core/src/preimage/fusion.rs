use rand::Rng;

use super::{fold_cross_attention, pool_self_attention, PreimageStage};
use crate::error::{Error, Result};
use crate::tensor::{ops, Scalar, Tensor};

/// Weights of one stage's fusion module: pointwise projection, SiLU,
/// pointwise projection.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams<T: Scalar = f64> {
    /// `hidden×C_in×1×1`
    pub project: Tensor<T>,
    /// `out×hidden×1×1`
    pub output: Tensor<T>,
    /// When false the SiLU is skipped, making the module linear.
    pub activation: bool,
}

impl FusionParams<f64> {
    pub fn init<R: Rng>(in_channels: usize, out_channels: usize, rng: &mut R) -> Result<Self> {
        Ok(FusionParams {
            project: crate::refiner::uniform_kernel(out_channels, in_channels, 1, rng)?,
            output: crate::refiner::uniform_kernel(out_channels, out_channels, 1, rng)?,
            activation: true,
        })
    }
}

impl<T: Scalar> FusionParams<T> {
    pub fn in_channels(&self) -> usize {
        self.project.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.output.shape()[0]
    }
}

/// Concatenation of every stage member in canonical order: raw features,
/// pooled self-attention, folded cross-attention.
pub fn stage_input<T: Scalar>(stage: &PreimageStage<T>) -> Result<Tensor<T>> {
    if stage.is_empty() {
        return Err(Error::invalid(format!("preimage stage {} has no members", stage.scale_index)));
    }
    let mut parts: Vec<Tensor<T>> = stage.features.iter().map(|f| f.data().clone()).collect();
    for m in &stage.self_attn {
        parts.push(pool_self_attention(m)?);
    }
    for m in &stage.cross_attn {
        parts.push(fold_cross_attention(m)?);
    }
    let refs: Vec<&Tensor<T>> = parts.iter().collect();
    ops::concat_channels(&refs)
}

/// Aggregates one preimage stage into `out_channels×h×w`.
pub fn fuse_stage<T: Scalar>(stage: &PreimageStage<T>, out_channels: usize, params: &FusionParams<T>) -> Result<Tensor<T>> {
    let input = stage_input(stage)?;
    fuse_input(&input, out_channels, params)
}

/// [`fuse_stage`] on an already concatenated stage input.
pub(crate) fn fuse_input<T: Scalar>(input: &Tensor<T>, out_channels: usize, params: &FusionParams<T>) -> Result<Tensor<T>> {
    let (c_in, _, _) = input.chw()?;
    if params.in_channels() != c_in {
        return Err(Error::shape(
            "fuse_stage",
            format!("stage concatenates {c_in} channels, fusion expects {}", params.in_channels()),
        ));
    }
    if params.out_channels() != out_channels {
        return Err(Error::shape(
            "fuse_stage",
            format!("requested {out_channels} output channels, fusion produces {}", params.out_channels()),
        ));
    }
    let mut x = ops::conv2d_1x1(input, &params.project)?;
    if params.activation {
        x = ops::silu(&x)?;
    }
    ops::conv2d_1x1(&x, &params.output)
}
