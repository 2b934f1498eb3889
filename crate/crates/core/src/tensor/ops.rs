//! Differentiable primitives.
//!
//! Image operations take `C×H×W` tensors. Every function records a tape
//! node when an input is on a graph and is a plain computation otherwise.

use super::graph::{record, Op};
use super::kernels::{self, lit};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// The primitive set exposed through [`primitive_forward`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PrimitiveKind {
    ConcatChannels,
    Conv2d1x1,
    Conv2d3x3Pad1,
    Silu,
    Relu,
    UpsampleBilinearX2,
    DownsampleAvgX2,
    SoftmaxChannels,
    Add,
    MulScalar(f64),
    MeanAll,
    BlockMeanPool { grid_h: usize, grid_w: usize },
}

impl PrimitiveKind {
    pub fn name(&self) -> &'static str {
        match self {
            PrimitiveKind::ConcatChannels => "concat_channels",
            PrimitiveKind::Conv2d1x1 => "conv2d_1x1",
            PrimitiveKind::Conv2d3x3Pad1 => "conv2d_3x3_pad1",
            PrimitiveKind::Silu => "silu",
            PrimitiveKind::Relu => "relu",
            PrimitiveKind::UpsampleBilinearX2 => "upsample_bilinear_x2",
            PrimitiveKind::DownsampleAvgX2 => "downsample_avg_x2",
            PrimitiveKind::SoftmaxChannels => "softmax_channels",
            PrimitiveKind::Add => "add",
            PrimitiveKind::MulScalar(_) => "mul_scalar",
            PrimitiveKind::MeanAll => "mean_all",
            PrimitiveKind::BlockMeanPool { .. } => "block_mean_pool",
        }
    }
}

/// Dispatches one primitive by kind. Convolutions take their kernel as
/// `params`; every other kind ignores it.
pub fn primitive_forward<T: Scalar>(
    kind: PrimitiveKind,
    inputs: &[&Tensor<T>],
    params: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let name = kind.name();
    let one = |inputs: &[&Tensor<T>]| -> Result<Tensor<T>> {
        match inputs {
            [x] => Ok((*x).clone()),
            _ => Err(Error::shape(name, format!("expected 1 input, got {}", inputs.len()))),
        }
    };
    let weight = || params.ok_or_else(|| Error::shape(name, "convolution requires a kernel"));
    match kind {
        PrimitiveKind::ConcatChannels => concat_channels(inputs),
        PrimitiveKind::Conv2d1x1 => conv2d_1x1(&one(inputs)?, weight()?),
        PrimitiveKind::Conv2d3x3Pad1 => conv2d_3x3(&one(inputs)?, weight()?),
        PrimitiveKind::Silu => silu(&one(inputs)?),
        PrimitiveKind::Relu => relu(&one(inputs)?),
        PrimitiveKind::UpsampleBilinearX2 => upsample_bilinear_x2(&one(inputs)?),
        PrimitiveKind::DownsampleAvgX2 => downsample_avg_x2(&one(inputs)?),
        PrimitiveKind::SoftmaxChannels => softmax_channels(&one(inputs)?),
        PrimitiveKind::Add => match inputs {
            [a, b] => add(a, b),
            _ => Err(Error::shape(name, format!("expected 2 inputs, got {}", inputs.len()))),
        },
        PrimitiveKind::MulScalar(c) => mul_scalar(&one(inputs)?, c),
        PrimitiveKind::MeanAll => mean_all(&one(inputs)?),
        PrimitiveKind::BlockMeanPool { grid_h, grid_w } => block_mean_pool(&one(inputs)?, grid_h, grid_w),
    }
}

fn image_dims<T: Scalar>(op: &'static str, x: &Tensor<T>) -> Result<(usize, usize, usize)> {
    x.chw().map_err(|_| Error::shape(op, format!("expected a C×H×W input, got {:?}", x.shape())))
}

pub fn reshape<T: Scalar>(x: &Tensor<T>, shape: impl Into<Vec<usize>>) -> Result<Tensor<T>> {
    let shape = shape.into();
    if shape.iter().product::<usize>() != x.len() || shape.contains(&0) {
        return Err(Error::shape("reshape", format!("{:?} cannot become {shape:?}", x.shape())));
    }
    record(Op::Reshape, &[x], shape, x.to_vec())
}

/// Stacks inputs along the channel axis; all must share `H×W`.
pub fn concat_channels<T: Scalar>(inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = inputs.first().ok_or_else(|| Error::shape("concat_channels", "no inputs"))?;
    let (_, h, w) = image_dims("concat_channels", first)?;
    let mut channels = 0;
    for (i, t) in inputs.iter().enumerate() {
        let (c, th, tw) = image_dims("concat_channels", t)?;
        if (th, tw) != (h, w) {
            return Err(Error::shape(
                "concat_channels",
                format!("input {i} is {th}×{tw}, expected {h}×{w}"),
            ));
        }
        channels += c;
    }
    let mut data = Vec::with_capacity(channels * h * w);
    for t in inputs {
        data.extend_from_slice(t.data());
    }
    record(Op::ConcatChannels, inputs, vec![channels, h, w], data)
}

/// Channels `start..start + len` of `x`.
pub fn slice_channels<T: Scalar>(x: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let (c, h, w) = image_dims("slice_channels", x)?;
    if len == 0 || start + len > c {
        return Err(Error::shape("slice_channels", format!("channels {start}..{} of {c}", start + len)));
    }
    let data = x.data()[start * h * w..(start + len) * h * w].to_vec();
    record(Op::SliceChannels { start }, &[x], vec![len, h, w], data)
}

fn conv2d<T: Scalar>(op: &'static str, x: &Tensor<T>, weight: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    let (c_in, h, w) = image_dims(op, x)?;
    let c_out = match *weight.shape() {
        [o, i, kh, kw] if i == c_in && kh == k && kw == k => o,
        _ => {
            return Err(Error::shape(
                op,
                format!("kernel {:?} does not fit input with {c_in} channels (expected C_out×{c_in}×{k}×{k})", weight.shape()),
            ))
        }
    };
    let data = kernels::conv2d(x.data(), (c_in, h, w), weight.data(), c_out, k);
    record(Op::Conv2d { kernel: k }, &[x, weight], vec![c_out, h, w], data)
}

/// Pointwise projection; `weight` is `C_out×C_in×1×1`.
pub fn conv2d_1x1<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>) -> Result<Tensor<T>> {
    conv2d("conv2d_1x1", x, weight, 1)
}

/// 3×3 convolution with zero padding 1; `weight` is `C_out×C_in×3×3`.
pub fn conv2d_3x3<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>) -> Result<Tensor<T>> {
    conv2d("conv2d_3x3_pad1", x, weight, 3)
}

pub fn silu<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let data = x.data().iter().map(|&v| v * kernels::sigmoid(v)).collect();
    record(Op::Silu, &[x], x.shape().to_vec(), data)
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let data = x.data().iter().map(|&v| v.max(T::zero())).collect();
    record(Op::Relu, &[x], x.shape().to_vec(), data)
}

pub fn log<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let data = x.data().iter().map(|&v| v.ln()).collect();
    record(Op::Log, &[x], x.shape().to_vec(), data)
}

/// `max(x, lo)`; the gradient is zero wherever the clamp is active.
pub fn clamp_min<T: Scalar>(x: &Tensor<T>, lo: f64) -> Result<Tensor<T>> {
    let l: T = lit(lo);
    let data = x.data().iter().map(|&v| v.max(l)).collect();
    record(Op::ClampMin(lo), &[x], x.shape().to_vec(), data)
}

/// Half-pixel-center bilinear resampling to `out_h × out_w`.
pub fn resize_bilinear<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (c, h, w) = image_dims("resize_bilinear", x)?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::shape("resize_bilinear", "output size must be positive"));
    }
    let data = kernels::resize_bilinear(x.data(), (c, h, w), (out_h, out_w));
    record(Op::ResizeBilinear, &[x], vec![c, out_h, out_w], data)
}

pub fn upsample_bilinear_x2<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, h, w) = image_dims("upsample_bilinear_x2", x)?;
    resize_bilinear(x, 2 * h, 2 * w)
}

/// 2×2 average pooling with stride 2; `H` and `W` must be even.
pub fn downsample_avg_x2<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = image_dims("downsample_avg_x2", x)?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape("downsample_avg_x2", format!("{h}×{w} is not divisible by 2")));
    }
    let data = kernels::block_mean_pool(x.data(), (c, h, w), (h / 2, w / 2));
    record(Op::DownsampleAvg2, &[x], vec![c, h / 2, w / 2], data)
}

pub fn softmax_channels<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let dims = image_dims("softmax_channels", x)?;
    let data = kernels::softmax_channels(x.data(), dims);
    record(Op::SoftmaxChannels, &[x], x.shape().to_vec(), data)
}

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn elementwise<T: Scalar>(
    op: Op,
    name: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    same_shape(name, a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    record(op, &[a, b], a.shape().to_vec(), data)
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    elementwise(Op::Add, "add", a, b, |x, y| x + y)
}

pub fn sub<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    elementwise(Op::Sub, "sub", a, b, |x, y| x - y)
}

pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    elementwise(Op::Mul, "mul", a, b, |x, y| x * y)
}

pub fn div<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    elementwise(Op::Div, "div", a, b, |x, y| x / y)
}

pub fn mul_scalar<T: Scalar>(x: &Tensor<T>, c: f64) -> Result<Tensor<T>> {
    let k: T = lit(c);
    let data = x.data().iter().map(|&v| v * k).collect();
    record(Op::MulScalar(c), &[x], x.shape().to_vec(), data)
}

pub fn add_scalar<T: Scalar>(x: &Tensor<T>, c: f64) -> Result<Tensor<T>> {
    let k: T = lit(c);
    let data = x.data().iter().map(|&v| v + k).collect();
    record(Op::AddScalar(c), &[x], x.shape().to_vec(), data)
}

fn scalar_operand<T: Scalar>(op: &'static str, s: &Tensor<T>) -> Result<T> {
    if s.len() != 1 {
        return Err(Error::shape(op, format!("expected a single-element operand, got {:?}", s.shape())));
    }
    Ok(s.data()[0])
}

/// `x · s` for a single-element tensor `s`.
pub fn scale_by<T: Scalar>(x: &Tensor<T>, s: &Tensor<T>) -> Result<Tensor<T>> {
    let k = scalar_operand("scale_by", s)?;
    let data = x.data().iter().map(|&v| v * k).collect();
    record(Op::ScaleBy, &[x, s], x.shape().to_vec(), data)
}

/// `x + s` for a single-element tensor `s`.
pub fn add_broadcast<T: Scalar>(x: &Tensor<T>, s: &Tensor<T>) -> Result<Tensor<T>> {
    let k = scalar_operand("add_broadcast", s)?;
    let data = x.data().iter().map(|&v| v + k).collect();
    record(Op::AddBroadcast, &[x, s], x.shape().to_vec(), data)
}

pub fn mean_all<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let n: T = lit(x.len() as f64);
    let total: T = x.data().iter().copied().sum();
    record(Op::MeanAll, &[x], vec![1], vec![total / n])
}

pub fn sum_all<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let total: T = x.data().iter().copied().sum();
    record(Op::SumAll, &[x], vec![1], vec![total])
}

/// Averages each cell of a `grid_h × grid_w` partition of every channel
/// plane, giving a `C×grid_h×grid_w` tensor.
pub fn block_mean_pool<T: Scalar>(x: &Tensor<T>, grid_h: usize, grid_w: usize) -> Result<Tensor<T>> {
    let (c, h, w) = image_dims("block_mean_pool", x)?;
    if grid_h == 0 || h % grid_h != 0 {
        return Err(Error::shape("block_mean_pool", format!("height {h} is not divisible by grid {grid_h}")));
    }
    if grid_w == 0 || w % grid_w != 0 {
        return Err(Error::shape("block_mean_pool", format!("width {w} is not divisible by grid {grid_w}")));
    }
    let data = kernels::block_mean_pool(x.data(), (c, h, w), (grid_h, grid_w));
    record(Op::BlockMeanPool { grid_h, grid_w }, &[x], vec![c, grid_h, grid_w], data)
}

/// `Σ_c x[c]` at every pixel, as a `1×H×W` tensor.
pub fn sum_channels<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, _, _) = image_dims("sum_channels", x)?;
    conv2d_1x1(x, &Tensor::full(vec![1, c, 1, 1], T::one())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Graph;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn silu_of_zero_is_zero_and_keeps_shape() {
        let x = Tensor::<f64>::zeros(vec![2, 3, 3]).unwrap();
        let y = silu(&x).unwrap();
        assert_eq!(y.shape(), &[2, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_pointwise_kernel_is_bit_exact() {
        let x = t(&[3, 2, 2], &[0.1, -2.5, 3.75, 1e-9, 7.0, 8.0, -9.0, 1.0 / 3.0, 2.0, 4.0, 6.0, 8.5]);
        let mut k = vec![0.0; 9];
        for i in 0..3 {
            k[i * 3 + i] = 1.0;
        }
        let y = conv2d_1x1(&x, &t(&[3, 3, 1, 1], &k)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn block_mean_pool_of_one_to_sixteen() {
        let data: Vec<f64> = (1..=16).map(f64::from).collect();
        let y = block_mean_pool(&t(&[1, 4, 4], &data), 2, 2).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert_eq!(y.data(), &[3.5, 5.5, 11.5, 13.5]);
    }

    #[test]
    fn block_grid_must_divide() {
        let x = Tensor::<f64>::zeros(vec![1, 6, 4]).unwrap();
        let err = block_mean_pool(&x, 4, 2).unwrap_err().to_string();
        assert!(err.contains("height 6"), "{err}");
    }

    #[test]
    fn shape_errors_name_the_kind() {
        let a = Tensor::<f64>::zeros(vec![1, 2, 2]).unwrap();
        let b = Tensor::<f64>::zeros(vec![1, 3, 2]).unwrap();
        let err = concat_channels(&[&a, &b]).unwrap_err().to_string();
        assert!(err.starts_with("concat_channels"), "{err}");
        let k = Tensor::<f64>::zeros(vec![1, 2, 3, 3]).unwrap();
        let err = conv2d_3x3(&a, &k).unwrap_err().to_string();
        assert!(err.starts_with("conv2d_3x3_pad1"), "{err}");
    }

    #[test]
    fn mean_gradient_is_constant_quarter() {
        let g = Graph::<f64>::new();
        let x = g.leaf(&t(&[2, 2], &[1.0, -2.0, 3.0, 4.0]));
        let grads = mean_all(&x).unwrap().backward().unwrap();
        assert_eq!(grads.get(&x).unwrap().unwrap().data(), &[0.25; 4]);
    }

    #[test]
    fn silu_gradient_at_zero_is_half_over_n() {
        let g = Graph::<f64>::new();
        let x = g.leaf(&Tensor::zeros(vec![1, 2, 2]).unwrap());
        let loss = mean_all(&silu(&x).unwrap()).unwrap();
        let grads = loss.backward().unwrap();
        assert_eq!(grads.get(&x).unwrap().unwrap().data(), &[0.125; 4]);
    }

    #[test]
    fn loss_gradient_wrt_itself_is_one() {
        let g = Graph::<f64>::new();
        let x = g.leaf(&Tensor::scalar(3.0));
        let y = mul_scalar(&x, 2.0).unwrap();
        let grads = y.backward().unwrap();
        assert_eq!(grads.get(&y).unwrap().unwrap().data(), &[1.0]);
        assert_eq!(grads.get(&x).unwrap().unwrap().data(), &[2.0]);
    }

    #[test]
    fn non_scalar_backward_is_rejected() {
        let g = Graph::<f64>::new();
        let x = g.leaf(&Tensor::zeros(vec![2]).unwrap());
        assert!(matches!(x.backward(), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn mixing_graphs_is_an_error() {
        let a = Graph::new().leaf(&Tensor::scalar(1.0));
        let b = Graph::new().leaf(&Tensor::scalar(1.0));
        assert!(matches!(add(&a, &b), Err(Error::GraphMismatch)));
    }

    #[test]
    fn constants_stay_off_graph() {
        let g = Graph::<f64>::new();
        let x = g.leaf(&Tensor::scalar(1.0));
        let c = Tensor::scalar(5.0);
        let y = mul(&x, &c).unwrap();
        assert!(y.is_on_graph());
        assert!(!add(&c, &c).unwrap().is_on_graph());
        let grads = y.backward().unwrap();
        assert_eq!(grads.get(&x).unwrap().unwrap().data(), &[5.0]);
    }

    #[test]
    fn dispatcher_matches_named_functions() {
        let x = t(&[2, 2, 2], &[0.5, -1.0, 2.0, 0.0, 1.5, -0.5, 3.0, 1.0]);
        let a = primitive_forward(PrimitiveKind::SoftmaxChannels, &[&x], None).unwrap();
        assert_eq!(a, softmax_channels(&x).unwrap());
        let err = primitive_forward(PrimitiveKind::Conv2d1x1, &[&x], None).unwrap_err();
        assert!(err.to_string().contains("kernel"));
    }
}
