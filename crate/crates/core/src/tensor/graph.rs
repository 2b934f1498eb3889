use std::sync::{Arc, Mutex, MutexGuard};

use super::kernels::{self, lit};
use super::{NodeRef, Scalar, Tensor};
use crate::error::{Error, Result};

/// Operation recorded on the tape, with the static attributes its backward
/// pass needs. Input values are kept in [`Saved`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Op {
    Leaf,
    Reshape,
    ConcatChannels,
    SliceChannels { start: usize },
    Conv2d { kernel: usize },
    Silu,
    Relu,
    Log,
    ClampMin(f64),
    ResizeBilinear,
    DownsampleAvg2,
    SoftmaxChannels,
    Add,
    Sub,
    Mul,
    Div,
    MulScalar(f64),
    AddScalar(f64),
    ScaleBy,
    AddBroadcast,
    MeanAll,
    SumAll,
    BlockMeanPool { grid_h: usize, grid_w: usize },
}

/// An input as seen by the node that consumed it.
pub(crate) struct Saved<T: Scalar> {
    pub parent: Option<usize>,
    pub shape: Vec<usize>,
    pub value: Arc<[T]>,
}

struct Node<T: Scalar> {
    op: Op,
    inputs: Vec<Saved<T>>,
    shape: Vec<usize>,
    value: Arc<[T]>,
}

struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

/// Append-only computation tape. Cloning shares the tape.
#[derive(Clone)]
pub struct Graph<T: Scalar = f64> {
    tape: Arc<Mutex<Tape<T>>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Graph::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { tape: Arc::new(Mutex::new(Tape { nodes: Vec::new() })) }
    }

    fn lock(&self) -> MutexGuard<'_, Tape<T>> {
        // A panic while holding the lock leaves the tape append-only and
        // consistent, so poisoning carries no information here.
        self.tape.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn len(&self) -> usize {
        self.lock().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn same(&self, other: &Graph<T>) -> bool {
        Arc::ptr_eq(&self.tape, &other.tape)
    }

    /// Registers a value as a differentiable leaf (a parameter or input).
    pub fn leaf(&self, value: &Tensor<T>) -> Tensor<T> {
        let data = value.shared_data();
        let index = self.push(Node {
            op: Op::Leaf,
            inputs: Vec::new(),
            shape: value.shape().to_vec(),
            value: Arc::clone(&data),
        });
        Tensor::from_parts(value.shape().to_vec(), data, Some(NodeRef { graph: self.clone(), index }))
    }

    fn push(&self, node: Node<T>) -> usize {
        let mut tape = self.lock();
        tape.nodes.push(node);
        tape.nodes.len() - 1
    }

    pub(crate) fn backward_from(&self, root: usize) -> Result<Gradients<T>> {
        let tape = self.lock();
        let mut grads: Vec<Option<Vec<T>>> = (0..tape.nodes.len()).map(|_| None).collect();
        grads[root] = Some(vec![T::one()]);
        for index in (0..=root).rev() {
            let Some(g) = grads[index].take() else { continue };
            let node = &tape.nodes[index];
            let input_grads = backward_node(node, &g)?;
            for (input, ig) in node.inputs.iter().zip(input_grads) {
                let (Some(parent), Some(ig)) = (input.parent, ig) else { continue };
                debug_assert!(parent < index);
                match &mut grads[parent] {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&ig) {
                            *a = *a + *b;
                        }
                    }
                    slot => *slot = Some(ig),
                }
            }
            grads[index] = Some(g);
        }
        let shapes = tape.nodes.iter().map(|n| n.shape.clone()).collect();
        Ok(Gradients { graph: self.clone(), grads, shapes })
    }
}

/// Records `op` if any input is on a graph; otherwise returns a constant.
pub(crate) fn record<T: Scalar>(
    op: Op,
    inputs: &[&Tensor<T>],
    shape: Vec<usize>,
    value: Vec<T>,
) -> Result<Tensor<T>> {
    let mut graph: Option<&Graph<T>> = None;
    for t in inputs {
        if let Some(n) = t.node() {
            match graph {
                Some(g) if !g.same(&n.graph) => return Err(Error::GraphMismatch),
                _ => graph = Some(&n.graph),
            }
        }
    }
    let value: Arc<[T]> = value.into();
    let Some(graph) = graph else {
        return Ok(Tensor::from_parts(shape, value, None));
    };
    let saved = inputs
        .iter()
        .map(|t| Saved { parent: t.node_index(), shape: t.shape().to_vec(), value: t.shared_data() })
        .collect();
    let index = graph.push(Node { op, inputs: saved, shape: shape.clone(), value: Arc::clone(&value) });
    Ok(Tensor::from_parts(shape, value, Some(NodeRef { graph: graph.clone(), index })))
}

fn chw(shape: &[usize]) -> (usize, usize, usize) {
    match *shape {
        [c, h, w] => (c, h, w),
        _ => unreachable!("recorded image op with non C×H×W shape {shape:?}"),
    }
}

fn map<T: Scalar>(a: &[T], f: impl Fn(T) -> T) -> Vec<T> {
    a.iter().map(|&v| f(v)).collect()
}

fn zip<T: Scalar>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

/// Vector-Jacobian product of one node: gradient per input.
fn backward_node<T: Scalar>(node: &Node<T>, g: &[T]) -> Result<Vec<Option<Vec<T>>>> {
    let ins = &node.inputs;
    let x = |i: usize| -> &[T] { &ins[i].value };
    let out = match node.op {
        Op::Leaf => vec![],
        Op::Reshape => vec![Some(g.to_vec())],
        Op::ConcatChannels => {
            let mut offset = 0;
            ins.iter()
                .map(|inp| {
                    let n = inp.value.len();
                    let part = g[offset..offset + n].to_vec();
                    offset += n;
                    Some(part)
                })
                .collect()
        }
        Op::SliceChannels { start } => {
            let (_, h, w) = chw(&ins[0].shape);
            let mut gx = vec![T::zero(); ins[0].value.len()];
            let off = start * h * w;
            gx[off..off + g.len()].copy_from_slice(g);
            vec![Some(gx)]
        }
        Op::Conv2d { kernel } => {
            let dims = chw(&ins[0].shape);
            let c_out = ins[1].shape[0];
            let (gx, gw) = kernels::conv2d_backward(x(0), dims, x(1), c_out, kernel, g);
            vec![Some(gx), Some(gw)]
        }
        Op::Silu => vec![Some(zip(x(0), g, |v, gv| {
            let s = kernels::sigmoid(v);
            gv * s * (T::one() + v * (T::one() - s))
        }))],
        Op::Relu => vec![Some(zip(x(0), g, |v, gv| if v > T::zero() { gv } else { T::zero() }))],
        Op::Log => vec![Some(zip(x(0), g, |v, gv| gv / v))],
        Op::ClampMin(lo) => {
            let lo: T = lit(lo);
            vec![Some(zip(x(0), g, |v, gv| if v > lo { gv } else { T::zero() }))]
        }
        Op::ResizeBilinear => {
            let dims = chw(&ins[0].shape);
            let (_, oh, ow) = chw(&node.shape);
            vec![Some(kernels::resize_bilinear_backward(g, dims, (oh, ow)))]
        }
        Op::DownsampleAvg2 => {
            let (c, h, w) = chw(&ins[0].shape);
            vec![Some(kernels::block_mean_pool_backward(g, (c, h, w), (h / 2, w / 2)))]
        }
        Op::SoftmaxChannels => {
            let dims = chw(&node.shape);
            vec![Some(kernels::softmax_channels_backward(&node.value, g, dims))]
        }
        Op::Add => vec![Some(g.to_vec()), Some(g.to_vec())],
        Op::Sub => vec![Some(g.to_vec()), Some(map(g, |v| -v))],
        Op::Mul => vec![Some(zip(g, x(1), |a, b| a * b)), Some(zip(g, x(0), |a, b| a * b))],
        Op::Div => {
            let gb = g
                .iter()
                .zip(x(0).iter().zip(x(1)))
                .map(|(&gv, (&a, &b))| -gv * a / (b * b))
                .collect();
            vec![Some(zip(g, x(1), |a, b| a / b)), Some(gb)]
        }
        Op::MulScalar(c) => {
            let c: T = lit(c);
            vec![Some(map(g, |v| v * c))]
        }
        Op::AddScalar(_) => vec![Some(g.to_vec())],
        Op::ScaleBy => {
            let s = x(1)[0];
            let gs: T = g.iter().zip(x(0)).map(|(&a, &b)| a * b).sum();
            vec![Some(map(g, |v| v * s)), Some(vec![gs])]
        }
        Op::AddBroadcast => {
            let gs: T = g.iter().copied().sum();
            vec![Some(g.to_vec()), Some(vec![gs])]
        }
        Op::MeanAll => {
            let n = ins[0].value.len();
            let v = g[0] / lit(n as f64);
            vec![Some(vec![v; n])]
        }
        Op::SumAll => vec![Some(vec![g[0]; ins[0].value.len()])],
        Op::BlockMeanPool { grid_h, grid_w } => {
            let dims = chw(&ins[0].shape);
            vec![Some(kernels::block_mean_pool_backward(g, dims, (grid_h, grid_w)))]
        }
    };
    Ok(out)
}

/// Gradients of one backward pass, indexed by node.
pub struct Gradients<T: Scalar = f64> {
    graph: Graph<T>,
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient w.r.t. `t`, or `None` when `t` does not influence the loss.
    pub fn get(&self, t: &Tensor<T>) -> Result<Option<Tensor<T>>> {
        let node = t.node().ok_or(Error::NotOnGraph)?;
        if !node.graph.same(&self.graph) {
            return Err(Error::GraphMismatch);
        }
        Ok(self.by_node(node.index))
    }

    /// Like [`get`](Self::get) but zero-filled for unreachable tensors.
    pub fn get_or_zeros(&self, t: &Tensor<T>) -> Result<Tensor<T>> {
        match self.get(t)? {
            Some(g) => Ok(g),
            None => Tensor::zeros(t.shape().to_vec()),
        }
    }

    pub fn by_node(&self, index: usize) -> Option<Tensor<T>> {
        let g = self.grads.get(index)?.as_ref()?;
        Some(Tensor::from_parts(self.shapes[index].clone(), g.clone().into(), None))
    }

    /// Number of nodes that received a gradient.
    pub fn reached(&self) -> usize {
        self.grads.iter().filter(|g| g.is_some()).count()
    }
}
