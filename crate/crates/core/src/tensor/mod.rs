//! Dense channels-first tensors with tape-based reverse-mode autodiff.
//!
//! A [`Tensor`] either lives outside any graph (a constant) or carries a
//! reference to the node of a [`Graph`] that produced it. Operations in
//! [`ops`] record a node whenever at least one input is on a graph, and
//! [`Tensor::backward`] replays the tape in reverse.

mod graph;
pub(crate) mod kernels;
pub mod gradcheck;
pub mod ops;

use std::fmt;
use std::iter::Sum;
use std::sync::Arc;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

pub use graph::{Gradients, Graph};

/// Floating-point element type of a tensor.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + fmt::Debug + fmt::Display + Send + Sync + Sum + 'static
{
    /// Width in bytes, as stored in raster containers.
    const WIDTH: usize;
}

impl Scalar for f32 {
    const WIDTH: usize = 4;
}

impl Scalar for f64 {
    const WIDTH: usize = 8;
}

#[derive(Clone)]
pub(crate) struct NodeRef<T: Scalar> {
    pub(crate) graph: Graph<T>,
    pub(crate) index: usize,
}

#[derive(Clone)]
pub struct Tensor<T: Scalar = f64> {
    shape: Vec<usize>,
    data: Arc<[T]>,
    node: Option<NodeRef<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        check_shape(&shape)?;
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} holds {n} elements but {} were given", data.len()),
            ));
        }
        Ok(Tensor { shape, data: data.into(), node: None })
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Result<Self> {
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor::new(shape, vec![value; n])
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Result<Self> {
        Tensor::full(shape, T::zero())
    }

    pub fn scalar(value: T) -> Self {
        Tensor { shape: vec![1], data: vec![value].into(), node: None }
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Arc<[T]>, node: Option<NodeRef<T>>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data, node }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub(crate) fn shared_data(&self) -> Arc<[T]> {
        Arc::clone(&self.data)
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.data.to_vec()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() != 1 {
            return Err(Error::shape("item", format!("expected one element, got shape {:?}", self.shape)));
        }
        Ok(self.data[0])
    }

    pub fn is_on_graph(&self) -> bool {
        self.node.is_some()
    }

    /// Index of the producing node, if the tensor is on a graph.
    pub fn node_index(&self) -> Option<usize> {
        self.node.as_ref().map(|n| n.index)
    }

    pub fn graph(&self) -> Option<&Graph<T>> {
        self.node.as_ref().map(|n| &n.graph)
    }

    pub(crate) fn node(&self) -> Option<&NodeRef<T>> {
        self.node.as_ref()
    }

    /// Same values, cut from the graph (the stop-gradient operator).
    pub fn detach(&self) -> Self {
        Tensor { shape: self.shape.clone(), data: Arc::clone(&self.data), node: None }
    }

    /// `(C, H, W)` of a rank-3 tensor.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match *self.shape.as_slice() {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::shape("chw", format!("expected C×H×W, got {:?}", self.shape))),
        }
    }

    /// Converts element type. Only valid off-graph.
    pub fn cast<U: Scalar>(&self) -> Result<Tensor<U>> {
        if self.is_on_graph() {
            return Err(Error::invalid("cast is not differentiable; detach first"));
        }
        let data = self
            .data
            .iter()
            .map(|v| U::from(*v).ok_or_else(|| Error::NonFinite(format!("{v} not representable"))))
            .collect::<Result<Vec<U>>>()?;
        Tensor::new(self.shape.clone(), data)
    }

    /// Reorders axes of an off-graph tensor.
    pub fn permuted(&self, axes: &[usize]) -> Result<Self> {
        if self.is_on_graph() {
            return Err(Error::invalid("permute is not differentiable; detach first"));
        }
        let rank = self.shape.len();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::shape("permute", format!("{axes:?} is not a permutation of {rank} axes")));
        }
        let new_shape: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let old_strides = strides(&self.shape);
        let mut out = Vec::with_capacity(self.len());
        let mut idx = vec![0usize; rank];
        for _ in 0..self.len() {
            let src: usize = idx.iter().zip(axes).map(|(&i, &a)| i * old_strides[a]).sum();
            out.push(self.data[src]);
            for d in (0..rank).rev() {
                idx[d] += 1;
                if idx[d] < new_shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        Tensor::new(new_shape, out)
    }

    /// Reverse-mode gradients of this scalar w.r.t. every node of its graph.
    pub fn backward(&self) -> Result<Gradients<T>> {
        let node = self.node.as_ref().ok_or(Error::NotOnGraph)?;
        if self.data.len() != 1 {
            return Err(Error::NonScalarLoss(self.shape.clone()));
        }
        node.graph.backward_from(node.index)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("Tensor");
        s.field("shape", &self.shape);
        if self.data.len() <= 16 {
            s.field("data", &&self.data[..]);
        }
        s.field("node", &self.node_index()).finish()
    }
}

impl<T: Scalar> PartialEq for Tensor<T> {
    /// Value equality; graph membership is ignored.
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data[..] == other.data[..]
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::shape("tensor", format!("all dimensions must be ≥ 1, got {shape:?}")));
    }
    Ok(())
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        s[d] = s[d + 1] * shape[d + 1];
    }
    s
}
