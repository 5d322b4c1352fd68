//! Dense row-major tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable, reference-counted value. Operations on
//! tensors that require gradients record a backward rule while recording is
//! enabled (see [`no_grad`]); [`backward`] and [`grad`] walk the recorded
//! graph in reverse topological order. Backward rules are themselves written
//! with differentiable tensor operations, so passing `create_graph = true` to
//! [`grad`] yields gradients that can be differentiated again.

mod autograd;
mod conv;
mod elementwise;
pub mod gradcheck;
mod linalg;
mod optim;
mod structural;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::{DType, Scalar};

pub use autograd::{backward, enable_grad, grad, grad_enabled, no_grad, GradStore, Graph, NoGradGuard};
pub use conv::{ConvOpts, conv_output_size};
pub use optim::{Adam, AdamConfig, AdamState};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn next_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

pub(crate) type BackwardFn<T> = Box<
    dyn Fn(&[Tensor<T>], &Tensor<T>, &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> + Send + Sync,
>;

pub(crate) struct Node<T: Scalar> {
    pub(crate) name: &'static str,
    pub(crate) parents: Vec<Tensor<T>>,
    pub(crate) backward: BackwardFn<T>,
}

pub(crate) struct Inner<T: Scalar> {
    id: u64,
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
    requires_grad: bool,
    node: Option<Node<T>>,
}

impl<T: Scalar> Drop for Inner<T> {
    // Long graphs would otherwise drop recursively through their parents.
    fn drop(&mut self) {
        let Some(node) = self.node.take() else {
            return;
        };
        let mut stack = node.parents;
        while let Some(t) = stack.pop() {
            if let Ok(mut inner) = Arc::try_unwrap(t.inner) {
                if let Some(n) = inner.node.take() {
                    stack.extend(n.parents);
                }
            }
        }
    }
}

/// An n-dimensional array participating in the differentiation graph.
pub struct Tensor<T: Scalar> {
    pub(crate) inner: Arc<Inner<T>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Arc::clone(&self.inner),
        }
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let head: Vec<_> = self.data().iter().take(8).collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .field("op", &self.op_name())
            .field("data", &head)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    pub(crate) fn leaf(data: Arc<Vec<T>>, shape: Vec<usize>, requires_grad: bool) -> Self {
        debug_assert_eq!(data.len(), numel(&shape));
        Tensor {
            inner: Arc::new(Inner {
                id: next_id(),
                shape,
                data,
                requires_grad,
                node: None,
            }),
        }
    }

    /// Builds the result of an operation, recording `backward` when recording
    /// is enabled and any parent requires gradients.
    pub(crate) fn from_op<F>(
        data: Vec<T>,
        shape: Vec<usize>,
        parents: &[&Tensor<T>],
        name: &'static str,
        backward: F,
    ) -> Self
    where
        F: Fn(&[Tensor<T>], &Tensor<T>, &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>>
            + Send
            + Sync
            + 'static,
    {
        Self::from_shared_op(Arc::new(data), shape, parents, name, backward)
    }

    pub(crate) fn from_shared_op<F>(
        data: Arc<Vec<T>>,
        shape: Vec<usize>,
        parents: &[&Tensor<T>],
        name: &'static str,
        backward: F,
    ) -> Self
    where
        F: Fn(&[Tensor<T>], &Tensor<T>, &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>>
            + Send
            + Sync
            + 'static,
    {
        debug_assert_eq!(data.len(), numel(&shape));
        let track = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        let node = track.then(|| Node {
            name,
            parents: parents.iter().map(|p| (*p).clone()).collect(),
            backward: Box::new(backward),
        });
        Tensor {
            inner: Arc::new(Inner {
                id: next_id(),
                shape,
                data,
                requires_grad: track,
                node,
            }),
        }
    }

    pub fn from_vec(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        if data.len() != numel(shape) {
            return Err(Error::shape("from_vec", &[data.len()], shape));
        }
        Ok(Self::leaf(Arc::new(data), shape.to_vec(), false))
    }

    pub fn from_f64(data: &[f64], shape: &[usize]) -> Result<Self> {
        Self::from_vec(data.iter().map(|&v| T::lit(v)).collect(), shape)
    }

    pub fn scalar(v: T) -> Self {
        Self::leaf(Arc::new(vec![v]), Vec::new(), false)
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Self::leaf(Arc::new(vec![v; numel(shape)]), shape.to_vec(), false)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    /// Standard-normal entries. Draws are taken in `f64` so that `f32` and
    /// `f64` tensors built from the same generator state agree up to rounding.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Self {
        let data = (0..numel(shape))
            .map(|_| T::lit(rng.sample::<f64, _>(StandardNormal)))
            .collect();
        Self::leaf(Arc::new(data), shape.to_vec(), false)
    }

    pub fn rand_uniform<R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let data = (0..numel(shape))
            .map(|_| T::lit(rng.random_range(lo..hi)))
            .collect();
        Self::leaf(Arc::new(data), shape.to_vec(), false)
    }

    /// Returns a leaf with the same values that does (or does not) require gradients.
    pub fn requires_grad_(self, on: bool) -> Self {
        match Arc::try_unwrap(self.inner) {
            Ok(mut inner) if inner.node.is_none() => {
                Tensor {
                    inner: Arc::new(Inner {
                        id: inner.id,
                        shape: std::mem::take(&mut inner.shape),
                        data: Arc::clone(&inner.data),
                        requires_grad: on,
                        node: None,
                    }),
                }
            }
            Ok(inner) => Self::leaf(Arc::clone(&inner.data), inner.shape.clone(), on),
            Err(shared) => Self::leaf(Arc::clone(&shared.data), shared.shape.clone(), on),
        }
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Self {
        Self::leaf(Arc::clone(&self.inner.data), self.inner.shape.clone(), false)
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.inner.shape[axis]
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn dtype(&self) -> DType {
        T::DTYPE
    }

    pub fn data(&self) -> &[T] {
        &self.inner.data
    }

    pub(crate) fn shared_data(&self) -> Arc<Vec<T>> {
        Arc::clone(&self.inner.data)
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.inner.data.as_ref().clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data().iter().map(|v| v.to_f64_lossy()).collect()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(Error::shape("item", self.shape(), &[]));
        }
        Ok(self.data()[0])
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.inner.node.is_none()
    }

    pub fn op_name(&self) -> Option<&'static str> {
        self.inner.node.as_ref().map(|n| n.name)
    }

    pub(crate) fn node(&self) -> Option<&Node<T>> {
        self.inner.node.as_ref()
    }

    pub fn all_finite(&self) -> bool {
        self.data().iter().all(|v| v.is_finite())
    }

    /// Converts element type; the result is a fresh leaf.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        let data = self.data().iter().map(|v| U::lit(v.to_f64_lossy())).collect();
        Tensor::leaf(Arc::new(data), self.shape().to_vec(), false)
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> T {
        self.data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| (*a - *b).abs())
            .fold(T::zero(), T::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::<f32>::from_vec(vec![1.0, 2.0], &[3]).is_err());
        let t = Tensor::<f32>::from_vec(vec![1.0; 6], &[2, 3]).unwrap();
        assert_eq!(t.numel(), 6);
        assert_eq!(t.shape(), &[2, 3]);
    }

    #[test]
    fn deep_chain_drops_without_overflow() {
        let x = Tensor::<f32>::ones(&[4]).requires_grad_(true);
        let mut y = x.clone();
        for _ in 0..200_000 {
            y = y.add_scalar(1.0);
        }
        assert_eq!(y.data()[0], 200_001.0);
        drop(y);
    }
}
