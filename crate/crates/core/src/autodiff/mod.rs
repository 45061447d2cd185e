//! Dense reverse-mode automatic differentiation.
//!
//! Values live on a [`Tape`] as flat row-major buffers. Parameters are held
//! in a [`ParamStore`] that the tape borrows read-only; a backward pass
//! returns [`Gradients`] which the caller merges into the store. This keeps
//! forward passes shareable across threads while updates stay serial.

mod checkpoint;
mod gradcheck;
mod lstm;
mod tape;

use std::collections::HashMap;
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use thiserror::Error;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointError, Dtype};
pub use gradcheck::{grad_check, GradCheckReport};
pub use lstm::{lstm_cell, LstmParams, LstmState};
pub use tape::{backward, Tape, Var};

/// Floating-point element type: `f64` for gradient checks, `f32` for training.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    const DTYPE: Dtype;

    fn c(x: f64) -> Self {
        Self::from_f64(x).unwrap()
    }

    fn f64(self) -> f64 {
        self.to_f64().unwrap()
    }
}

impl Real for f32 {
    const DTYPE: Dtype = Dtype::F32;
}

impl Real for f64 {
    const DTYPE: Dtype = Dtype::F64;
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("{op}: index {index} out of range for shape {shape:?}")]
    OutOfRange {
        op: &'static str,
        index: usize,
        shape: Vec<usize>,
    },
    #[error("{0}: empty input")]
    Empty(&'static str),
}

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Real> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self, TensorError> {
        let size: usize = shape.iter().product();
        if size != data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "tensor",
                left: shape,
                right: vec![data.len()],
            });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(TensorError::NonFinite { op: "tensor" });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let size = shape.iter().product();
        Tensor {
            shape,
            data: vec![S::zero(); size],
        }
    }

    pub fn vector(data: Vec<S>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct Parameter<S> {
    pub name: String,
    pub value: Tensor<S>,
    pub grad: Tensor<S>,
}

/// Named collection of learnable tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<S> {
    params: Vec<Parameter<S>>,
    index: HashMap<String, ParamId>,
}

impl<S: Real> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Registers a tensor. Panics on a duplicate name.
    pub fn add(&mut self, name: &str, value: Tensor<S>) -> ParamId {
        assert!(!self.index.contains_key(name), "duplicate parameter {name}");
        let id = ParamId(self.params.len());
        let grad = Tensor::zeros(value.shape.clone());
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            grad,
        });
        self.index.insert(name.to_string(), id);
        id
    }

    /// Weight initialized uniformly in [-0.1, 0.1].
    pub fn add_uniform<R: Rng + ?Sized>(&mut self, name: &str, shape: Vec<usize>, rng: &mut R) -> ParamId {
        let size = shape.iter().product();
        let data = (0..size).map(|_| S::c(rng.random_range(-0.1..=0.1))).collect();
        self.add(name, Tensor { shape, data })
    }

    pub fn add_zeros(&mut self, name: &str, shape: Vec<usize>) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn get(&self, id: ParamId) -> &Parameter<S> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<S> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<S>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<S>> {
        self.params.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Total number of scalar entries.
    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data.iter_mut().for_each(|g| *g = S::zero());
        }
    }

    /// Adds `scale * grads` into the parameter gradients.
    pub fn accumulate(&mut self, grads: &Gradients<S>, scale: S) {
        for (p, g) in self.params.iter_mut().zip(&grads.grads) {
            if let Some(g) = g {
                for (acc, &x) in p.grad.data.iter_mut().zip(g) {
                    *acc += scale * x;
                }
            }
        }
    }

    /// Copies every value into another element type.
    pub fn cast<T: Real>(&self) -> ParamStore<T> {
        let mut out = ParamStore::new();
        for p in &self.params {
            let data = p.value.data.iter().map(|x| T::c(x.f64())).collect();
            out.add(
                &p.name,
                Tensor {
                    shape: p.value.shape.clone(),
                    data,
                },
            );
        }
        out
    }
}

/// Parameter gradients produced by one backward pass, indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Gradients<S> {
    grads: Vec<Option<Vec<S>>>,
}

impl<S: Real> Gradients<S> {
    pub fn empty(num_params: usize) -> Self {
        Gradients {
            grads: vec![None; num_params],
        }
    }

    /// Gradient of one parameter; `None` if the loss did not depend on it.
    pub fn get(&self, id: ParamId) -> Option<&[S]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn merge(&mut self, other: &Gradients<S>) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            match (a.as_mut(), b) {
                (Some(a), Some(b)) => a.iter_mut().zip(b).for_each(|(x, &y)| *x += y),
                (None, Some(b)) => *a = Some(b.clone()),
                _ => {}
            }
        }
    }
}
