//! Reverse-mode automatic differentiation on dense tensors.
//!
//! A [`Graph`] records every op as it executes (define-by-run); [`Graph::backward`]
//! walks the tape in reverse and accumulates gradients into the recorded nodes.
//! Parameters live outside the graph in a [`Params`] store and are bound into a
//! graph as leaves per forward pass, so one parameter set can serve many graphs.
//!
//! The op set is exactly what the EEG models need: elementwise arithmetic,
//! matmul, transpose/reshape/concat/slice, softmax, layer norm, GELU/ReLU,
//! embedding lookup, valid-mode 1-D/2-D convolution, transposed 1-D convolution,
//! cross-entropy with an ignored id, and scalar reductions. Multi-head attention
//! is composed from these primitives in [`nn`].
//!
//! Everything is generic over [`Float`]: `f64` for gradient checks, `f32` for
//! training. Each op validates shapes and checks its output for non-finite
//! values, so numeric blow-ups surface as errors at the op that produced them
//! rather than as NaN metrics later.

mod adam;
mod check;
mod graph;
pub mod nn;

pub use adam::{Adam, AdamState};
pub use check::{check_gradients, GradCheckReport};
pub use graph::{Graph, Op, ValueId};

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

/// Scalar element type of tensors and graphs.
pub trait Float:
    num_traits::Float + std::fmt::Debug + std::fmt::Display + Default + Send + Sync + 'static
{
    const NAME: &'static str;
}

impl Float for f32 {
    const NAME: &'static str = "f32";
}
impl Float for f64 {
    const NAME: &'static str = "f64";
}

/// Casts a finite f64 literal into the active float type.
pub(crate) fn lit<T: Float>(x: f64) -> T {
    T::from(x).expect("finite literal representable in both f32 and f64")
}

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch: {details}")]
    ShapeMismatch { op: &'static str, details: String },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("{op}: {details}")]
    InvalidArg { op: &'static str, details: String },
    #[error("backward target must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("duplicate parameter name {0:?}")]
    DuplicateParam(String),
    #[error("unknown parameter name {0:?}")]
    UnknownParam(String),
}

/// Dense row-major tensor. `shape` may have any rank; ops interpret rank as
/// they need (most are 2-D, convolutions use [C, T] or [C, F, T]).
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Float> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, AutodiffError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "tensor",
                details: format!("shape {:?} wants {} elements, got {}", shape, numel, data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![T::zero(); numel] }
    }

    pub fn full(shape: Vec<usize>, v: T) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, data: vec![v; numel] }
    }

    /// Independent N(0, std^2) draws from `rng`. Sampling happens in f64 and
    /// is cast down, so the draw sequence is identical across precisions.
    pub fn randn<R: Rng>(shape: Vec<usize>, std: f64, rng: &mut R) -> Self {
        let numel = shape.iter().product();
        let data = (0..numel)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                lit::<T>(z * std)
            })
            .collect();
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect()
    }

    pub fn from_f32(shape: Vec<usize>, data: &[f32]) -> Result<Self, AutodiffError> {
        Tensor::new(shape, data.iter().map(|&v| lit::<T>(v as f64)).collect())
    }

    pub fn cast<U: Float>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from(*v).expect("finite cast")).collect(),
        }
    }
}

/// Named parameter store with deterministic (sorted-name) iteration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Params<T> {
    map: BTreeMap<String, Tensor<T>>,
}

impl<T: Float> Params<T> {
    pub fn new() -> Self {
        Params { map: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: &str, t: Tensor<T>) -> Result<(), AutodiffError> {
        if self.map.contains_key(name) {
            return Err(AutodiffError::DuplicateParam(name.to_string()));
        }
        self.map.insert(name.to_string(), t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>, AutodiffError> {
        self.map.get(name).ok_or_else(|| AutodiffError::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>, AutodiffError> {
        self.map.get_mut(name).ok_or_else(|| AutodiffError::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn set(&mut self, name: &str, t: Tensor<T>) {
        self.map.insert(name.to_string(), t);
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor<T>> {
        self.map.remove(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.map.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.map.values().map(|t| t.numel()).sum()
    }

    pub fn cast<U: Float>(&self) -> Params<U> {
        Params { map: self.map.iter().map(|(k, v)| (k.clone(), v.cast::<U>())).collect() }
    }
}

/// Parameter-name to graph-leaf bindings for one forward pass.
pub struct Bound {
    ids: BTreeMap<String, ValueId>,
}

impl Bound {
    /// Binds every parameter as a leaf; `trainable` decides which leaves
    /// propagate gradients (frozen parameters still feed the forward pass).
    pub fn bind<T: Float>(
        g: &mut Graph<T>,
        params: &Params<T>,
        trainable: impl Fn(&str) -> bool,
    ) -> Bound {
        let mut ids = BTreeMap::new();
        for (name, t) in params.iter() {
            let id = g.leaf(t, trainable(name));
            ids.insert(name.clone(), id);
        }
        Bound { ids }
    }

    /// Graph leaf for a bound parameter. Panics on an unbound name: model
    /// code only asks for parameters it created, so a miss is a bug.
    pub fn id(&self, name: &str) -> ValueId {
        match self.ids.get(name) {
            Some(id) => *id,
            None => panic!("parameter {name:?} not bound into graph"),
        }
    }

    /// Collects gradients of all bound parameters that received one.
    pub fn grads<T: Float>(&self, g: &Graph<T>) -> BTreeMap<String, Vec<T>> {
        let mut out = BTreeMap::new();
        for (name, id) in &self.ids {
            if let Some(grad) = g.grad(*id) {
                out.insert(name.clone(), grad.to_vec());
            }
        }
        out
    }
}
