//! Dense arrays, reverse-mode differentiation, batch normalization, and Adam.
//!
//! Everything downstream computes on [`Array`] values. Differentiable
//! computations are recorded on a [`Tape`](tape::Tape); parameters live in a
//! [`ParamStore`] and receive gradients when the tape is walked backwards.
//! All storage is 64-bit: the flow round-trip and log-determinant tolerances
//! used elsewhere in the crate are not reachable in single precision.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::{Error, Result};

pub mod adam;
pub mod layers;
pub mod tape;

pub use adam::AdamState;
pub use layers::{batchnorm, AffineLayer, BatchNormState, BnUpdate, Conv1dLayer, Init};
pub use tape::{Gradients, NodeId, Op, Tape};

/// Whether batch normalization uses batch statistics (and reports running-stat
/// updates) or frozen running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Dense N-dimensional array of `f64` in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Array {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Array { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Array { shape, data: vec![0.0; n] }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        Array { shape, data: vec![value; n] }
    }

    /// Rank-0 array holding a single value.
    pub fn scalar(value: f64) -> Self {
        Array { shape: Vec::new(), data: vec![value] }
    }

    /// 1-D array from a vector.
    pub fn from_vec(data: Vec<f64>) -> Self {
        Array { shape: vec![data.len()], data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single element of a scalar (or single-element) array.
    pub fn item(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Extent along axis `i`.
    pub fn dim(&self, i: usize) -> usize {
        self.shape[i]
    }
}

static NEXT_UNIQUE_ID: AtomicU64 = AtomicU64::new(1);

fn next_unique_id() -> u64 {
    NEXT_UNIQUE_ID.fetch_add(1, Ordering::Relaxed)
}

/// Process-unique key for a batch-norm state, used to route running-stat
/// updates back from a recorded forward pass.
pub(crate) fn next_bn_key() -> u64 {
    next_unique_id()
}

/// Identifier of a [`Parameter`], unique within the process.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(u64);

/// A trainable value together with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub id: ParamId,
    pub value: Array,
    pub grad: Array,
}

/// Owns the parameters of one model. Iteration order is creation order,
/// which keeps optimizer state and serialization deterministic.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn create(&mut self, value: Array) -> ParamId {
        let id = ParamId(next_unique_id());
        let grad = Array::zeros(value.shape().to_vec());
        self.params.push(Parameter { id, value, grad });
        id
    }

    fn index_of(&self, id: ParamId) -> Option<usize> {
        // Stores hold at most a few hundred parameters; ids are created in
        // increasing order so a binary search suffices.
        self.params.binary_search_by_key(&id, |p| p.id).ok()
    }

    pub fn get(&self, id: ParamId) -> Option<&Parameter> {
        self.index_of(id).map(|i| &self.params[i])
    }

    pub fn get_mut(&mut self, id: ParamId) -> Option<&mut Parameter> {
        self.index_of(id).map(move |i| &mut self.params[i])
    }

    pub fn value(&self, id: ParamId) -> &Array {
        &self.get(id).expect("parameter not in store").value
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Add `delta` into the gradient of `id`.
    pub fn accumulate_grad(&mut self, id: ParamId, delta: &[f64]) -> Result<()> {
        let p = self
            .get_mut(id)
            .ok_or_else(|| Error::Shape(format!("parameter {:?} not in store", id)))?;
        if p.grad.len() != delta.len() {
            return Err(Error::Shape(format!(
                "gradient length {} does not match parameter length {}",
                delta.len(),
                p.grad.len()
            )));
        }
        for (g, d) in p.grad.data_mut().iter_mut().zip(delta) {
            *g += d;
        }
        Ok(())
    }

    /// Copy of all parameter values, in store order.
    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.params.iter().map(|p| p.value.data().to_vec()).collect()
    }

    /// Restore values previously taken with [`snapshot`](Self::snapshot).
    pub fn restore(&mut self, snapshot: &[Vec<f64>]) {
        assert_eq!(snapshot.len(), self.params.len(), "snapshot layout mismatch");
        for (p, s) in self.params.iter_mut().zip(snapshot) {
            p.value.data_mut().copy_from_slice(s);
        }
    }

    /// Largest absolute entry over all parameter values.
    pub fn max_abs_value(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.value.data().iter())
            .fold(0.0f64, |a, v| a.max(v.abs()))
    }

    /// Clamp every parameter entry into `[-bound, bound]`.
    pub fn clamp_values(&mut self, bound: f64) {
        for p in &mut self.params {
            for v in p.value.data_mut() {
                *v = v.clamp(-bound, bound);
            }
        }
    }
}
