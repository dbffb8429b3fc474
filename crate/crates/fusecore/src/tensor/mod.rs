//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! Tensors are immutable values: every operation allocates a fresh output.
//! Differentiable operations are methods on [`Tape`], which records them in
//! execution order; [`Tape::backward`] replays the record in reverse and
//! accumulates gradients into leaf tensors that were created with
//! `requires_grad`.

mod tape;

pub use tape::{softmax_inplace, Tape};

use std::cell::RefCell;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{FuseError, Result};

static NEXT_TENSOR_ID: AtomicU64 = AtomicU64::new(1);

struct TensorInner {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
}

/// Immutable dense tensor, row-major, cheap to clone.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<TensorInner>,
}

impl Tensor {
    fn build(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) || numel != data.len() {
            return Err(FuseError::contract(format!(
                "tensor data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Tensor {
            inner: Rc::new(TensorInner {
                id: NEXT_TENSOR_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                grad: RefCell::new(None),
            }),
        })
    }

    /// Constant tensor: never tracked by a tape.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        Tensor::build(shape.to_vec(), data, false)
    }

    /// Leaf tensor that accumulates gradients during backward.
    pub fn leaf(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        Tensor::build(shape.to_vec(), data, true)
    }

    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Tensor {
        debug_assert!(data.iter().all(|v| v.is_finite()), "non-finite op output");
        Tensor::build(shape, data, requires_grad).expect("op produced inconsistent shape")
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let numel: usize = shape.iter().product();
        Tensor::build(shape.to_vec(), vec![0.0; numel], false).expect("zeros")
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::build(vec![1], vec![v], false).expect("scalar")
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.inner.data
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    /// Value of a scalar tensor.
    pub fn item(&self) -> f64 {
        assert!(self.is_scalar(), "item() on non-scalar {:?}", self.shape());
        self.inner.data[0]
    }

    /// Rows of a 2-d tensor.
    pub fn rows(&self) -> usize {
        assert_eq!(self.shape().len(), 2, "rows() on {:?}", self.shape());
        self.shape()[0]
    }

    /// Columns of a 2-d tensor.
    pub fn cols(&self) -> usize {
        assert_eq!(self.shape().len(), 2, "cols() on {:?}", self.shape());
        self.shape()[1]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.inner.data[r * c..(r + 1) * c]
    }

    /// Copy of the accumulated gradient, if any has been accumulated.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    pub fn accumulate_grad(&self, g: &[f64]) {
        debug_assert_eq!(g.len(), self.numel());
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Same data, detached from gradient tracking.
    pub fn detach(&self) -> Tensor {
        Tensor::build(self.shape().to_vec(), self.data().to_vec(), false).expect("detach")
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Tensor(shape={:?}, requires_grad={})",
            self.shape(),
            self.requires_grad()
        )
    }
}

// ── Parameters ───────────────────────────────────────────────────────

struct ParamInner {
    name: String,
    value: Tensor,
    frozen: bool,
}

/// Named trainable tensor. Freezing swaps in a non-differentiable view of
/// the same data, so frozen parameters can neither accumulate gradients
/// nor receive optimizer updates.
#[derive(Clone)]
pub struct Parameter {
    inner: Rc<RefCell<ParamInner>>,
}

impl Parameter {
    pub fn new(name: impl Into<String>, shape: &[usize], data: Vec<f64>) -> Result<Parameter> {
        Ok(Parameter {
            inner: Rc::new(RefCell::new(ParamInner {
                name: name.into(),
                value: Tensor::leaf(shape, data)?,
                frozen: false,
            })),
        })
    }

    pub fn name(&self) -> String {
        self.inner.borrow().name.clone()
    }

    pub fn frozen(&self) -> bool {
        self.inner.borrow().frozen
    }

    /// Current value. Differentiable leaf when trainable, constant when frozen.
    pub fn value(&self) -> Tensor {
        self.inner.borrow().value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().value.shape().to_vec()
    }

    pub fn set_frozen(&self, frozen: bool) {
        let mut inner = self.inner.borrow_mut();
        if inner.frozen == frozen {
            return;
        }
        let shape = inner.value.shape().to_vec();
        let data = inner.value.data().to_vec();
        inner.value = if frozen {
            Tensor::new(&shape, data).expect("freeze")
        } else {
            Tensor::leaf(&shape, data).expect("unfreeze")
        };
        inner.frozen = frozen;
    }

    /// Install updated weights (optimizer step). Clears any gradient.
    pub fn set_data(&self, data: Vec<f64>) {
        let mut inner = self.inner.borrow_mut();
        let shape = inner.value.shape().to_vec();
        inner.value = if inner.frozen {
            Tensor::new(&shape, data).expect("set_data")
        } else {
            Tensor::leaf(&shape, data).expect("set_data")
        };
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.borrow().value.grad()
    }

    pub fn zero_grad(&self) {
        self.inner.borrow().value.zero_grad();
    }
}

impl std::fmt::Debug for Parameter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.inner.borrow();
        write!(
            f,
            "Parameter({}, shape={:?}, frozen={})",
            inner.name,
            inner.value.shape(),
            inner.frozen
        )
    }
}

/// Ordered registry of a model's parameters, keyed by unique name.
#[derive(Default)]
pub struct ParamStore {
    params: std::collections::BTreeMap<String, Parameter>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn register(&mut self, param: Parameter) -> Result<Parameter> {
        let name = param.name();
        if self.params.contains_key(&name) {
            return Err(FuseError::contract(format!(
                "duplicate parameter name {name}"
            )));
        }
        self.params.insert(name, param.clone());
        Ok(param)
    }

    pub fn create(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> Result<Parameter> {
        self.register(Parameter::new(name, shape, data)?)
    }

    pub fn get(&self, name: &str) -> Option<Parameter> {
        self.params.get(name).cloned()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Parameter> {
        self.params.remove(name)
    }

    /// Parameters in name order (deterministic iteration for optimizers,
    /// checkpoints, and freeze plans).
    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.values()
    }

    pub fn names(&self) -> Vec<String> {
        self.params.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn zero_grads(&self) {
        for p in self.params.values() {
            p.zero_grad();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_data_must_agree() {
        assert!(Tensor::new(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(&[0], vec![]).is_err());
    }

    #[test]
    fn grad_accumulates_until_zeroed() {
        let t = Tensor::leaf(&[2], vec![1.0, 2.0]).unwrap();
        t.accumulate_grad(&[1.0, 1.0]);
        t.accumulate_grad(&[0.5, 0.25]);
        assert_eq!(t.grad().unwrap(), vec![1.5, 1.25]);
        t.zero_grad();
        assert!(t.grad().is_none());
    }

    #[test]
    fn frozen_parameter_value_is_constant() {
        let p = Parameter::new("w", &[2], vec![1.0, 2.0]).unwrap();
        assert!(p.value().requires_grad());
        p.set_frozen(true);
        assert!(!p.value().requires_grad());
        assert_eq!(p.value().data(), &[1.0, 2.0]);
        p.set_frozen(false);
        assert!(p.value().requires_grad());
    }

    #[test]
    fn store_rejects_duplicate_names() {
        let mut store = ParamStore::new();
        store.create("a.w", &[1], vec![0.0]).unwrap();
        let dup = Parameter::new("a.w", &[1], vec![1.0]).unwrap();
        assert!(store.register(dup).is_err());
    }

    #[test]
    fn store_iterates_in_name_order() {
        let mut store = ParamStore::new();
        store.create("z", &[1], vec![0.0]).unwrap();
        store.create("a", &[1], vec![0.0]).unwrap();
        store.create("m", &[1], vec![0.0]).unwrap();
        let names: Vec<String> = store.iter().map(|p| p.name()).collect();
        assert_eq!(names, vec!["a", "m", "z"]);
    }
}
