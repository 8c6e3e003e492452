//! Minimal reverse-mode autodiff over 2-D matrices, specialized to what the
//! model needs: fused linear layers, joint attention, rotary phases,
//! adaptive-norm modulation, and an MSE head.
//!
//! The engine is an eager tape: every op computes its value on construction
//! and records enough to backpropagate. It is generic over the element type
//! so training runs in f32 while gradient checks run in f64.

mod graph;

pub use graph::{Graph, Var};

/// Element type of tensors: f32 for training, f64 for gradient checking.
pub trait Scalar:
    num_traits::Float + std::ops::AddAssign + std::fmt::Debug + Send + Sync + 'static
{
    fn from_f32(v: f32) -> Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f32(v: f32) -> Self {
        v
    }
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f32(v: f32) -> Self {
        v as f64
    }
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Row-major 2-D matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![S::zero(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Self {
        assert_eq!(data.len(), rows * cols, "shape/data mismatch");
        Tensor { rows, cols, data }
    }

    pub fn from_f32_slice(rows: usize, cols: usize, data: &[f32]) -> Self {
        assert_eq!(data.len(), rows * cols, "shape/data mismatch");
        Tensor { rows, cols, data: data.iter().map(|&v| S::from_f32(v)).collect() }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_f32_vec(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v.to_f64() as f32).collect()
    }
}

/// A named parameter tensor with a trainable flag.
#[derive(Debug, Clone)]
pub struct Param<S> {
    pub name: String,
    pub value: Tensor<S>,
    pub trainable: bool,
}

/// Flat parameter store; graphs borrow it and gradients are returned
/// aligned with its entries.
#[derive(Debug, Clone, Default)]
pub struct ParamSet<S> {
    pub entries: Vec<Param<S>>,
}

impl<S: Scalar> ParamSet<S> {
    pub fn push(&mut self, name: impl Into<String>, value: Tensor<S>, trainable: bool) -> usize {
        self.entries.push(Param { name: name.into(), value, trainable });
        self.entries.len() - 1
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|p| p.name == name)
    }

    pub fn get(&self, name: &str) -> &Param<S> {
        self.entries
            .iter()
            .find(|p| p.name == name)
            .unwrap_or_else(|| panic!("no parameter named {name}"))
    }

    pub fn n_scalars(&self) -> usize {
        self.entries.iter().map(|p| p.value.len()).sum()
    }

    pub fn n_trainable_scalars(&self) -> usize {
        self.entries.iter().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }

    pub fn cast<T: Scalar>(&self) -> ParamSet<T> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: Tensor {
                        rows: p.value.rows,
                        cols: p.value.cols,
                        data: p.value.data.iter().map(|&v| T::from_f64(v.to_f64())).collect(),
                    },
                    trainable: p.trainable,
                })
                .collect(),
        }
    }
}

/// Per-parameter gradients aligned with a `ParamSet`; entries for params the
/// loss does not reach are `None`.
pub type ParamGrads<S> = Vec<Option<Tensor<S>>>;
