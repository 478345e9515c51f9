//! Minimal dense numeric kernel: `f64` tensors, the forward operations the
//! classifiers need, their backward rules on a [`GradTape`], the SGD step,
//! and a central finite-difference gradient oracle.
//!
//! Everything is double precision. Desk-scale models make gradient checks the
//! primary verification, and single precision would drown them in rounding
//! noise.

mod tape;

pub use tape::{GradTape, Gradients, Var};

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Clamp applied to predicted probabilities inside `cross_entropy` so a
/// saturated softmax output never produces `-inf`.
pub const LOG_CLAMP: f64 = 1e-12;

/// Train/inference switch for stochastic operations. `Infer` makes dropout
/// the identity function, bit-exact.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("shape {shape:?} implies {expected} elements, got {got}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("{op}: produced or received a non-finite value")]
    NonFinite { op: &'static str },
    #[error("expected a scalar, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("variable #{index} does not belong to this tape of {len} nodes")]
    UnknownVar { index: usize, len: usize },
    #[error("{op}: expected a {expected}-d tensor, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Dense row-major `f64` tensor. Immutable through the public API except for
/// explicit in-place parameter updates during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Validating constructor: the shape product must equal the data length
    /// and every entry must be finite.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::DataLength {
                shape,
                expected,
                got: data.len(),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(TensorError::NonFinite { op: "Tensor::new" });
        }
        Ok(Self { shape, data })
    }

    /// Internal constructor for values produced by operations whose inputs
    /// were already validated.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Single stored value of a scalar (length-1) tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(TensorError::NotScalar {
                shape: self.shape.clone(),
            });
        }
        Ok(self.data[0])
    }

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    /// Row `i` of a 2-d tensor as a slice.
    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Euclidean norm over all entries.
    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Uniform random tensor in `[low, high)`, seeded by the caller's rng.
    pub fn uniform<R: Rng>(shape: Vec<usize>, low: f64, high: f64, rng: &mut R) -> Self {
        let len = shape.iter().product();
        let data = (0..len).map(|_| rng.gen_range(low..high)).collect();
        Self { shape, data }
    }
}

fn check_finite(op: &'static str, t: Tensor) -> Result<Tensor> {
    if t.all_finite() {
        Ok(t)
    } else {
        Err(TensorError::NonFinite { op })
    }
}

fn require_matrix(op: &'static str, t: &Tensor) -> Result<()> {
    if t.shape.len() != 2 {
        return Err(TensorError::Rank {
            op,
            expected: 2,
            shape: t.shape.clone(),
        });
    }
    Ok(())
}

/// `C[i,j] = Σ_k A[i,k]·B[k,j]` for 2-d tensors with agreeing inner
/// dimensions.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    require_matrix("matmul", a)?;
    require_matrix("matmul", b)?;
    if a.cols() != b.rows() {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let a_row = a.row(i);
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate().take(k) {
            let b_row = b.row(p);
            for j in 0..n {
                out_row[j] += a_ip * b_row[j];
            }
        }
    }
    check_finite("matmul", Tensor::from_parts(vec![m, n], out))
}

/// y = A·x for a 2-d `A` and 1-d `x` with `A.cols() == x.len()`.
pub fn matvec(a: &Tensor, x: &Tensor) -> Result<Tensor> {
    require_matrix("matvec", a)?;
    if x.shape.len() != 1 || a.cols() != x.len() {
        return Err(TensorError::ShapeMismatch {
            op: "matvec",
            left: a.shape.clone(),
            right: x.shape.clone(),
        });
    }
    let out = (0..a.rows())
        .map(|i| {
            a.row(i)
                .iter()
                .zip(x.data())
                .map(|(w, v)| w * v)
                .sum::<f64>()
        })
        .collect();
    check_finite("matvec", Tensor::from_parts(vec![a.rows()], out))
}

pub(crate) fn softmax_slice(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Numerically stable softmax over all entries of `x` (max-subtraction).
/// Outputs are strictly positive and sum to 1.
pub fn softmax(x: &Tensor) -> Tensor {
    Tensor::from_parts(x.shape.clone(), softmax_slice(x.data()))
}

pub(crate) fn cross_entropy_slices(gold: &[f64], pred: &[f64]) -> f64 {
    gold.iter()
        .zip(pred)
        .filter(|(y, _)| **y != 0.0)
        .map(|(y, p)| -y * p.max(LOG_CLAMP).ln())
        .sum()
}

/// −Σ_i y_i·log(ŷ_i) for a one-hot `gold` and a probability vector `pred`.
/// A zero probability at the gold index is clamped to [`LOG_CLAMP`] rather
/// than producing `-inf`.
pub fn cross_entropy(gold: &Tensor, pred: &Tensor) -> Result<f64> {
    if gold.shape != pred.shape {
        return Err(TensorError::ShapeMismatch {
            op: "cross_entropy",
            left: gold.shape.clone(),
            right: pred.shape.clone(),
        });
    }
    Ok(cross_entropy_slices(gold.data(), pred.data()))
}

/// Elementwise max(0, x).
pub fn relu(x: &Tensor) -> Tensor {
    let data = x.data.iter().map(|v| v.max(0.0)).collect();
    Tensor::from_parts(x.shape.clone(), data)
}

/// Inverted-dropout mask: entries are 0 with probability `rate` and
/// `1/(1−rate)` otherwise.
pub(crate) fn dropout_mask<R: Rng>(len: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0,1)");
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

/// Inverted dropout: in `Train` mode each entry is zeroed with probability
/// `rate` and survivors are scaled by `1/(1−rate)`; in `Infer` mode this is
/// the identity, so no test-time rescaling is ever needed.
pub fn dropout<R: Rng>(x: &Tensor, rate: f64, mode: Mode, rng: &mut R) -> Tensor {
    if mode == Mode::Infer || rate == 0.0 {
        return x.clone();
    }
    let mask = dropout_mask(x.len(), rate, rng);
    let data = x.data.iter().zip(&mask).map(|(v, m)| v * m).collect();
    Tensor::from_parts(x.shape.clone(), data)
}

/// Global-norm clipping over raw slices: if the L2 norm of the concatenation
/// exceeds `max_norm`, every entry is scaled by `max_norm/norm`. Returns the
/// pre-clip norm.
pub fn clip_slices(slices: &mut [&mut [f64]], max_norm: f64) -> f64 {
    assert!(max_norm > 0.0, "max_norm must be positive");
    let sq: f64 = slices
        .iter()
        .map(|s| s.iter().map(|v| v * v).sum::<f64>())
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for s in slices.iter_mut() {
            for v in s.iter_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

/// Global-norm gradient clipping across all tensors (concatenated, not
/// per-tensor). Returns the pre-clip global norm.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let mut slices: Vec<&mut [f64]> = grads.iter_mut().map(|g| g.data.as_mut_slice()).collect();
    clip_slices(&mut slices, max_norm)
}

/// One SGD update: returns `param − lr·grad`.
pub fn sgd_step(param: &Tensor, grad: &Tensor, lr: f64) -> Result<Tensor> {
    if param.shape != grad.shape {
        return Err(TensorError::ShapeMismatch {
            op: "sgd_step",
            left: param.shape.clone(),
            right: grad.shape.clone(),
        });
    }
    let data = param
        .data
        .iter()
        .zip(&grad.data)
        .map(|(p, g)| p - lr * g)
        .collect();
    check_finite("sgd_step", Tensor::from_parts(param.shape.clone(), data))
}

/// In-place SGD update used by the training loop.
pub fn sgd_step_in_place(param: &mut Tensor, grad: &Tensor, lr: f64) -> Result<()> {
    if param.shape != grad.shape {
        return Err(TensorError::ShapeMismatch {
            op: "sgd_step",
            left: param.shape.clone(),
            right: grad.shape.clone(),
        });
    }
    for (p, g) in param.data.iter_mut().zip(&grad.data) {
        *p -= lr * g;
    }
    if !param.all_finite() {
        return Err(TensorError::NonFinite { op: "sgd_step" });
    }
    Ok(())
}

/// Central finite differences, (f(p+ε·e_i) − f(p−ε·e_i)) / 2ε per coordinate.
///
/// `f` must be deterministic under a fixed seed; in particular any dropout
/// masks have to be frozen across evaluations. Estimates one gradient tensor
/// per input tensor.
pub fn finite_diff_gradient<F>(mut f: F, params: &[Tensor], eps: f64) -> Result<Vec<Tensor>>
where
    F: FnMut(&[Tensor]) -> f64,
{
    assert!(eps > 0.0, "eps must be positive");
    let mut work: Vec<Tensor> = params.to_vec();
    let mut grads = Vec::with_capacity(params.len());
    for t in 0..params.len() {
        let mut g = vec![0.0; params[t].len()];
        for (i, slot) in g.iter_mut().enumerate() {
            let orig = work[t].data[i];
            work[t].data[i] = orig + eps;
            let plus = f(&work);
            work[t].data[i] = orig - eps;
            let minus = f(&work);
            work[t].data[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(TensorError::NonFinite {
                    op: "finite_diff_gradient",
                });
            }
            *slot = (plus - minus) / (2.0 * eps);
        }
        grads.push(Tensor::from_parts(params[t].shape.clone(), g));
    }
    Ok(grads)
}

#[cfg(test)]
mod tests;
