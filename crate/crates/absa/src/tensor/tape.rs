//! Reverse-mode differentiation over an explicit operation tape.
//!
//! A forward pass appends nodes in execution order; [`GradTape::backward`]
//! replays them in exact reverse order, accumulating gradients by each
//! operation's backward rule. Values are immutable once recorded.

use rand::Rng;

use super::{
    cross_entropy_slices, dropout_mask, softmax_slice, Mode, Result, Tensor, TensorError,
    LOG_CLAMP,
};

/// Handle to a value recorded on a [`GradTape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    /// C = A·B
    Matmul(Var, Var),
    /// y = A·x
    Matvec(Var, Var),
    /// Elementwise sum of two same-shape tensors.
    Add(Var, Var),
    /// `[P,N]` matrix plus an `[N]` row vector broadcast over rows.
    AddRow(Var, Var),
    /// Elementwise product.
    Mul(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    /// Softmax over the whole tensor treated as a flat vector.
    Softmax(Var),
    /// Scalar −Σ y·log(ŷ) against a fixed one-hot gold vector.
    CrossEntropy { pred: Var, gold: Tensor },
    /// Row `i` of a 2-d tensor as a 1-d vector.
    Row(Var, usize),
    /// Sliding windows of `width` rows, flattened: `[L,D]` → `[L−w+1, w·D]`.
    Unfold { x: Var, width: usize },
    /// Per-column maximum of a 2-d tensor with saved argmax rows.
    ColMax { x: Var, argmax: Vec<usize> },
    /// Concatenation of 1-d vectors.
    Concat(Vec<Var>),
    /// Sum of scalar values.
    SumScalars(Vec<Var>),
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Ordered record of forward operations with enough saved state to run every
/// backward rule.
#[derive(Default)]
pub struct GradTape {
    nodes: Vec<Node>,
}

/// Per-variable gradients produced by [`GradTape::backward`]. Variables not
/// reached from the loss hold `None`.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl GradTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.0 >= self.nodes.len() {
            return Err(TensorError::UnknownVar {
                index: v.0,
                len: self.nodes.len(),
            });
        }
        Ok(())
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable input: gradients will be computed for it.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Non-trainable input (gold vectors, dropout masks, padding).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let value = super::matmul(self.value(a), self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Matmul(a, b), value, rg))
    }

    pub fn matvec(&mut self, a: Var, x: Var) -> Result<Var> {
        self.check(a)?;
        self.check(x)?;
        let value = super::matvec(self.value(a), self.value(x))?;
        let rg = self.needs(a) || self.needs(x);
        Ok(self.push(Op::Matvec(a, x), value, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::from_parts(ta.shape().to_vec(), data);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Add(a, b), value, rg))
    }

    /// `m + row` with `row` broadcast over the rows of `m`.
    pub fn add_row(&mut self, m: Var, row: Var) -> Result<Var> {
        self.check(m)?;
        self.check(row)?;
        let (tm, tr) = (self.value(m), self.value(row));
        if !tm.is_matrix() || tr.shape().len() != 1 || tm.cols() != tr.len() {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                left: tm.shape().to_vec(),
                right: tr.shape().to_vec(),
            });
        }
        let n = tm.cols();
        let data = tm
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| v + tr.data()[i % n])
            .collect();
        let value = Tensor::from_parts(tm.shape().to_vec(), data);
        let rg = self.needs(m) || self.needs(row);
        Ok(self.push(Op::AddRow(m, row), value, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::from_parts(ta.shape().to_vec(), data);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Mul(a, b), value, rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let value = super::relu(self.value(x));
        let rg = self.needs(x);
        Ok(self.push(Op::Relu(x), value, rg))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        let value = Tensor::from_parts(self.value(x).shape().to_vec(), data);
        let rg = self.needs(x);
        Ok(self.push(Op::Sigmoid(x), value, rg))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let data = self.value(x).data().iter().map(|v| v.tanh()).collect();
        let value = Tensor::from_parts(self.value(x).shape().to_vec(), data);
        let rg = self.needs(x);
        Ok(self.push(Op::Tanh(x), value, rg))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let value = Tensor::from_parts(
            self.value(x).shape().to_vec(),
            softmax_slice(self.value(x).data()),
        );
        let rg = self.needs(x);
        Ok(self.push(Op::Softmax(x), value, rg))
    }

    /// Cross-entropy of `pred` against a fixed one-hot `gold`, as a scalar.
    pub fn cross_entropy(&mut self, gold: Tensor, pred: Var) -> Result<Var> {
        self.check(pred)?;
        if gold.shape() != self.value(pred).shape() {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                left: gold.shape().to_vec(),
                right: self.value(pred).shape().to_vec(),
            });
        }
        let value = Tensor::scalar(cross_entropy_slices(gold.data(), self.value(pred).data()));
        let rg = self.needs(pred);
        Ok(self.push(Op::CrossEntropy { pred, gold }, value, rg))
    }

    pub fn row(&mut self, x: Var, i: usize) -> Result<Var> {
        self.check(x)?;
        let t = self.value(x);
        if !t.is_matrix() || i >= t.rows() {
            return Err(TensorError::Rank {
                op: "row",
                expected: 2,
                shape: t.shape().to_vec(),
            });
        }
        let value = Tensor::from_parts(vec![t.cols()], t.row(i).to_vec());
        let rg = self.needs(x);
        Ok(self.push(Op::Row(x, i), value, rg))
    }

    /// `[L,D]` → `[L−width+1, width·D]`: row `p` is the flattened window of
    /// rows `p..p+width`.
    pub fn unfold(&mut self, x: Var, width: usize) -> Result<Var> {
        self.check(x)?;
        let t = self.value(x);
        if !t.is_matrix() || width == 0 || t.rows() < width {
            return Err(TensorError::Rank {
                op: "unfold",
                expected: 2,
                shape: t.shape().to_vec(),
            });
        }
        let (l, d) = (t.rows(), t.cols());
        let positions = l - width + 1;
        let mut data = Vec::with_capacity(positions * width * d);
        for p in 0..positions {
            data.extend_from_slice(&t.data()[p * d..(p + width) * d]);
        }
        let value = Tensor::from_parts(vec![positions, width * d], data);
        let rg = self.needs(x);
        Ok(self.push(Op::Unfold { x, width }, value, rg))
    }

    /// Max over rows per column (max-over-time pooling). Ties resolve to the
    /// earliest row, which also receives the full gradient.
    pub fn col_max(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let t = self.value(x);
        if !t.is_matrix() || t.rows() == 0 {
            return Err(TensorError::Rank {
                op: "col_max",
                expected: 2,
                shape: t.shape().to_vec(),
            });
        }
        let (rows, cols) = (t.rows(), t.cols());
        let mut maxima = t.row(0).to_vec();
        let mut argmax = vec![0usize; cols];
        for i in 1..rows {
            for (j, v) in t.row(i).iter().enumerate() {
                if *v > maxima[j] {
                    maxima[j] = *v;
                    argmax[j] = i;
                }
            }
        }
        let value = Tensor::from_parts(vec![cols], maxima);
        let rg = self.needs(x);
        Ok(self.push(Op::ColMax { x, argmax }, value, rg))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut data = Vec::new();
        let mut rg = false;
        for &p in parts {
            self.check(p)?;
            let t = self.value(p);
            if t.shape().len() != 1 {
                return Err(TensorError::Rank {
                    op: "concat",
                    expected: 1,
                    shape: t.shape().to_vec(),
                });
            }
            data.extend_from_slice(t.data());
            rg |= self.needs(p);
        }
        let value = Tensor::from_parts(vec![data.len()], data);
        Ok(self.push(Op::Concat(parts.to_vec()), value, rg))
    }

    pub fn sum_scalars(&mut self, parts: &[Var]) -> Result<Var> {
        let mut total = 0.0;
        let mut rg = false;
        for &p in parts {
            self.check(p)?;
            total += self.value(p).item()?;
            rg |= self.needs(p);
        }
        Ok(self.push(Op::SumScalars(parts.to_vec()), Tensor::scalar(total), rg))
    }

    /// Inverted dropout recorded as multiplication by a sampled constant
    /// mask. `Infer` mode (or rate 0) returns `x` unchanged without touching
    /// the rng, keeping inference bit-deterministic.
    pub fn dropout<R: Rng>(&mut self, x: Var, rate: f64, mode: Mode, rng: &mut R) -> Result<Var> {
        self.check(x)?;
        if mode == Mode::Infer || rate == 0.0 {
            return Ok(x);
        }
        let mask = dropout_mask(self.value(x).len(), rate, rng);
        let mask = self.constant(Tensor::from_parts(self.value(x).shape().to_vec(), mask));
        self.mul(x, mask)
    }

    /// Reverse sweep from a scalar `loss`: visits recorded operations in
    /// exact reverse order of the forward pass and accumulates gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.check(loss)?;
        self.value(loss).item()?;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(out_grad) = grads[idx].clone() else {
                continue;
            };
            match &node.op {
                Op::Leaf => {}
                Op::Matmul(a, b) => {
                    // dA = dC·Bᵀ, dB = Aᵀ·dC
                    let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    if self.needs(*a) {
                        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                        let mut da = vec![0.0; m * k];
                        for i in 0..m {
                            for p in 0..k {
                                let mut acc = 0.0;
                                for j in 0..n {
                                    acc += out_grad.at(i, j) * tb.at(p, j);
                                }
                                da[i * k + p] = acc;
                            }
                        }
                        self.accumulate(&mut grads, *a, Tensor::from_parts(vec![m, k], da));
                    }
                    if self.needs(*b) {
                        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                        let mut db = vec![0.0; k * n];
                        for p in 0..k {
                            for i in 0..m {
                                let a_ip = ta.at(i, p);
                                for j in 0..n {
                                    db[p * n + j] += a_ip * out_grad.at(i, j);
                                }
                            }
                        }
                        self.accumulate(&mut grads, *b, Tensor::from_parts(vec![k, n], db));
                    }
                }
                Op::Matvec(a, x) => {
                    let (ta, tx) = (&self.nodes[a.0].value, &self.nodes[x.0].value);
                    if self.needs(*a) {
                        let (m, k) = (ta.rows(), ta.cols());
                        let mut da = vec![0.0; m * k];
                        for i in 0..m {
                            let g = out_grad.data()[i];
                            for p in 0..k {
                                da[i * k + p] = g * tx.data()[p];
                            }
                        }
                        self.accumulate(&mut grads, *a, Tensor::from_parts(vec![m, k], da));
                    }
                    if self.needs(*x) {
                        let (m, k) = (ta.rows(), ta.cols());
                        let mut dx = vec![0.0; k];
                        for i in 0..m {
                            let g = out_grad.data()[i];
                            for (p, slot) in dx.iter_mut().enumerate() {
                                *slot += g * ta.at(i, p);
                            }
                        }
                        self.accumulate(&mut grads, *x, Tensor::from_parts(vec![k], dx));
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        self.accumulate(&mut grads, *a, out_grad.clone());
                    }
                    if self.needs(*b) {
                        self.accumulate(&mut grads, *b, out_grad.clone());
                    }
                }
                Op::AddRow(m, r) => {
                    if self.needs(*m) {
                        self.accumulate(&mut grads, *m, out_grad.clone());
                    }
                    if self.needs(*r) {
                        let n = self.nodes[r.0].value.len();
                        let mut dr = vec![0.0; n];
                        for (i, g) in out_grad.data().iter().enumerate() {
                            dr[i % n] += g;
                        }
                        self.accumulate(&mut grads, *r, Tensor::from_parts(vec![n], dr));
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        let data = out_grad
                            .data()
                            .iter()
                            .zip(self.nodes[b.0].value.data())
                            .map(|(g, v)| g * v)
                            .collect();
                        let shape = out_grad.shape().to_vec();
                        self.accumulate(&mut grads, *a, Tensor::from_parts(shape, data));
                    }
                    if self.needs(*b) {
                        let data = out_grad
                            .data()
                            .iter()
                            .zip(self.nodes[a.0].value.data())
                            .map(|(g, v)| g * v)
                            .collect();
                        let shape = out_grad.shape().to_vec();
                        self.accumulate(&mut grads, *b, Tensor::from_parts(shape, data));
                    }
                }
                Op::Relu(x) => {
                    // Gradient at exactly 0 is defined as 0.
                    let data = out_grad
                        .data()
                        .iter()
                        .zip(self.nodes[x.0].value.data())
                        .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                        .collect();
                    let shape = out_grad.shape().to_vec();
                    self.accumulate(&mut grads, *x, Tensor::from_parts(shape, data));
                }
                Op::Sigmoid(x) => {
                    let data = out_grad
                        .data()
                        .iter()
                        .zip(node.value.data())
                        .map(|(g, s)| g * s * (1.0 - s))
                        .collect();
                    let shape = out_grad.shape().to_vec();
                    self.accumulate(&mut grads, *x, Tensor::from_parts(shape, data));
                }
                Op::Tanh(x) => {
                    let data = out_grad
                        .data()
                        .iter()
                        .zip(node.value.data())
                        .map(|(g, t)| g * (1.0 - t * t))
                        .collect();
                    let shape = out_grad.shape().to_vec();
                    self.accumulate(&mut grads, *x, Tensor::from_parts(shape, data));
                }
                Op::Softmax(x) => {
                    // dx_i = p_i·(g_i − Σ_j g_j·p_j)
                    let p = node.value.data();
                    let dot: f64 = out_grad.data().iter().zip(p).map(|(g, pi)| g * pi).sum();
                    let data = out_grad
                        .data()
                        .iter()
                        .zip(p)
                        .map(|(g, pi)| pi * (g - dot))
                        .collect();
                    let shape = out_grad.shape().to_vec();
                    self.accumulate(&mut grads, *x, Tensor::from_parts(shape, data));
                }
                Op::CrossEntropy { pred, gold } => {
                    let g = out_grad.data()[0];
                    let data = gold
                        .data()
                        .iter()
                        .zip(self.nodes[pred.0].value.data())
                        .map(|(y, p)| {
                            if *y != 0.0 {
                                -g * y / p.max(LOG_CLAMP)
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    let shape = gold.shape().to_vec();
                    self.accumulate(&mut grads, *pred, Tensor::from_parts(shape, data));
                }
                Op::Row(x, i) => {
                    let t = &self.nodes[x.0].value;
                    let mut dx = Tensor::zeros(t.shape().to_vec());
                    let c = t.cols();
                    dx.data_mut()[i * c..(i + 1) * c].copy_from_slice(out_grad.data());
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::Unfold { x, width } => {
                    let t = &self.nodes[x.0].value;
                    let d = t.cols();
                    let positions = t.rows() - width + 1;
                    let mut dx = vec![0.0; t.len()];
                    for p in 0..positions {
                        let window = &out_grad.data()[p * width * d..(p + 1) * width * d];
                        for (offset, g) in window.iter().enumerate() {
                            dx[p * d + offset] += g;
                        }
                    }
                    self.accumulate(
                        &mut grads,
                        *x,
                        Tensor::from_parts(t.shape().to_vec(), dx),
                    );
                }
                Op::ColMax { x, argmax } => {
                    let t = &self.nodes[x.0].value;
                    let mut dx = Tensor::zeros(t.shape().to_vec());
                    let cols = t.cols();
                    for (j, &i) in argmax.iter().enumerate() {
                        dx.data_mut()[i * cols + j] = out_grad.data()[j];
                    }
                    self.accumulate(&mut grads, *x, dx);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.nodes[p.0].value.len();
                        if self.needs(p) {
                            let piece = out_grad.data()[offset..offset + len].to_vec();
                            self.accumulate(&mut grads, p, Tensor::from_parts(vec![len], piece));
                        }
                        offset += len;
                    }
                }
                Op::SumScalars(parts) => {
                    for &p in parts {
                        if self.needs(p) {
                            self.accumulate(&mut grads, p, out_grad.clone());
                        }
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
        match &mut grads[v.0] {
            Some(existing) => {
                for (e, d) in existing.data_mut().iter_mut().zip(delta.data()) {
                    *e += d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }
}
