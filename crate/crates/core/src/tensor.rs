//! Dense f64 tensors with tape-based reverse-mode differentiation.
//!
//! A [`Graph`] is an append-only tape: every operation pushes one node
//! holding the forward value and enough information to run its backward
//! rule. [`Graph::backward`] walks the tape once in reverse append order,
//! accumulating gradients additively wherever a tensor feeds several
//! consumers. There is no broadcasting: binary elementwise ops require
//! equal shapes and anything else is a dedicated op with an explicit
//! backward rule.
//!
//! Conventions baked in here and relied on elsewhere:
//! - `abs` and `relu` use subgradient 0 at 0
//! - `gelu` is the tanh approximation
//! - top-k selection is a stop-gradient: masks enter the tape as constants
//! - all transcendentals go through `libm` for cross-platform bit equality

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Clamp bounds applied inside the binary cross-entropy loss.
pub const BCE_EPS: f64 = 1e-7;
/// Epsilon inside layer normalization's variance term.
pub const LAYERNORM_EPS: f64 = 1e-5;

/// A dense row-major f64 tensor value.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != data.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument {
                op: "tensor",
                msg: alloc::format!(
                    "shape {:?} does not describe {} elements",
                    shape,
                    data.len()
                ),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Tensor {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Tensor {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Tensor> {
        Tensor::new(vec![rows, cols], data)
    }

    /// Normal init with the given standard deviation.
    pub fn randn(shape: Vec<usize>, std: f64, rng: &mut Rng) -> Tensor {
        let numel: usize = shape.iter().product();
        Tensor {
            shape,
            data: (0..numel).map(|_| rng.normal() * std).collect(),
        }
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Row count for rank-2 tensors.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Column count for rank-2 tensors.
    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn item(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: TensorId, b: TensorId },
    Add { a: TensorId, b: TensorId },
    Sub { a: TensorId, b: TensorId },
    Mul { a: TensorId, b: TensorId },
    AddBias { m: TensorId, bias: TensorId },
    Abs { a: TensorId },
    Relu { a: TensorId },
    Gelu { a: TensorId },
    Sigmoid { a: TensorId },
    Scale { a: TensorId, c: f64 },
    AddConst { a: TensorId },
    Softmax { a: TensorId },
    MaskedRowSoftmax { a: TensorId },
    LayerNorm { x: TensorId, gain: TensorId, bias: TensorId },
    Embed { table: TensorId, ids: Vec<usize> },
    Row { a: TensorId, index: usize },
    SliceCols { a: TensorId, start: usize, len: usize },
    ConcatCols { parts: Vec<TensorId> },
    Reshape { a: TensorId },
    Transpose { a: TensorId },
    WeightedSum { items: Vec<TensorId>, weights: TensorId },
    Sum { a: TensorId },
    Mean { a: TensorId },
    BceLoss { p: TensorId, targets: Vec<f64> },
    MseLoss { a: TensorId, b: TensorId },
}

struct Node {
    value: Tensor,
    grad: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Append-only computation tape. One tape per forward/backward pass.
pub struct Graph {
    nodes: Vec<Node>,
    flops: u64,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn gelu_tanh(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + libm::tanh(C * (x + 0.044715 * x * x * x)))
}

fn gelu_tanh_deriv(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let inner = C * (x + 0.044715 * x * x * x);
    let t = libm::tanh(inner);
    let dinner = C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Indices of the `k` largest values, ties broken by lower index first.
/// Returned sorted ascending. This is the stop-gradient top-k selection:
/// the caller turns the indices into a constant mask.
pub fn topk_indices(values: &[f64], k: usize) -> Result<Vec<usize>> {
    let d = values.len();
    if k == 0 || k > d {
        return Err(Error::InvalidArgument {
            op: "topk",
            msg: alloc::format!("k={k} out of range for {d} dimensions"),
        });
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| {
        values[j]
            .total_cmp(&values[i])
            .then_with(|| i.cmp(&j))
    });
    let mut picked: Vec<usize> = order[..k].to_vec();
    picked.sort_unstable();
    Ok(picked)
}

impl Graph {
    pub fn new() -> Graph {
        Graph {
            nodes: Vec::new(),
            flops: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Total floating-point operations recorded for forward computation,
    /// under the cost model documented in the analysis module.
    pub fn flops(&self) -> u64 {
        self.flops
    }

    /// Charge additional work that happens outside tape ops (e.g. the
    /// top-k selection pass).
    pub fn add_flops(&mut self, n: u64) {
        self.flops += n;
    }

    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].grad
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> TensorId {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> TensorId {
        self.push(value, Op::Leaf, false)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> TensorId {
        let grad = vec![0.0; value.numel()];
        self.nodes.push(Node {
            value,
            grad,
            op,
            requires_grad,
        });
        TensorId(self.nodes.len() - 1)
    }

    fn any_grad(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    fn check_rank2(&self, op: &'static str, id: TensorId) -> Result<(usize, usize)> {
        let s = self.value(id).shape();
        if s.len() != 2 {
            return Err(Error::InvalidArgument {
                op,
                msg: alloc::format!("expected rank-2 tensor, got shape {s:?}"),
            });
        }
        Ok((s[0], s[1]))
    }

    // ── binary elementwise (equal shapes, no broadcasting) ─────────────

    fn check_same_shape(&self, op: &'static str, a: TensorId, b: TensorId) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.check_same_shape("add", a, b)?;
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        self.flops += data.len() as u64;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor { shape, data }, Op::Add { a, b }, rg))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.check_same_shape("sub", a, b)?;
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        self.flops += data.len() as u64;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor { shape, data }, Op::Sub { a, b }, rg))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.check_same_shape("mul", a, b)?;
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        self.flops += data.len() as u64;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor { shape, data }, Op::Mul { a, b }, rg))
    }

    // ── unary elementwise ──────────────────────────────────────────────

    pub fn abs(&mut self, a: TensorId) -> TensorId {
        let data: Vec<f64> = self.value(a).data().iter().map(|x| libm::fabs(*x)).collect();
        let shape = self.value(a).shape().to_vec();
        self.flops += data.len() as u64;
        let rg = self.requires_grad(a);
        self.push(Tensor { shape, data }, Op::Abs { a }, rg)
    }

    pub fn relu(&mut self, a: TensorId) -> TensorId {
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .map(|&x| if x > 0.0 { x } else { 0.0 })
            .collect();
        let shape = self.value(a).shape().to_vec();
        self.flops += data.len() as u64;
        let rg = self.requires_grad(a);
        self.push(Tensor { shape, data }, Op::Relu { a }, rg)
    }

    pub fn gelu(&mut self, a: TensorId) -> TensorId {
        let data: Vec<f64> = self.value(a).data().iter().map(|&x| gelu_tanh(x)).collect();
        let shape = self.value(a).shape().to_vec();
        self.flops += 10 * data.len() as u64;
        let rg = self.requires_grad(a);
        self.push(Tensor { shape, data }, Op::Gelu { a }, rg)
    }

    pub fn sigmoid(&mut self, a: TensorId) -> TensorId {
        let data: Vec<f64> = self.value(a).data().iter().map(|&x| sigmoid(x)).collect();
        let shape = self.value(a).shape().to_vec();
        self.flops += 4 * data.len() as u64;
        let rg = self.requires_grad(a);
        self.push(Tensor { shape, data }, Op::Sigmoid { a }, rg)
    }

    pub fn scale(&mut self, a: TensorId, c: f64) -> TensorId {
        let data: Vec<f64> = self.value(a).data().iter().map(|x| x * c).collect();
        let shape = self.value(a).shape().to_vec();
        self.flops += data.len() as u64;
        let rg = self.requires_grad(a);
        self.push(Tensor { shape, data }, Op::Scale { a, c }, rg)
    }

    pub fn add_const(&mut self, a: TensorId, c: f64) -> TensorId {
        let data: Vec<f64> = self.value(a).data().iter().map(|x| x + c).collect();
        let shape = self.value(a).shape().to_vec();
        self.flops += data.len() as u64;
        let rg = self.requires_grad(a);
        self.push(Tensor { shape, data }, Op::AddConst { a }, rg)
    }

    /// Inverted dropout: zeroes each element with probability `p` and
    /// scales survivors by 1/(1-p). Identity when `train` is false or
    /// `p == 0`. The mask enters the tape as a constant.
    pub fn dropout(&mut self, a: TensorId, p: f64, train: bool, rng: &mut Rng) -> Result<TensorId> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument {
                op: "dropout",
                msg: alloc::format!("p={p} outside [0,1)"),
            });
        }
        if !train || p == 0.0 {
            return Ok(a);
        }
        let keep_scale = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(a).numel())
            .map(|_| if rng.bernoulli(p) { 0.0 } else { keep_scale })
            .collect();
        let shape = self.value(a).shape().to_vec();
        let mask_id = self.constant(Tensor { shape, data: mask });
        self.mul(a, mask_id)
    }

    // ── linear algebra ─────────────────────────────────────────────────

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (m, k) = self.check_rank2("matmul", a)?;
        let (k2, n) = self.check_rank2("matmul", b)?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &av[i * k..(i + 1) * k];
            let orow = &mut out[i * n..(i + 1) * n];
            for (p, &apk) in arow.iter().enumerate() {
                let brow = &bv[p * n..(p + 1) * n];
                for j in 0..n {
                    orow[j] += apk * brow[j];
                }
            }
        }
        self.flops += 2 * (m * k * n) as u64;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(
            Tensor {
                shape: vec![m, n],
                data: out,
            },
            Op::MatMul { a, b },
            rg,
        ))
    }

    /// Adds a `[cols]` bias vector to every row of a `[rows, cols]` matrix.
    pub fn add_bias(&mut self, m: TensorId, bias: TensorId) -> Result<TensorId> {
        let (rows, cols) = self.check_rank2("add_bias", m)?;
        if self.value(bias).shape() != [cols] {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                lhs: self.value(m).shape().to_vec(),
                rhs: self.value(bias).shape().to_vec(),
            });
        }
        let bv = self.value(bias).data().to_vec();
        let data: Vec<f64> = self
            .value(m)
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + bv[i % cols])
            .collect();
        self.flops += (rows * cols) as u64;
        let rg = self.any_grad(&[m, bias]);
        Ok(self.push(
            Tensor {
                shape: vec![rows, cols],
                data,
            },
            Op::AddBias { m, bias },
            rg,
        ))
    }

    pub fn transpose(&mut self, a: TensorId) -> Result<TensorId> {
        let (r, c) = self.check_rank2("transpose", a)?;
        let av = self.value(a).data();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = av[i * c + j];
            }
        }
        let rg = self.requires_grad(a);
        Ok(self.push(
            Tensor {
                shape: vec![c, r],
                data,
            },
            Op::Transpose { a },
            rg,
        ))
    }

    pub fn reshape(&mut self, a: TensorId, shape: Vec<usize>) -> Result<TensorId> {
        let numel: usize = shape.iter().product();
        if numel != self.value(a).numel() {
            return Err(Error::InvalidArgument {
                op: "reshape",
                msg: alloc::format!(
                    "cannot reshape {:?} into {:?}",
                    self.value(a).shape(),
                    shape
                ),
            });
        }
        let data = self.value(a).data().to_vec();
        let rg = self.requires_grad(a);
        Ok(self.push(Tensor { shape, data }, Op::Reshape { a }, rg))
    }

    // ── structured ops ─────────────────────────────────────────────────

    /// Softmax over a rank-1 tensor, computed with max subtraction.
    pub fn softmax(&mut self, a: TensorId) -> Result<TensorId> {
        let s = self.value(a).shape();
        if s.len() != 1 {
            return Err(Error::InvalidArgument {
                op: "softmax",
                msg: alloc::format!("expected rank-1 tensor, got shape {s:?}"),
            });
        }
        let xs = self.value(a).data();
        let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut data: Vec<f64> = xs.iter().map(|&x| libm::exp(x - max)).collect();
        let total: f64 = data.iter().sum();
        for v in &mut data {
            *v /= total;
        }
        let shape = s.to_vec();
        self.flops += 5 * data.len() as u64;
        let rg = self.requires_grad(a);
        Ok(self.push(Tensor { shape, data }, Op::Softmax { a }, rg))
    }

    /// Row-wise softmax over a `[rows, cols]` matrix where only the
    /// columns flagged in `keep` participate; dropped columns get exactly
    /// 0. Used for attention with padding masked out.
    pub fn masked_row_softmax(&mut self, a: TensorId, keep: &[bool]) -> Result<TensorId> {
        let (rows, cols) = self.check_rank2("masked_row_softmax", a)?;
        if keep.len() != cols {
            return Err(Error::InvalidArgument {
                op: "masked_row_softmax",
                msg: alloc::format!("mask length {} != {cols} columns", keep.len()),
            });
        }
        if !keep.iter().any(|&b| b) {
            return Err(Error::InvalidArgument {
                op: "masked_row_softmax",
                msg: alloc::string::String::from("all columns masked out"),
            });
        }
        let av = self.value(a).data();
        let mut data = vec![0.0; rows * cols];
        let kept = keep.iter().filter(|&&b| b).count();
        for i in 0..rows {
            let row = &av[i * cols..(i + 1) * cols];
            let mut max = f64::NEG_INFINITY;
            for (j, &x) in row.iter().enumerate() {
                if keep[j] && x > max {
                    max = x;
                }
            }
            let out = &mut data[i * cols..(i + 1) * cols];
            let mut total = 0.0;
            for j in 0..cols {
                if keep[j] {
                    let e = libm::exp(row[j] - max);
                    out[j] = e;
                    total += e;
                }
            }
            for v in out.iter_mut() {
                *v /= total;
            }
        }
        self.flops += (5 * kept * rows) as u64;
        let rg = self.requires_grad(a);
        Ok(self.push(
            Tensor {
                shape: vec![rows, cols],
                data,
            },
            Op::MaskedRowSoftmax { a },
            rg,
        ))
    }

    /// Layer normalization over the last dimension with affine transform.
    /// `x` is `[rows, d]` or `[d]`; `gain` and `bias` are `[d]`.
    pub fn layernorm(&mut self, x: TensorId, gain: TensorId, bias: TensorId) -> Result<TensorId> {
        let xs = self.value(x).shape().to_vec();
        let d = *xs.last().unwrap();
        if self.value(gain).shape() != [d] || self.value(bias).shape() != [d] {
            return Err(Error::ShapeMismatch {
                op: "layernorm",
                lhs: xs,
                rhs: self.value(gain).shape().to_vec(),
            });
        }
        let xv = self.value(x).data();
        let gv = self.value(gain).data().to_vec();
        let bv = self.value(bias).data().to_vec();
        let rows = xv.len() / d;
        let mut data = vec![0.0; xv.len()];
        for r in 0..rows {
            let xrow = &xv[r * d..(r + 1) * d];
            let mean = xrow.iter().sum::<f64>() / d as f64;
            let var = xrow.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv_std = 1.0 / libm::sqrt(var + LAYERNORM_EPS);
            let orow = &mut data[r * d..(r + 1) * d];
            for j in 0..d {
                orow[j] = (xrow[j] - mean) * inv_std * gv[j] + bv[j];
            }
        }
        self.flops += 8 * xv.len() as u64;
        let rg = self.any_grad(&[x, gain, bias]);
        Ok(self.push(
            Tensor {
                shape: xs,
                data,
            },
            Op::LayerNorm { x, gain, bias },
            rg,
        ))
    }

    /// Gathers rows of `table` (`[vocab, d]`) at `ids`, yielding `[len, d]`.
    pub fn embed(&mut self, table: TensorId, ids: &[usize]) -> Result<TensorId> {
        let (vocab, d) = self.check_rank2("embed", table)?;
        if ids.is_empty() {
            return Err(Error::InvalidArgument {
                op: "embed",
                msg: alloc::string::String::from("empty id list"),
            });
        }
        for &id in ids {
            if id >= vocab {
                return Err(Error::Vocabulary {
                    token_id: id,
                    vocab_size: vocab,
                });
            }
        }
        let tv = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            data.extend_from_slice(&tv[id * d..(id + 1) * d]);
        }
        let rg = self.requires_grad(table);
        Ok(self.push(
            Tensor {
                shape: vec![ids.len(), d],
                data,
            },
            Op::Embed {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Extracts row `index` of a `[rows, cols]` matrix as a `[cols]` vector.
    pub fn row(&mut self, a: TensorId, index: usize) -> Result<TensorId> {
        let (rows, cols) = self.check_rank2("row", a)?;
        if index >= rows {
            return Err(Error::InvalidArgument {
                op: "row",
                msg: alloc::format!("row {index} out of {rows}"),
            });
        }
        let data = self.value(a).data()[index * cols..(index + 1) * cols].to_vec();
        let rg = self.requires_grad(a);
        Ok(self.push(
            Tensor {
                shape: vec![cols],
                data,
            },
            Op::Row { a, index },
            rg,
        ))
    }

    /// Extracts columns `[start, start+len)` of a matrix.
    pub fn slice_cols(&mut self, a: TensorId, start: usize, len: usize) -> Result<TensorId> {
        let (rows, cols) = self.check_rank2("slice_cols", a)?;
        if start + len > cols || len == 0 {
            return Err(Error::InvalidArgument {
                op: "slice_cols",
                msg: alloc::format!("slice [{start}, {}) out of {cols} columns", start + len),
            });
        }
        let av = self.value(a).data();
        let mut data = Vec::with_capacity(rows * len);
        for i in 0..rows {
            data.extend_from_slice(&av[i * cols + start..i * cols + start + len]);
        }
        let rg = self.requires_grad(a);
        Ok(self.push(
            Tensor {
                shape: vec![rows, len],
                data,
            },
            Op::SliceCols { a, start, len },
            rg,
        ))
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument {
                op: "concat_cols",
                msg: alloc::string::String::from("empty part list"),
            });
        }
        let (rows, _) = self.check_rank2("concat_cols", parts[0])?;
        let mut total_cols = 0;
        for &p in parts {
            let (r, c) = self.check_rank2("concat_cols", p)?;
            if r != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: self.value(p).shape().to_vec(),
                });
            }
            total_cols += c;
        }
        let mut data = Vec::with_capacity(rows * total_cols);
        for i in 0..rows {
            for &p in parts {
                let c = self.value(p).cols();
                data.extend_from_slice(&self.value(p).data()[i * c..(i + 1) * c]);
            }
        }
        let rg = self.any_grad(parts);
        Ok(self.push(
            Tensor {
                shape: vec![rows, total_cols],
                data,
            },
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
            rg,
        ))
    }

    /// out = sum_i weights[i] * items[i]; all items share one shape and
    /// `weights` is a `[n]` vector. This is the fusion primitive.
    pub fn weighted_sum(&mut self, items: &[TensorId], weights: TensorId) -> Result<TensorId> {
        if items.is_empty() {
            return Err(Error::InvalidArgument {
                op: "weighted_sum",
                msg: alloc::string::String::from("empty item list"),
            });
        }
        if self.value(weights).shape() != [items.len()] {
            return Err(Error::ShapeMismatch {
                op: "weighted_sum",
                lhs: vec![items.len()],
                rhs: self.value(weights).shape().to_vec(),
            });
        }
        let shape = self.value(items[0]).shape().to_vec();
        for &it in items {
            if self.value(it).shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "weighted_sum",
                    lhs: shape,
                    rhs: self.value(it).shape().to_vec(),
                });
            }
        }
        let numel = self.value(items[0]).numel();
        let mut data = vec![0.0; numel];
        let wv = self.value(weights).data().to_vec();
        for (i, &it) in items.iter().enumerate() {
            let iv = self.value(it).data();
            for j in 0..numel {
                data[j] += wv[i] * iv[j];
            }
        }
        self.flops += 2 * (items.len() * numel) as u64;
        let mut all = items.to_vec();
        all.push(weights);
        let rg = self.any_grad(&all);
        Ok(self.push(
            Tensor { shape, data },
            Op::WeightedSum {
                items: items.to_vec(),
                weights,
            },
            rg,
        ))
    }

    // ── reductions & losses ────────────────────────────────────────────

    pub fn sum(&mut self, a: TensorId) -> TensorId {
        let total: f64 = self.value(a).data().iter().sum();
        self.flops += self.value(a).numel() as u64;
        let rg = self.requires_grad(a);
        self.push(Tensor::scalar(total), Op::Sum { a }, rg)
    }

    pub fn mean(&mut self, a: TensorId) -> TensorId {
        let n = self.value(a).numel();
        let total: f64 = self.value(a).data().iter().sum();
        self.flops += n as u64;
        let rg = self.requires_grad(a);
        self.push(Tensor::scalar(total / n as f64), Op::Mean { a }, rg)
    }

    /// Mean binary cross-entropy of probabilities `p` against constant
    /// targets in {0,1}. Probabilities are clamped to [1e-7, 1-1e-7].
    pub fn bce_loss(&mut self, p: TensorId, targets: &[f64]) -> Result<TensorId> {
        let n = self.value(p).numel();
        if targets.len() != n {
            return Err(Error::ShapeMismatch {
                op: "bce_loss",
                lhs: self.value(p).shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        if targets.iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::InvalidArgument {
                op: "bce_loss",
                msg: alloc::string::String::from("targets must be 0 or 1"),
            });
        }
        let mut total = 0.0;
        for (&pi, &yi) in self.value(p).data().iter().zip(targets) {
            let pc = pi.clamp(BCE_EPS, 1.0 - BCE_EPS);
            total -= yi * libm::log(pc) + (1.0 - yi) * libm::log(1.0 - pc);
        }
        self.flops += 8 * n as u64;
        let rg = self.requires_grad(p);
        Ok(self.push(
            Tensor::scalar(total / n as f64),
            Op::BceLoss {
                p,
                targets: targets.to_vec(),
            },
            rg,
        ))
    }

    /// Mean squared error between two equal-shape tensors.
    pub fn mse_loss(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.check_same_shape("mse_loss", a, b)?;
        let n = self.value(a).numel();
        let total: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        self.flops += 4 * n as u64;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(
            Tensor::scalar(total / n as f64),
            Op::MseLoss { a, b },
            rg,
        ))
    }

    // ── backward ───────────────────────────────────────────────────────

    /// Reverse-mode sweep seeding d(loss)/d(loss) = 1. `loss` must be a
    /// scalar. Visits each node exactly once, in reverse append order.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::InvalidArgument {
                op: "backward",
                msg: alloc::format!(
                    "loss must be scalar, got shape {:?}",
                    self.value(loss).shape()
                ),
            });
        }
        self.nodes[loss.0].grad[0] = 1.0;
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let grad = core::mem::take(&mut self.nodes[i].grad);
            self.propagate(i, &op, &grad);
            self.nodes[i].grad = grad;
        }
        Ok(())
    }

    fn acc(&mut self, id: TensorId, delta: &[f64]) {
        let g = &mut self.nodes[id.0].grad;
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += di;
        }
    }

    fn propagate(&mut self, node_idx: usize, op: &Op, grad: &[f64]) {
        match *op {
            Op::Leaf => {}

            Op::MatMul { a, b } => {
                let (m, k) = {
                    let s = self.value(a).shape();
                    (s[0], s[1])
                };
                let n = self.value(b).cols();
                // dA[i,p] = sum_j dC[i,j] * B[p,j]
                if self.requires_grad(a) {
                    let bv = self.value(b).data().to_vec();
                    let ga = &mut self.nodes[a.0].grad;
                    for i in 0..m {
                        let grow = &grad[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            let mut s = 0.0;
                            for j in 0..n {
                                s += grow[j] * brow[j];
                            }
                            ga[i * k + p] += s;
                        }
                    }
                }
                // dB[p,j] = sum_i A[i,p] * dC[i,j]
                if self.requires_grad(b) {
                    let av = self.value(a).data().to_vec();
                    let gb = &mut self.nodes[b.0].grad;
                    for i in 0..m {
                        let grow = &grad[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = av[i * k + p];
                            if aip != 0.0 {
                                let brow = &mut gb[p * n..(p + 1) * n];
                                for j in 0..n {
                                    brow[j] += aip * grow[j];
                                }
                            }
                        }
                    }
                }
            }

            Op::Add { a, b } => {
                if self.requires_grad(a) {
                    self.acc(a, grad);
                }
                if self.requires_grad(b) {
                    self.acc(b, grad);
                }
            }

            Op::Sub { a, b } => {
                if self.requires_grad(a) {
                    self.acc(a, grad);
                }
                if self.requires_grad(b) {
                    let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
                    self.acc(b, &neg);
                }
            }

            Op::Mul { a, b } => {
                if self.requires_grad(a) {
                    let delta: Vec<f64> = grad
                        .iter()
                        .zip(self.value(b).data())
                        .map(|(g, y)| g * y)
                        .collect();
                    self.acc(a, &delta);
                }
                if self.requires_grad(b) {
                    let delta: Vec<f64> = grad
                        .iter()
                        .zip(self.value(a).data())
                        .map(|(g, x)| g * x)
                        .collect();
                    self.acc(b, &delta);
                }
            }

            Op::AddBias { m, bias } => {
                let cols = self.value(bias).numel();
                if self.requires_grad(m) {
                    self.acc(m, grad);
                }
                if self.requires_grad(bias) {
                    let mut delta = vec![0.0; cols];
                    for (i, g) in grad.iter().enumerate() {
                        delta[i % cols] += g;
                    }
                    self.acc(bias, &delta);
                }
            }

            Op::Abs { a } => {
                if self.requires_grad(a) {
                    // subgradient 0 at 0
                    let delta: Vec<f64> = grad
                        .iter()
                        .zip(self.value(a).data())
                        .map(|(g, &x)| {
                            if x > 0.0 {
                                *g
                            } else if x < 0.0 {
                                -*g
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    self.acc(a, &delta);
                }
            }

            Op::Relu { a } => {
                if self.requires_grad(a) {
                    let delta: Vec<f64> = grad
                        .iter()
                        .zip(self.value(a).data())
                        .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                        .collect();
                    self.acc(a, &delta);
                }
            }

            Op::Gelu { a } => {
                if self.requires_grad(a) {
                    let delta: Vec<f64> = grad
                        .iter()
                        .zip(self.value(a).data())
                        .map(|(g, &x)| g * gelu_tanh_deriv(x))
                        .collect();
                    self.acc(a, &delta);
                }
            }

            Op::Sigmoid { a } => {
                if self.requires_grad(a) {
                    let yv = &self.nodes[node_idx].value;
                    let delta: Vec<f64> = grad
                        .iter()
                        .zip(yv.data())
                        .map(|(g, &y)| g * y * (1.0 - y))
                        .collect();
                    self.acc(a, &delta);
                }
            }

            Op::Scale { a, c } => {
                if self.requires_grad(a) {
                    let delta: Vec<f64> = grad.iter().map(|g| g * c).collect();
                    self.acc(a, &delta);
                }
            }

            Op::AddConst { a } => {
                if self.requires_grad(a) {
                    self.acc(a, grad);
                }
            }

            Op::Softmax { a } => {
                if self.requires_grad(a) {
                    let y = self.nodes[node_idx].value.data().to_vec();
                    let dot: f64 = y.iter().zip(grad).map(|(yi, gi)| yi * gi).sum();
                    let delta: Vec<f64> = y
                        .iter()
                        .zip(grad)
                        .map(|(yi, gi)| yi * (gi - dot))
                        .collect();
                    self.acc(a, &delta);
                }
            }

            Op::MaskedRowSoftmax { a } => {
                if self.requires_grad(a) {
                    let y = self.nodes[node_idx].value.data().to_vec();
                    let cols = self.nodes[node_idx].value.cols();
                    let rows = y.len() / cols;
                    let mut delta = vec![0.0; y.len()];
                    for r in 0..rows {
                        let yr = &y[r * cols..(r + 1) * cols];
                        let gr = &grad[r * cols..(r + 1) * cols];
                        let dot: f64 = yr.iter().zip(gr).map(|(yi, gi)| yi * gi).sum();
                        let dr = &mut delta[r * cols..(r + 1) * cols];
                        for j in 0..cols {
                            dr[j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    self.acc(a, &delta);
                }
            }

            Op::LayerNorm { x, gain, bias } => {
                let d = self.value(gain).numel();
                let xv = self.value(x).data().to_vec();
                let gv = self.value(gain).data().to_vec();
                let rows = xv.len() / d;
                let mut dx = vec![0.0; xv.len()];
                let mut dgain = vec![0.0; d];
                let mut dbias = vec![0.0; d];
                for r in 0..rows {
                    let xrow = &xv[r * d..(r + 1) * d];
                    let grow = &grad[r * d..(r + 1) * d];
                    let mean = xrow.iter().sum::<f64>() / d as f64;
                    let var =
                        xrow.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                    let inv_std = 1.0 / libm::sqrt(var + LAYERNORM_EPS);
                    // xhat_j = (x_j - mean) * inv_std
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    let mut dxhat = vec![0.0; d];
                    for j in 0..d {
                        let xhat = (xrow[j] - mean) * inv_std;
                        dgain[j] += grow[j] * xhat;
                        dbias[j] += grow[j];
                        dxhat[j] = grow[j] * gv[j];
                        sum_dxhat += dxhat[j];
                        sum_dxhat_xhat += dxhat[j] * xhat;
                    }
                    let dxr = &mut dx[r * d..(r + 1) * d];
                    for j in 0..d {
                        let xhat = (xrow[j] - mean) * inv_std;
                        dxr[j] = inv_std
                            * (dxhat[j] - sum_dxhat / d as f64 - xhat * sum_dxhat_xhat / d as f64);
                    }
                }
                if self.requires_grad(x) {
                    self.acc(x, &dx);
                }
                if self.requires_grad(gain) {
                    self.acc(gain, &dgain);
                }
                if self.requires_grad(bias) {
                    self.acc(bias, &dbias);
                }
            }

            Op::Embed { table, ref ids } => {
                if self.requires_grad(table) {
                    let d = self.value(table).cols();
                    let gt = &mut self.nodes[table.0].grad;
                    for (l, &id) in ids.iter().enumerate() {
                        let grow = &grad[l * d..(l + 1) * d];
                        let trow = &mut gt[id * d..(id + 1) * d];
                        for j in 0..d {
                            trow[j] += grow[j];
                        }
                    }
                }
            }

            Op::Row { a, index } => {
                if self.requires_grad(a) {
                    let cols = self.value(a).cols();
                    let ga = &mut self.nodes[a.0].grad;
                    for (j, g) in grad.iter().enumerate() {
                        ga[index * cols + j] += g;
                    }
                }
            }

            Op::SliceCols { a, start, len } => {
                if self.requires_grad(a) {
                    let cols = self.value(a).cols();
                    let rows = self.value(a).rows();
                    let ga = &mut self.nodes[a.0].grad;
                    for i in 0..rows {
                        for j in 0..len {
                            ga[i * cols + start + j] += grad[i * len + j];
                        }
                    }
                }
            }

            Op::ConcatCols { ref parts } => {
                let rows = self.nodes[node_idx].value.rows();
                let total_cols = self.nodes[node_idx].value.cols();
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    if self.requires_grad(p) {
                        let gp = &mut self.nodes[p.0].grad;
                        for i in 0..rows {
                            for j in 0..c {
                                gp[i * c + j] += grad[i * total_cols + offset + j];
                            }
                        }
                    }
                    offset += c;
                }
            }

            Op::Reshape { a } => {
                if self.requires_grad(a) {
                    self.acc(a, grad);
                }
            }

            Op::Transpose { a } => {
                if self.requires_grad(a) {
                    let (r, c) = {
                        let s = self.value(a).shape();
                        (s[0], s[1])
                    };
                    // out is [c, r]; dA[i,j] += dOut[j,i]
                    let ga = &mut self.nodes[a.0].grad;
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += grad[j * r + i];
                        }
                    }
                }
            }

            Op::WeightedSum {
                ref items,
                weights,
            } => {
                let wv = self.value(weights).data().to_vec();
                let numel = self.nodes[node_idx].value.numel();
                let mut dw = vec![0.0; items.len()];
                for (i, &it) in items.iter().enumerate() {
                    if self.requires_grad(it) {
                        let delta: Vec<f64> = grad.iter().map(|g| g * wv[i]).collect();
                        self.acc(it, &delta);
                    }
                    let iv = self.value(it).data();
                    let mut s = 0.0;
                    for j in 0..numel {
                        s += iv[j] * grad[j];
                    }
                    dw[i] = s;
                }
                if self.requires_grad(weights) {
                    self.acc(weights, &dw);
                }
            }

            Op::Sum { a } => {
                if self.requires_grad(a) {
                    let g = grad[0];
                    let delta = vec![g; self.value(a).numel()];
                    self.acc(a, &delta);
                }
            }

            Op::Mean { a } => {
                if self.requires_grad(a) {
                    let n = self.value(a).numel();
                    let g = grad[0] / n as f64;
                    let delta = vec![g; n];
                    self.acc(a, &delta);
                }
            }

            Op::BceLoss { p, ref targets } => {
                if self.requires_grad(p) {
                    let n = targets.len();
                    let g = grad[0] / n as f64;
                    let delta: Vec<f64> = self
                        .value(p)
                        .data()
                        .iter()
                        .zip(targets)
                        .map(|(&pi, &yi)| {
                            // clamp subgradient: zero outside the clamp range
                            if pi < BCE_EPS || pi > 1.0 - BCE_EPS {
                                0.0
                            } else {
                                g * (-yi / pi + (1.0 - yi) / (1.0 - pi))
                            }
                        })
                        .collect();
                    self.acc(p, &delta);
                }
            }

            Op::MseLoss { a, b } => {
                let n = self.value(a).numel();
                let g = grad[0] / n as f64;
                if self.requires_grad(a) {
                    let delta: Vec<f64> = self
                        .value(a)
                        .data()
                        .iter()
                        .zip(self.value(b).data())
                        .map(|(x, y)| 2.0 * g * (x - y))
                        .collect();
                    self.acc(a, &delta);
                }
                if self.requires_grad(b) {
                    let delta: Vec<f64> = self
                        .value(a)
                        .data()
                        .iter()
                        .zip(self.value(b).data())
                        .map(|(x, y)| -2.0 * g * (x - y))
                        .collect();
                    self.acc(b, &delta);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn leaf(g: &mut Graph, shape: Vec<usize>, data: Vec<f64>) -> TensorId {
        g.leaf(Tensor::new(shape, data).unwrap(), true)
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::new();
        let i2 = leaf(&mut g, vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let m = leaf(&mut g, vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let c = g.matmul(i2, m).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_projector_row() {
        let mut g = Graph::new();
        let a = leaf(&mut g, vec![2, 2], vec![1.0, 0.0, 0.0, 0.0]);
        let b = leaf(&mut g, vec![2, 2], vec![5.0, 6.0, 7.0, 8.0]);
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[5.0, 6.0, 0.0, 0.0]);
    }

    #[test]
    fn matmul_grad_of_sum() {
        // d sum(A.B) / dA at A=ones, B=[[1,2],[3,4]] is [[3,7],[3,7]]
        let mut g = Graph::new();
        let a = leaf(&mut g, vec![2, 2], vec![1.0, 1.0, 1.0, 1.0]);
        let b = leaf(&mut g, vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let c = g.matmul(a, b).unwrap();
        let loss = g.sum(c);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(a), &[3.0, 7.0, 3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut g = Graph::new();
        let a = leaf(&mut g, vec![2, 3], vec![0.0; 6]);
        let b = leaf(&mut g, vec![2, 2], vec![0.0; 4]);
        match g.matmul(a, b) {
            Err(Error::ShapeMismatch { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 2]);
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn abs_definition() {
        let mut g = Graph::new();
        let x = leaf(&mut g, vec![3], vec![-1.0, 0.0, 2.0]);
        let y = g.abs(x);
        assert_eq!(g.value(y).data(), &[1.0, 0.0, 2.0]);
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut g = Graph::new();
        let x = leaf(&mut g, vec![1], vec![0.0]);
        let y = g.sigmoid(x);
        assert_eq!(g.value(y).data(), &[0.5]);
    }

    #[test]
    fn relu_grad_analytic() {
        let mut g = Graph::new();
        let x = leaf(&mut g, vec![2], vec![1.0, -1.0]);
        let y = g.relu(x);
        let loss = g.sum(y);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x), &[1.0, 0.0]);
    }

    #[test]
    fn softmax_uniform_13() {
        let mut g = Graph::new();
        let x = leaf(&mut g, vec![13], vec![0.0; 13]);
        let y = g.softmax(x).unwrap();
        for &v in g.value(y).data() {
            assert!((v - 1.0 / 13.0).abs() < 1e-15);
        }
        let total: f64 = g.value(y).data().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_ln2_analytic() {
        let mut g = Graph::new();
        let x = leaf(&mut g, vec![2], vec![libm::log(2.0), 0.0]);
        let y = g.softmax(x).unwrap();
        assert!((g.value(y).data()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((g.value(y).data()[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn layernorm_constant_input_is_zero() {
        let mut g = Graph::new();
        let x = leaf(&mut g, vec![3], vec![1.0, 1.0, 1.0]);
        let gain = leaf(&mut g, vec![3], vec![1.0, 1.0, 1.0]);
        let bias = leaf(&mut g, vec![3], vec![0.0, 0.0, 0.0]);
        let y = g.layernorm(x, gain, bias).unwrap();
        for &v in g.value(y).data() {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn layernorm_two_point() {
        let mut g = Graph::new();
        let x = leaf(&mut g, vec![2], vec![1.0, 3.0]);
        let gain = leaf(&mut g, vec![2], vec![1.0, 1.0]);
        let bias = leaf(&mut g, vec![2], vec![0.0, 0.0]);
        let y = g.layernorm(x, gain, bias).unwrap();
        // mean 2, var 1 (+eps): close to [-1, 1]
        assert!((g.value(y).data()[0] + 1.0).abs() < 1e-5);
        assert!((g.value(y).data()[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn layernorm_affine_matches_direct_formula() {
        // independent oracle: evaluate the formula with plain arithmetic
        let xs = [2.0, 4.0, 6.0];
        let mean = 4.0;
        let var = ((2.0f64 - 4.0).powi(2) + 0.0 + (6.0f64 - 4.0).powi(2)) / 3.0;
        let inv = 1.0 / (var + LAYERNORM_EPS).sqrt();
        let expect: alloc::vec::Vec<f64> =
            xs.iter().map(|&x| (x - mean) * inv * 2.0 + 1.0).collect();

        let mut g = Graph::new();
        let x = leaf(&mut g, vec![3], xs.to_vec());
        let gain = leaf(&mut g, vec![3], vec![2.0; 3]);
        let bias = leaf(&mut g, vec![3], vec![1.0; 3]);
        let y = g.layernorm(x, gain, bias).unwrap();
        for (got, want) in g.value(y).data().iter().zip(&expect) {
            assert!((got - want).abs() < 1e-12, "got {got}, want {want}");
        }
    }

    #[test]
    fn topk_direct_ordering() {
        let picked = topk_indices(&[0.1, 0.5, 0.3, 0.2], 2).unwrap();
        assert_eq!(picked, vec![1, 2]);
    }

    #[test]
    fn topk_tie_break_lowest_index() {
        let picked = topk_indices(&[0.0, 0.0, 0.0, 0.0], 2).unwrap();
        assert_eq!(picked, vec![0, 1]);
    }

    #[test]
    fn topk_full_selection() {
        let picked = topk_indices(&[0.4, 0.2, 0.9], 3).unwrap();
        assert_eq!(picked, vec![0, 1, 2]);
    }

    #[test]
    fn topk_k_out_of_range() {
        assert!(topk_indices(&[1.0, 2.0], 3).is_err());
        assert!(topk_indices(&[1.0, 2.0], 0).is_err());
    }

    #[test]
    fn backward_sum_linearity() {
        let mut g = Graph::new();
        let x = leaf(&mut g, vec![2], vec![3.0, 4.0]);
        let loss = g.sum(x);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x), &[1.0, 1.0]);
    }

    #[test]
    fn backward_sum_of_squares() {
        let mut g = Graph::new();
        let x = leaf(&mut g, vec![2], vec![3.0, 4.0]);
        let sq = g.mul(x, x).unwrap();
        let loss = g.sum(sq);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x), &[6.0, 8.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = leaf(&mut g, vec![2], vec![1.0, 2.0]);
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn bce_loss_values() {
        let mut g = Graph::new();
        let p = leaf(&mut g, vec![1], vec![0.5]);
        let l = g.bce_loss(p, &[1.0]).unwrap();
        assert!((g.value(l).item() - libm::log(2.0)).abs() < 1e-12);

        let mut g = Graph::new();
        let p = leaf(&mut g, vec![1], vec![1.0 - 1e-7]);
        let l = g.bce_loss(p, &[1.0]).unwrap();
        assert!(g.value(l).item() < 2e-7);

        let mut g = Graph::new();
        let p = leaf(&mut g, vec![2], vec![0.9, 0.1]);
        let l = g.bce_loss(p, &[1.0, 0.0]).unwrap();
        assert!((g.value(l).item() - (-libm::log(0.9))).abs() < 1e-12);
    }

    #[test]
    fn bce_rejects_bad_targets() {
        let mut g = Graph::new();
        let p = leaf(&mut g, vec![1], vec![0.5]);
        assert!(g.bce_loss(p, &[0.5]).is_err());
    }

    #[test]
    fn mse_loss_values() {
        let mut g = Graph::new();
        let a = leaf(&mut g, vec![2], vec![1.0, -1.0]);
        let b = leaf(&mut g, vec![2], vec![0.0, 0.0]);
        let l = g.mse_loss(a, b).unwrap();
        assert_eq!(g.value(l).item(), 1.0);

        let mut g = Graph::new();
        let a = leaf(&mut g, vec![1], vec![0.3]);
        let b = leaf(&mut g, vec![1], vec![1.0]);
        let l = g.mse_loss(a, b).unwrap();
        assert!((g.value(l).item() - 0.49).abs() < 1e-12);

        let mut g = Graph::new();
        let a = leaf(&mut g, vec![3], vec![1.0, 2.0, 3.0]);
        let l = g.mse_loss(a, a).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
    }

    #[test]
    fn gradients_accumulate_over_consumers() {
        // y = x + x => dy/dx = 2
        let mut g = Graph::new();
        let x = leaf(&mut g, vec![1], vec![5.0]);
        let y = g.add(x, x).unwrap();
        let loss = g.sum(y);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x), &[2.0]);
    }

    #[test]
    fn unreached_leaf_gets_zero_grad() {
        let mut g = Graph::new();
        let x = leaf(&mut g, vec![1], vec![5.0]);
        let orphan = leaf(&mut g, vec![2], vec![1.0, 2.0]);
        let loss = g.sum(x);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(orphan), &[0.0, 0.0]);
    }

    #[test]
    fn dropout_eval_mode_is_identity() {
        let mut g = Graph::new();
        let mut rng = Rng::seed_from(1);
        let x = leaf(&mut g, vec![4], vec![1.0, 2.0, 3.0, 4.0]);
        let y = g.dropout(x, 0.5, false, &mut rng).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn dropout_train_scales_survivors() {
        let mut g = Graph::new();
        let mut rng = Rng::seed_from(1);
        let x = leaf(&mut g, vec![1000], vec![1.0; 1000]);
        let y = g.dropout(x, 0.25, true, &mut rng).unwrap();
        let survivors: usize = g.value(y).data().iter().filter(|&&v| v != 0.0).count();
        for &v in g.value(y).data() {
            assert!(v == 0.0 || (v - 4.0 / 3.0).abs() < 1e-12);
        }
        // roughly 75% survive
        assert!((600..=900).contains(&survivors));
    }

    #[test]
    fn masked_softmax_rows_sum_to_one_over_kept() {
        let mut g = Graph::new();
        let x = leaf(&mut g, vec![2, 4], vec![0.3, -1.0, 2.0, 0.5, 1.0, 1.0, 1.0, 9.0]);
        let keep = [true, true, true, false];
        let y = g.masked_row_softmax(x, &keep).unwrap();
        let v = g.value(y).data();
        for r in 0..2 {
            let row = &v[r * 4..(r + 1) * 4];
            assert_eq!(row[3], 0.0);
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn weighted_sum_uniform_is_mean() {
        let mut g = Graph::new();
        let a = leaf(&mut g, vec![2], vec![1.0, 2.0]);
        let b = leaf(&mut g, vec![2], vec![3.0, 4.0]);
        let w = leaf(&mut g, vec![2], vec![0.5, 0.5]);
        let y = g.weighted_sum(&[a, b], w).unwrap();
        assert_eq!(g.value(y).data(), &[2.0, 3.0]);
    }

    #[test]
    fn embed_gathers_and_scatters() {
        let mut g = Graph::new();
        let table = leaf(&mut g, vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let e = g.embed(table, &[2, 0, 2]).unwrap();
        assert_eq!(g.value(e).data(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        let loss = g.sum(e);
        g.backward(loss).unwrap();
        // row 2 used twice, row 0 once, row 1 never
        assert_eq!(g.grad(table), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn embed_rejects_out_of_vocab() {
        let mut g = Graph::new();
        let table = leaf(&mut g, vec![3, 2], vec![0.0; 6]);
        match g.embed(table, &[3]) {
            Err(Error::Vocabulary {
                token_id,
                vocab_size,
            }) => {
                assert_eq!(token_id, 3);
                assert_eq!(vocab_size, 3);
            }
            other => panic!("expected vocabulary error, got {other:?}"),
        }
    }

    #[test]
    fn slice_concat_roundtrip() {
        let mut g = Graph::new();
        let m = leaf(&mut g, vec![2, 4], (0..8).map(|i| i as f64).collect());
        let left = g.slice_cols(m, 0, 2).unwrap();
        let right = g.slice_cols(m, 2, 2).unwrap();
        let back = g.concat_cols(&[left, right]).unwrap();
        assert_eq!(g.value(back).data(), g.value(m).data());
        let loss = g.sum(back);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(m), &[1.0; 8]);
    }
}
