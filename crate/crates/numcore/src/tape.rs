//! Recording tape for reverse-mode differentiation.
//!
//! Every forward op appends a node holding its output value and the inputs it
//! needs for the backward pass. Nodes are only differentiated when at least
//! one of their inputs traces back to a trainable parameter, so frozen
//! sub-graphs cost a forward pass and nothing more.

use std::sync::Arc;

use crate::error::{NumError, NumResult};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{gemm, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Compressed neighbor lists: the neighbors of row `i` are
/// `indices[offsets[i]..offsets[i + 1]]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborLists {
    offsets: Vec<usize>,
    indices: Vec<usize>,
}

impl NeighborLists {
    pub fn from_lists(lists: &[Vec<usize>]) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        let mut indices = Vec::new();
        offsets.push(0);
        for l in lists {
            indices.extend_from_slice(l);
            offsets.push(indices.len());
        }
        Self { offsets, indices }
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_edges(&self) -> usize {
        self.indices.len()
    }

    #[inline]
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.indices[self.offsets[i]..self.offsets[i + 1]]
    }

    #[inline]
    fn edge_range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    ScaleBy(Var, Var, usize),
    HConcat(Vec<Var>),
    VConcat(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    WhereRows(Vec<bool>, Var, Var),
    Reshape(Var),
    RowSoftmax(Var),
    MaskedLogSoftmax(Var, Vec<bool>),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    Relu(Var),
    LeakyRelu(Var, f64),
    Elu(Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    Min(Var, Var),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    L2NormalizeRows(Var, Vec<f64>),
    Pick(Var, Vec<usize>),
    GroupScores {
        q: Var,
        k: Var,
        group: usize,
        scale: f64,
    },
    GroupMix {
        beta: Var,
        v: Var,
        group: usize,
    },
    GraphAttention {
        z: Var,
        src: Var,
        dst: Var,
        adj: Arc<NeighborLists>,
        slope: f64,
        pre: Vec<f64>,
        alpha: Vec<f64>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::MatMulNt(..) => "matmul_nt",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::Scale(..) => "scale",
            Op::AddConst(..) => "add_const",
            Op::ScaleBy(..) => "scale_by",
            Op::HConcat(..) => "hconcat",
            Op::VConcat(..) => "vconcat",
            Op::SliceCols(..) => "slice_cols",
            Op::GatherRows(..) => "gather_rows",
            Op::WhereRows(..) => "where_rows",
            Op::Reshape(..) => "reshape",
            Op::RowSoftmax(..) => "row_softmax",
            Op::MaskedLogSoftmax(..) => "masked_log_softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Relu(..) => "relu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Elu(..) => "elu",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Abs(..) => "abs",
            Op::Min(..) => "min",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SumRows(..) => "sum_rows",
            Op::L2NormalizeRows(..) => "l2_normalize",
            Op::Pick(..) => "pick",
            Op::GroupScores { .. } => "group_scores",
            Op::GroupMix { .. } => "group_mix",
            Op::GraphAttention { .. } => "graph_attention",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A single forward recording. Build a fresh tape per loss evaluation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

fn shape_err(op: &str, a: &Tensor, b: &Tensor) -> NumError {
    NumError::Shape(format!(
        "{op}: {}x{} vs {}x{}",
        a.rows(),
        a.cols(),
        b.rows(),
        b.cols()
    ))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NumResult<Var> {
        if !value.is_finite() {
            return Err(NumError::NonFinite { op: op.name() });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A constant input; never differentiated.
    pub fn constant(&mut self, value: Tensor) -> NumResult<Var> {
        self.push(value, Op::Leaf, false)
    }

    /// Reads a parameter; gradients flow back to it when it is trainable.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NumResult<Var> {
        let p = store.get(id);
        self.push(p.value.clone(), Op::Param(id), p.trainable)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> NumResult<Var> {
        let out = crate::tensor::matmul(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::MatMul(a, b), rg)
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> NumResult<Var> {
        let out = crate::tensor::matmul_nt(self.value(a), self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::MatMulNt(a, b), rg)
    }

    fn zip_same(
        &mut self,
        a: Var,
        b: Var,
        name: &str,
        f: impl Fn(f64, f64) -> f64,
    ) -> NumResult<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta, tb));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        Tensor::from_vec(ta.rows(), ta.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> NumResult<Var> {
        let out = self.zip_same(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> NumResult<Var> {
        let out = self.zip_same(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> NumResult<Var> {
        let out = self.zip_same(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Mul(a, b), rg)
    }

    pub fn min(&mut self, a: Var, b: Var) -> NumResult<Var> {
        let out = self.zip_same(a, b, "min", f64::min)?;
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Min(a, b), rg)
    }

    fn broadcast_row(
        &mut self,
        a: Var,
        row: Var,
        name: &str,
        f: impl Fn(f64, f64) -> f64,
    ) -> NumResult<Tensor> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(shape_err(name, ta, tr));
        }
        let mut out = ta.clone();
        let cols = ta.cols();
        for r in 0..ta.rows() {
            for (c, v) in out.row_slice_mut(r).iter_mut().enumerate() {
                *v = f(*v, tr.data()[c % cols]);
            }
        }
        Ok(out)
    }

    /// `a + row`, broadcasting a `1×c` row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> NumResult<Var> {
        let out = self.broadcast_row(a, row, "add_row", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(row);
        self.push(out, Op::AddRow(a, row), rg)
    }

    /// `a ⊙ row`, broadcasting a `1×c` row over every row of `a`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> NumResult<Var> {
        let out = self.broadcast_row(a, row, "mul_row", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(row);
        self.push(out, Op::MulRow(a, row), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> NumResult<Var> {
        let out = self.value(a).map(|v| v * c);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, c), rg)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> NumResult<Var> {
        let out = self.value(a).map(|v| v + c);
        let rg = self.rg(a);
        self.push(out, Op::AddConst(a), rg)
    }

    /// `a` multiplied by the single entry `s[.., idx]` (flat index) of another node.
    pub fn scale_by(&mut self, a: Var, s: Var, idx: usize) -> NumResult<Var> {
        let ts = self.value(s);
        if idx >= ts.len() {
            return Err(NumError::Shape(format!(
                "scale_by index {idx} out of {}",
                ts.len()
            )));
        }
        let c = ts.data()[idx];
        let out = self.value(a).map(|v| v * c);
        let rg = self.rg(a) || self.rg(s);
        self.push(out, Op::ScaleBy(a, s, idx), rg)
    }

    pub fn hconcat(&mut self, parts: &[Var]) -> NumResult<Var> {
        let rows = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(shape_err("hconcat", self.value(parts[0]), t));
            }
            cols += t.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let out = Tensor::from_vec(rows, cols, data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(out, Op::HConcat(parts.to_vec()), rg)
    }

    pub fn vconcat(&mut self, parts: &[Var]) -> NumResult<Var> {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(shape_err("vconcat", self.value(parts[0]), t));
            }
            data.extend_from_slice(t.data());
            rows += t.rows();
        }
        let out = Tensor::from_vec(rows, cols, data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(out, Op::VConcat(parts.to_vec()), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> NumResult<Var> {
        let t = self.value(a);
        if start + len > t.cols() {
            return Err(NumError::Shape(format!(
                "slice_cols {start}..{} of {} columns",
                start + len,
                t.cols()
            )));
        }
        let mut data = Vec::with_capacity(t.rows() * len);
        for r in 0..t.rows() {
            data.extend_from_slice(&t.row_slice(r)[start..start + len]);
        }
        let out = Tensor::from_vec(t.rows(), len, data)?;
        let rg = self.rg(a);
        self.push(out, Op::SliceCols(a, start), rg)
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> NumResult<Var> {
        let t = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= t.rows()) {
            return Err(NumError::Shape(format!(
                "gather_rows index {bad} out of {} rows",
                t.rows()
            )));
        }
        let out = t.select_rows(idx);
        let rg = self.rg(a);
        self.push(out, Op::GatherRows(a, idx.to_vec()), rg)
    }

    /// Row `r` is taken from `a` when `take_a[r]`, otherwise from `b`.
    pub fn where_rows(&mut self, take_a: &[bool], a: Var, b: Var) -> NumResult<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() || take_a.len() != ta.rows() {
            return Err(shape_err("where_rows", ta, tb));
        }
        let mut out = ta.clone();
        for (r, &keep) in take_a.iter().enumerate() {
            if !keep {
                out.row_slice_mut(r).copy_from_slice(tb.row_slice(r));
            }
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::WhereRows(take_a.to_vec(), a, b), rg)
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> NumResult<Var> {
        let out = Tensor::from_vec(rows, cols, self.value(a).data().to_vec())?;
        let rg = self.rg(a);
        self.push(out, Op::Reshape(a), rg)
    }

    pub fn row_softmax(&mut self, a: Var) -> NumResult<Var> {
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            let row = out.row_slice_mut(r);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        let rg = self.rg(a);
        self.push(out, Op::RowSoftmax(a), rg)
    }

    /// Row-wise log-softmax over the entries where `mask` is false. Masked
    /// entries are excluded from normalization and read as 0.
    pub fn masked_log_softmax(&mut self, a: Var, mask: &[bool]) -> NumResult<Var> {
        let t = self.value(a);
        if mask.len() != t.len() {
            return Err(NumError::Shape(format!(
                "mask of {} entries for {}x{}",
                mask.len(),
                t.rows(),
                t.cols()
            )));
        }
        let cols = t.cols();
        let mut out = t.clone();
        for r in 0..out.rows() {
            let mrow = &mask[r * cols..(r + 1) * cols];
            let row = out.row_slice_mut(r);
            let m = row
                .iter()
                .zip(mrow)
                .filter(|(_, &k)| !k)
                .map(|(v, _)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            if m == f64::NEG_INFINITY {
                row.fill(0.0);
                continue;
            }
            let s: f64 = row
                .iter()
                .zip(mrow)
                .filter(|(_, &k)| !k)
                .map(|(v, _)| (v - m).exp())
                .sum();
            let lse = m + s.ln();
            for (v, &k) in row.iter_mut().zip(mrow) {
                *v = if k { 0.0 } else { *v - lse };
            }
        }
        let rg = self.rg(a);
        self.push(out, Op::MaskedLogSoftmax(a, mask.to_vec()), rg)
    }

    /// Per-row normalization to zero mean and unit variance, then `γ ⊙ x̂ + β`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> NumResult<Var> {
        let t = self.value(x);
        let (rows, cols) = (t.rows(), t.cols());
        let (tg, tb) = (self.value(gamma), self.value(beta));
        if tg.shape() != [1, cols] || tb.shape() != [1, cols] {
            return Err(shape_err("layer_norm", t, tg));
        }
        let mut xhat = t.clone();
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xhat.row_slice_mut(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + eps).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * is);
            inv_std.push(is);
        }
        let mut out = xhat.clone();
        for r in 0..rows {
            for (c, v) in out.row_slice_mut(r).iter_mut().enumerate() {
                *v = *v * tg.data()[c] + tb.data()[c];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        )
    }

    pub fn relu(&mut self, a: Var) -> NumResult<Var> {
        let out = self.value(a).map(|v| v.max(0.0));
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> NumResult<Var> {
        let out = self.value(a).map(|v| if v > 0.0 { v } else { slope * v });
        let rg = self.rg(a);
        self.push(out, Op::LeakyRelu(a, slope), rg)
    }

    pub fn elu(&mut self, a: Var) -> NumResult<Var> {
        let out = self.value(a).map(|v| if v > 0.0 { v } else { v.exp_m1() });
        let rg = self.rg(a);
        self.push(out, Op::Elu(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> NumResult<Var> {
        let out = self.value(a).map(f64::exp);
        let rg = self.rg(a);
        self.push(out, Op::Exp(a), rg)
    }

    pub fn log(&mut self, a: Var) -> NumResult<Var> {
        let out = self.value(a).map(f64::ln);
        let rg = self.rg(a);
        self.push(out, Op::Log(a), rg)
    }

    pub fn abs(&mut self, a: Var) -> NumResult<Var> {
        let out = self.value(a).map(f64::abs);
        let rg = self.rg(a);
        self.push(out, Op::Abs(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> NumResult<Var> {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Mean over all entries; the mean of an empty tensor is 0.
    pub fn mean(&mut self, a: Var) -> NumResult<Var> {
        let t = self.value(a);
        let m = if t.is_empty() {
            0.0
        } else {
            t.data().iter().sum::<f64>() / t.len() as f64
        };
        let rg = self.rg(a);
        self.push(Tensor::scalar(m), Op::Mean(a), rg)
    }

    /// Row sums as an `r×1` column.
    pub fn sum_rows(&mut self, a: Var) -> NumResult<Var> {
        let t = self.value(a);
        let data = (0..t.rows()).map(|r| t.row_slice(r).iter().sum()).collect();
        let out = Tensor::from_vec(t.rows(), 1, data)?;
        let rg = self.rg(a);
        self.push(out, Op::SumRows(a), rg)
    }

    /// Rows scaled to unit length (all-zero rows stay zero).
    pub fn l2_normalize_rows(&mut self, a: Var) -> NumResult<Var> {
        let t = self.value(a);
        let mut out = t.clone();
        let mut norms = Vec::with_capacity(t.rows());
        for r in 0..t.rows() {
            let row = out.row_slice_mut(r);
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            row.iter_mut().for_each(|v| *v /= n);
            norms.push(n);
        }
        let rg = self.rg(a);
        self.push(out, Op::L2NormalizeRows(a, norms), rg)
    }

    /// `out[r] = a[r, idx[r]]` as an `r×1` column.
    pub fn pick(&mut self, a: Var, idx: &[usize]) -> NumResult<Var> {
        let t = self.value(a);
        if idx.len() != t.rows() || idx.iter().any(|&c| c >= t.cols()) {
            return Err(NumError::Shape(format!(
                "pick with {} indices on {}x{}",
                idx.len(),
                t.rows(),
                t.cols()
            )));
        }
        let data = idx.iter().enumerate().map(|(r, &c)| t.get(r, c)).collect();
        let out = Tensor::from_vec(idx.len(), 1, data)?;
        let rg = self.rg(a);
        self.push(out, Op::Pick(a, idx.to_vec()), rg)
    }

    /// Within-group dot-product scores. Rows of `q` and `k` come in
    /// consecutive groups of `group`; the output row `g·group + m` holds
    /// `scale · q[g·group + m] · k[g·group + j]` for `j < group`.
    pub fn group_scores(&mut self, q: Var, k: Var, group: usize, scale: f64) -> NumResult<Var> {
        let (tq, tk) = (self.value(q), self.value(k));
        if tq.shape() != tk.shape() || group == 0 || tq.rows() % group != 0 {
            return Err(shape_err("group_scores", tq, tk));
        }
        let mut out = Tensor::zeros(tq.rows(), group);
        for g in 0..tq.rows() / group {
            for m in 0..group {
                let qr = tq.row_slice(g * group + m);
                for j in 0..group {
                    let kr = tk.row_slice(g * group + j);
                    let dot: f64 = qr.iter().zip(kr).map(|(a, b)| a * b).sum();
                    out.set(g * group + m, j, scale * dot);
                }
            }
        }
        let rg = self.rg(q) || self.rg(k);
        self.push(out, Op::GroupScores { q, k, group, scale }, rg)
    }

    /// Within-group mixing: `out[g·group + m] = Σ_j beta[g·group + m, j] · v[g·group + j]`.
    pub fn group_mix(&mut self, beta: Var, v: Var, group: usize) -> NumResult<Var> {
        let (tb, tv) = (self.value(beta), self.value(v));
        if tb.rows() != tv.rows() || tb.cols() != group || tv.rows() % group != 0 {
            return Err(shape_err("group_mix", tb, tv));
        }
        let mut out = Tensor::zeros(tv.rows(), tv.cols());
        for g in 0..tv.rows() / group {
            for m in 0..group {
                let row = g * group + m;
                for j in 0..group {
                    let w = tb.get(row, j);
                    let vr = tv.row_slice(g * group + j);
                    for (o, x) in out.row_slice_mut(row).iter_mut().zip(vr) {
                        *o += w * x;
                    }
                }
            }
        }
        let rg = self.rg(beta) || self.rg(v);
        self.push(out, Op::GroupMix { beta, v, group }, rg)
    }

    /// Additive graph attention over neighbor lists:
    /// `α_ij = softmax_j leaky(src_i + dst_j)`, `out_i = Σ_j α_ij z_j`.
    /// `src` and `dst` are `n×1` score columns.
    pub fn graph_attention(
        &mut self,
        z: Var,
        src: Var,
        dst: Var,
        adj: &Arc<NeighborLists>,
        slope: f64,
    ) -> NumResult<Var> {
        let (tz, ts, td) = (self.value(z), self.value(src), self.value(dst));
        let n = tz.rows();
        if adj.num_nodes() != n || ts.shape() != [n, 1] || td.shape() != [n, 1] {
            return Err(NumError::Shape(format!(
                "graph_attention over {} nodes with z {}x{}, src {:?}, dst {:?}",
                adj.num_nodes(),
                n,
                tz.cols(),
                ts.shape(),
                td.shape()
            )));
        }
        let mut pre = vec![0.0; adj.num_edges()];
        let mut alpha = vec![0.0; adj.num_edges()];
        let mut out = Tensor::zeros(n, tz.cols());
        for i in 0..n {
            let range = adj.edge_range(i);
            if range.is_empty() {
                continue;
            }
            let mut m = f64::NEG_INFINITY;
            for e in range.clone() {
                let j = adj.indices[e];
                let x = ts.data()[i] + td.data()[j];
                pre[e] = x;
                let l = if x > 0.0 { x } else { slope * x };
                alpha[e] = l;
                m = m.max(l);
            }
            let mut s = 0.0;
            for e in range.clone() {
                alpha[e] = (alpha[e] - m).exp();
                s += alpha[e];
            }
            let orow = out.row_slice_mut(i);
            for e in range {
                alpha[e] /= s;
                let zr = tz.row_slice(adj.indices[e]);
                for (o, x) in orow.iter_mut().zip(zr) {
                    *o += alpha[e] * x;
                }
            }
        }
        let rg = self.rg(z) || self.rg(src) || self.rg(dst);
        self.push(
            out,
            Op::GraphAttention {
                z,
                src,
                dst,
                adj: Arc::clone(adj),
                slope,
                pre,
                alpha,
            },
            rg,
        )
    }

    /// Attention weights from the most recent [`Tape::graph_attention`] node
    /// `v`, one per edge in neighbor-list order.
    pub fn attention_weights(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::GraphAttention { alpha, .. } => Some(alpha),
            _ => None,
        }
    }

    /// Back-propagates from the scalar `loss`, accumulating into the
    /// gradients of trainable parameters in `store`.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> NumResult<()> {
        if self.consumed {
            return Err(NumError::TapeConsumed);
        }
        let lt = self.value(loss);
        if lt.shape() != [1, 1] {
            return Err(NumError::NotScalar(lt.rows(), lt.cols()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            self.backprop_node(idx, &g, &mut grads, store);
        }
        Ok(())
    }

    fn backprop_node(
        &self,
        idx: usize,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
        store: &mut ParamStore,
    ) {
        let node = &self.nodes[idx];
        let y = &node.value;
        let nodes = &self.nodes;
        // Returns the gradient buffer of `v`, allocated on first use, or
        // None when `v` does not need a gradient.
        macro_rules! buf {
            ($v:expr) => {{
                let v: Var = $v;
                if nodes[v.0].requires_grad {
                    let t = &nodes[v.0].value;
                    Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(t.rows(), t.cols())))
                } else {
                    None
                }
            }};
        }
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => {
                let p = store.get_mut(*id);
                if p.trainable {
                    p.grad.add_assign(g);
                }
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                if let Some(ga) = buf!(*a) {
                    // dA = dC · Bᵀ
                    gemm(
                        ta.rows(),
                        tb.cols(),
                        ta.cols(),
                        1.0,
                        g.data(),
                        false,
                        tb.data(),
                        true,
                        1.0,
                        ga.data_mut(),
                    );
                }
                if let Some(gb) = buf!(*b) {
                    // dB = Aᵀ · dC
                    gemm(
                        ta.cols(),
                        ta.rows(),
                        tb.cols(),
                        1.0,
                        ta.data(),
                        true,
                        g.data(),
                        false,
                        1.0,
                        gb.data_mut(),
                    );
                }
            }
            Op::MatMulNt(a, b) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                if let Some(ga) = buf!(*a) {
                    // dA = dC · B
                    gemm(
                        ta.rows(),
                        tb.rows(),
                        ta.cols(),
                        1.0,
                        g.data(),
                        false,
                        tb.data(),
                        false,
                        1.0,
                        ga.data_mut(),
                    );
                }
                if let Some(gb) = buf!(*b) {
                    // dB = dCᵀ · A
                    gemm(
                        tb.rows(),
                        ta.rows(),
                        ta.cols(),
                        1.0,
                        g.data(),
                        true,
                        ta.data(),
                        false,
                        1.0,
                        gb.data_mut(),
                    );
                }
            }
            Op::Add(a, b) => {
                if let Some(ga) = buf!(*a) {
                    ga.add_assign(g);
                }
                if let Some(gb) = buf!(*b) {
                    gb.add_assign(g);
                }
            }
            Op::Sub(a, b) => {
                if let Some(ga) = buf!(*a) {
                    ga.add_assign(g);
                }
                if let Some(gb) = buf!(*b) {
                    for (x, d) in gb.data_mut().iter_mut().zip(g.data()) {
                        *x -= d;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                if let Some(ga) = buf!(*a) {
                    for ((x, d), o) in ga.data_mut().iter_mut().zip(g.data()).zip(tb.data()) {
                        *x += d * o;
                    }
                }
                if let Some(gb) = buf!(*b) {
                    for ((x, d), o) in gb.data_mut().iter_mut().zip(g.data()).zip(ta.data()) {
                        *x += d * o;
                    }
                }
            }
            Op::Min(a, b) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                if let Some(ga) = buf!(*a) {
                    for (i, x) in ga.data_mut().iter_mut().enumerate() {
                        if ta.data()[i] <= tb.data()[i] {
                            *x += g.data()[i];
                        }
                    }
                }
                if let Some(gb) = buf!(*b) {
                    for (i, x) in gb.data_mut().iter_mut().enumerate() {
                        if ta.data()[i] > tb.data()[i] {
                            *x += g.data()[i];
                        }
                    }
                }
            }
            Op::AddRow(a, row) => {
                if let Some(ga) = buf!(*a) {
                    ga.add_assign(g);
                }
                if let Some(gr) = buf!(*row) {
                    for r in 0..g.rows() {
                        for (x, d) in gr.data_mut().iter_mut().zip(g.row_slice(r)) {
                            *x += d;
                        }
                    }
                }
            }
            Op::MulRow(a, row) => {
                let (ta, tr) = (&nodes[a.0].value, &nodes[row.0].value);
                if let Some(ga) = buf!(*a) {
                    for r in 0..g.rows() {
                        let gr = g.row_slice(r);
                        for (c, x) in ga.row_slice_mut(r).iter_mut().enumerate() {
                            *x += gr[c] * tr.data()[c];
                        }
                    }
                }
                if let Some(grow) = buf!(*row) {
                    for r in 0..g.rows() {
                        let (gr, ar) = (g.row_slice(r), ta.row_slice(r));
                        for (c, x) in grow.data_mut().iter_mut().enumerate() {
                            *x += gr[c] * ar[c];
                        }
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = buf!(*a) {
                    for (x, d) in ga.data_mut().iter_mut().zip(g.data()) {
                        *x += c * d;
                    }
                }
            }
            Op::AddConst(a) => {
                if let Some(ga) = buf!(*a) {
                    ga.add_assign(g);
                }
            }
            Op::ScaleBy(a, s, i) => {
                let (ta, ts) = (&nodes[a.0].value, &nodes[s.0].value);
                let c = ts.data()[*i];
                if let Some(ga) = buf!(*a) {
                    for (x, d) in ga.data_mut().iter_mut().zip(g.data()) {
                        *x += c * d;
                    }
                }
                if let Some(gs) = buf!(*s) {
                    let dot: f64 = g.data().iter().zip(ta.data()).map(|(d, v)| d * v).sum();
                    gs.data_mut()[*i] += dot;
                }
            }
            Op::HConcat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = nodes[p.0].value.cols();
                    if let Some(gp) = buf!(p) {
                        for r in 0..g.rows() {
                            let src = &g.row_slice(r)[offset..offset + w];
                            for (x, d) in gp.row_slice_mut(r).iter_mut().zip(src) {
                                *x += d;
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::VConcat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = nodes[p.0].value.len();
                    if let Some(gp) = buf!(p) {
                        for (x, d) in gp.data_mut().iter_mut().zip(&g.data()[offset..offset + n]) {
                            *x += d;
                        }
                    }
                    offset += n;
                }
            }
            Op::SliceCols(a, start) => {
                if let Some(ga) = buf!(*a) {
                    for r in 0..g.rows() {
                        let dst = &mut ga.row_slice_mut(r)[*start..*start + g.cols()];
                        for (x, d) in dst.iter_mut().zip(g.row_slice(r)) {
                            *x += d;
                        }
                    }
                }
            }
            Op::GatherRows(a, idx) => {
                if let Some(ga) = buf!(*a) {
                    for (r, &i) in idx.iter().enumerate() {
                        for (x, d) in ga.row_slice_mut(i).iter_mut().zip(g.row_slice(r)) {
                            *x += d;
                        }
                    }
                }
            }
            Op::WhereRows(take_a, a, b) => {
                if let Some(ga) = buf!(*a) {
                    for (r, &k) in take_a.iter().enumerate() {
                        if k {
                            for (x, d) in ga.row_slice_mut(r).iter_mut().zip(g.row_slice(r)) {
                                *x += d;
                            }
                        }
                    }
                }
                if let Some(gb) = buf!(*b) {
                    for (r, &k) in take_a.iter().enumerate() {
                        if !k {
                            for (x, d) in gb.row_slice_mut(r).iter_mut().zip(g.row_slice(r)) {
                                *x += d;
                            }
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(ga) = buf!(*a) {
                    for (x, d) in ga.data_mut().iter_mut().zip(g.data()) {
                        *x += d;
                    }
                }
            }
            Op::RowSoftmax(a) => {
                if let Some(ga) = buf!(*a) {
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row_slice(r), g.row_slice(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(p, d)| p * d).sum();
                        for (c, x) in ga.row_slice_mut(r).iter_mut().enumerate() {
                            *x += yr[c] * (gr[c] - dot);
                        }
                    }
                }
            }
            Op::MaskedLogSoftmax(a, mask) => {
                if let Some(ga) = buf!(*a) {
                    let cols = y.cols();
                    for r in 0..y.rows() {
                        let mrow = &mask[r * cols..(r + 1) * cols];
                        let (yr, gr) = (y.row_slice(r), g.row_slice(r));
                        let gsum: f64 = gr
                            .iter()
                            .zip(mrow)
                            .filter(|(_, &k)| !k)
                            .map(|(d, _)| d)
                            .sum();
                        for (c, x) in ga.row_slice_mut(r).iter_mut().enumerate() {
                            if !mrow[c] {
                                *x += gr[c] - yr[c].exp() * gsum;
                            }
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let tg = &nodes[gamma.0].value;
                let cols = xhat.cols();
                if let Some(gg) = buf!(*gamma) {
                    for r in 0..g.rows() {
                        let (gr, xr) = (g.row_slice(r), xhat.row_slice(r));
                        for (c, v) in gg.data_mut().iter_mut().enumerate() {
                            *v += gr[c] * xr[c];
                        }
                    }
                }
                if let Some(gb) = buf!(*beta) {
                    for r in 0..g.rows() {
                        for (v, d) in gb.data_mut().iter_mut().zip(g.row_slice(r)) {
                            *v += d;
                        }
                    }
                }
                if let Some(gx) = buf!(*x) {
                    let mut dxhat = vec![0.0; cols];
                    for r in 0..g.rows() {
                        let (gr, xr) = (g.row_slice(r), xhat.row_slice(r));
                        for c in 0..cols {
                            dxhat[c] = gr[c] * tg.data()[c];
                        }
                        let s1: f64 = dxhat.iter().sum();
                        let s2: f64 = dxhat.iter().zip(xr).map(|(a, b)| a * b).sum();
                        let k = inv_std[r] / cols as f64;
                        for (c, v) in gx.row_slice_mut(r).iter_mut().enumerate() {
                            *v += k * (cols as f64 * dxhat[c] - s1 - xr[c] * s2);
                        }
                    }
                }
            }
            Op::Relu(a) => {
                let ta = &nodes[a.0].value;
                if let Some(ga) = buf!(*a) {
                    for ((x, d), v) in ga.data_mut().iter_mut().zip(g.data()).zip(ta.data()) {
                        if *v > 0.0 {
                            *x += d;
                        }
                    }
                }
            }
            Op::LeakyRelu(a, slope) => {
                let ta = &nodes[a.0].value;
                if let Some(ga) = buf!(*a) {
                    for ((x, d), v) in ga.data_mut().iter_mut().zip(g.data()).zip(ta.data()) {
                        *x += if *v > 0.0 { *d } else { slope * d };
                    }
                }
            }
            Op::Elu(a) => {
                let ta = &nodes[a.0].value;
                if let Some(ga) = buf!(*a) {
                    for ((x, d), v) in ga.data_mut().iter_mut().zip(g.data()).zip(ta.data()) {
                        *x += if *v > 0.0 { *d } else { d * v.exp() };
                    }
                }
            }
            Op::Exp(a) => {
                if let Some(ga) = buf!(*a) {
                    for ((x, d), v) in ga.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *x += d * v;
                    }
                }
            }
            Op::Log(a) => {
                let ta = &nodes[a.0].value;
                if let Some(ga) = buf!(*a) {
                    for ((x, d), v) in ga.data_mut().iter_mut().zip(g.data()).zip(ta.data()) {
                        *x += d / v;
                    }
                }
            }
            Op::Abs(a) => {
                let ta = &nodes[a.0].value;
                if let Some(ga) = buf!(*a) {
                    for ((x, d), v) in ga.data_mut().iter_mut().zip(g.data()).zip(ta.data()) {
                        if *v > 0.0 {
                            *x += d;
                        } else if *v < 0.0 {
                            *x -= d;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                let d = g.item();
                if let Some(ga) = buf!(*a) {
                    ga.data_mut().iter_mut().for_each(|x| *x += d);
                }
            }
            Op::Mean(a) => {
                let n = nodes[a.0].value.len().max(1) as f64;
                let d = g.item() / n;
                if let Some(ga) = buf!(*a) {
                    ga.data_mut().iter_mut().for_each(|x| *x += d);
                }
            }
            Op::SumRows(a) => {
                if let Some(ga) = buf!(*a) {
                    for r in 0..g.rows() {
                        let d = g.data()[r];
                        ga.row_slice_mut(r).iter_mut().for_each(|x| *x += d);
                    }
                }
            }
            Op::L2NormalizeRows(a, norms) => {
                if let Some(ga) = buf!(*a) {
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row_slice(r), g.row_slice(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(p, d)| p * d).sum();
                        let n = norms[r];
                        for (c, x) in ga.row_slice_mut(r).iter_mut().enumerate() {
                            *x += (gr[c] - yr[c] * dot) / n;
                        }
                    }
                }
            }
            Op::Pick(a, idx) => {
                if let Some(ga) = buf!(*a) {
                    let cols = ga.cols();
                    for (r, &c) in idx.iter().enumerate() {
                        ga.data_mut()[r * cols + c] += g.data()[r];
                    }
                }
            }
            Op::GroupScores { q, k, group, scale } => {
                let (tq, tk) = (&nodes[q.0].value, &nodes[k.0].value);
                let group = *group;
                if let Some(gq) = buf!(*q) {
                    for row in 0..tq.rows() {
                        let base = row - row % group;
                        let gq_row = gq.row_slice_mut(row);
                        for j in 0..group {
                            let w = scale * g.get(row, j);
                            for (x, kv) in gq_row.iter_mut().zip(tk.row_slice(base + j)) {
                                *x += w * kv;
                            }
                        }
                    }
                }
                if let Some(gk) = buf!(*k) {
                    for row in 0..tq.rows() {
                        let base = row - row % group;
                        for j in 0..group {
                            let w = scale * g.get(row, j);
                            let qr = tq.row_slice(row);
                            for (x, qv) in gk.row_slice_mut(base + j).iter_mut().zip(qr) {
                                *x += w * qv;
                            }
                        }
                    }
                }
            }
            Op::GroupMix { beta, v, group } => {
                let (tb, tv) = (&nodes[beta.0].value, &nodes[v.0].value);
                let group = *group;
                if let Some(gb) = buf!(*beta) {
                    for row in 0..tv.rows() {
                        let base = row - row % group;
                        let gr = g.row_slice(row);
                        for j in 0..group {
                            let dot: f64 = gr
                                .iter()
                                .zip(tv.row_slice(base + j))
                                .map(|(a, b)| a * b)
                                .sum();
                            gb.data_mut()[row * group + j] += dot;
                        }
                    }
                }
                if let Some(gv) = buf!(*v) {
                    for row in 0..tv.rows() {
                        let base = row - row % group;
                        for j in 0..group {
                            let w = tb.get(row, j);
                            let gr = g.row_slice(row);
                            for (x, d) in gv.row_slice_mut(base + j).iter_mut().zip(gr) {
                                *x += w * d;
                            }
                        }
                    }
                }
            }
            Op::GraphAttention {
                z,
                src,
                dst,
                adj,
                slope,
                pre,
                alpha,
            } => {
                let tz = &nodes[z.0].value;
                let n = tz.rows();
                // gradient of the pre-activation score on every edge
                let mut dpre = vec![0.0; alpha.len()];
                for i in 0..n {
                    let range = adj.edge_range(i);
                    let gr = g.row_slice(i);
                    let mut acc = 0.0;
                    for e in range.clone() {
                        let da: f64 = gr
                            .iter()
                            .zip(tz.row_slice(adj.indices[e]))
                            .map(|(a, b)| a * b)
                            .sum();
                        dpre[e] = da;
                        acc += alpha[e] * da;
                    }
                    for e in range {
                        let dl = alpha[e] * (dpre[e] - acc);
                        dpre[e] = if pre[e] > 0.0 { dl } else { slope * dl };
                    }
                }
                if let Some(gz) = buf!(*z) {
                    for i in 0..n {
                        let gr = g.row_slice(i);
                        for e in adj.edge_range(i) {
                            let w = alpha[e];
                            for (x, d) in gz.row_slice_mut(adj.indices[e]).iter_mut().zip(gr) {
                                *x += w * d;
                            }
                        }
                    }
                }
                if let Some(gs) = buf!(*src) {
                    for i in 0..n {
                        gs.data_mut()[i] += adj.edge_range(i).map(|e| dpre[e]).sum::<f64>();
                    }
                }
                if let Some(gd) = buf!(*dst) {
                    for i in 0..n {
                        for e in adj.edge_range(i) {
                            gd.data_mut()[adj.indices[e]] += dpre[e];
                        }
                    }
                }
            }
        }
    }
}
