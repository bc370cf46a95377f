//! Dense f64 tensors with a reverse-mode tape.
//!
//! Every forward operation is recorded on a [`Tape`] together with the
//! information its backward rule needs. Values are rank-0 (shape `[]`),
//! rank-1 or rank-2, stored row-major.

mod cells;
mod optim;
mod params;

pub mod gradcheck;

pub use cells::{
    birnn_encode, gru_cell, init_gru, init_linear, init_lstm, linear, lstm_cell, lstm_hidden, LstmState,
};
pub use optim::{Adam, AdamConfig};
pub use params::{Checkpoint, Init, ParamId, ParamStore};

use std::fmt;
use std::rc::Rc;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("parameter `{0}` has no gradient")]
    MissingGrad(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

fn shape_err<T>(op: &'static str, left: &[usize], right: &[usize]) -> Result<T> {
    Err(TensorError::Shape {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    })
}

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}{:?}", self.shape, self.data)
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.len() > 2 || shape.iter().any(|&d| d == 0) {
            return Err(TensorError::Invalid {
                op: "tensor",
                msg: format!("unsupported shape {shape:?}"),
            });
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(TensorError::Invalid {
                op: "tensor",
                msg: format!("shape {shape:?} needs {n} values, got {}", data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
        }
    }

    /// Panics on an empty vector.
    pub fn vector(data: Vec<f64>) -> Self {
        assert!(!data.is_empty(), "empty vector");
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Row count of a rank-2 tensor; a rank-1 tensor counts as one row.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => 1,
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[1],
            1 => self.shape[0],
            _ => 1,
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Deliberate backward-rule corruption, used as a negative control for
/// gradient checking.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    TanhBackward,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Affine(Var, f64),
    Scale(Var, Var),
    ScaleRows(Var, Var),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    MatVec(Var, Var),
    TMatVec(Var, Var),
    Transpose(Var),
    Concat(Vec<Var>),
    StackRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    SliceCols(Var, usize),
    Select(Var, Vec<usize>),
    Reshape(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    LogSoftmax(Var),
    GroupSoftmax(Var, Rc<Vec<Vec<usize>>>),
    RowMax(Var, Vec<usize>),
    Sum(Var),
    Dot(Var, Var),
    MeanRows(Var),
    NormalizeRows(Var, Vec<f64>),
    ScatterRows(Var, Rc<Vec<(usize, usize)>>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param => "param",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::Affine(..) => "affine",
            Op::Scale(..) => "scale",
            Op::ScaleRows(..) => "scale_rows",
            Op::MatMul(..) => "matmul",
            Op::MatMulT(..) => "matmul_t",
            Op::MatVec(..) => "matvec",
            Op::TMatVec(..) => "tmatvec",
            Op::Transpose(..) => "transpose",
            Op::Concat(..) => "concat",
            Op::StackRows(..) => "stack_rows",
            Op::GatherRows(..) => "gather_rows",
            Op::SliceCols(..) => "slice_cols",
            Op::Select(..) => "select",
            Op::Reshape(..) => "reshape",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Softmax(..) => "softmax",
            Op::LogSoftmax(..) => "log_softmax",
            Op::GroupSoftmax(..) => "group_softmax",
            Op::RowMax(..) => "row_max",
            Op::Sum(..) => "sum",
            Op::Dot(..) => "dot",
            Op::MeanRows(..) => "mean_rows",
            Op::NormalizeRows(..) => "normalize_rows",
            Op::ScatterRows(..) => "scatter_rows",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Epsilon inside the row norm used by [`Tape::normalize_rows`].
pub const NORM_EPS: f64 = 1e-12;

/// Records a computation for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the node list is always a
/// valid topological order.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    fault: Option<Fault>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_fault(fault: Fault) -> Self {
        Tape {
            fault: Some(fault),
            ..Self::default()
        }
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: op.name() });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Leaf)
    }

    pub fn scalar(&mut self, v: f64) -> Result<Var> {
        self.constant(Tensor::scalar(v))
    }

    /// Brings a parameter onto the tape. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if self.param_vars.len() <= id.0 {
            self.param_vars.resize(id.0 + 1, None);
        }
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: store.value(id).clone(),
            op: Op::Param,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return shape_err(op, sa, sb);
        }
        Ok(())
    }

    fn zip(&mut self, op: Op, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(op.name(), a, b)?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data.iter().zip(&vb.data).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor {
            shape: va.shape.clone(),
            data,
        };
        self.push(t, op)
    }

    fn map(&mut self, op: Op, a: Var, f: impl Fn(f64) -> f64) -> Result<Var> {
        let va = self.value(a);
        let t = Tensor {
            shape: va.shape.clone(),
            data: va.data.iter().map(|&x| f(x)).collect(),
        };
        self.push(t, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(Op::Add(a, b), a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(Op::Sub(a, b), a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(Op::Mul(a, b), a, b, |x, y| x * y)
    }

    /// Sum of several same-shape values.
    pub fn add_all(&mut self, vars: &[Var]) -> Result<Var> {
        let (&first, rest) = vars.split_first().ok_or_else(|| TensorError::Invalid {
            op: "add_all",
            msg: "no inputs".into(),
        })?;
        let mut acc = first;
        for &v in rest {
            acc = self.add(acc, v)?;
        }
        Ok(acc)
    }

    /// Adds a vector to every row of a matrix (or to a vector of equal length).
    pub fn add_row(&mut self, m: Var, row: Var) -> Result<Var> {
        let (sm, sr) = (self.shape(m).to_vec(), self.shape(row).to_vec());
        if sr.len() != 1 || sm.is_empty() || *sm.last().unwrap() != sr[0] {
            return shape_err("add_row", &sm, &sr);
        }
        let vm = self.value(m);
        let vr = self.value(row);
        let c = sr[0];
        let data = vm
            .data
            .iter()
            .enumerate()
            .map(|(k, &x)| x + vr.data[k % c])
            .collect();
        self.push(Tensor { shape: sm, data }, Op::AddRow(m, row))
    }

    /// `scale * x + shift`, element-wise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        self.map(Op::Affine(x, scale), x, |v| scale * v + shift)
    }

    /// Multiplies every element of `x` by the scalar node `s`.
    pub fn scale(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return shape_err("scale", self.shape(x), self.shape(s));
        }
        let k = self.value(s).item();
        self.map(Op::Scale(x, s), x, |v| v * k)
    }

    /// Multiplies row `i` of `m` by `s[i]`.
    pub fn scale_rows(&mut self, m: Var, s: Var) -> Result<Var> {
        let (sm, ss) = (self.shape(m).to_vec(), self.shape(s).to_vec());
        if sm.len() != 2 || ss.len() != 1 || sm[0] != ss[0] {
            return shape_err("scale_rows", &sm, &ss);
        }
        let c = sm[1];
        let vm = self.value(m);
        let vs = self.value(s);
        let data = vm
            .data
            .iter()
            .enumerate()
            .map(|(k, &x)| x * vs.data[k / c])
            .collect();
        self.push(Tensor { shape: sm, data }, Op::ScaleRows(m, s))
    }

    /// `[n×k] · [k×m] → [n×m]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return shape_err("matmul", &sa, &sb);
        }
        let (n, k, m) = (sa[0], sa[1], sb[1]);
        let va = &self.value(a).data;
        let vb = &self.value(b).data;
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let orow = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let x = va[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &vb[p * m..(p + 1) * m];
                for (o, &y) in orow.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        self.push(Tensor::new(vec![n, m], out)?, Op::MatMul(a, b))
    }

    /// `[n×k] · [m×k]ᵀ → [n×m]`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return shape_err("matmul_t", &sa, &sb);
        }
        let (n, k, m) = (sa[0], sa[1], sb[0]);
        let va = &self.value(a).data;
        let vb = &self.value(b).data;
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let arow = &va[i * k..(i + 1) * k];
            for j in 0..m {
                out[i * m + j] = dot(arow, &vb[j * k..(j + 1) * k]);
            }
        }
        self.push(Tensor::new(vec![n, m], out)?, Op::MatMulT(a, b))
    }

    /// `[n×k] · [k] → [n]`
    pub fn matvec(&mut self, a: Var, x: Var) -> Result<Var> {
        let (sa, sx) = (self.shape(a).to_vec(), self.shape(x).to_vec());
        if sa.len() != 2 || sx.len() != 1 || sa[1] != sx[0] {
            return shape_err("matvec", &sa, &sx);
        }
        let k = sa[1];
        let va = &self.value(a).data;
        let vx = &self.value(x).data;
        let out = (0..sa[0]).map(|i| dot(&va[i * k..(i + 1) * k], vx)).collect();
        self.push(Tensor::vector(out), Op::MatVec(a, x))
    }

    /// `[n×k]ᵀ · [n] → [k]`
    pub fn tmatvec(&mut self, a: Var, x: Var) -> Result<Var> {
        let (sa, sx) = (self.shape(a).to_vec(), self.shape(x).to_vec());
        if sa.len() != 2 || sx.len() != 1 || sa[0] != sx[0] {
            return shape_err("tmatvec", &sa, &sx);
        }
        let k = sa[1];
        let va = &self.value(a).data;
        let vx = &self.value(x).data;
        let mut out = vec![0.0; k];
        for (i, &w) in vx.iter().enumerate() {
            for (o, &y) in out.iter_mut().zip(&va[i * k..(i + 1) * k]) {
                *o += w * y;
            }
        }
        self.push(Tensor::vector(out), Op::TMatVec(a, x))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        if sa.len() != 2 {
            return shape_err("transpose", &sa, &[]);
        }
        let (n, m) = (sa[0], sa[1]);
        let va = &self.value(a).data;
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[j * n + i] = va[i * m + j];
            }
        }
        self.push(Tensor::new(vec![m, n], out)?, Op::Transpose(a))
    }

    /// Concatenates rank-1 values.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut out = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 1 {
                return shape_err("concat", s, &[]);
            }
            out.extend_from_slice(&self.value(p).data);
        }
        if out.is_empty() {
            return Err(TensorError::Invalid {
                op: "concat",
                msg: "no inputs".into(),
            });
        }
        self.push(Tensor::vector(out), Op::Concat(parts.to_vec()))
    }

    /// Stacks equal-length rank-1 values into the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let first = *rows.first().ok_or_else(|| TensorError::Invalid {
            op: "stack_rows",
            msg: "no inputs".into(),
        })?;
        let c = self.shape(first).to_vec();
        if c.len() != 1 {
            return shape_err("stack_rows", &c, &[]);
        }
        let mut out = Vec::with_capacity(rows.len() * c[0]);
        for &r in rows {
            if self.shape(r) != c.as_slice() {
                return shape_err("stack_rows", &c, self.shape(r));
            }
            out.extend_from_slice(&self.value(r).data);
        }
        self.push(
            Tensor::new(vec![rows.len(), c[0]], out)?,
            Op::StackRows(rows.to_vec()),
        )
    }

    /// Rows `idx` of a matrix, as a `[idx.len() × cols]` matrix. Embedding lookup.
    pub fn gather_rows(&mut self, m: Var, idx: &[usize]) -> Result<Var> {
        let sm = self.shape(m).to_vec();
        if sm.len() != 2 || idx.is_empty() {
            return shape_err("gather_rows", &sm, &[idx.len()]);
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= sm[0]) {
            return Err(TensorError::Invalid {
                op: "gather_rows",
                msg: format!("row {bad} out of range for shape {sm:?}"),
            });
        }
        let c = sm[1];
        let vm = &self.value(m).data;
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(&vm[i * c..(i + 1) * c]);
        }
        self.push(
            Tensor::new(vec![idx.len(), c], out)?,
            Op::GatherRows(m, idx.to_vec()),
        )
    }

    /// Row `i` of a matrix as a rank-1 value.
    pub fn row(&mut self, m: Var, i: usize) -> Result<Var> {
        let g = self.gather_rows(m, &[i])?;
        let c = self.shape(g)[1];
        self.reshape(g, &[c])
    }

    /// Entries `idx` of a rank-1 value.
    pub fn select(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 1 || idx.is_empty() || idx.iter().any(|&i| i >= sx[0]) {
            return shape_err("select", &sx, &[idx.len()]);
        }
        let vx = &self.value(x).data;
        let out = idx.iter().map(|&i| vx[i]).collect();
        self.push(Tensor::vector(out), Op::Select(x, idx.to_vec()))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let idx: Vec<usize> = (start..start + len).collect();
        self.select(x, &idx)
    }

    /// Slice `[start, start+len)` of the last dimension (columns of a matrix,
    /// entries of a vector).
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        match sx.len() {
            1 => self.slice(x, start, len),
            2 => {
                if len == 0 || start + len > sx[1] {
                    return shape_err("slice_cols", &sx, &[start, len]);
                }
                let c = sx[1];
                let vx = &self.value(x).data;
                let mut out = Vec::with_capacity(sx[0] * len);
                for r in 0..sx[0] {
                    out.extend_from_slice(&vx[r * c + start..r * c + start + len]);
                }
                self.push(Tensor::new(vec![sx[0], len], out)?, Op::SliceCols(x, start))
            }
            _ => shape_err("slice_last", &sx, &[]),
        }
    }

    pub fn pick(&mut self, x: Var, i: usize) -> Result<Var> {
        let s = self.select(x, &[i])?;
        self.reshape(s, &[])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let vx = self.value(x);
        let n: usize = shape.iter().product();
        if n != vx.len() {
            return shape_err("reshape", &vx.shape.clone(), shape);
        }
        let t = Tensor::new(shape.to_vec(), vx.data.clone())?;
        self.push(t, Op::Reshape(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.map(Op::Tanh(x), x, f64::tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.map(Op::Sigmoid(x), x, sigmoid)
    }

    /// Softmax of a rank-1 value, or of every row of a rank-2 value.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        if vx.rank() == 0 {
            return shape_err("softmax", &[], &[]);
        }
        let c = vx.cols();
        let mut out = vec![0.0; vx.len()];
        for (r, o) in vx.data.chunks(c).zip(out.chunks_mut(c)) {
            softmax_into(r, o);
        }
        let t = Tensor {
            shape: vx.shape.clone(),
            data: out,
        };
        self.push(t, Op::Softmax(x))
    }

    /// Log-softmax of a rank-1 value.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        if vx.rank() != 1 {
            return shape_err("log_softmax", &vx.shape.clone(), &[]);
        }
        let out = log_softmax(&vx.data);
        self.push(Tensor::vector(out), Op::LogSoftmax(x))
    }

    /// Per-column softmax over each row group, with an implicit extra
    /// element of score 0 in every group.
    ///
    /// `s` is `[rows × cols]`; `groups` partitions the row indices. For
    /// column `j` and group `g`, output `p[v][j] = exp(s[v][j]) / (1 + Σ_{u∈g} exp(s[u][j]))`.
    /// Returns the probabilities and the per-(group, column) null mass.
    pub fn group_softmax(&mut self, s: Var, groups: Rc<Vec<Vec<usize>>>) -> Result<(Var, Vec<Vec<f64>>)> {
        let vs = self.value(s);
        if vs.rank() != 2 {
            return shape_err("group_softmax", &vs.shape.clone(), &[]);
        }
        let (rows, cols) = (vs.shape[0], vs.shape[1]);
        let mut seen = vec![false; rows];
        for g in groups.iter() {
            for &v in g {
                if v >= rows || seen[v] {
                    return Err(TensorError::Invalid {
                        op: "group_softmax",
                        msg: format!("row {v} missing or repeated in groups"),
                    });
                }
                seen[v] = true;
            }
        }
        if seen.iter().any(|x| !x) {
            return Err(TensorError::Invalid {
                op: "group_softmax",
                msg: "groups do not cover every row".into(),
            });
        }
        let mut out = vec![0.0; rows * cols];
        let mut null = vec![vec![0.0; cols]; groups.len()];
        for (gi, g) in groups.iter().enumerate() {
            for j in 0..cols {
                let m = g.iter().map(|&v| vs.data[v * cols + j]).fold(0.0f64, f64::max);
                let mut z = (-m).exp();
                for &v in g {
                    z += (vs.data[v * cols + j] - m).exp();
                }
                for &v in g {
                    out[v * cols + j] = (vs.data[v * cols + j] - m).exp() / z;
                }
                null[gi][j] = (-m).exp() / z;
            }
        }
        let var = self.push(
            Tensor::new(vec![rows, cols], out)?,
            Op::GroupSoftmax(s, groups),
        )?;
        Ok((var, null))
    }

    /// Maximum of each row; the gradient flows to the first maximal entry.
    pub fn row_max(&mut self, m: Var) -> Result<Var> {
        let vm = self.value(m);
        if vm.rank() != 2 {
            return shape_err("row_max", &vm.shape.clone(), &[]);
        }
        let c = vm.cols();
        let mut arg = Vec::with_capacity(vm.rows());
        let mut out = Vec::with_capacity(vm.rows());
        for r in vm.data.chunks(c) {
            let mut best = 0;
            for (j, &x) in r.iter().enumerate() {
                if x > r[best] {
                    best = j;
                }
            }
            arg.push(best);
            out.push(r[best]);
        }
        self.push(Tensor::vector(out), Op::RowMax(m, arg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("dot", a, b)?;
        let s = dot(&self.value(a).data, &self.value(b).data);
        self.push(Tensor::scalar(s), Op::Dot(a, b))
    }

    /// Column-wise mean of a matrix's rows.
    pub fn mean_rows(&mut self, m: Var) -> Result<Var> {
        let vm = self.value(m);
        if vm.rank() != 2 {
            return shape_err("mean_rows", &vm.shape.clone(), &[]);
        }
        let (n, c) = (vm.rows(), vm.cols());
        let mut out = vec![0.0; c];
        for r in vm.data.chunks(c) {
            for (o, &x) in out.iter_mut().zip(r) {
                *o += x / n as f64;
            }
        }
        self.push(Tensor::vector(out), Op::MeanRows(m))
    }

    /// Divides each row by `sqrt(‖row‖² + NORM_EPS)`.
    pub fn normalize_rows(&mut self, m: Var) -> Result<Var> {
        let vm = self.value(m);
        if vm.rank() != 2 {
            return shape_err("normalize_rows", &vm.shape.clone(), &[]);
        }
        let c = vm.cols();
        let norms: Vec<f64> = vm
            .data
            .chunks(c)
            .map(|r| (dot(r, r) + NORM_EPS).sqrt())
            .collect();
        let data = vm
            .data
            .iter()
            .enumerate()
            .map(|(k, &x)| x / norms[k / c])
            .collect();
        let t = Tensor {
            shape: vm.shape.clone(),
            data,
        };
        self.push(t, Op::NormalizeRows(m, norms))
    }

    /// Row-wise scatter-add: `out[dst] += src[s]` for every `(s, dst)` edge.
    /// Rows with no incoming edge are zero.
    pub fn scatter_rows(&mut self, src: Var, edges: Rc<Vec<(usize, usize)>>, out_rows: usize) -> Result<Var> {
        let vs = self.value(src);
        if vs.rank() != 2 || out_rows == 0 {
            return shape_err("scatter_rows", &vs.shape.clone(), &[out_rows]);
        }
        let c = vs.cols();
        let mut out = vec![0.0; out_rows * c];
        for &(s, d) in edges.iter() {
            if s >= vs.rows() || d >= out_rows {
                return Err(TensorError::Invalid {
                    op: "scatter_rows",
                    msg: format!("edge ({s}, {d}) out of range"),
                });
            }
            for k in 0..c {
                out[d * c + k] += vs.data[s * c + k];
            }
        }
        self.push(
            Tensor::new(vec![out_rows, c], out)?,
            Op::ScatterRows(src, edges),
        )
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let s = self.shape(loss);
        if !s.is_empty() && self.value(loss).len() != 1 {
            return Err(TensorError::NonScalarLoss(s.to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        Ok(Gradients { grads })
    }

    fn backward_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = &node.value.data;
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Add(a, b) => {
                acc(grads, *a, val(*a).len(), |k| g[k]);
                acc(grads, *b, val(*b).len(), |k| g[k]);
            }
            Op::Sub(a, b) => {
                acc(grads, *a, val(*a).len(), |k| g[k]);
                acc(grads, *b, val(*b).len(), |k| -g[k]);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&val(*a).data, &val(*b).data);
                acc(grads, *a, val(*a).len(), |k| g[k] * vb[k]);
                acc(grads, *b, val(*b).len(), |k| g[k] * va[k]);
            }
            Op::AddRow(m, r) => {
                acc(grads, *m, val(*m).len(), |k| g[k]);
                let c = val(*r).len();
                let mut gr = vec![0.0; c];
                for (k, &x) in g.iter().enumerate() {
                    gr[k % c] += x;
                }
                add_into(grads, *r, &gr);
            }
            Op::Affine(x, a) => acc(grads, *x, val(*x).len(), |k| a * g[k]),
            Op::Scale(x, s) => {
                let k = val(*s).item();
                let vx = &val(*x).data;
                acc(grads, *x, val(*x).len(), |j| k * g[j]);
                add_into(grads, *s, &[dot(g, vx)]);
            }
            Op::ScaleRows(m, s) => {
                let vm = val(*m);
                let vs = &val(*s).data;
                let c = vm.cols();
                acc(grads, *m, val(*m).len(), |k| g[k] * vs[k / c]);
                let gs: Vec<f64> = g
                    .chunks(c)
                    .zip(vm.data.chunks(c))
                    .map(|(gr, mr)| dot(gr, mr))
                    .collect();
                add_into(grads, *s, &gs);
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let (n, k, m) = (va.shape[0], va.shape[1], vb.shape[1]);
                // dA = G·Bᵀ, dB = Aᵀ·G
                let mut ga = vec![0.0; n * k];
                for i in 0..n {
                    let grow = &g[i * m..(i + 1) * m];
                    for p in 0..k {
                        ga[i * k + p] = dot(grow, &vb.data[p * m..(p + 1) * m]);
                    }
                }
                let mut gb = vec![0.0; k * m];
                for i in 0..n {
                    let grow = &g[i * m..(i + 1) * m];
                    for p in 0..k {
                        let x = va.data[i * k + p];
                        if x == 0.0 {
                            continue;
                        }
                        for (o, &y) in gb[p * m..(p + 1) * m].iter_mut().zip(grow) {
                            *o += x * y;
                        }
                    }
                }
                add_into(grads, *a, &ga);
                add_into(grads, *b, &gb);
            }
            Op::MatMulT(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let (n, k, m) = (va.shape[0], va.shape[1], vb.shape[0]);
                // dA = G·B, dB = Gᵀ·A
                let mut ga = vec![0.0; n * k];
                let mut gb = vec![0.0; m * k];
                for i in 0..n {
                    let arow = &va.data[i * k..(i + 1) * k];
                    for j in 0..m {
                        let w = g[i * m + j];
                        if w == 0.0 {
                            continue;
                        }
                        let brow = &vb.data[j * k..(j + 1) * k];
                        for p in 0..k {
                            ga[i * k + p] += w * brow[p];
                            gb[j * k + p] += w * arow[p];
                        }
                    }
                }
                add_into(grads, *a, &ga);
                add_into(grads, *b, &gb);
            }
            Op::MatVec(a, x) => {
                let (va, vx) = (val(*a), &val(*x).data);
                let k = va.shape[1];
                let mut ga = vec![0.0; va.len()];
                let mut gx = vec![0.0; k];
                for (i, &w) in g.iter().enumerate() {
                    let arow = &va.data[i * k..(i + 1) * k];
                    for p in 0..k {
                        ga[i * k + p] = w * vx[p];
                        gx[p] += w * arow[p];
                    }
                }
                add_into(grads, *a, &ga);
                add_into(grads, *x, &gx);
            }
            Op::TMatVec(a, x) => {
                let (va, vx) = (val(*a), &val(*x).data);
                let k = va.shape[1];
                let mut ga = vec![0.0; va.len()];
                let mut gx = vec![0.0; vx.len()];
                for i in 0..vx.len() {
                    let arow = &va.data[i * k..(i + 1) * k];
                    gx[i] = dot(arow, g);
                    for p in 0..k {
                        ga[i * k + p] = vx[i] * g[p];
                    }
                }
                add_into(grads, *a, &ga);
                add_into(grads, *x, &gx);
            }
            Op::Transpose(a) => {
                let va = val(*a);
                let (n, m) = (va.shape[0], va.shape[1]);
                let mut ga = vec![0.0; n * m];
                for i in 0..n {
                    for j in 0..m {
                        ga[i * m + j] = g[j * n + i];
                    }
                }
                add_into(grads, *a, &ga);
            }
            Op::Concat(parts) | Op::StackRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = val(p).len();
                    add_into(grads, p, &g[off..off + n]);
                    off += n;
                }
            }
            Op::GatherRows(m, idx) => {
                let vm = val(*m);
                let c = vm.cols();
                let mut gm = vec![0.0; vm.len()];
                for (r, &i) in idx.iter().enumerate() {
                    for k in 0..c {
                        gm[i * c + k] += g[r * c + k];
                    }
                }
                add_into(grads, *m, &gm);
            }
            Op::SliceCols(x, start) => {
                let vx = val(*x);
                let (rows, c) = (vx.rows(), vx.cols());
                let len = node.value.cols();
                let mut gx = vec![0.0; vx.len()];
                for r in 0..rows {
                    gx[r * c + start..r * c + start + len].copy_from_slice(&g[r * len..(r + 1) * len]);
                }
                add_into(grads, *x, &gx);
            }
            Op::Select(x, idx) => {
                let mut gx = vec![0.0; val(*x).len()];
                for (r, &i) in idx.iter().enumerate() {
                    gx[i] += g[r];
                }
                add_into(grads, *x, &gx);
            }
            Op::Reshape(x) => add_into(grads, *x, g),
            Op::Tanh(x) => {
                let corrupt = if self.fault == Some(Fault::TanhBackward) { 1.5 } else { 1.0 };
                acc(grads, *x, val(*x).len(), |k| corrupt * g[k] * (1.0 - out[k] * out[k]));
            }
            Op::Sigmoid(x) => acc(grads, *x, val(*x).len(), |k| g[k] * out[k] * (1.0 - out[k])),
            Op::Softmax(x) => {
                let c = node.value.cols();
                let mut gx = vec![0.0; out.len()];
                for ((p, gr), o) in out.chunks(c).zip(g.chunks(c)).zip(gx.chunks_mut(c)) {
                    let s = dot(p, gr);
                    for k in 0..c {
                        o[k] = p[k] * (gr[k] - s);
                    }
                }
                add_into(grads, *x, &gx);
            }
            Op::LogSoftmax(x) => {
                let gsum: f64 = g.iter().sum();
                acc(grads, *x, val(*x).len(), |k| g[k] - out[k].exp() * gsum);
            }
            Op::GroupSoftmax(s, groups) => {
                let cols = node.value.cols();
                let mut gs = vec![0.0; out.len()];
                for grp in groups.iter() {
                    for j in 0..cols {
                        let inner: f64 = grp.iter().map(|&v| g[v * cols + j] * out[v * cols + j]).sum();
                        for &v in grp {
                            let k = v * cols + j;
                            gs[k] = out[k] * (g[k] - inner);
                        }
                    }
                }
                add_into(grads, *s, &gs);
            }
            Op::RowMax(m, arg) => {
                let vm = val(*m);
                let c = vm.cols();
                let mut gm = vec![0.0; vm.len()];
                for (r, &j) in arg.iter().enumerate() {
                    gm[r * c + j] = g[r];
                }
                add_into(grads, *m, &gm);
            }
            Op::Sum(x) => acc(grads, *x, val(*x).len(), |_| g[0]),
            Op::Dot(a, b) => {
                let (va, vb) = (&val(*a).data, &val(*b).data);
                acc(grads, *a, val(*a).len(), |k| g[0] * vb[k]);
                acc(grads, *b, val(*b).len(), |k| g[0] * va[k]);
            }
            Op::MeanRows(m) => {
                let vm = val(*m);
                let (n, c) = (vm.rows(), vm.cols());
                let gm: Vec<f64> = (0..n * c).map(|k| g[k % c] / n as f64).collect();
                add_into(grads, *m, &gm);
            }
            Op::NormalizeRows(m, norms) => {
                let c = node.value.cols();
                let mut gm = vec![0.0; out.len()];
                for (r, &n) in norms.iter().enumerate() {
                    let y = &out[r * c..(r + 1) * c];
                    let gr = &g[r * c..(r + 1) * c];
                    let s = dot(y, gr);
                    for k in 0..c {
                        gm[r * c + k] = (gr[k] - y[k] * s) / n;
                    }
                }
                add_into(grads, *m, &gm);
            }
            Op::ScatterRows(src, edges) => {
                let vs = val(*src);
                let c = vs.cols();
                let mut gs = vec![0.0; vs.len()];
                for &(s, d) in edges.iter() {
                    for k in 0..c {
                        gs[s * c + k] += g[d * c + k];
                    }
                }
                add_into(grads, *src, &gs);
            }
        }
    }
}

/// Gradients of one backward pass, indexed by tape node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of `v`; zero when `v` does not reach the loss.
    pub fn get(&self, tape: &Tape, v: Var) -> Tensor {
        let shape = tape.shape(v).to_vec();
        match &self.grads[v.0] {
            Some(g) => Tensor {
                shape,
                data: g.clone(),
            },
            None => Tensor::zeros(&shape),
        }
    }

    /// Adds parameter gradients into the store. Every parameter gets a
    /// gradient buffer, zero when unreachable from the loss.
    pub fn accumulate_into(&self, tape: &Tape, store: &mut ParamStore) {
        store.ensure_grads();
        for (pid, v) in tape.param_vars.iter().enumerate() {
            let Some(v) = v else { continue };
            if let Some(g) = &self.grads[v.0] {
                store.add_grad(ParamId(pid), g);
            }
        }
    }
}

/// Adds `f(k)` to the gradient of `v` for every coordinate `k` of `v`.
fn acc(grads: &mut [Option<Vec<f64>>], v: Var, n: usize, f: impl Fn(usize) -> f64) {
    let slot = &mut grads[v.0];
    match slot {
        Some(buf) => {
            for (k, b) in buf.iter_mut().enumerate() {
                *b += f(k);
            }
        }
        None => *slot = Some((0..n).map(f).collect()),
    }
}

fn add_into(grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    match &mut grads[v.0] {
        Some(buf) => {
            for (b, &x) in buf.iter_mut().zip(g) {
                *b += x;
            }
        }
        slot => *slot = Some(g.to_vec()),
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_into(x: &[f64], out: &mut [f64]) {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - m).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

/// Numerically stable log-softmax of a slice.
pub fn log_softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    x.iter().map(|v| v - lse).collect()
}
