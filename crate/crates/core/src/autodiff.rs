//! Dense f64 tensors, a tape-based reverse-mode computation graph, and a
//! parameter store with Adam state.
//!
//! Every tensor is treated as a row-major matrix: a 1-D shape `[n]` is read
//! as `1 × n`, a scalar as `1 × 1`.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embeddings::{write_str, ByteReader};
use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err(
                "tensor",
                format!("shape {shape:?} needs {n} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Tensor> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn row_vector(data: Vec<f64>) -> Tensor {
        Tensor {
            shape: vec![1, data.len()],
            data,
        }
    }

    pub fn vector(data: Vec<f64>) -> Tensor {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor {
            shape: vec![1, 1],
            data: vec![v],
        }
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], v: f64) -> Tensor {
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn uniform(shape: &[usize], low: f64, high: f64, rng: &mut impl Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(|_| rng.gen_range(low..high)).collect(),
        }
    }

    /// Xavier/Glorot uniform init for a `rows × cols` weight.
    pub fn xavier(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        Tensor::uniform(&[rows, cols], -a, a, rng)
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

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[..self.shape.len() - 1].iter().product(),
        }
    }

    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn like(&self, data: Vec<f64>) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data,
        }
    }

    fn add_assign(&mut self, other: &[f64]) {
        for (a, b) in self.data.iter_mut().zip(other) {
            *a += b;
        }
    }
}

// Matrix kernels. `nn`: A[m,k]·B[k,n]; `nt`: A[m,k]·B[n,k]ᵀ; `tn`: A[k,m]ᵀ·B[k,n].

fn gemm_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

fn gemm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

fn gemm_tn(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in out[i * n..(i + 1) * n].iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    ParamRows(ParamId, Vec<usize>),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SelectRows(Var, Vec<usize>),
    Transpose(Var),
    Softmax(Var),
    LogSumExp(Var),
    Sigmoid(Var),
    Relu(Var),
    Dropout(Var, Vec<f64>),
    Sum(Var),
    Mean(Var),
    LayerNorm(Var, Vec<f64>),
    RelShift(Var),
    Custom(Vec<(Var, Tensor)>),
}

struct Node {
    value: Option<Tensor>,
    op: Op,
}

/// Whether stochastic ops are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphMode {
    Train { seed: u64 },
    Eval,
}

/// A recorded computation over a frozen parameter snapshot.
pub struct Graph<'s> {
    store: &'s ParameterStore,
    nodes: Vec<Node>,
    rng: Option<ChaCha8Rng>,
    consumed: bool,
}

/// Gradients produced by one backward pass, indexed by parameter.
#[derive(Debug, Clone)]
pub struct Gradients {
    dense: Vec<Option<Tensor>>,
    rows: Vec<Vec<(usize, Vec<f64>)>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Dense gradient for a parameter; zeros when it did not participate.
    pub fn get(&self, id: ParamId) -> Tensor {
        let mut t = self.dense[id.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[id.0]));
        let c = t.cols();
        for (r, g) in &self.rows[id.0] {
            for (a, b) in t.data[r * c..(r + 1) * c].iter_mut().zip(g) {
                *a += b;
            }
        }
        t
    }
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParameterStore, mode: GraphMode) -> Graph<'s> {
        Graph {
            store,
            nodes: Vec::new(),
            rng: match mode {
                GraphMode::Train { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
                GraphMode::Eval => None,
            },
            consumed: false,
        }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn store(&self) -> &'s ParameterStore {
        self.store
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.store.value(*id),
            _ => unreachable!("node without value"),
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Constant)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    /// Gathers rows of a parameter matrix (embedding lookup); gradients are
    /// scattered back to the selected rows only.
    pub fn param_rows(&mut self, id: ParamId, rows: &[usize]) -> Result<Var> {
        let table = self.store.value(id);
        let c = table.cols();
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            if r >= table.rows() {
                return Err(shape_err("param_rows", format!("row {r} of {}", table.rows())));
            }
            data.extend_from_slice(table.row(r));
        }
        Ok(self.push(Tensor::matrix(rows.len(), c, data)?, Op::ParamRows(id, rows.to_vec())))
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.dims(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((m, k), (k2, n)) = (self.dims(a), self.dims(b));
        if k != k2 {
            return Err(shape_err("matmul", format!("{m}x{k} · {k2}x{n}")));
        }
        let out = gemm_nn(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((m, k), (n, k2)) = (self.dims(a), self.dims(b));
        if k != k2 {
            return Err(shape_err("matmul_nt", format!("{m}x{k} · ({n}x{k2})ᵀ")));
        }
        let out = gemm_nt(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMulNT(a, b)))
    }

    /// `x · wᵀ + b` with `w` stored as `out × in`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul_nt(x, w)?;
        match b {
            Some(b) => self.add_row(y, b),
            None => Ok(y),
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.dims(a) != self.dims(b) {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| f(*x, *y)).collect();
        Tensor::matrix(ta.rows(), ta.cols(), data).unwrap()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let t = self.zip_map(a, b, |x, y| x + y);
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let t = self.zip_map(a, b, |x, y| x * y);
        Ok(self.push(t, Op::Mul(a, b)))
    }

    fn row_broadcast(&self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let ((m, n), (br, bc)) = (self.dims(a), self.dims(b));
        if br != 1 || bc != n {
            return Err(shape_err(op, format!("{m}x{n} with row {br}x{bc}")));
        }
        let (ta, tb) = (self.value(a), self.value(b));
        let mut data = Vec::with_capacity(m * n);
        for r in 0..m {
            data.extend(ta.row(r).iter().zip(&tb.data).map(|(x, y)| f(*x, *y)));
        }
        Tensor::matrix(m, n, data)
    }

    /// Adds a `1 × n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.row_broadcast("add_row", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::AddRow(a, b)))
    }

    /// Multiplies every row of `a` elementwise by a `1 × n` row.
    pub fn mul_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.row_broadcast("mul_row", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::MulRow(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a);
        let t = Tensor::matrix(t.rows(), t.cols(), t.data.iter().map(|x| x * c).collect()).unwrap();
        self.push(t, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a);
        let t = Tensor::matrix(t.rows(), t.cols(), t.data.iter().map(|x| x + c).collect()).unwrap();
        self.push(t, Op::AddScalar(a))
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(shape_err("concat_cols", "no inputs"));
        };
        let m = self.dims(first).0;
        if let Some(bad) = parts.iter().find(|p| self.dims(**p).0 != m) {
            return Err(shape_err("concat_cols", format!("{} rows vs {m}", self.dims(*bad).0)));
        }
        let total: usize = parts.iter().map(|p| self.dims(*p).1).sum();
        let mut data = Vec::with_capacity(m * total);
        for r in 0..m {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        Ok(self.push(Tensor::matrix(m, total, data)?, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(shape_err("concat_rows", "no inputs"));
        };
        let n = self.dims(first).1;
        if let Some(bad) = parts.iter().find(|p| self.dims(**p).1 != n) {
            return Err(shape_err("concat_rows", format!("{} cols vs {n}", self.dims(*bad).1)));
        }
        let mut data = Vec::new();
        for p in parts {
            data.extend_from_slice(self.value(*p).data());
        }
        let m = data.len() / n.max(1);
        Ok(self.push(Tensor::matrix(m, n, data)?, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims(a);
        if start + len > n {
            return Err(shape_err("slice_cols", format!("[{start}, {}) of {n}", start + len)));
        }
        let t = self.value(a);
        let mut data = Vec::with_capacity(m * len);
        for r in 0..m {
            data.extend_from_slice(&t.row(r)[start..start + len]);
        }
        Ok(self.push(Tensor::matrix(m, len, data)?, Op::SliceCols(a, start)))
    }

    /// Row gather (with repetition allowed).
    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let (m, n) = self.dims(a);
        let t = self.value(a);
        let mut data = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            if r >= m {
                return Err(shape_err("select_rows", format!("row {r} of {m}")));
            }
            data.extend_from_slice(t.row(r));
        }
        Ok(self.push(Tensor::matrix(rows.len(), n, data)?, Op::SelectRows(a, rows.to_vec())))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let t = self.value(a);
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = t.data[i * n + j];
            }
        }
        self.push(Tensor::matrix(n, m, data).unwrap(), Op::Transpose(a))
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut data = Vec::with_capacity(t.len());
        for r in 0..t.rows() {
            data.extend(softmax_row(t.row(r)));
        }
        let out = t.like(data);
        self.push(out, Op::Softmax(a))
    }

    /// Log-sum-exp along the last axis; `m × n → m × 1`.
    pub fn logsumexp(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let data = (0..t.rows()).map(|r| log_sum_exp(t.row(r))).collect();
        let out = Tensor::matrix(t.rows(), 1, data).unwrap();
        self.push(out, Op::LogSumExp(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = t.like(t.data.iter().map(|x| sigmoid(*x)).collect());
        self.push(out, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = t.like(t.data.iter().map(|x| x.max(0.0)).collect());
        self.push(out, Op::Relu(a))
    }

    /// Inverted dropout with the graph's RNG. Identity in eval mode or at rate 0.
    pub fn dropout(&mut self, a: Var, rate: f64) -> Var {
        if self.rng.is_none() || rate <= 0.0 {
            return a;
        }
        let n = self.value(a).len();
        let rng = self.rng.as_mut().unwrap();
        let keep = 1.0 - rate;
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        self.apply_mask(a, mask)
    }

    /// Dropout with an explicit keep-mask of 0/1 entries, scaled by `1/(1-rate)`.
    pub fn dropout_with_mask(&mut self, a: Var, keep: &[bool], rate: f64) -> Result<Var> {
        if keep.len() != self.value(a).len() {
            return Err(shape_err("dropout", format!("mask {} vs {}", keep.len(), self.value(a).len())));
        }
        if rate <= 0.0 {
            return Ok(a);
        }
        let s = 1.0 / (1.0 - rate);
        let mask = keep.iter().map(|k| if *k { s } else { 0.0 }).collect();
        Ok(self.apply_mask(a, mask))
    }

    fn apply_mask(&mut self, a: Var, mask: Vec<f64>) -> Var {
        let t = self.value(a);
        let out = t.like(t.data.iter().zip(&mask).map(|(x, m)| x * m).collect());
        self.push(out, Op::Dropout(a, mask))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data.iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Row-wise standardization `(x - mean) / sqrt(var + eps)`, no affine part.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let t = self.value(a);
        let n = t.cols();
        let mut data = Vec::with_capacity(t.len());
        let mut inv = Vec::with_capacity(t.rows());
        for r in 0..t.rows() {
            let row = t.row(r);
            let mu = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            data.extend(row.iter().map(|x| (x - mu) * is));
            inv.push(is);
        }
        let out = t.like(data);
        self.push(out, Op::LayerNorm(a, inv))
    }

    /// Maps an `n × (2n-1)` score matrix indexed by relative offset to an
    /// `n × n` matrix: `out[i][j] = p[i][i - j + n - 1]`.
    pub fn rel_shift(&mut self, p: Var) -> Result<Var> {
        let (n, w) = self.dims(p);
        if w != 2 * n - 1 {
            return Err(shape_err("rel_shift", format!("{n}x{w}, expected width {}", 2 * n - 1)));
        }
        let t = self.value(p);
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(t.data[i * w + i + n - 1 - j]);
            }
        }
        Ok(self.push(Tensor::matrix(n, n, data)?, Op::RelShift(p)))
    }

    /// Records a scalar-valued function whose local gradients with respect to
    /// each input have already been computed.
    pub fn custom_scalar(&mut self, value: f64, inputs: Vec<(Var, Tensor)>) -> Result<Var> {
        for (v, g) in &inputs {
            if self.dims(*v) != (g.rows(), g.cols()) {
                return Err(shape_err("custom_scalar", "local gradient shape mismatch"));
            }
        }
        Ok(self.push(Tensor::scalar(value), Op::Custom(inputs)))
    }

    /// Reverse pass from a scalar. May be called once per graph.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::State("backward already ran on this graph".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(shape_err("backward", "loss must be a scalar"));
        }
        self.consumed = true;
        let shapes: Vec<Vec<usize>> = self.store.values.iter().map(|t| t.shape.clone()).collect();
        let np = shapes.len();
        let mut out = Gradients {
            dense: vec![None; np],
            rows: vec![Vec::new(); np],
            shapes,
        };
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => match &mut out.dense[id.0] {
                    Some(t) => t.add_assign(&g),
                    slot @ None => {
                        *slot = Some(Tensor {
                            shape: out.shapes[id.0].clone(),
                            data: g,
                        })
                    }
                },
                Op::ParamRows(id, rows) => {
                    let c = g.len() / rows.len().max(1);
                    for (k, r) in rows.iter().enumerate() {
                        out.rows[id.0].push((*r, g[k * c..(k + 1) * c].to_vec()));
                    }
                }
                op => {
                    let contributions = self.local_grads(idx, op, &g);
                    for (v, d) in contributions {
                        match &mut grads[v.0] {
                            Some(acc) => {
                                for (a, b) in acc.iter_mut().zip(&d) {
                                    *a += b;
                                }
                            }
                            slot @ None => *slot = Some(d),
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    fn local_grads(&self, idx: usize, op: &Op, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let out = self.value(Var(idx));
        match op {
            Op::Constant | Op::Param(_) | Op::ParamRows(..) => Vec::new(),
            Op::MatMul(a, b) => {
                let ((m, k), (_, n)) = (self.dims(*a), self.dims(*b));
                let da = gemm_nt(g, self.value(*b).data(), m, n, k);
                let db = gemm_tn(self.value(*a).data(), g, m, k, n);
                vec![(*a, da), (*b, db)]
            }
            Op::MatMulNT(a, b) => {
                let ((m, k), (n, _)) = (self.dims(*a), self.dims(*b));
                let da = gemm_nn(g, self.value(*b).data(), m, n, k);
                let db = gemm_tn(g, self.value(*a).data(), m, n, k);
                vec![(*a, da), (*b, db)]
            }
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::AddRow(a, b) => {
                let n = self.dims(*a).1;
                vec![(*a, g.to_vec()), (*b, col_sums(g, n))]
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let da = g.iter().zip(&tb.data).map(|(x, y)| x * y).collect();
                let db = g.iter().zip(&ta.data).map(|(x, y)| x * y).collect();
                vec![(*a, da), (*b, db)]
            }
            Op::MulRow(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let n = tb.len();
                let da = g.iter().enumerate().map(|(i, x)| x * tb.data[i % n]).collect();
                let prod: Vec<f64> = g.iter().zip(&ta.data).map(|(x, y)| x * y).collect();
                vec![(*a, da), (*b, col_sums(&prod, n))]
            }
            Op::Scale(a, c) => vec![(*a, g.iter().map(|x| x * c).collect())],
            Op::AddScalar(a) => vec![(*a, g.to_vec())],
            Op::ConcatCols(parts) => {
                let m = out.rows();
                let total = out.cols();
                let mut offset = 0;
                let mut res = Vec::with_capacity(parts.len());
                for p in parts {
                    let w = self.dims(*p).1;
                    let mut d = Vec::with_capacity(m * w);
                    for r in 0..m {
                        d.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                    }
                    offset += w;
                    res.push((*p, d));
                }
                res
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                parts
                    .iter()
                    .map(|p| {
                        let len = self.value(*p).len();
                        let d = g[offset..offset + len].to_vec();
                        offset += len;
                        (*p, d)
                    })
                    .collect()
            }
            Op::SliceCols(a, start) => {
                let (m, n) = self.dims(*a);
                let w = out.cols();
                let mut d = vec![0.0; m * n];
                for r in 0..m {
                    d[r * n + start..r * n + start + w].copy_from_slice(&g[r * w..(r + 1) * w]);
                }
                vec![(*a, d)]
            }
            Op::SelectRows(a, rows) => {
                let (m, n) = self.dims(*a);
                let mut d = vec![0.0; m * n];
                for (k, r) in rows.iter().enumerate() {
                    for (x, y) in d[r * n..(r + 1) * n].iter_mut().zip(&g[k * n..(k + 1) * n]) {
                        *x += y;
                    }
                }
                vec![(*a, d)]
            }
            Op::Transpose(a) => {
                let (m, n) = self.dims(*a);
                let mut d = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        d[i * n + j] = g[j * m + i];
                    }
                }
                vec![(*a, d)]
            }
            Op::Softmax(a) => {
                let n = out.cols();
                let mut d = Vec::with_capacity(g.len());
                for r in 0..out.rows() {
                    let y = out.row(r);
                    let gr = &g[r * n..(r + 1) * n];
                    let s: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    d.extend(y.iter().zip(gr).map(|(yv, gv)| yv * (gv - s)));
                }
                vec![(*a, d)]
            }
            Op::LogSumExp(a) => {
                let t = self.value(*a);
                let mut d = Vec::with_capacity(t.len());
                for r in 0..t.rows() {
                    let lse = out.data[r];
                    d.extend(t.row(r).iter().map(|x| (x - lse).exp() * g[r]));
                }
                vec![(*a, d)]
            }
            Op::Sigmoid(a) => {
                let d = g.iter().zip(&out.data).map(|(gv, y)| gv * y * (1.0 - y)).collect();
                vec![(*a, d)]
            }
            Op::Relu(a) => {
                let t = self.value(*a);
                let d = g
                    .iter()
                    .zip(&t.data)
                    .map(|(gv, x)| if *x > 0.0 { *gv } else { 0.0 })
                    .collect();
                vec![(*a, d)]
            }
            Op::Dropout(a, mask) => vec![(*a, g.iter().zip(mask).map(|(x, m)| x * m).collect())],
            Op::Sum(a) => vec![(*a, vec![g[0]; self.value(*a).len()])],
            Op::Mean(a) => {
                let len = self.value(*a).len();
                vec![(*a, vec![g[0] / len as f64; len])]
            }
            Op::LayerNorm(a, inv) => {
                let n = out.cols();
                let nf = n as f64;
                let mut d = Vec::with_capacity(g.len());
                for (r, is) in inv.iter().enumerate() {
                    let y = out.row(r);
                    let gr = &g[r * n..(r + 1) * n];
                    let mg = gr.iter().sum::<f64>() / nf;
                    let mgy = gr.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / nf;
                    d.extend(gr.iter().zip(y).map(|(gv, yv)| is * (gv - mg - yv * mgy)));
                }
                vec![(*a, d)]
            }
            Op::RelShift(p) => {
                let (n, w) = self.dims(*p);
                let mut d = vec![0.0; n * w];
                for i in 0..n {
                    for j in 0..n {
                        d[i * w + i + n - 1 - j] += g[i * n + j];
                    }
                }
                vec![(*p, d)]
            }
            Op::Custom(inputs) => inputs
                .iter()
                .map(|(v, local)| (*v, local.data.iter().map(|x| x * g[0]).collect()))
                .collect(),
        }
    }
}

fn col_sums(g: &[f64], n: usize) -> Vec<f64> {
    let mut s = vec![0.0; n];
    for row in g.chunks_exact(n) {
        for (a, b) in s.iter_mut().zip(row) {
            *a += b;
        }
    }
    s
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn softmax_row(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

/// Named trainable tensors with accumulated gradients and Adam moments.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    names: Vec<String>,
    index: HashMap<String, ParamId>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
    grads_ready: bool,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
    step: u64,
}

const CKPT_MAGIC: &[u8; 9] = b"SANERCKPT";
const CKPT_VERSION: u32 = 1;

impl ParameterStore {
    pub fn new() -> ParameterStore {
        ParameterStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::State(format!("duplicate parameter {name:?}")));
        }
        let id = ParamId(self.values.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.grads.push(Tensor::zeros(value.shape()));
        self.first_moment.push(Tensor::zeros(value.shape()));
        self.second_moment.push(Tensor::zeros(value.shape()));
        self.values.push(value);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, id: ParamId) -> (&Tensor, &Tensor) {
        (&self.first_moment[id.0], &self.second_moment[id.0])
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Adds `scale × g` into the stored gradients.
    pub fn accumulate(&mut self, g: &Gradients, scale: f64) {
        for i in 0..self.values.len() {
            let acc = &mut self.grads[i];
            if let Some(d) = &g.dense[i] {
                for (a, b) in acc.data.iter_mut().zip(&d.data) {
                    *a += scale * b;
                }
            }
            let c = acc.cols();
            for (r, row) in &g.rows[i] {
                for (a, b) in acc.data[r * c..(r + 1) * c].iter_mut().zip(row) {
                    *a += scale * b;
                }
            }
        }
        self.grads_ready = true;
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.data.iter_mut().for_each(|x| *x = 0.0);
        }
        self.grads_ready = false;
    }

    /// One bias-corrected Adam update; clears the gradients.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        if !self.grads_ready {
            return Err(Error::State("adam_step without accumulated gradients".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for i in 0..self.values.len() {
            let p = &mut self.values[i].data;
            let g = &self.grads[i].data;
            let m = &mut self.first_moment[i].data;
            let v = &mut self.second_moment[i].data;
            for k in 0..p.len() {
                m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
                v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                p[k] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
            }
        }
        self.zero_grad();
        Ok(())
    }

    /// Serializes parameters, optimizer state and an opaque metadata string.
    pub fn write_checkpoint<W: Write>(&self, mut w: W, metadata: &str) -> Result<()> {
        w.write_all(CKPT_MAGIC)?;
        w.write_all(&CKPT_VERSION.to_le_bytes())?;
        write_str(&mut w, metadata)?;
        w.write_all(&(self.values.len() as u32).to_le_bytes())?;
        for (name, t) in self.names.iter().zip(&self.values) {
            write_str(&mut w, name)?;
            w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
            for d in &t.shape {
                w.write_all(&(*d as u32).to_le_bytes())?;
            }
            write_f64s(&mut w, &t.data)?;
        }
        w.write_all(&self.step.to_le_bytes())?;
        for (m, v) in self.first_moment.iter().zip(&self.second_moment) {
            write_f64s(&mut w, &m.data)?;
            write_f64s(&mut w, &v.data)?;
        }
        Ok(())
    }

    pub fn read_checkpoint(bytes: &[u8]) -> Result<(ParameterStore, String)> {
        let mut r = ByteReader::new(bytes);
        if r.take(9)? != CKPT_MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CKPT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint version {version}, expected {CKPT_VERSION}"
            )));
        }
        let metadata = r.string()?;
        let count = r.u32()? as usize;
        let mut store = ParameterStore::new();
        for _ in 0..count {
            let name = r.string()?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = read_f64s(&mut r, n)?;
            store.add(name, Tensor::new(shape, data)?)?;
        }
        store.step = r.u64()?;
        for i in 0..count {
            let n = store.values[i].len();
            store.first_moment[i].data = read_f64s(&mut r, n)?;
            store.second_moment[i].data = read_f64s(&mut r, n)?;
        }
        if !r.at_end() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok((store, metadata))
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>, metadata: &str) -> Result<()> {
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf, metadata)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ParameterStore, String)> {
        ParameterStore::read_checkpoint(&std::fs::read(path)?)
    }
}

fn write_f64s<W: Write>(w: &mut W, xs: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(xs.len() * 8);
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_f64s(r: &mut ByteReader<'_>, n: usize) -> Result<Vec<f64>> {
    (0..n).map(|_| r.f64()).collect()
}
