//! Tape of dense 2-D operations.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and the reverse pass is a single backwards sweep.

use crate::element::Element;
use crate::error::{AutodiffError, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    /// `lhs + rhs` where `rhs` is a `1 x cols` row repeated over every row.
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ConcatRows(Vec<Var>),
    SliceCols { x: Var, start: usize },
    SliceRows { x: Var, start: usize },
    GatherRows { x: Var, rows: Vec<usize> },
    SumRows(Var),
    SumCols(Var),
    MeanRows(Var),
    MeanCols(Var),
    SumAll(Var),
    Sigmoid(Var),
    Tanh(Var),
    LeakyRelu(Var, f64),
    SoftmaxRows(Var),
    RowNorms(Var),
    Cosine { a: Var, b: Var, eps: f64 },
    Mse(Var, Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::ConcatRows(..) => "concat_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::SliceRows { .. } => "slice_rows",
            Op::GatherRows { .. } => "gather_rows",
            Op::SumRows(..) => "sum_rows",
            Op::SumCols(..) => "sum_cols",
            Op::MeanRows(..) => "mean_rows",
            Op::MeanCols(..) => "mean_cols",
            Op::SumAll(..) => "sum_all",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::RowNorms(..) => "row_norms",
            Op::Cosine { .. } => "cosine",
            Op::Mse(..) => "mse",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                vec![*a, *b]
            }
            Op::Mse(a, b) | Op::Cosine { a, b, .. } => vec![*a, *b],
            Op::ConcatRows(parts) => parts.clone(),
            Op::Transpose(x)
            | Op::Scale(x, _)
            | Op::SumRows(x)
            | Op::SumCols(x)
            | Op::MeanRows(x)
            | Op::MeanCols(x)
            | Op::SumAll(x)
            | Op::Sigmoid(x)
            | Op::Tanh(x)
            | Op::LeakyRelu(x, _)
            | Op::SoftmaxRows(x)
            | Op::RowNorms(x)
            | Op::SliceCols { x, .. }
            | Op::SliceRows { x, .. }
            | Op::GatherRows { x, .. } => vec![*x],
        }
    }
}

struct Node<T> {
    op: Op,
    value: Tensor<T>,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    leaves: Vec<(Var, Option<ParamId>, Tensor<T>)>,
    nodes_visited: usize,
}

impl<T: Element> Gradients<T> {
    /// Gradient of the loss with respect to a leaf created with `requires_grad`.
    pub fn wrt(&self, var: Var) -> Option<&Tensor<T>> {
        self.leaves.iter().find(|(v, _, _)| *v == var).map(|(_, _, g)| g)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.leaves.iter().find(|(_, p, _)| *p == Some(id)).map(|(_, _, g)| g)
    }

    /// Number of graph nodes the reverse sweep propagated through.
    pub fn nodes_visited(&self) -> usize {
        self.nodes_visited
    }

    /// Per-parameter gradients in store order. Parameters that were never
    /// placed on the graph, or that the loss does not depend on, get zeros.
    /// A parameter placed on the graph more than once has its gradients summed.
    pub fn into_param_grads(self, store: &ParamStore<T>) -> Vec<Tensor<T>> {
        let mut out: Vec<Tensor<T>> = store
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.rows(), t.cols()))
            .collect();
        for (_, param, grad) in self.leaves {
            if let Some(id) = param {
                out[id.index()].add_assign(&grad);
            }
        }
        out
    }
}

/// Single-use computation graph. Build it with the op methods, call
/// [`Graph::backward`] once, then drop it. A second `backward` is rejected.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Element> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, lhs: [usize; 2], rhs: [usize; 2]) -> AutodiffError {
    AutodiffError::Shape { op, lhs, rhs }
}

fn t<T: Element>(v: f64) -> T {
    T::from_f64_lossy(v)
}

impl<T: Element> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), consumed: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> [usize; 2] {
        self.nodes[var.0].value.shape()
    }

    fn push(&mut self, op: Op, value: Tensor<T>) -> Result<Var> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite { op: op.name() });
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { op, value, requires_grad, param: None });
        Ok(Var(self.nodes.len() - 1))
    }

    fn check(&self, var: Var) -> Result<()> {
        if var.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(AutodiffError::UnknownNode(var.0))
        }
    }

    // ---- leaves ---------------------------------------------------------

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite { op: "leaf" });
        }
        self.nodes.push(Node { op: Op::Leaf, value, requires_grad, param: None });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        self.leaf(value, false)
    }

    /// Place a trainable parameter on the graph. Its gradient is reported
    /// under `id`.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Result<Var> {
        let var = self.leaf(store.get(id).clone(), true)?;
        self.nodes[var.0].param = Some(id);
        Ok(var)
    }

    // ---- linear algebra -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return Err(shape_err("matmul", av.shape(), bv.shape()));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let mut out = Tensor::zeros(m, n);
        T::gemm(m, k, n, T::one(), av.data(), k, 1, bv.data(), n, 1, T::zero(), out.data_mut(), n, 1);
        self.push(Op::MatMul(a, b), out)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let out = self.value(x).transpose();
        self.push(Op::Transpose(x), out)
    }

    /// Elementwise sum. `b` may also be a `1 x cols` row, broadcast over the
    /// rows of `a` (the bias of an affine layer).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() == bv.shape() {
            let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
            let out = Tensor::new(av.rows(), av.cols(), data)?;
            self.push(Op::Add(a, b), out)
        } else if bv.rows() == 1 && bv.cols() == av.cols() {
            let cols = av.cols();
            let row = bv.data();
            let data = av.data().iter().enumerate().map(|(i, &x)| x + row[i % cols]).collect();
            let out = Tensor::new(av.rows(), cols, data)?;
            self.push(Op::AddRow(a, b), out)
        } else {
            Err(shape_err("add", av.shape(), bv.shape()))
        }
    }

    fn zip_same(&mut self, op: Op, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(op.name(), av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(av.rows(), av.cols(), data)?;
        self.push(op, out)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(Op::Sub(a, b), a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(Op::Mul(a, b), a, b, |x, y| x * y)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        self.check(x)?;
        let s: T = t(factor);
        let out = self.value(x).map(|v| v * s);
        self.push(Op::Scale(x, factor), out)
    }

    /// `x @ w + bias`, with `bias` a `1 x out` row.
    pub fn affine(&mut self, x: Var, w: Var, bias: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add(xw, bias)
    }

    /// Stack matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(AutodiffError::InvalidArgument { op: "concat_rows", msg: "no inputs".into() });
        }
        for &p in parts {
            self.check(p)?;
        }
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(shape_err("concat_rows", self.shape(parts[0]), v.shape()));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let out = Tensor::new(rows, cols, data)?;
        self.push(Op::ConcatRows(parts.to_vec()), out)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        self.check(x)?;
        let v = self.value(x);
        if start + len > v.cols() {
            return Err(AutodiffError::InvalidArgument {
                op: "slice_cols",
                msg: format!("columns {start}..{} of {:?}", start + len, v.shape()),
            });
        }
        let out = Tensor::from_fn(v.rows(), len, |r, c| v.get(r, start + c));
        self.push(Op::SliceCols { x, start }, out)
    }

    /// Contiguous block of rows `start..start + len`.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        self.check(x)?;
        let v = self.value(x);
        if start + len > v.rows() {
            return Err(AutodiffError::InvalidArgument {
                op: "slice_rows",
                msg: format!("rows {start}..{} of {:?}", start + len, v.shape()),
            });
        }
        let cols = v.cols();
        let out = Tensor::new(len, cols, v.data()[start * cols..(start + len) * cols].to_vec())?;
        self.push(Op::SliceRows { x, start }, out)
    }

    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        self.check(x)?;
        let v = self.value(x);
        if let Some(&bad) = rows.iter().find(|&&r| r >= v.rows()) {
            return Err(AutodiffError::InvalidArgument {
                op: "gather_rows",
                msg: format!("row {bad} of {:?}", v.shape()),
            });
        }
        let out = Tensor::from_fn(rows.len(), v.cols(), |r, c| v.get(rows[r], c));
        self.push(Op::GatherRows { x, rows: rows.to_vec() }, out)
    }

    // ---- reductions -----------------------------------------------------

    /// Sum across each row: `m x n -> m x 1`.
    pub fn sum_rows(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let v = self.value(x);
        let out = Tensor::from_fn(v.rows(), 1, |r, _| v.row(r).iter().copied().sum());
        self.push(Op::SumRows(x), out)
    }

    /// Sum down each column: `m x n -> 1 x n`.
    pub fn sum_cols(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let v = self.value(x);
        let out = Tensor::from_fn(1, v.cols(), |_, c| (0..v.rows()).map(|r| v.get(r, c)).sum());
        self.push(Op::SumCols(x), out)
    }

    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let v = self.value(x);
        let n: T = t(v.cols() as f64);
        let out = Tensor::from_fn(v.rows(), 1, |r, _| v.row(r).iter().copied().sum::<T>() / n);
        self.push(Op::MeanRows(x), out)
    }

    pub fn mean_cols(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let v = self.value(x);
        let n: T = t(v.rows() as f64);
        let out = Tensor::from_fn(1, v.cols(), |_, c| (0..v.rows()).map(|r| v.get(r, c)).sum::<T>() / n);
        self.push(Op::MeanCols(x), out)
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let out = Tensor::scalar(self.value(x).data().iter().copied().sum());
        self.push(Op::SumAll(x), out)
    }

    // ---- pointwise nonlinearities ----------------------------------------

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let out = self.value(x).map(|v| T::one() / (T::one() + (-v).exp()));
        self.push(Op::Sigmoid(x), out)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let out = self.value(x).map(|v| v.tanh());
        self.push(Op::Tanh(x), out)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.check(x)?;
        let s: T = t(slope);
        let out = self.value(x).map(|v| if v > T::zero() { v } else { v * s });
        self.push(Op::LeakyRelu(x, slope), out)
    }

    // ---- attention pieces -------------------------------------------------

    /// Softmax along each row.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let v = self.value(x);
        let mut out = Tensor::zeros(v.rows(), v.cols());
        for r in 0..v.rows() {
            let row = v.row(r);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let exps: Vec<T> = row.iter().map(|&z| (z - max).exp()).collect();
            let total: T = exps.iter().copied().sum();
            for (c, e) in exps.into_iter().enumerate() {
                out.set(r, c, e / total);
            }
        }
        self.push(Op::SoftmaxRows(x), out)
    }

    /// L2 norm of each row: `m x n -> m x 1`.
    pub fn row_norms(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let v = self.value(x);
        let out = Tensor::from_fn(v.rows(), 1, |r, _| row_norm(v.row(r)));
        self.push(Op::RowNorms(x), out)
    }

    /// Pairwise cosine similarity between the rows of `a` (`m x d`) and the
    /// rows of `b` (`n x d`), giving `m x n`. Each norm is padded by `eps`, so
    /// a zero row has similarity 0 with everything.
    pub fn cosine(&mut self, a: Var, b: Var, eps: f64) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.cols() {
            return Err(shape_err("cosine", av.shape(), bv.shape()));
        }
        let an = normalize_rows(av, eps);
        let bn = normalize_rows(bv, eps);
        let (m, d, n) = (av.rows(), av.cols(), bv.rows());
        let mut out = Tensor::zeros(m, n);
        // bn is n x d row-major; read it as its d x n transpose.
        T::gemm(m, d, n, T::one(), an.data(), d, 1, bn.data(), 1, d, T::zero(), out.data_mut(), n, 1);
        self.push(Op::Cosine { a, b, eps }, out)
    }

    /// Mean of squared differences, as a `1 x 1` tensor.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.check(pred)?;
        self.check(target)?;
        let (pv, tv) = (self.value(pred), self.value(target));
        if pv.shape() != tv.shape() {
            return Err(shape_err("mse", pv.shape(), tv.shape()));
        }
        if pv.is_empty() {
            return Err(AutodiffError::InvalidArgument { op: "mse", msg: "empty input".into() });
        }
        let n: T = t(pv.len() as f64);
        let total: T = pv.data().iter().zip(tv.data()).map(|(&p, &y)| (p - y) * (p - y)).sum();
        self.push(Op::Mse(pred, target), Tensor::scalar(total / n))
    }

    // ---- reverse pass -----------------------------------------------------

    /// Reverse-mode sweep from a `1 x 1` loss. Each node is visited at most
    /// once; running it a second time on the same graph is an error.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        self.check(loss)?;
        if self.consumed {
            return Err(AutodiffError::BackwardConsumed);
        }
        let shape = self.shape(loss);
        if shape != [1, 1] {
            return Err(AutodiffError::NonScalarLoss(shape));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        let mut leaves = Vec::new();
        let mut visited = 0;

        for id in (0..=loss.0).rev() {
            let Some(grad) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            visited += 1;
            if let Op::Leaf = node.op {
                leaves.push((Var(id), node.param, grad));
                continue;
            }
            for (input, g) in self.input_grads(id, &grad) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        leaves.sort_by_key(|(v, _, _)| *v);
        Ok(Gradients { leaves, nodes_visited: visited })
    }

    /// Vector-Jacobian products of node `id` for upstream gradient `g`.
    fn input_grads(&self, id: usize, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let node = &self.nodes[id];
        let y = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                let mut out = Vec::new();
                if wants(*a) {
                    // dA = G B^T
                    let mut da = Tensor::zeros(m, k);
                    T::gemm(m, n, k, T::one(), g.data(), n, 1, bv.data(), 1, n, T::zero(), da.data_mut(), k, 1);
                    out.push((*a, da));
                }
                if wants(*b) {
                    // dB = A^T G
                    let mut db = Tensor::zeros(k, n);
                    T::gemm(k, m, n, T::one(), av.data(), 1, k, g.data(), n, 1, T::zero(), db.data_mut(), n, 1);
                    out.push((*b, db));
                }
                out
            }
            Op::Transpose(x) => vec![(*x, g.transpose())],
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::AddRow(a, b) => {
                let cols = g.cols();
                let mut db = Tensor::zeros(1, cols);
                for r in 0..g.rows() {
                    for (c, &v) in g.row(r).iter().enumerate() {
                        let cur = db.get(0, c);
                        db.set(0, c, cur + v);
                    }
                }
                vec![(*a, g.clone()), (*b, db)]
            }
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|v| -v))],
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let da = zip(g, bv, |gv, bv| gv * bv);
                let db = zip(g, av, |gv, av| gv * av);
                vec![(*a, da), (*b, db)]
            }
            Op::Scale(x, f) => {
                let s: T = t(*f);
                vec![(*x, g.map(|v| v * s))]
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                parts
                    .iter()
                    .map(|&p| {
                        let rows = val(p).rows();
                        let cols = g.cols();
                        let slice = g.data()[offset * cols..(offset + rows) * cols].to_vec();
                        offset += rows;
                        (p, Tensor::new(rows, cols, slice).expect("concat slice"))
                    })
                    .collect()
            }
            Op::SliceCols { x, start } => {
                let xv = val(*x);
                let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                for r in 0..g.rows() {
                    for c in 0..g.cols() {
                        dx.set(r, start + c, g.get(r, c));
                    }
                }
                vec![(*x, dx)]
            }
            Op::SliceRows { x, start } => {
                let xv = val(*x);
                let cols = xv.cols();
                let mut dx = Tensor::zeros(xv.rows(), cols);
                dx.data_mut()[start * cols..start * cols + g.len()].copy_from_slice(g.data());
                vec![(*x, dx)]
            }
            Op::GatherRows { x, rows } => {
                let xv = val(*x);
                let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                for (i, &src) in rows.iter().enumerate() {
                    for c in 0..g.cols() {
                        let cur = dx.get(src, c);
                        dx.set(src, c, cur + g.get(i, c));
                    }
                }
                vec![(*x, dx)]
            }
            Op::SumRows(x) => {
                let xv = val(*x);
                vec![(*x, Tensor::from_fn(xv.rows(), xv.cols(), |r, _| g.get(r, 0)))]
            }
            Op::SumCols(x) => {
                let xv = val(*x);
                vec![(*x, Tensor::from_fn(xv.rows(), xv.cols(), |_, c| g.get(0, c)))]
            }
            Op::MeanRows(x) => {
                let xv = val(*x);
                let n: T = t(xv.cols() as f64);
                vec![(*x, Tensor::from_fn(xv.rows(), xv.cols(), |r, _| g.get(r, 0) / n))]
            }
            Op::MeanCols(x) => {
                let xv = val(*x);
                let n: T = t(xv.rows() as f64);
                vec![(*x, Tensor::from_fn(xv.rows(), xv.cols(), |_, c| g.get(0, c) / n))]
            }
            Op::SumAll(x) => {
                let xv = val(*x);
                vec![(*x, Tensor::full(xv.rows(), xv.cols(), g.item()))]
            }
            Op::Sigmoid(x) => vec![(*x, zip(g, y, |gv, yv| gv * yv * (T::one() - yv)))],
            Op::Tanh(x) => vec![(*x, zip(g, y, |gv, yv| gv * (T::one() - yv * yv)))],
            Op::LeakyRelu(x, slope) => {
                let s: T = t(*slope);
                vec![(*x, zip(g, val(*x), |gv, xv| if xv > T::zero() { gv } else { gv * s }))]
            }
            Op::SoftmaxRows(x) => {
                let mut dx = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let dot: T = g.row(r).iter().zip(y.row(r)).map(|(&a, &b)| a * b).sum();
                    for c in 0..y.cols() {
                        dx.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                    }
                }
                vec![(*x, dx)]
            }
            Op::RowNorms(x) => {
                let xv = val(*x);
                let dx = Tensor::from_fn(xv.rows(), xv.cols(), |r, c| {
                    let norm = y.get(r, 0);
                    if norm > T::zero() {
                        g.get(r, 0) * xv.get(r, c) / norm
                    } else {
                        T::zero()
                    }
                });
                vec![(*x, dx)]
            }
            Op::Cosine { a, b, eps } => {
                let (av, bv) = (val(*a), val(*b));
                let an = normalize_rows(av, *eps);
                let bn = normalize_rows(bv, *eps);
                let (m, d, n) = (av.rows(), av.cols(), bv.rows());
                let mut out = Vec::new();
                if wants(*a) {
                    let mut dan = Tensor::zeros(m, d);
                    T::gemm(m, n, d, T::one(), g.data(), n, 1, bn.data(), d, 1, T::zero(), dan.data_mut(), d, 1);
                    out.push((*a, normalize_rows_vjp(av, &dan, *eps)));
                }
                if wants(*b) {
                    let mut dbn = Tensor::zeros(n, d);
                    T::gemm(n, m, d, T::one(), g.data(), 1, n, an.data(), d, 1, T::zero(), dbn.data_mut(), d, 1);
                    out.push((*b, normalize_rows_vjp(bv, &dbn, *eps)));
                }
                out
            }
            Op::Mse(p, target) => {
                let (pv, tv) = (val(*p), val(*target));
                let scale: T = g.item() * t::<T>(2.0) / t(pv.len() as f64);
                let dp = zip(pv, tv, |a, b| (a - b) * scale);
                let dt = dp.map(|v| -v);
                vec![(*p, dp), (*target, dt)]
            }
        }
    }
}

fn zip<T: Element>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.rows(), a.cols(), data).expect("zip shapes")
}

fn row_norm<T: Element>(row: &[T]) -> T {
    row.iter().map(|&v| v * v).sum::<T>().sqrt()
}

fn normalize_rows<T: Element>(x: &Tensor<T>, eps: f64) -> Tensor<T> {
    let e: T = t(eps);
    let mut out = x.clone();
    for r in 0..x.rows() {
        let denom = row_norm(x.row(r)) + e;
        for c in 0..x.cols() {
            out.set(r, c, x.get(r, c) / denom);
        }
    }
    out
}

/// Backward of `x_r / (|x_r| + eps)` for every row `r`.
fn normalize_rows_vjp<T: Element>(x: &Tensor<T>, g: &Tensor<T>, eps: f64) -> Tensor<T> {
    let e: T = t(eps);
    let mut dx = Tensor::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let row = x.row(r);
        let norm = row_norm(row);
        let denom = norm + e;
        let dot: T = row.iter().zip(g.row(r)).map(|(&a, &b)| a * b).sum();
        for c in 0..x.cols() {
            let mut v = g.get(r, c) / denom;
            if norm > T::zero() {
                v = v - row[c] * dot / (norm * denom * denom);
            }
            dx.set(r, c, v);
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(g: &mut Graph<f64>, rows: usize, cols: usize, vals: &[f64]) -> Var {
        g.leaf(Tensor::from_f64(rows, cols, vals).unwrap(), true).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::<f64>::new();
        let i = g.constant(Tensor::identity(3)).unwrap();
        let a = leaf(&mut g, 3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let out = g.matmul(i, a).unwrap();
        assert_eq!(g.value(out), g.value(a));
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut g = Graph::<f64>::new();
        let x = leaf(&mut g, 1, 3, &[0.0, 0.0, 0.0]);
        let s = g.softmax_rows(x).unwrap();
        for &v in g.value(s).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn leaky_relu_definition() {
        let mut g = Graph::<f64>::new();
        let x = leaf(&mut g, 1, 2, &[-1.0, 2.0]);
        let y = g.leaky_relu(x, 0.01).unwrap();
        assert_eq!(g.value(y).data(), &[-0.01, 2.0]);
    }

    #[test]
    fn cosine_orthogonal_and_self() {
        let mut g = Graph::<f64>::new();
        let a = leaf(&mut g, 2, 2, &[1.0, 0.0, 0.3, -0.7]);
        let b = leaf(&mut g, 2, 2, &[0.0, 1.0, 0.3, -0.7]);
        let c = g.cosine(a, b, 1e-12).unwrap();
        let v = g.value(c);
        assert_eq!(v.get(0, 0), 0.0);
        assert!((v.get(1, 1) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn cosine_zero_vector_is_zero() {
        let mut g = Graph::<f64>::new();
        let a = leaf(&mut g, 1, 2, &[0.0, 0.0]);
        let b = leaf(&mut g, 1, 2, &[0.5, 0.5]);
        let c = g.cosine(a, b, 1e-12).unwrap();
        assert_eq!(g.value(c).item(), 0.0);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut g = Graph::<f64>::new();
        let w = leaf(&mut g, 1, 2, &[1.0, 2.0]);
        let sq = g.mul(w, w).unwrap();
        let loss = g.sum_all(sq).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(w).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn mse_gradient_scalar() {
        let mut g = Graph::<f64>::new();
        let w = leaf(&mut g, 1, 1, &[3.0]);
        let zero = g.constant(Tensor::zeros(1, 1)).unwrap();
        let loss = g.mse(w, zero).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.wrt(w).unwrap().item(), 6.0);
    }

    #[test]
    fn backward_of_loss_wrt_itself_is_one() {
        let mut g = Graph::<f64>::new();
        let w = leaf(&mut g, 1, 1, &[0.25]);
        let grads = g.backward(w).unwrap();
        assert_eq!(grads.wrt(w).unwrap().item(), 1.0);
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut g = Graph::<f64>::new();
        let a = leaf(&mut g, 2, 3, &[0.0; 6]);
        let b = leaf(&mut g, 2, 3, &[0.0; 6]);
        let err = g.matmul(a, b).unwrap_err();
        assert!(matches!(err, AutodiffError::Shape { op: "matmul", lhs: [2, 3], rhs: [2, 3] }));
        let c = leaf(&mut g, 1, 2, &[0.0; 2]);
        assert!(matches!(g.add(a, c), Err(AutodiffError::Shape { op: "add", .. })));
        assert!(matches!(g.mul(a, c), Err(AutodiffError::Shape { op: "mul", .. })));
    }

    #[test]
    fn non_finite_output_is_rejected() {
        let mut g = Graph::<f64>::new();
        let a = leaf(&mut g, 1, 1, &[1e300]);
        let err = g.mul(a, a).unwrap_err();
        assert!(matches!(err, AutodiffError::NonFinite { op: "mul" }));
        assert!(g.leaf(Tensor::scalar(f64::NAN), false).is_err());
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::<f64>::new();
        let a = leaf(&mut g, 1, 2, &[1.0, 2.0]);
        assert!(matches!(g.backward(a), Err(AutodiffError::NonScalarLoss([1, 2]))));
    }

    #[test]
    fn second_backward_rejected() {
        let mut g = Graph::<f64>::new();
        let a = leaf(&mut g, 1, 1, &[1.0]);
        let b = g.scale(a, 2.0).unwrap();
        g.backward(b).unwrap();
        assert!(matches!(g.backward(b), Err(AutodiffError::BackwardConsumed)));
    }

    #[test]
    fn each_node_visited_once() {
        // A diamond: x feeds two branches that are summed.
        let mut g = Graph::<f64>::new();
        let x = leaf(&mut g, 2, 2, &[0.1, -0.2, 0.3, 0.4]);
        let a = g.tanh(x).unwrap();
        let b = g.sigmoid(x).unwrap();
        let c = g.mul(a, b).unwrap();
        let d = g.add(c, a).unwrap();
        let loss = g.sum_all(d).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.nodes_visited(), g.len());
    }
}
