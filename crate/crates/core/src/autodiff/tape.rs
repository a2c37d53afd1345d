//! Eager reverse-mode tape.
//!
//! Every op computes its value immediately and appends a record; `backward`
//! walks the records once in reverse. Leaves may borrow their tensors (model
//! parameters stay where they are) and keep gradient accumulators that
//! persist across `backward` calls until [`Tape::zero_grad`].

use std::borrow::Cow;
use std::sync::Arc;

use super::tensor::{gemm_into, matmul, MatRef, Scalar, Tensor};
use super::AutodiffError;

/// Handle to a value on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    MatMul,
    Transpose,
    Add,
    Sub,
    AddRow,
    Mul,
    MulRow,
    Scale,
    ScaleBy,
    Concat,
    SliceCols,
    RowSoftmax,
    SegmentSoftmax,
    Sigmoid,
    LeakyRelu,
    Elu,
    MeanRows,
    GatherRows,
    ScatterAddRows,
    GroupSum,
    GroupScale,
    SumAll,
    Bce,
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Scale(Var, T),
    ScaleBy(Var, Var),
    Concat(Vec<Var>, Axis),
    SliceCols(Var, usize),
    RowSoftmax(Var),
    SegmentSoftmax(Var, Arc<[usize]>, usize),
    Sigmoid(Var),
    LeakyRelu(Var, T),
    Elu(Var, T),
    MeanRows(Var, Arc<[usize]>, Vec<usize>),
    GatherRows(Var, Arc<[usize]>),
    ScatterAddRows(Var, Arc<[usize]>),
    GroupSum(Var, usize),
    GroupScale(Var, Var),
    SumAll(Var),
    Bce(Var, Vec<T>, T),
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Transpose(..) => OpKind::Transpose,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::AddRow(..) => OpKind::AddRow,
            Op::Mul(..) => OpKind::Mul,
            Op::MulRow(..) => OpKind::MulRow,
            Op::Scale(..) => OpKind::Scale,
            Op::ScaleBy(..) => OpKind::ScaleBy,
            Op::Concat(..) => OpKind::Concat,
            Op::SliceCols(..) => OpKind::SliceCols,
            Op::RowSoftmax(..) => OpKind::RowSoftmax,
            Op::SegmentSoftmax(..) => OpKind::SegmentSoftmax,
            Op::Sigmoid(..) => OpKind::Sigmoid,
            Op::LeakyRelu(..) => OpKind::LeakyRelu,
            Op::Elu(..) => OpKind::Elu,
            Op::MeanRows(..) => OpKind::MeanRows,
            Op::GatherRows(..) => OpKind::GatherRows,
            Op::ScatterAddRows(..) => OpKind::ScatterAddRows,
            Op::GroupSum(..) => OpKind::GroupSum,
            Op::GroupScale(..) => OpKind::GroupScale,
            Op::SumAll(..) => OpKind::SumAll,
            Op::Bce(..) => OpKind::Bce,
        }
    }
}

struct Record<'p, T: Scalar> {
    value: Cow<'p, Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Tape<'p, T: Scalar> {
    records: Vec<Record<'p, T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Default for Tape<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &str, msg: impl std::fmt::Display) -> AutodiffError {
    AutodiffError::Shape(format!("{op}: {msg}"))
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new() -> Self {
        Self {
            records: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn push(&mut self, value: Cow<'p, Tensor<T>>, op: Op<T>, requires_grad: bool) -> Var {
        self.records.push(Record {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.records.len() - 1)
    }

    fn push_op(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var, AutodiffError> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite(op.kind()));
        }
        let rg = inputs.iter().any(|v| self.records[v.0].requires_grad);
        Ok(self.push(Cow::Owned(value), op, rg))
    }

    /// Owned leaf.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, requires_grad)
    }

    /// Borrowed trainable leaf.
    pub fn param(&mut self, value: &'p Tensor<T>) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, true)
    }

    /// Borrowed leaf with an explicit gradient flag.
    pub fn borrowed(&mut self, value: &'p Tensor<T>, requires_grad: bool) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.records[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.records[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if `backward` reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads[v.0].take()
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    pub fn op_kind(&self, v: Var) -> OpKind {
        self.records[v.0].op.kind()
    }

    fn shape(&self, v: Var) -> [usize; 2] {
        self.value(v).shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa[1] != sb[0] {
            return Err(shape_err("matmul", format!("{sa:?} x {sb:?}")));
        }
        let out = matmul(MatRef::of(self.value(a)), MatRef::of(self.value(b)));
        self.push_op(out, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let out = self.value(a).transpose();
        self.push_op(out, Op::Transpose(a), &[a])
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(ta.rows(), ta.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let out = self.zip_same(a, b, "add", |x, y| x + y)?;
        self.push_op(out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let out = self.zip_same(a, b, "sub", |x, y| x - y)?;
        self.push_op(out, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let out = self.zip_same(a, b, "mul", |x, y| x * y)?;
        self.push_op(out, Op::Mul(a, b), &[a, b])
    }

    /// `m×n` plus a `1×n` row broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, AutodiffError> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(shape_err("add_row", format!("{:?} + {:?}", ta.shape(), tr.shape())));
        }
        let mut out = ta.clone();
        for r in 0..out.rows() {
            for (o, &b) in out.row_mut(r).iter_mut().zip(tr.data()) {
                *o += b;
            }
        }
        self.push_op(out, Op::AddRow(a, row), &[a, row])
    }

    /// `m×n` times a `1×n` row broadcast over rows.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var, AutodiffError> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(shape_err("mul_row", format!("{:?} * {:?}", ta.shape(), tr.shape())));
        }
        let mut out = ta.clone();
        for r in 0..out.rows() {
            for (o, &b) in out.row_mut(r).iter_mut().zip(tr.data()) {
                *o *= b;
            }
        }
        self.push_op(out, Op::MulRow(a, row), &[a, row])
    }

    /// Multiplication by a fixed constant.
    pub fn scale(&mut self, a: Var, c: T) -> Result<Var, AutodiffError> {
        let out = self.value(a).map(|x| x * c);
        self.push_op(out, Op::Scale(a, c), &[a])
    }

    /// Multiplication by a `1×1` tensor on the tape.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var, AutodiffError> {
        if self.shape(s) != [1, 1] {
            return Err(shape_err("scale_by", format!("factor has shape {:?}", self.shape(s))));
        }
        let c = self.value(s).item();
        let out = self.value(a).map(|x| x * c);
        self.push_op(out, Op::ScaleBy(a, s), &[a, s])
    }

    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var, AutodiffError> {
        if parts.is_empty() {
            return Err(shape_err("concat", "no inputs"));
        }
        let out = match axis {
            Axis::Rows => {
                let cols = self.shape(parts[0])[1];
                if parts.iter().any(|&p| self.shape(p)[1] != cols) {
                    return Err(shape_err("concat", "column counts differ"));
                }
                let mut data = Vec::new();
                for &p in parts {
                    data.extend_from_slice(self.value(p).data());
                }
                Tensor::from_vec(data.len() / cols.max(1), cols, data)?
            }
            Axis::Cols => {
                let rows = self.shape(parts[0])[0];
                if parts.iter().any(|&p| self.shape(p)[0] != rows) {
                    return Err(shape_err("concat", "row counts differ"));
                }
                let cols: usize = parts.iter().map(|&p| self.shape(p)[1]).sum();
                let mut data = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row(r));
                    }
                }
                Tensor::from_vec(rows, cols, data)?
            }
        };
        self.push_op(out, Op::Concat(parts.to_vec(), axis), parts)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let t = self.value(a);
        if start + len > t.cols() {
            return Err(shape_err("slice_cols", format!("{start}+{len} > {}", t.cols())));
        }
        let out = Tensor::from_fn(t.rows(), len, |r, c| t.get(r, start + c));
        self.push_op(out, Op::SliceCols(a, start), &[a])
    }

    pub fn row_softmax(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        self.push_op(out, Op::RowSoftmax(a), &[a])
    }

    /// Softmax down each column, separately within each segment of rows.
    /// `segments[r]` names the segment of row `r`.
    pub fn segment_softmax(
        &mut self,
        a: Var,
        segments: Arc<[usize]>,
        num_segments: usize,
    ) -> Result<Var, AutodiffError> {
        let t = self.value(a);
        if segments.len() != t.rows() || segments.iter().any(|&s| s >= num_segments) {
            return Err(shape_err("segment_softmax", "segment ids do not match rows"));
        }
        let cols = t.cols();
        let mut max = vec![T::from_f64(f64::NEG_INFINITY); num_segments * cols];
        for (r, &s) in segments.iter().enumerate() {
            for c in 0..cols {
                let v = t.get(r, c);
                if v > max[s * cols + c] {
                    max[s * cols + c] = v;
                }
            }
        }
        let mut out = t.clone();
        let mut sum = vec![T::ZERO; num_segments * cols];
        for (r, &s) in segments.iter().enumerate() {
            for c in 0..cols {
                let e = (out.get(r, c) - max[s * cols + c]).exp();
                out.set(r, c, e);
                sum[s * cols + c] += e;
            }
        }
        for (r, &s) in segments.iter().enumerate() {
            for c in 0..cols {
                out.set(r, c, out.get(r, c) / sum[s * cols + c]);
            }
        }
        self.push_op(out, Op::SegmentSoftmax(a, segments, num_segments), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let out = self.value(a).map(sigmoid);
        self.push_op(out, Op::Sigmoid(a), &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Result<Var, AutodiffError> {
        let out = self.value(a).map(|x| if x > T::ZERO { x } else { x * slope });
        self.push_op(out, Op::LeakyRelu(a, slope), &[a])
    }

    pub fn elu(&mut self, a: Var, alpha: T) -> Result<Var, AutodiffError> {
        let out = self
            .value(a)
            .map(|x| if x > T::ZERO { x } else { alpha * (x.exp() - T::ONE) });
        self.push_op(out, Op::Elu(a, alpha), &[a])
    }

    /// Mean of the rows in each segment; every segment must be non-empty.
    pub fn mean_rows(&mut self, a: Var, segments: Arc<[usize]>, num_segments: usize) -> Result<Var, AutodiffError> {
        let t = self.value(a);
        if segments.len() != t.rows() || segments.iter().any(|&s| s >= num_segments) {
            return Err(shape_err("mean_rows", "segment ids do not match rows"));
        }
        let mut counts = vec![0usize; num_segments];
        segments.iter().for_each(|&s| counts[s] += 1);
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            return Err(shape_err("mean_rows", format!("segment {empty} is empty")));
        }
        let mut out = Tensor::zeros(num_segments, t.cols());
        for (r, &s) in segments.iter().enumerate() {
            for (o, &v) in out.row_mut(s).iter_mut().zip(t.row(r)) {
                *o += v;
            }
        }
        for (s, &c) in counts.iter().enumerate() {
            let inv = T::ONE / T::from_f64(c as f64);
            out.row_mut(s).iter_mut().for_each(|v| *v *= inv);
        }
        self.push_op(out, Op::MeanRows(a, segments, counts), &[a])
    }

    /// `out[i] = a[idx[i]]`.
    pub fn gather_rows(&mut self, a: Var, idx: Arc<[usize]>) -> Result<Var, AutodiffError> {
        let t = self.value(a);
        if idx.iter().any(|&i| i >= t.rows()) {
            return Err(shape_err("gather_rows", "index out of range"));
        }
        let mut data = Vec::with_capacity(idx.len() * t.cols());
        for &i in idx.iter() {
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::from_vec(idx.len(), t.cols(), data)?;
        self.push_op(out, Op::GatherRows(a, idx), &[a])
    }

    /// `out[idx[i]] += a[i]` into a zeroed `rows×n` tensor.
    pub fn scatter_add_rows(&mut self, a: Var, idx: Arc<[usize]>, rows: usize) -> Result<Var, AutodiffError> {
        let t = self.value(a);
        if idx.len() != t.rows() || idx.iter().any(|&i| i >= rows) {
            return Err(shape_err("scatter_add_rows", "index does not match rows"));
        }
        let mut out = Tensor::zeros(rows, t.cols());
        for (r, &i) in idx.iter().enumerate() {
            for (o, &v) in out.row_mut(i).iter_mut().zip(t.row(r)) {
                *o += v;
            }
        }
        self.push_op(out, Op::ScatterAddRows(a, idx), &[a])
    }

    /// Sums each of `groups` contiguous column blocks: `m×(g·c)` → `m×g`.
    pub fn group_sum(&mut self, a: Var, groups: usize) -> Result<Var, AutodiffError> {
        let t = self.value(a);
        if groups == 0 || !t.cols().is_multiple_of(groups) {
            return Err(shape_err(
                "group_sum",
                format!("{} cols into {groups} groups", t.cols()),
            ));
        }
        let width = t.cols() / groups;
        let out = Tensor::from_fn(t.rows(), groups, |r, g| {
            t.row(r)[g * width..(g + 1) * width].iter().copied().sum()
        });
        self.push_op(out, Op::GroupSum(a, groups), &[a])
    }

    /// Scales column block `g` of row `r` by `w[r, g]`: `m×(g·c)`, `m×g` → `m×(g·c)`.
    pub fn group_scale(&mut self, a: Var, w: Var) -> Result<Var, AutodiffError> {
        let (t, tw) = (self.value(a), self.value(w));
        let groups = tw.cols();
        if tw.rows() != t.rows() || groups == 0 || t.cols() % groups != 0 {
            return Err(shape_err("group_scale", format!("{:?} by {:?}", t.shape(), tw.shape())));
        }
        let width = t.cols() / groups;
        let out = Tensor::from_fn(t.rows(), t.cols(), |r, c| t.get(r, c) * tw.get(r, c / width));
        self.push_op(out, Op::GroupScale(a, w), &[a, w])
    }

    /// Row scaling by an `m×1` column.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var, AutodiffError> {
        if self.shape(col)[1] != 1 {
            return Err(shape_err("mul_col", "scale must be a column"));
        }
        self.group_scale(a, col)
    }

    /// Sum of all entries, as `1×1`.
    pub fn sum(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push_op(out, Op::SumAll(a), &[a])
    }

    /// Mean binary cross-entropy of an `m×1` column of probabilities against
    /// 0/1 labels. Probabilities are clamped to `[eps, 1-eps]`.
    pub fn bce_loss(&mut self, pred: Var, labels: &[T], eps: T) -> Result<Var, AutodiffError> {
        let p = self.value(pred);
        if p.cols() != 1 || p.rows() != labels.len() || labels.is_empty() {
            return Err(shape_err(
                "bce_loss",
                format!("{:?} vs {} labels", p.shape(), labels.len()),
            ));
        }
        let m = T::from_f64(labels.len() as f64);
        let mut total = T::ZERO;
        for (&pi, &y) in p.data().iter().zip(labels) {
            let q = clamp(pi, eps, T::ONE - eps);
            total += -(y * q.ln() + (T::ONE - y) * (T::ONE - q).ln());
        }
        let out = Tensor::scalar(total / m);
        self.push_op(out, Op::Bce(pred, labels.to_vec(), eps), &[pred])
    }

    /// Back-propagates from a `1×1` value. Leaf gradients accumulate across
    /// calls.
    pub fn backward(&mut self, loss: Var) -> Result<(), AutodiffError> {
        if self.shape(loss) != [1, 1] {
            return Err(AutodiffError::NonScalarLoss(self.shape(loss)));
        }
        let mut adj: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::scalar(T::ONE));

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.records[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.records[i].op {
                match &mut self.grads[i] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
                continue;
            }
            self.backprop_record(i, &g, &mut adj);
        }
        Ok(())
    }

    fn backprop_record(&self, i: usize, g: &Tensor<T>, adj: &mut [Option<Tensor<T>>]) {
        let rec = &self.records[i];
        let out = &*rec.value;
        let wants = |v: Var| self.records[v.0].requires_grad;
        let val = |v: Var| &*self.records[v.0].value;

        match &rec.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if wants(*a) {
                    // dA = G·Bᵀ
                    let ga = matmul(MatRef::of(g), MatRef::of(val(*b)).t());
                    accumulate(adj, *a, ga);
                }
                if wants(*b) {
                    // dB = Aᵀ·G
                    let vb = val(*b);
                    match &mut adj[b.0] {
                        Some(acc) => gemm_into(MatRef::of(val(*a)).t(), MatRef::of(g), T::ONE, acc),
                        slot => {
                            let mut gb = Tensor::zeros(vb.rows(), vb.cols());
                            gemm_into(MatRef::of(val(*a)).t(), MatRef::of(g), T::ZERO, &mut gb);
                            *slot = Some(gb);
                        }
                    }
                }
            }
            Op::Transpose(a) => accumulate(adj, *a, g.transpose()),
            Op::Add(a, b) => {
                if wants(*a) {
                    accumulate(adj, *a, g.clone());
                }
                if wants(*b) {
                    accumulate(adj, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    accumulate(adj, *a, g.clone());
                }
                if wants(*b) {
                    accumulate(adj, *b, g.map(|x| -x));
                }
            }
            Op::AddRow(a, row) => {
                if wants(*a) {
                    accumulate(adj, *a, g.clone());
                }
                if wants(*row) {
                    let mut gr = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, &v) in gr.row_mut(0).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    accumulate(adj, *row, gr);
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    accumulate(adj, *a, zip(g, val(*b), |x, y| x * y));
                }
                if wants(*b) {
                    accumulate(adj, *b, zip(g, val(*a), |x, y| x * y));
                }
            }
            Op::MulRow(a, row) => {
                let (ta, tr) = (val(*a), val(*row));
                if wants(*a) {
                    let ga = Tensor::from_fn(g.rows(), g.cols(), |r, c| g.get(r, c) * tr.get(0, c));
                    accumulate(adj, *a, ga);
                }
                if wants(*row) {
                    let mut gr = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            gr.data_mut()[c] += g.get(r, c) * ta.get(r, c);
                        }
                    }
                    accumulate(adj, *row, gr);
                }
            }
            Op::Scale(a, c) => accumulate(adj, *a, g.map(|x| x * *c)),
            Op::ScaleBy(a, s) => {
                let c = val(*s).item();
                if wants(*a) {
                    accumulate(adj, *a, g.map(|x| x * c));
                }
                if wants(*s) {
                    let d: T = g.data().iter().zip(val(*a).data()).map(|(&x, &y)| x * y).sum();
                    accumulate(adj, *s, Tensor::scalar(d));
                }
            }
            Op::Concat(parts, axis) => {
                let mut offset = 0;
                for &p in parts {
                    let [pr, pc] = val(p).shape();
                    if wants(p) {
                        let gp = match axis {
                            Axis::Rows => Tensor::from_fn(pr, pc, |r, c| g.get(offset + r, c)),
                            Axis::Cols => Tensor::from_fn(pr, pc, |r, c| g.get(r, offset + c)),
                        };
                        accumulate(adj, p, gp);
                    }
                    offset += match axis {
                        Axis::Rows => pr,
                        Axis::Cols => pc,
                    };
                }
            }
            Op::SliceCols(a, start) => {
                let ta = val(*a);
                let mut ga = Tensor::zeros(ta.rows(), ta.cols());
                for r in 0..g.rows() {
                    ga.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                accumulate(adj, *a, ga);
            }
            Op::RowSoftmax(a) => {
                let mut ga = Tensor::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    let (y, gy) = (out.row(r), g.row(r));
                    let dot: T = y.iter().zip(gy).map(|(&a, &b)| a * b).sum();
                    for (o, (&yi, &gi)) in ga.row_mut(r).iter_mut().zip(y.iter().zip(gy)) {
                        *o = yi * (gi - dot);
                    }
                }
                accumulate(adj, *a, ga);
            }
            Op::SegmentSoftmax(a, segments, nseg) => {
                let cols = out.cols();
                let mut dot = vec![T::ZERO; nseg * cols];
                for (r, &s) in segments.iter().enumerate() {
                    for c in 0..cols {
                        dot[s * cols + c] += out.get(r, c) * g.get(r, c);
                    }
                }
                let ga = Tensor::from_fn(out.rows(), cols, |r, c| {
                    out.get(r, c) * (g.get(r, c) - dot[segments[r] * cols + c])
                });
                accumulate(adj, *a, ga);
            }
            Op::Sigmoid(a) => accumulate(adj, *a, zip(g, out, |gi, y| gi * y * (T::ONE - y))),
            Op::LeakyRelu(a, slope) => {
                let ga = zip(g, val(*a), |gi, x| if x > T::ZERO { gi } else { gi * *slope });
                accumulate(adj, *a, ga);
            }
            Op::Elu(a, alpha) => {
                // For x ≤ 0, d/dx α(eˣ−1) = y + α.
                let ta = val(*a);
                let ga = Tensor::from_fn(g.rows(), g.cols(), |r, c| {
                    if ta.get(r, c) > T::ZERO {
                        g.get(r, c)
                    } else {
                        g.get(r, c) * (out.get(r, c) + *alpha)
                    }
                });
                accumulate(adj, *a, ga);
            }
            Op::MeanRows(a, segments, counts) => {
                let ta = val(*a);
                let mut ga = Tensor::zeros(ta.rows(), ta.cols());
                for (r, &s) in segments.iter().enumerate() {
                    let inv = T::ONE / T::from_f64(counts[s] as f64);
                    for (o, &v) in ga.row_mut(r).iter_mut().zip(g.row(s)) {
                        *o = v * inv;
                    }
                }
                accumulate(adj, *a, ga);
            }
            Op::GatherRows(a, idx) => {
                let ta = val(*a);
                let mut ga = Tensor::zeros(ta.rows(), ta.cols());
                for (r, &i) in idx.iter().enumerate() {
                    for (o, &v) in ga.row_mut(i).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                accumulate(adj, *a, ga);
            }
            Op::ScatterAddRows(a, idx) => {
                let mut data = Vec::with_capacity(idx.len() * g.cols());
                for &i in idx.iter() {
                    data.extend_from_slice(g.row(i));
                }
                let ga = Tensor::from_vec(idx.len(), g.cols(), data).expect("gather shape");
                accumulate(adj, *a, ga);
            }
            Op::GroupSum(a, groups) => {
                let ta = val(*a);
                let width = ta.cols() / groups;
                let ga = Tensor::from_fn(ta.rows(), ta.cols(), |r, c| g.get(r, c / width));
                accumulate(adj, *a, ga);
            }
            Op::GroupScale(a, w) => {
                let (ta, tw) = (val(*a), val(*w));
                let width = ta.cols() / tw.cols();
                if wants(*a) {
                    let ga = Tensor::from_fn(ta.rows(), ta.cols(), |r, c| g.get(r, c) * tw.get(r, c / width));
                    accumulate(adj, *a, ga);
                }
                if wants(*w) {
                    let mut gw = Tensor::zeros(tw.rows(), tw.cols());
                    for r in 0..ta.rows() {
                        for c in 0..ta.cols() {
                            let k = c / width;
                            let v = gw.get(r, k) + g.get(r, c) * ta.get(r, c);
                            gw.set(r, k, v);
                        }
                    }
                    accumulate(adj, *w, gw);
                }
            }
            Op::SumAll(a) => {
                let [r, c] = val(*a).shape();
                accumulate(adj, *a, Tensor::full(r, c, g.item()));
            }
            Op::Bce(pred, labels, eps) => {
                let p = val(*pred);
                let m = T::from_f64(labels.len() as f64);
                let scale = g.item() / m;
                let data = p
                    .data()
                    .iter()
                    .zip(labels)
                    .map(|(&pi, &y)| {
                        if pi < *eps || pi > T::ONE - *eps {
                            T::ZERO
                        } else {
                            scale * (-(y / pi) + (T::ONE - y) / (T::ONE - pi))
                        }
                    })
                    .collect();
                accumulate(adj, *pred, Tensor::from_vec(p.rows(), 1, data).expect("bce shape"));
            }
        }
    }
}

fn accumulate<T: Scalar>(adj: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut adj[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot => *slot = Some(g),
    }
}

fn zip<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

fn clamp<T: Scalar>(x: T, lo: T, hi: T) -> T {
    if x < lo {
        lo
    } else if x > hi {
        hi
    } else {
        x
    }
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::ZERO {
        T::ONE / (T::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::ONE + e)
    }
}

fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row
        .iter()
        .copied()
        .fold(T::from_f64(f64::NEG_INFINITY), |m, v| if v > m { v } else { m });
    let mut sum = T::ZERO;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}
