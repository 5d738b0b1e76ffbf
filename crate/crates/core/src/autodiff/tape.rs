use super::kernels::{axpy, matmul_acc, matmul_at_acc, matmul_bt_acc, transpose};
use super::{Gradients, ParamId, ParamStore, Real, Tensor};
use crate::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Param(ParamId),
    Constant,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Sum(Var),
    Mean(Var),
    ConcatCols(Var, Var),
    GatherRows(Var, Vec<usize>),
    SliceCols(Var, usize),
    Pick(Var, usize),
}

#[derive(Debug)]
struct Node<T> {
    op: Op,
    rows: usize,
    cols: usize,
    /// Empty for parameter leaves, whose value lives in the store.
    value: Vec<T>,
    needs_grad: bool,
}

/// Records a forward computation for one reverse sweep.
pub struct Tape<'p, T: Real> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
}

impl<'p, T: Real> Tape<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[T] {
        match &self.nodes[v.0].op {
            Op::Param(id) => self.params.get(*id).tensor.data(),
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let (r, c) = self.shape(v);
        Tensor::new(r, c, self.value(v).to_vec()).expect("consistent node shape")
    }

    /// Value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> T {
        self.value(v)[0]
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize, value: Vec<T>, needs_grad: bool) -> Var {
        debug_assert!(matches!(op, Op::Param(_)) || value.len() == rows * cols);
        self.nodes.push(Node {
            op,
            rows,
            cols,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn grad_flows(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let (r, c) = self.params.get(id).tensor.shape();
        self.push(Op::Param(id), r, c, Vec::new(), true)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        let (r, c) = t.shape();
        self.push(Op::Constant, r, c, t.into_data(), false)
    }

    pub fn constant_scalar(&mut self, x: T) -> Var {
        self.constant(Tensor::scalar(x))
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((r, k), (k2, c)) = (self.shape(a), self.shape(b));
        if k != k2 {
            return Err(Error::Shape { op: "matmul", lhs: (r, k), rhs: (k2, c) });
        }
        let mut out = vec![T::zero(); r * c];
        matmul_acc(self.value(a), self.value(b), &mut out, r, k, c);
        let g = self.grad_flows(a) || self.grad_flows(b);
        Ok(self.push(Op::MatMul(a, b), r, c, out, g))
    }

    /// `a · bᵀ`; with rows of `a` as node features and `b` a `out×in`
    /// weight matrix this applies the weight to every row.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((r, k), (c, k2)) = (self.shape(a), self.shape(b));
        if k != k2 {
            return Err(Error::Shape { op: "matmul_bt", lhs: (r, k), rhs: (c, k2) });
        }
        let mut out = vec![T::zero(); r * c];
        matmul_bt_acc(self.value(a), self.value(b), &mut out, r, k, c);
        let g = self.grad_flows(a) || self.grad_flows(b);
        Ok(self.push(Op::MatMulBt(a, b), r, c, out, g))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let out = transpose(self.value(a), r, c);
        let g = self.grad_flows(a);
        self.push(Op::Transpose(a), c, r, out, g)
    }

    // ---- element-wise with 2-D broadcasting ----

    fn broadcast_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize)> {
        let ((ra, ca), (rb, cb)) = (self.shape(a), self.shape(b));
        let dim = |x: usize, y: usize| match (x, y) {
            _ if x == y => Some(x),
            (1, y) => Some(y),
            (x, 1) => Some(x),
            _ => None,
        };
        match (dim(ra, rb), dim(ca, cb)) {
            (Some(r), Some(c)) => Ok((r, c)),
            _ => Err(Error::Shape { op, lhs: (ra, ca), rhs: (rb, cb) }),
        }
    }

    fn elementwise(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op,
    ) -> Result<Var> {
        let (r, c) = self.broadcast_shape(name, a, b)?;
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (va, vb) = (self.value(a), self.value(b));
        let out = if sa == sb {
            va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let mut out = Vec::with_capacity(r * c);
            for i in 0..r {
                for j in 0..c {
                    out.push(f(va[bidx(sa, i, j)], vb[bidx(sb, i, j)]));
                }
            }
            out
        };
        let g = self.grad_flows(a) || self.grad_flows(b);
        Ok(self.push(op, r, c, out, g))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let k = T::of(s);
        let out = self.value(a).iter().map(|&x| x * k).collect();
        let (r, c) = self.shape(a);
        let g = self.grad_flows(a);
        self.push(Op::Scale(a, s), r, c, out, g)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(T) -> T) -> Var {
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        let (r, c) = self.shape(a);
        let g = self.grad_flows(a);
        self.push(op, r, c, out, g)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| if x > T::zero() { x } else { T::zero() })
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let s = T::of(slope);
        self.unary(a, Op::LeakyRelu(a, slope), |x| if x > T::zero() { x } else { x * s })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), |x| T::one() / (T::one() + (-x).exp()))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), T::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), T::ln)
    }

    // ---- normalizations ----

    /// Row-wise softmax. Entries where `mask` is false are excluded (they
    /// behave as `-inf` logits and get probability 0).
    pub fn softmax_rows(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let (r, c) = self.shape(a);
        if let Some(m) = &mask {
            if m.len() != r * c {
                return Err(Error::Shape { op: "softmax mask", lhs: (r, c), rhs: (m.len(), 1) });
            }
        }
        let x = self.value(a);
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            let keep = |j: usize| mask.is_none_or(|m| m[i * c + j]);
            let row = &x[i * c..(i + 1) * c];
            let mut max = T::neg_infinity();
            for (j, &v) in row.iter().enumerate() {
                if keep(j) && v > max {
                    max = v;
                }
            }
            if max == T::neg_infinity() {
                continue;
            }
            let orow = &mut out[i * c..(i + 1) * c];
            let mut sum = T::zero();
            for j in 0..c {
                if keep(j) {
                    let e = (row[j] - max).exp();
                    orow[j] = e;
                    sum += e;
                }
            }
            for v in orow.iter_mut() {
                *v /= sum;
            }
        }
        let g = self.grad_flows(a);
        Ok(self.push(Op::Softmax(a), r, c, out, g))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let (r, c) = self.shape(a);
        let x = self.value(a);
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            let row = &x[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            for j in 0..c {
                out[i * c + j] = row[j] - lse;
            }
        }
        let g = self.grad_flows(a);
        self.push(Op::LogSoftmax(a), r, c, out, g)
    }

    // ---- reductions and reshaping ----

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().copied().sum();
        let g = self.grad_flows(a);
        self.push(Op::Sum(a), 1, 1, vec![s], g)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.iter().copied().sum::<T>() / T::of(v.len() as f64);
        let g = self.grad_flows(a);
        self.push(Op::Mean(a), 1, 1, vec![s], g)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let ((ra, ca), (rb, cb)) = (self.shape(a), self.shape(b));
        if ra != rb {
            return Err(Error::Shape { op: "concat_cols", lhs: (ra, ca), rhs: (rb, cb) });
        }
        let c = ca + cb;
        let mut out = Vec::with_capacity(ra * c);
        let (va, vb) = (self.value(a), self.value(b));
        for i in 0..ra {
            out.extend_from_slice(&va[i * ca..(i + 1) * ca]);
            out.extend_from_slice(&vb[i * cb..(i + 1) * cb]);
        }
        let g = self.grad_flows(a) || self.grad_flows(b);
        Ok(self.push(Op::ConcatCols(a, b), ra, c, out, g))
    }

    /// Row lookup, e.g. embedding rows for a list of ids.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (r, c) = self.shape(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= r) {
            return Err(Error::Shape { op: "gather_rows", lhs: (r, c), rhs: (bad, 0) });
        }
        let v = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            out.extend_from_slice(&v[i * c..(i + 1) * c]);
        }
        let g = self.grad_flows(table);
        Ok(self.push(Op::GatherRows(table, ids.to_vec()), ids.len(), c, out, g))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if start >= end || end > c {
            return Err(Error::Shape { op: "slice_cols", lhs: (r, c), rhs: (start, end) });
        }
        let w = end - start;
        let v = self.value(a);
        let mut out = Vec::with_capacity(r * w);
        for i in 0..r {
            out.extend_from_slice(&v[i * c + start..i * c + end]);
        }
        let g = self.grad_flows(a);
        Ok(self.push(Op::SliceCols(a, start), r, w, out, g))
    }

    /// The element at flat (row-major) index `idx` as a `1×1` value.
    pub fn pick(&mut self, a: Var, idx: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if idx >= r * c {
            return Err(Error::Shape { op: "pick", lhs: (r, c), rhs: (idx, 0) });
        }
        let x = self.value(a)[idx];
        let g = self.grad_flows(a);
        Ok(self.push(Op::Pick(a, idx), 1, 1, vec![x], g))
    }

    // ---- reverse sweep ----

    /// Differentiates a `1×1` value with respect to every parameter it
    /// depends on. Gradients reaching the same parameter through several
    /// paths are summed.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(Error::NonScalarLoss(shape));
        }
        let mut out = Gradients::new(self.params.len());
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let (r, c) = (node.rows, node.cols);
            match &node.op {
                Op::Param(id) => out.accumulate(*id, &dy),
                Op::Constant => {}
                Op::MatMul(a, b) => {
                    let k = self.shape(*a).1;
                    if self.grad_flows(*a) {
                        // dA = dY · Bᵀ
                        let da = slot(&mut grads, *a, r * k);
                        matmul_bt_acc(&dy, self.value(*b), da, r, c, k);
                    }
                    if self.grad_flows(*b) {
                        // dB = Aᵀ · dY
                        let db = slot(&mut grads, *b, k * c);
                        matmul_at_acc(self.value(*a), &dy, db, r, k, c);
                    }
                }
                Op::MatMulBt(a, b) => {
                    let k = self.shape(*a).1;
                    if self.grad_flows(*a) {
                        // dA = dY · B
                        let da = slot(&mut grads, *a, r * k);
                        matmul_acc(&dy, self.value(*b), da, r, c, k);
                    }
                    if self.grad_flows(*b) {
                        // dB = dYᵀ · A
                        let db = slot(&mut grads, *b, c * k);
                        matmul_at_acc(&dy, self.value(*a), db, r, c, k);
                    }
                }
                Op::Transpose(a) => {
                    let da = slot(&mut grads, *a, r * c);
                    let t = transpose(&dy, r, c);
                    add_into(da, &t);
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        if self.grad_flows(v) {
                            let sv = self.shape(v);
                            let dv = slot(&mut grads, v, sv.0 * sv.1);
                            reduce_broadcast(&dy, (r, c), dv, sv, |_, _| T::one());
                        }
                    }
                }
                Op::Mul(a, b) => {
                    for (v, w) in [(*a, *b), (*b, *a)] {
                        if self.grad_flows(v) {
                            let (sv, sw) = (self.shape(v), self.shape(w));
                            let other = self.value(w);
                            let dv = slot(&mut grads, v, sv.0 * sv.1);
                            reduce_broadcast(&dy, (r, c), dv, sv, |i, j| other[bidx(sw, i, j)]);
                        }
                    }
                }
                Op::Scale(a, s) => {
                    let da = slot(&mut grads, *a, r * c);
                    axpy(T::of(*s), &dy, da);
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let da = slot(&mut grads, *a, r * c);
                    for ((d, &g), &xv) in da.iter_mut().zip(&dy).zip(x) {
                        if xv > T::zero() {
                            *d += g;
                        }
                    }
                }
                Op::LeakyRelu(a, slope) => {
                    let s = T::of(*slope);
                    let x = self.value(*a);
                    let da = slot(&mut grads, *a, r * c);
                    for ((d, &g), &xv) in da.iter_mut().zip(&dy).zip(x) {
                        *d += if xv > T::zero() { g } else { g * s };
                    }
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let da = slot(&mut grads, *a, r * c);
                    for ((d, &g), &yv) in da.iter_mut().zip(&dy).zip(y) {
                        *d += g * yv * (T::one() - yv);
                    }
                }
                Op::Exp(a) => {
                    let y = &node.value;
                    let da = slot(&mut grads, *a, r * c);
                    for ((d, &g), &yv) in da.iter_mut().zip(&dy).zip(y) {
                        *d += g * yv;
                    }
                }
                Op::Log(a) => {
                    let x = self.value(*a);
                    let da = slot(&mut grads, *a, r * c);
                    for ((d, &g), &xv) in da.iter_mut().zip(&dy).zip(x) {
                        *d += g / xv;
                    }
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let da = slot(&mut grads, *a, r * c);
                    for i in 0..r {
                        let (yr, gr) = (&y[i * c..(i + 1) * c], &dy[i * c..(i + 1) * c]);
                        let inner: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for j in 0..c {
                            da[i * c + j] += yr[j] * (gr[j] - inner);
                        }
                    }
                }
                Op::LogSoftmax(a) => {
                    let y = &node.value;
                    let da = slot(&mut grads, *a, r * c);
                    for i in 0..r {
                        let gr = &dy[i * c..(i + 1) * c];
                        let total: T = gr.iter().copied().sum();
                        for j in 0..c {
                            da[i * c + j] += gr[j] - y[i * c + j].exp() * total;
                        }
                    }
                }
                Op::Sum(a) | Op::Mean(a) => {
                    let (ra, ca) = self.shape(*a);
                    let n = ra * ca;
                    let g = if matches!(node.op, Op::Mean(_)) {
                        dy[0] / T::of(n as f64)
                    } else {
                        dy[0]
                    };
                    let da = slot(&mut grads, *a, n);
                    for d in da.iter_mut() {
                        *d += g;
                    }
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.shape(*a).1;
                    let cb = c - ca;
                    if self.grad_flows(*a) {
                        let da = slot(&mut grads, *a, r * ca);
                        for i in 0..r {
                            add_into(&mut da[i * ca..(i + 1) * ca], &dy[i * c..i * c + ca]);
                        }
                    }
                    if self.grad_flows(*b) {
                        let db = slot(&mut grads, *b, r * cb);
                        for i in 0..r {
                            add_into(&mut db[i * cb..(i + 1) * cb], &dy[i * c + ca..(i + 1) * c]);
                        }
                    }
                }
                Op::GatherRows(table, ids) => {
                    let (tr, tc) = self.shape(*table);
                    let dt = slot(&mut grads, *table, tr * tc);
                    for (row, &id) in ids.iter().enumerate() {
                        add_into(&mut dt[id * tc..(id + 1) * tc], &dy[row * c..(row + 1) * c]);
                    }
                }
                Op::SliceCols(a, start) => {
                    let ca = self.shape(*a).1;
                    let da = slot(&mut grads, *a, r * ca);
                    for i in 0..r {
                        add_into(&mut da[i * ca + start..i * ca + start + c], &dy[i * c..(i + 1) * c]);
                    }
                }
                Op::Pick(a, idx) => {
                    let (ra, ca) = self.shape(*a);
                    let da = slot(&mut grads, *a, ra * ca);
                    da[*idx] += dy[0];
                }
            }
        }
        Ok(out)
    }
}

#[inline]
fn bidx((r, c): (usize, usize), i: usize, j: usize) -> usize {
    (if r == 1 { 0 } else { i }) * c + if c == 1 { 0 } else { j }
}

fn slot<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut [T] {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Sums `dy * factor(i, j)` over the axes along which the input of shape
/// `target` was broadcast to `(r, c)`.
fn reduce_broadcast<T: Real>(
    dy: &[T],
    (r, c): (usize, usize),
    dst: &mut [T],
    target: (usize, usize),
    factor: impl Fn(usize, usize) -> T,
) {
    for i in 0..r {
        for j in 0..c {
            dst[bidx(target, i, j)] += dy[i * c + j] * factor(i, j);
        }
    }
}
