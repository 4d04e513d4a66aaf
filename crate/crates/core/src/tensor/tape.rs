use std::collections::HashMap;

use super::{
    matmul_acc, matmul_nt_acc, matmul_tn_acc, ParamId, ParamStore, Result, Tensor, TensorError,
    LAYER_NORM_EPS, PROB_FLOOR,
};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Tensor,
        inv_std: Vec<f64>,
    },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    MeanRows(Var),
    Sum(Var),
    SumSq(Var),
    Gather(Var, Vec<usize>),
    Nll(Var, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records the operations of one forward pass so they can be replayed backwards.
///
/// Nodes are appended in evaluation order, which is a topological order, so
/// [`Tape::backward`] only has to walk the node list in reverse.
/// Gradients of leaves accumulate across repeated `backward` calls until
/// [`Tape::zero_grad`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    leaf_grads: HashMap<usize, Tensor>,
    params: HashMap<ParamId, Var>,
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is tracked.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Binds a stored parameter as a tracked leaf. Each parameter is bound at most
    /// once per tape, so its gradient collects every use.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.variable(store.get(id).clone());
        self.params.insert(id, v);
        v
    }

    /// Parameters bound on this tape, with their leaf handles, in id order.
    pub fn bound_params(&self) -> Vec<(ParamId, Var)> {
        let mut out: Vec<_> = self.params.iter().map(|(&p, &v)| (p, v)).collect();
        out.sort();
        out
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.leaf_grads.get(&v.0)
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.clear();
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> TensorError {
        TensorError::ShapeMismatch { op, left: self.shape(a), right: self.shape(b) }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.shape(a);
        let (k2, m) = self.shape(b);
        if k != k2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let mut out = Tensor::zeros(n, m);
        matmul_acc(self.value(a).data(), self.value(b).data(), out.data_mut(), n, k, m);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.shape(a);
        let (m, k2) = self.shape(b);
        if k != k2 {
            return Err(self.mismatch("matmul_nt", a, b));
        }
        let mut out = Tensor::zeros(n, m);
        matmul_nt_acc(self.value(a).data(), self.value(b).data(), out.data_mut(), n, k, m);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMulNT(a, b), rg))
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape(a) != self.shape(b) {
            return Err(self.mismatch(name, a, b));
        }
        let (r, c) = self.shape(a);
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(r, c, data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// Adds a `1×m` row to every row of an `n×m` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (n, m) = self.shape(a);
        if self.shape(row) != (1, m) {
            return Err(self.mismatch("add_row", a, row));
        }
        let mut out = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        for i in 0..n {
            for (o, b) in out.data_mut()[i * m..(i + 1) * m].iter_mut().zip(&r) {
                *o += b;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(out, Op::AddRow(a, row), rg))
    }

    /// Scales row `i` of `a` by `col[i]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (n, m) = self.shape(a);
        if self.shape(col) != (n, 1) {
            return Err(self.mismatch("mul_col", a, col));
        }
        let mut out = self.value(a).clone();
        let c = self.value(col).data().to_vec();
        for i in 0..n {
            for o in &mut out.data_mut()[i * m..(i + 1) * m] {
                *o *= c[i];
            }
        }
        let rg = self.rg(a) || self.rg(col);
        Ok(self.push(out, Op::MulCol(a, col), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|v| *v *= factor);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, factor), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.tanh());
        let rg = self.rg(a);
        self.push(out, Op::Tanh(a), rg)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (n, m) = self.shape(a);
        let mut out = self.value(a).clone();
        for i in 0..n {
            softmax_in_place(&mut out.data_mut()[i * m..(i + 1) * m]);
        }
        let rg = self.rg(a);
        self.push(out, Op::Softmax(a), rg)
    }

    /// Row-wise softmax where row `i` only sees columns `0..=i`; masked entries are exactly 0.
    pub fn causal_softmax_rows(&mut self, a: Var) -> Var {
        let (n, m) = self.shape(a);
        let mut out = self.value(a).clone();
        for i in 0..n {
            let row = &mut out.data_mut()[i * m..(i + 1) * m];
            let visible = (i + 1).min(m);
            softmax_in_place(&mut row[..visible]);
            row[visible..].iter_mut().for_each(|v| *v = 0.0);
        }
        let rg = self.rg(a);
        // Masked probabilities are zero, so the plain softmax backward rule applies unchanged.
        self.push(out, Op::Softmax(a), rg)
    }

    /// Per-row standardization (variance + [`LAYER_NORM_EPS`]) followed by gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (n, d) = self.shape(x);
        if self.shape(gain) != (1, d) {
            return Err(self.mismatch("layer_norm gain", x, gain));
        }
        if self.shape(bias) != (1, d) {
            return Err(self.mismatch("layer_norm bias", x, bias));
        }
        let xv = self.value(x);
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut normed = Tensor::zeros(n, d);
        let mut out = Tensor::zeros(n, d);
        let mut inv_std = Vec::with_capacity(n);
        for i in 0..n {
            let row = xv.row_slice(i);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            for j in 0..d {
                let h = (row[j] - mean) * is;
                normed.data_mut()[i * d + j] = h;
                out.data_mut()[i * d + j] = h * g[j] + b[j];
            }
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(out, Op::LayerNorm { x, gain, bias, normed, inv_std }, rg))
    }

    /// Stacks matrices vertically. All parts must share a column count; zero-row parts are fine.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts
            .first()
            .map(|&p| self.shape(p).1)
            .ok_or_else(|| TensorError::Invalid("concat_rows of nothing".into()))?;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            if self.shape(p).1 != cols {
                return Err(self.mismatch("concat_rows", parts[0], p));
            }
            rows += self.shape(p).0;
            data.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        let out = Tensor::new(rows, cols, data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Places matrices side by side. All parts must share a row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|&p| self.shape(p).0)
            .ok_or_else(|| TensorError::Invalid("concat_cols of nothing".into()))?;
        for &p in parts {
            if self.shape(p).0 != rows {
                return Err(self.mismatch("concat_cols", parts[0], p));
            }
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let v = self.value(p);
            let pc = v.cols();
            for i in 0..rows {
                out.data_mut()[i * cols + offset..i * cols + offset + pc].copy_from_slice(v.row_slice(i));
            }
            offset += pc;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (n, m) = self.shape(a);
        if start + len > n {
            return Err(TensorError::IndexOutOfRange { index: start + len, bound: n });
        }
        let data = self.value(a).data()[start * m..(start + len) * m].to_vec();
        let out = Tensor::new(len, m, data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::SliceRows(a, start), rg))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (n, m) = self.shape(a);
        if start + len > m {
            return Err(TensorError::IndexOutOfRange { index: start + len, bound: m });
        }
        let v = self.value(a);
        let mut data = Vec::with_capacity(n * len);
        for i in 0..n {
            data.extend_from_slice(&v.row_slice(i)[start..start + len]);
        }
        let out = Tensor::new(n, len, data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::SliceCols(a, start), rg))
    }

    /// Column means, `1×m`. Requires at least one row.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (n, m) = self.shape(a);
        if n == 0 {
            return Err(TensorError::Invalid("mean over zero rows".into()));
        }
        let v = self.value(a);
        let mut out = Tensor::zeros(1, m);
        for i in 0..n {
            for (o, x) in out.data_mut().iter_mut().zip(v.row_slice(i)) {
                *o += x;
            }
        }
        out.data_mut().iter_mut().for_each(|o| *o /= n as f64);
        let rg = self.rg(a);
        Ok(self.push(out, Op::MeanRows(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(out, Op::Sum(a), rg)
    }

    pub fn sum_sq(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum_sq());
        let rg = self.rg(a);
        self.push(out, Op::SumSq(a), rg)
    }

    /// Selects rows of `table` by index (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (n, m) = self.shape(table);
        let mut data = Vec::with_capacity(indices.len() * m);
        for &i in indices {
            if i >= n {
                return Err(TensorError::IndexOutOfRange { index: i, bound: n });
            }
            data.extend_from_slice(self.value(table).row_slice(i));
        }
        let out = Tensor::new(indices.len(), m, data)?;
        let rg = self.rg(table);
        Ok(self.push(out, Op::Gather(table, indices.to_vec()), rg))
    }

    /// Mean negative log-probability of `targets[i]` in row `i` of `probs`.
    /// Probabilities below [`PROB_FLOOR`] are clamped (with a warning).
    pub fn nll(&mut self, probs: Var, targets: &[usize]) -> Result<Var> {
        let (n, v) = self.shape(probs);
        if n != targets.len() || n == 0 {
            return Err(TensorError::Invalid(format!(
                "cross entropy needs one target per row: {n} rows, {} targets",
                targets.len()
            )));
        }
        let p = self.value(probs);
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            if t >= v {
                return Err(TensorError::IndexOutOfRange { index: t, bound: v });
            }
            let pt = p.get(i, t);
            if pt < PROB_FLOOR {
                log::warn!("target probability {pt:e} at step {i} clamped to {PROB_FLOOR:e}");
            }
            total -= pt.max(PROB_FLOOR).ln();
        }
        let out = Tensor::scalar(total / n as f64);
        let rg = self.rg(probs);
        Ok(self.push(out, Op::Nll(probs, targets.to_vec()), rg))
    }

    /// Reverse-mode sweep from a scalar. Leaf gradients are added to any gradients
    /// left over from earlier calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(TensorError::NonScalar(shape));
        }
        let mut adj: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[idx].op {
                match self.leaf_grads.get_mut(&idx) {
                    Some(acc) => acc.add_assign(&g),
                    None => {
                        self.leaf_grads.insert(idx, g);
                    }
                }
                continue;
            }
            self.propagate(idx, &g, &mut adj);
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &Tensor, adj: &mut [Option<Tensor>]) {
        let nodes = &self.nodes;
        let out = &nodes[idx].value;
        let needs = |v: Var| nodes[v.0].requires_grad;
        let mut acc = |v: Var, f: &dyn Fn(&mut Tensor)| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let slot = adj[v.0].get_or_insert_with(|| {
                let (r, c) = nodes[v.0].value.shape();
                Tensor::zeros(r, c)
            });
            f(slot);
        };
        match &nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (n, k) = nodes[a.0].value.shape();
                let m = nodes[b.0].value.cols();
                if needs(*a) {
                    let bv = nodes[b.0].value.data();
                    acc(*a, &|s| matmul_nt_acc(g.data(), bv, s.data_mut(), n, m, k));
                }
                if needs(*b) {
                    let av = nodes[a.0].value.data();
                    acc(*b, &|s| matmul_tn_acc(av, g.data(), s.data_mut(), n, k, m));
                }
            }
            Op::MatMulNT(a, b) => {
                // out = a bᵀ, a: n×k, b: m×k
                let (n, k) = nodes[a.0].value.shape();
                let m = nodes[b.0].value.rows();
                if needs(*a) {
                    let bv = nodes[b.0].value.data();
                    acc(*a, &|s| matmul_acc(g.data(), bv, s.data_mut(), n, m, k));
                }
                if needs(*b) {
                    let av = nodes[a.0].value.data();
                    acc(*b, &|s| matmul_tn_acc(g.data(), av, s.data_mut(), n, m, k));
                }
            }
            Op::Add(a, b) => {
                acc(*a, &|s| s.add_assign(g));
                acc(*b, &|s| s.add_assign(g));
            }
            Op::Sub(a, b) => {
                acc(*a, &|s| s.add_assign(g));
                acc(*b, &|s| {
                    for (x, y) in s.data_mut().iter_mut().zip(g.data()) {
                        *x -= y;
                    }
                });
            }
            Op::Mul(a, b) => {
                let av = nodes[a.0].value.data();
                let bv = nodes[b.0].value.data();
                acc(*a, &|s| {
                    for ((x, gy), bb) in s.data_mut().iter_mut().zip(g.data()).zip(bv) {
                        *x += gy * bb;
                    }
                });
                acc(*b, &|s| {
                    for ((x, gy), aa) in s.data_mut().iter_mut().zip(g.data()).zip(av) {
                        *x += gy * aa;
                    }
                });
            }
            Op::AddRow(a, row) => {
                acc(*a, &|s| s.add_assign(g));
                let m = g.cols();
                acc(*row, &|s| {
                    for i in 0..g.rows() {
                        for (x, gy) in s.data_mut().iter_mut().zip(&g.data()[i * m..(i + 1) * m]) {
                            *x += gy;
                        }
                    }
                });
            }
            Op::MulCol(a, col) => {
                let (n, m) = g.shape();
                let av = nodes[a.0].value.data();
                let cv = nodes[col.0].value.data();
                acc(*a, &|s| {
                    for i in 0..n {
                        for j in 0..m {
                            s.data_mut()[i * m + j] += g.data()[i * m + j] * cv[i];
                        }
                    }
                });
                acc(*col, &|s| {
                    for i in 0..n {
                        let dot: f64 = (0..m).map(|j| g.data()[i * m + j] * av[i * m + j]).sum();
                        s.data_mut()[i] += dot;
                    }
                });
            }
            Op::Scale(a, f) => {
                acc(*a, &|s| {
                    for (x, gy) in s.data_mut().iter_mut().zip(g.data()) {
                        *x += gy * f;
                    }
                });
            }
            Op::Tanh(a) => {
                acc(*a, &|s| {
                    for ((x, gy), y) in s.data_mut().iter_mut().zip(g.data()).zip(out.data()) {
                        *x += gy * (1.0 - y * y);
                    }
                });
            }
            Op::Softmax(a) => {
                let (n, m) = out.shape();
                acc(*a, &|s| {
                    for i in 0..n {
                        let y = &out.data()[i * m..(i + 1) * m];
                        let gy = &g.data()[i * m..(i + 1) * m];
                        let dot: f64 = y.iter().zip(gy).map(|(p, q)| p * q).sum();
                        for j in 0..m {
                            s.data_mut()[i * m + j] += y[j] * (gy[j] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm { x, gain, bias, normed, inv_std } => {
                let (n, d) = out.shape();
                let gv = nodes[gain.0].value.data();
                acc(*x, &|s| {
                    let mut dh = vec![0.0; d];
                    for i in 0..n {
                        let h = &normed.data()[i * d..(i + 1) * d];
                        let gy = &g.data()[i * d..(i + 1) * d];
                        for j in 0..d {
                            dh[j] = gy[j] * gv[j];
                        }
                        let sum_dh: f64 = dh.iter().sum();
                        let sum_dh_h: f64 = dh.iter().zip(h).map(|(a, b)| a * b).sum();
                        let k = inv_std[i] / d as f64;
                        for j in 0..d {
                            s.data_mut()[i * d + j] += k * (d as f64 * dh[j] - sum_dh - h[j] * sum_dh_h);
                        }
                    }
                });
                acc(*gain, &|s| {
                    for i in 0..n {
                        for j in 0..d {
                            s.data_mut()[j] += g.data()[i * d + j] * normed.data()[i * d + j];
                        }
                    }
                });
                acc(*bias, &|s| {
                    for i in 0..n {
                        for j in 0..d {
                            s.data_mut()[j] += g.data()[i * d + j];
                        }
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let m = g.cols();
                let mut offset = 0;
                for p in parts {
                    let r = nodes[p.0].value.rows();
                    let lo = offset * m;
                    acc(*p, &|s| {
                        for (x, gy) in s.data_mut().iter_mut().zip(&g.data()[lo..lo + r * m]) {
                            *x += gy;
                        }
                    });
                    offset += r;
                }
            }
            Op::ConcatCols(parts) => {
                let (n, m) = g.shape();
                let mut offset = 0;
                for p in parts {
                    let pc = nodes[p.0].value.cols();
                    acc(*p, &|s| {
                        for i in 0..n {
                            for j in 0..pc {
                                s.data_mut()[i * pc + j] += g.data()[i * m + offset + j];
                            }
                        }
                    });
                    offset += pc;
                }
            }
            Op::SliceRows(a, start) => {
                let m = g.cols();
                let lo = start * m;
                acc(*a, &|s| {
                    for (x, gy) in s.data_mut()[lo..lo + g.len()].iter_mut().zip(g.data()) {
                        *x += gy;
                    }
                });
            }
            Op::SliceCols(a, start) => {
                let (n, len) = g.shape();
                let m = nodes[a.0].value.cols();
                acc(*a, &|s| {
                    for i in 0..n {
                        for j in 0..len {
                            s.data_mut()[i * m + start + j] += g.data()[i * len + j];
                        }
                    }
                });
            }
            Op::MeanRows(a) => {
                let (n, m) = nodes[a.0].value.shape();
                acc(*a, &|s| {
                    for i in 0..n {
                        for j in 0..m {
                            s.data_mut()[i * m + j] += g.data()[j] / n as f64;
                        }
                    }
                });
            }
            Op::Sum(a) => {
                let gy = g.item();
                acc(*a, &|s| s.data_mut().iter_mut().for_each(|x| *x += gy));
            }
            Op::SumSq(a) => {
                let gy = g.item();
                let av = nodes[a.0].value.data();
                acc(*a, &|s| {
                    for (x, v) in s.data_mut().iter_mut().zip(av) {
                        *x += 2.0 * gy * v;
                    }
                });
            }
            Op::Gather(table, indices) => {
                let m = g.cols();
                acc(*table, &|s| {
                    for (r, &i) in indices.iter().enumerate() {
                        for j in 0..m {
                            s.data_mut()[i * m + j] += g.data()[r * m + j];
                        }
                    }
                });
            }
            Op::Nll(probs, targets) => {
                let gy = g.item();
                let n = targets.len() as f64;
                let pv = &nodes[probs.0].value;
                acc(*probs, &|s| {
                    for (i, &t) in targets.iter().enumerate() {
                        let p = pv.get(i, t);
                        if p >= PROB_FLOOR {
                            let c = s.cols();
                            s.data_mut()[i * c + t] -= gy / (n * p);
                        }
                    }
                });
            }
        }
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    if row.is_empty() {
        return;
    }
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gives_ones() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::new(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap());
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &Tensor::filled(2, 3, 1.0));
    }

    #[test]
    fn backward_accumulates_until_reset() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::row(&[1.0, 2.0]));
        let s = tape.sum_sq(x);
        tape.backward(s).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[4.0, 8.0]);
        tape.zero_grad();
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::zeros(2, 2));
        assert_eq!(tape.backward(x), Err(TensorError::NonScalar((2, 2))));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::row(&[1.0, 2.0]));
        let x = tape.variable(Tensor::row(&[3.0, 4.0]));
        let y = tape.mul(c, x).unwrap();
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert!(tape.grad(c).is_none());
        assert_eq!(tape.grad(x).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn causal_softmax_masks_future_columns() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(2, 2, vec![5.0, 7.0, 1.0, 1.0]).unwrap());
        let y = tape.causal_softmax_rows(x);
        assert_eq!(tape.value(y).data(), &[1.0, 0.0, 0.5, 0.5]);
    }

    #[test]
    fn nll_clamps_zero_probability() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::row(&[1.0, 0.0]));
        let l = tape.nll(p, &[1]).unwrap();
        assert!((tape.value(l).item() + PROB_FLOOR.ln()).abs() < 1e-9);
        assert!(tape.nll(p, &[2]).is_err());
    }
}
