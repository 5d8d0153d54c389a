//! Define-by-run computation graph with reverse-mode gradients.
//!
//! Every operation computes its value eagerly and records enough to apply
//! its analytic backward rule. Parameters are referenced from a borrowed
//! [`ParamStore`] rather than copied, and their gradients are returned as a
//! [`Gradients`] table that the caller folds back into the store.

use rand::Rng as _;

use super::activation::Activation;
use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{matmul_nn, matmul_nt, matmul_tn};
use super::{Rng, Scalar, ShapeError, Tensor};
use crate::ssm::scan::{selective_scan_backward, selective_scan_chunked, selective_scan_seq, ScanInputs};

pub const NORM_EPS: f64 = 1e-5;
pub const BCE_EPS: f64 = 1e-7;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Operation families, used to target fault injection in verification tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Input,
    Param,
    MatMul,
    MatMulNt,
    Add,
    AddRow,
    Mul,
    Scale,
    Activation(Activation),
    Softmax,
    LayerNorm,
    RmsNorm,
    CausalConv,
    SliceCols,
    ConcatCols,
    SliceRows,
    ConcatRows,
    Gather,
    NegExp,
    Scan,
    Dropout,
    Bce,
    Mean,
}

enum Op<T> {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Act(Var, Activation),
    Softmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<T>, rstd: Vec<T> },
    RmsNorm { x: Var, weight: Var, rstd: Vec<T> },
    CausalConv { x: Var, w: Var, b: Var },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    SliceRows { x: Var, start: usize },
    ConcatRows(Vec<Var>),
    Gather { table: Var, ids: Vec<usize> },
    NegExp(Var),
    Scan { x: Var, delta: Var, a: Var, b: Var, c: Var, d: Var },
    Dropout { x: Var, mask: Vec<T> },
    Bce { probs: Var, labels: Vec<T> },
    Mean(Var),
}

impl<T> Op<T> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Input => OpKind::Input,
            Op::Param(_) => OpKind::Param,
            Op::MatMul(..) => OpKind::MatMul,
            Op::MatMulNt(..) => OpKind::MatMulNt,
            Op::Add(..) => OpKind::Add,
            Op::AddRow(..) => OpKind::AddRow,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::Act(_, a) => OpKind::Activation(*a),
            Op::Softmax(_) => OpKind::Softmax,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::RmsNorm { .. } => OpKind::RmsNorm,
            Op::CausalConv { .. } => OpKind::CausalConv,
            Op::SliceCols { .. } => OpKind::SliceCols,
            Op::ConcatCols(_) => OpKind::ConcatCols,
            Op::SliceRows { .. } => OpKind::SliceRows,
            Op::ConcatRows(_) => OpKind::ConcatRows,
            Op::Gather { .. } => OpKind::Gather,
            Op::NegExp(_) => OpKind::NegExp,
            Op::Scan { .. } => OpKind::Scan,
            Op::Dropout { .. } => OpKind::Dropout,
            Op::Bce { .. } => OpKind::Bce,
            Op::Mean(_) => OpKind::Mean,
        }
    }
}

struct Node<T> {
    // `None` for parameters, whose value lives in the store.
    value: Option<Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

/// How the scan inside [`Graph::selective_scan`] is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScanMode {
    #[default]
    Sequential,
    Chunked(usize),
}

pub struct Graph<'p, T: Scalar> {
    store: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_vars: Vec<Option<Var>>,
    scan_mode: ScanMode,
    fault: Option<OpKind>,
}

enum Contribution<T> {
    Dense(Var, Tensor<T>),
    /// Row scatter-add into a `rows × cols` target.
    Rows(Var, Vec<usize>, Tensor<T>),
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(store: &'p ParamStore<T>) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
            scan_mode: ScanMode::Sequential,
            fault: None,
        }
    }

    pub fn with_scan_mode(mut self, mode: ScanMode) -> Self {
        self.scan_mode = mode;
        self
    }

    /// Doubles every input gradient produced by ops of `kind`. Only useful as
    /// a negative control for gradient checking.
    #[doc(hidden)]
    pub fn inject_backward_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.store.value(*id),
            _ => unreachable!("node without value"),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value: Some(value), op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value: Some(value), op: Op::Input, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Reference a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        self.nodes.push(Node { value: None, op: Op::Param(id), needs_grad: !self.store.is_frozen(id) });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.index()] = Some(v);
        v
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        self.value(v).dims2()
    }

    fn shape_err(&self, op: &'static str, vars: &[Var]) -> ShapeError {
        let shapes: Vec<_> = vars.iter().map(|v| self.value(*v).shape().to_vec()).collect();
        ShapeError::new(op, format!("incompatible shapes {shapes:?}"))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        let ((m, k), (k2, n)) = (self.dims(a), self.dims(b));
        if k != k2 {
            return Err(self.shape_err("matmul", &[a, b]));
        }
        let out = matmul_nn(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        let ((m, k), (n, k2)) = (self.dims(a), self.dims(b));
        if k != k2 {
            return Err(self.shape_err("matmul_nt", &[a, b]));
        }
        let out = matmul_nt(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMulNt(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(self.shape_err("add", &[a, b]));
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    /// Broadcast-add a bias vector to every row.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, ShapeError> {
        let (m, n) = self.dims(a);
        if self.value(bias).len() != n {
            return Err(self.shape_err("add_row", &[a, bias]));
        }
        let bv = self.value(bias).data().to_vec();
        let mut out = self.value(a).clone();
        for i in 0..m {
            for (o, &b) in out.row_mut(i).iter_mut().zip(&bv) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRow(a, bias), &[a, bias]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(self.shape_err("mul", &[a, b]));
        }
        let bd = self.value(b).data();
        let mut out = self.value(a).clone();
        for (o, &bv) in out.data_mut().iter_mut().zip(bd) {
            *o *= bv;
        }
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let s = T::of(s);
        let out = self.value(a).map(|v| v * s);
        self.push(out, Op::Scale(a, s), &[a])
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Var {
        let out = self.value(a).map(|v| kind.apply(v));
        self.push(out, Op::Act(a, kind), &[a])
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let (m, _) = self.dims(a);
        let mut out = self.value(a).clone();
        for i in 0..m {
            let row = out.row_mut(i);
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        self.push(out, Op::Softmax(a), &[a])
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, ShapeError> {
        let (m, n) = self.dims(x);
        if self.value(gain).len() != n || self.value(bias).len() != n {
            return Err(self.shape_err("layer_norm", &[x, gain, bias]));
        }
        let xv = self.value(x);
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let nf = T::of(n as f64);
        let mut xhat = vec![T::zero(); m * n];
        let mut rstd = vec![T::zero(); m];
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = xv.row(i);
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let r = T::one() / (var + T::of(NORM_EPS)).sqrt();
            rstd[i] = r;
            for j in 0..n {
                let xh = (row[j] - mean) * r;
                xhat[i * n + j] = xh;
                out[i * n + j] = xh * g[j] + b[j];
            }
        }
        let shape = xv.shape().to_vec();
        Ok(self.push(Tensor::new(shape, out)?, Op::LayerNorm { x, gain, bias, xhat, rstd }, &[x, gain, bias]))
    }

    pub fn rms_norm(&mut self, x: Var, weight: Var) -> Result<Var, ShapeError> {
        let (m, n) = self.dims(x);
        if self.value(weight).len() != n {
            return Err(self.shape_err("rms_norm", &[x, weight]));
        }
        let xv = self.value(x);
        let w = self.value(weight).data();
        let nf = T::of(n as f64);
        let mut rstd = vec![T::zero(); m];
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = xv.row(i);
            let ms = row.iter().map(|&v| v * v).sum::<T>() / nf;
            let r = T::one() / (ms + T::of(NORM_EPS)).sqrt();
            rstd[i] = r;
            for j in 0..n {
                out[i * n + j] = row[j] * r * w[j];
            }
        }
        let shape = xv.shape().to_vec();
        Ok(self.push(Tensor::new(shape, out)?, Op::RmsNorm { x, weight, rstd }, &[x, weight]))
    }

    /// Depthwise causal convolution over time. `x`: `L × C`, `w`: `C × K`,
    /// `b`: `C`. Output row `t` sees input rows `t-K+1 ..= t`, zero padded.
    pub fn causal_conv1d(&mut self, x: Var, w: Var, b: Var) -> Result<Var, ShapeError> {
        let (l, c) = self.dims(x);
        let (wc, k) = self.dims(w);
        if wc != c || self.value(b).len() != c {
            return Err(self.shape_err("depthwise_causal_conv1d", &[x, w, b]));
        }
        let (xd, wd, bd) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let mut out = vec![T::zero(); l * c];
        for t in 0..l {
            for ch in 0..c {
                let mut acc = bd[ch];
                for j in 0..k {
                    // tap j reads input t - (k - 1) + j
                    if let Some(src) = (t + j + 1).checked_sub(k) {
                        acc += wd[ch * k + j] * xd[src * c + ch];
                    }
                }
                out[t * c + ch] = acc;
            }
        }
        Ok(self.push(Tensor::new(vec![l, c], out)?, Op::CausalConv { x, w, b }, &[x, w, b]))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, ShapeError> {
        let (m, n) = self.dims(x);
        if len == 0 || start + len > n {
            return Err(ShapeError::new("slice_cols", format!("cols {start}..{} of {n}", start + len)));
        }
        let xv = self.value(x);
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&xv.row(i)[start..start + len]);
        }
        Ok(self.push(Tensor::new(vec![m, len], out)?, Op::SliceCols { x, start }, &[x]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, ShapeError> {
        let m = parts.first().map(|v| self.dims(*v).0).unwrap_or(0);
        if parts.is_empty() || parts.iter().any(|v| self.dims(*v).0 != m) {
            return Err(self.shape_err("concat_cols", parts));
        }
        let n: usize = parts.iter().map(|v| self.dims(*v).1).sum();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for p in parts {
                out.extend_from_slice(self.value(*p).row(i));
            }
        }
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var, ShapeError> {
        let (m, n) = self.dims(x);
        if len == 0 || start + len > m {
            return Err(ShapeError::new("slice_rows", format!("rows {start}..{} of {m}", start + len)));
        }
        let out = self.value(x).data()[start * n..(start + len) * n].to_vec();
        Ok(self.push(Tensor::new(vec![len, n], out)?, Op::SliceRows { x, start }, &[x]))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, ShapeError> {
        let n = parts.first().map(|v| self.dims(*v).1).unwrap_or(0);
        if parts.is_empty() || parts.iter().any(|v| self.dims(*v).1 != n) {
            return Err(self.shape_err("concat_rows", parts));
        }
        let m: usize = parts.iter().map(|v| self.dims(*v).0).sum();
        let mut out = Vec::with_capacity(m * n);
        for p in parts {
            out.extend_from_slice(self.value(*p).data());
        }
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Embedding lookup: row `ids[i]` of `table` becomes output row `i`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var, ShapeError> {
        let (rows, n) = self.dims(table);
        if ids.is_empty() {
            return Err(ShapeError::new("gather_rows", "no ids".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(ShapeError::new("gather_rows", format!("id {bad} out of range for {rows} rows")));
        }
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * n);
        for &i in ids {
            out.extend_from_slice(tv.row(i));
        }
        Ok(self.push(Tensor::new(vec![ids.len(), n], out)?, Op::Gather { table, ids: ids.to_vec() }, &[table]))
    }

    /// `-exp(a)`, the parameterization that keeps the state matrix negative.
    pub fn neg_exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| -v.exp());
        self.push(out, Op::NegExp(a), &[a])
    }

    /// Selective scan. `x`, `delta`: `L × D`; `a`: `D × N`; `b`, `c`: `L × N`; `d`: `D`.
    pub fn selective_scan(
        &mut self,
        x: Var,
        delta: Var,
        a: Var,
        b: Var,
        c: Var,
        d: Var,
    ) -> Result<Var, ShapeError> {
        let (l, di) = self.dims(x);
        let ds = self.dims(a).1;
        let inputs = ScanInputs {
            len: l,
            d_inner: di,
            d_state: ds,
            x: self.value(x).data(),
            delta: self.value(delta).data(),
            a: self.value(a).data(),
            b: self.value(b).data(),
            c: self.value(c).data(),
            d: self.value(d).data(),
        };
        let y = match self.scan_mode {
            ScanMode::Sequential => selective_scan_seq(&inputs)?,
            ScanMode::Chunked(len) => selective_scan_chunked(&inputs, len)?,
        };
        Ok(self.push(Tensor::new(vec![l, di], y)?, Op::Scan { x, delta, a, b, c, d }, &[x, delta, a, b, c, d]))
    }

    /// Inverted dropout. Identity when `rng` is `None` or `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64, rng: Option<&mut Rng>) -> Var {
        let Some(rng) = rng else { return x };
        if p <= 0.0 {
            return x;
        }
        let keep = T::of(1.0 / (1.0 - p));
        let n = self.value(x).len();
        let mask: Vec<T> = (0..n)
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let mut out = self.value(x).clone();
        for (o, &mk) in out.data_mut().iter_mut().zip(&mask) {
            *o *= mk;
        }
        self.push(out, Op::Dropout { x, mask }, &[x])
    }

    /// Mean binary cross-entropy with probabilities clamped to `[ε, 1-ε]`.
    pub fn bce(&mut self, probs: Var, labels: &[T]) -> Result<Var, ShapeError> {
        let pv = self.value(probs);
        if pv.len() != labels.len() {
            return Err(ShapeError::new(
                "bce_loss",
                format!("{} probabilities vs {} labels", pv.len(), labels.len()),
            ));
        }
        let loss = bce_value(pv.data(), labels);
        Ok(self.push(Tensor::scalar(loss), Op::Bce { probs, labels: labels.to_vec() }, &[probs]))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let m = xv.data().iter().copied().sum::<T>() / T::of(xv.len() as f64);
        self.push(Tensor::scalar(m), Op::Mean(x), &[x])
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        let mut grads = Gradients::new(self.store.len());
        let mut node_grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        node_grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(gy) = node_grads[idx].take() else { continue };
            if let Op::Param(id) = node.op {
                grads.accumulate(id, &gy);
                continue;
            }
            let mut contribs = self.local_backward(Var(idx), &gy);
            if self.fault == Some(node.op.kind()) {
                for c in &mut contribs {
                    match c {
                        Contribution::Dense(_, t) | Contribution::Rows(_, _, t) => t.scale_in_place(T::of(2.0)),
                    }
                }
            }
            for c in contribs {
                self.route(c, &mut node_grads, &mut grads);
            }
        }
        grads
    }

    fn route(&self, c: Contribution<T>, node_grads: &mut [Option<Tensor<T>>], grads: &mut Gradients<T>) {
        let target = match &c {
            Contribution::Dense(v, _) | Contribution::Rows(v, _, _) => *v,
        };
        if !self.nodes[target.0].needs_grad {
            return;
        }
        // rows straight into parameter gradients: avoids a dense table per lookup
        if let (Op::Param(id), Contribution::Rows(_, ids, rows)) = (&self.nodes[target.0].op, &c) {
            grads.scatter_rows(*id, self.value(target).shape(), ids, rows);
            return;
        }
        let slot = &mut node_grads[target.0];
        match c {
            Contribution::Dense(_, t) => match slot {
                Some(g) => g.add_assign(&t),
                None => *slot = Some(t),
            },
            Contribution::Rows(_, ids, rows) => {
                let g = slot.get_or_insert_with(|| Tensor::zeros(self.value(target).shape()));
                for (r, &i) in ids.iter().enumerate() {
                    for (o, &v) in g.row_mut(i).iter_mut().zip(rows.row(r)) {
                        *o += v;
                    }
                }
            }
        }
    }

    fn local_backward(&self, out: Var, gy: &Tensor<T>) -> Vec<Contribution<T>> {
        use Contribution::Dense;
        let node = &self.nodes[out.0];
        let y = self.value(out);
        let shaped = |v: Var, data: Vec<T>| Tensor::new(self.value(v).shape().to_vec(), data).expect("gradient shape");
        match &node.op {
            Op::Input | Op::Param(_) => vec![],
            Op::MatMul(a, b) => {
                let ((m, k), (_, n)) = (self.dims(*a), self.dims(*b));
                let ga = matmul_nt(gy.data(), self.value(*b).data(), m, n, k);
                let gb = matmul_tn(self.value(*a).data(), gy.data(), m, k, n);
                vec![Dense(*a, shaped(*a, ga)), Dense(*b, shaped(*b, gb))]
            }
            Op::MatMulNt(a, b) => {
                // y = a bᵀ, a: m×k, b: n×k
                let ((m, k), (n, _)) = (self.dims(*a), self.dims(*b));
                let ga = matmul_nn(gy.data(), self.value(*b).data(), m, n, k);
                let gb = matmul_tn(gy.data(), self.value(*a).data(), m, n, k);
                vec![Dense(*a, shaped(*a, ga)), Dense(*b, shaped(*b, gb))]
            }
            Op::Add(a, b) => vec![Dense(*a, gy.clone()), Dense(*b, gy.clone())],
            Op::AddRow(a, bias) => {
                let (m, n) = gy.dims2();
                let mut gb = vec![T::zero(); n];
                for i in 0..m {
                    for (o, &g) in gb.iter_mut().zip(gy.row(i)) {
                        *o += g;
                    }
                }
                vec![Dense(*a, gy.clone()), Dense(*bias, shaped(*bias, gb))]
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let ga = gy.data().iter().zip(bv).map(|(&g, &b)| g * b).collect();
                let gb = gy.data().iter().zip(av).map(|(&g, &a)| g * a).collect();
                vec![Dense(*a, shaped(*a, ga)), Dense(*b, shaped(*b, gb))]
            }
            Op::Scale(a, s) => vec![Dense(*a, gy.map(|g| g * *s))],
            Op::Act(a, kind) => {
                let xv = self.value(*a).data();
                let g = gy
                    .data()
                    .iter()
                    .zip(xv)
                    .zip(y.data())
                    .map(|((&g, &x), &yv)| g * kind.derivative(x, yv))
                    .collect();
                vec![Dense(*a, shaped(*a, g))]
            }
            Op::Softmax(a) => {
                let (m, n) = y.dims2();
                let mut g = vec![T::zero(); m * n];
                for i in 0..m {
                    let (yr, gr) = (y.row(i), gy.row(i));
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for j in 0..n {
                        g[i * n + j] = yr[j] * (gr[j] - dot);
                    }
                }
                vec![Dense(*a, shaped(*a, g))]
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let (m, n) = gy.dims2();
                let gv = self.value(*gain).data();
                let nf = T::of(n as f64);
                let mut gx = vec![T::zero(); m * n];
                let mut gg = vec![T::zero(); n];
                let mut gb = vec![T::zero(); n];
                let mut gxh = vec![T::zero(); n];
                for i in 0..m {
                    let gr = gy.row(i);
                    let xh = &xhat[i * n..(i + 1) * n];
                    let mut mean_g = T::zero();
                    let mut mean_gx = T::zero();
                    for j in 0..n {
                        gg[j] += gr[j] * xh[j];
                        gb[j] += gr[j];
                        gxh[j] = gr[j] * gv[j];
                        mean_g += gxh[j];
                        mean_gx += gxh[j] * xh[j];
                    }
                    mean_g /= nf;
                    mean_gx /= nf;
                    for j in 0..n {
                        gx[i * n + j] = rstd[i] * (gxh[j] - mean_g - xh[j] * mean_gx);
                    }
                }
                vec![Dense(*x, shaped(*x, gx)), Dense(*gain, shaped(*gain, gg)), Dense(*bias, shaped(*bias, gb))]
            }
            Op::RmsNorm { x, weight, rstd } => {
                let (m, n) = gy.dims2();
                let (xv, wv) = (self.value(*x), self.value(*weight).data());
                let nf = T::of(n as f64);
                let mut gx = vec![T::zero(); m * n];
                let mut gw = vec![T::zero(); n];
                for i in 0..m {
                    let (xr, gr, r) = (xv.row(i), gy.row(i), rstd[i]);
                    let mut dot = T::zero();
                    for j in 0..n {
                        gw[j] += gr[j] * xr[j] * r;
                        dot += wv[j] * gr[j] * xr[j];
                    }
                    let k = r * r * r * dot / nf;
                    for j in 0..n {
                        gx[i * n + j] = r * wv[j] * gr[j] - xr[j] * k;
                    }
                }
                vec![Dense(*x, shaped(*x, gx)), Dense(*weight, shaped(*weight, gw))]
            }
            Op::CausalConv { x, w, b } => {
                let (l, c) = self.dims(*x);
                let k = self.dims(*w).1;
                let (xd, wd) = (self.value(*x).data(), self.value(*w).data());
                let mut gx = vec![T::zero(); l * c];
                let mut gw = vec![T::zero(); c * k];
                let mut gb = vec![T::zero(); c];
                for t in 0..l {
                    for ch in 0..c {
                        let g = gy.data()[t * c + ch];
                        gb[ch] += g;
                        for j in 0..k {
                            if let Some(src) = (t + j + 1).checked_sub(k) {
                                gw[ch * k + j] += g * xd[src * c + ch];
                                gx[src * c + ch] += g * wd[ch * k + j];
                            }
                        }
                    }
                }
                vec![Dense(*x, shaped(*x, gx)), Dense(*w, shaped(*w, gw)), Dense(*b, shaped(*b, gb))]
            }
            Op::SliceCols { x, start } => {
                let (m, n) = self.dims(*x);
                let len = gy.cols();
                let mut g = vec![T::zero(); m * n];
                for i in 0..m {
                    g[i * n + start..i * n + start + len].copy_from_slice(gy.row(i));
                }
                vec![Dense(*x, shaped(*x, g))]
            }
            Op::ConcatCols(parts) => {
                let m = gy.rows();
                let mut off = 0;
                let mut out = Vec::with_capacity(parts.len());
                for p in parts {
                    let w = self.dims(*p).1;
                    let mut g = Vec::with_capacity(m * w);
                    for i in 0..m {
                        g.extend_from_slice(&gy.row(i)[off..off + w]);
                    }
                    off += w;
                    out.push(Dense(*p, shaped(*p, g)));
                }
                out
            }
            Op::SliceRows { x, start } => {
                let n = gy.cols();
                vec![Contribution::Rows(*x, (*start..*start + gy.rows()).collect(), gy.clone().reshape(&[gy.rows(), n]).unwrap())]
            }
            Op::ConcatRows(parts) => {
                let n = gy.cols();
                let mut off = 0;
                let mut out = Vec::with_capacity(parts.len());
                for p in parts {
                    let r = self.dims(*p).0;
                    out.push(Dense(*p, shaped(*p, gy.data()[off * n..(off + r) * n].to_vec())));
                    off += r;
                }
                out
            }
            Op::Gather { table, ids } => vec![Contribution::Rows(*table, ids.clone(), gy.clone())],
            Op::NegExp(a) => {
                let g = gy.data().iter().zip(y.data()).map(|(&g, &yv)| g * yv).collect();
                vec![Dense(*a, shaped(*a, g))]
            }
            Op::Scan { x, delta, a, b, c, d } => {
                let (l, di) = self.dims(*x);
                let inputs = ScanInputs {
                    len: l,
                    d_inner: di,
                    d_state: self.dims(*a).1,
                    x: self.value(*x).data(),
                    delta: self.value(*delta).data(),
                    a: self.value(*a).data(),
                    b: self.value(*b).data(),
                    c: self.value(*c).data(),
                    d: self.value(*d).data(),
                };
                let g = selective_scan_backward(&inputs, gy.data()).expect("scan shapes validated in forward");
                vec![
                    Dense(*x, shaped(*x, g.x)),
                    Dense(*delta, shaped(*delta, g.delta)),
                    Dense(*a, shaped(*a, g.a)),
                    Dense(*b, shaped(*b, g.b)),
                    Dense(*c, shaped(*c, g.c)),
                    Dense(*d, shaped(*d, g.d)),
                ]
            }
            Op::Dropout { x, mask } => {
                let g = gy.data().iter().zip(mask).map(|(&g, &m)| g * m).collect();
                vec![Dense(*x, shaped(*x, g))]
            }
            Op::Bce { probs, labels } => {
                let pv = self.value(*probs).data();
                let g0 = gy.data()[0] / T::of(pv.len() as f64);
                let (lo, hi) = (T::of(BCE_EPS), T::one() - T::of(BCE_EPS));
                let g = pv
                    .iter()
                    .zip(labels)
                    .map(|(&p, &yl)| {
                        if p < lo || p > hi {
                            T::zero()
                        } else {
                            g0 * ((T::one() - yl) / (T::one() - p) - yl / p)
                        }
                    })
                    .collect();
                vec![Dense(*probs, shaped(*probs, g))]
            }
            Op::Mean(x) => {
                let n = T::of(self.value(*x).len() as f64);
                vec![Dense(*x, Tensor::full(self.value(*x).shape(), gy.data()[0] / n))]
            }
        }
    }
}

/// Mean clamped binary cross-entropy.
pub fn bce_value<T: Scalar>(probs: &[T], labels: &[T]) -> T {
    let (lo, hi) = (T::of(BCE_EPS), T::one() - T::of(BCE_EPS));
    let total: T = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.max(lo).min(hi);
            -(y * p.ln() + (T::one() - y) * (T::one() - p).ln())
        })
        .sum();
    total / T::of(probs.len() as f64)
}

#[cfg(test)]
#[allow(clippy::approx_constant)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, seeded_rng};
    use rand_distr::{Distribution, Normal};

    fn random(store: &mut ParamStore<f64>, name: &str, shape: &[usize], rng: &mut Rng) -> ParamId {
        let dist = Normal::new(0.0, 0.7).unwrap();
        store.add(name, Tensor::from_fn(shape, |_| dist.sample(rng)))
    }

    #[test]
    fn affine_identity() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 }));
        let b = store.add("b", Tensor::zeros(&[3]));
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::from_fn(&[2, 3], |i| i as f64 - 2.5));
        let (wv, bv) = (g.param(w), g.param(b));
        let y = g.matmul(x, wv).unwrap();
        let y = g.add_row(y, bv).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let store = ParamStore::<f32>::new();
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::from_fn(&[4, 7], |i| (i as f32 * 1.7).sin() * 30.0));
        let s = g.softmax(x);
        for r in 0..4 {
            let sum: f32 = g.value(s).row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn causal_conv_ignores_future() {
        let mut rng = seeded_rng(1);
        let mut store = ParamStore::<f64>::new();
        let w = random(&mut store, "w", &[3, 4], &mut rng);
        let b = random(&mut store, "b", &[3], &mut rng);
        let base = Tensor::from_fn(&[10, 3], |i| (i as f64 * 0.37).cos());
        let run = |x: Tensor<f64>| {
            let mut g = Graph::new(&store);
            let (xv, wv, bv) = (g.input(x), g.param(w), g.param(b));
            let y = g.causal_conv1d(xv, wv, bv).unwrap();
            g.value(y).clone()
        };
        let y0 = run(base.clone());
        for t in 0..10 {
            let mut p = base.clone();
            for r in t + 1..10 {
                for v in p.row_mut(r) {
                    *v += 5.0;
                }
            }
            let y1 = run(p);
            for r in 0..=t {
                assert_eq!(y0.row(r), y1.row(r), "row {r} changed by perturbing > {t}");
            }
        }
    }

    #[test]
    fn shape_errors_name_the_op() {
        let store = ParamStore::<f32>::new();
        let mut g = Graph::new(&store);
        let a = g.input(Tensor::zeros(&[2, 3]));
        let b = g.input(Tensor::zeros(&[4, 2]));
        let err = g.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("matmul"), "{err}");
        assert!(g.bce(a, &[0.0; 5]).unwrap_err().to_string().contains("bce_loss"));
    }

    #[test]
    fn bce_closed_forms() {
        assert!((bce_value(&[0.5f64; 4], &[1.0, 0.0, 1.0, 0.0]) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((bce_value(&[0.9f64], &[0.0]) - 2.302_585_092_994_046).abs() < 1e-12);
        let perfect = bce_value(&[1.0f64, 0.0], &[1.0, 0.0]);
        assert!(perfect <= -(1.0f64 - 1e-7).ln() + 1e-15);
    }

    /// Every primitive, checked against central differences in f64.
    #[test]
    fn every_primitive_passes_grad_check() {
        let mut rng = seeded_rng(7);
        let mut store = ParamStore::<f64>::new();
        let x = random(&mut store, "x", &[5, 4], &mut rng);
        let w = random(&mut store, "w", &[4, 6], &mut rng);
        let bias = random(&mut store, "bias", &[6], &mut rng);
        let gain = random(&mut store, "gain", &[6], &mut rng);
        let conv = random(&mut store, "conv", &[6, 3], &mut rng);
        let table = random(&mut store, "table", &[9, 6], &mut rng);
        let a_log = random(&mut store, "a_log", &[2, 3], &mut rng);
        let bmat = random(&mut store, "bmat", &[5, 3], &mut rng);
        let cmat = random(&mut store, "cmat", &[5, 3], &mut rng);
        let dvec = random(&mut store, "dvec", &[2], &mut rng);
        let head = random(&mut store, "head", &[6, 1], &mut rng);

        let build = |g: &mut Graph<'_, f64>| -> Result<Var, ShapeError> {
            let [xv, wv, biasv, gainv, convv, tablev, alogv, bv, cv, dv, headv] =
                [x, w, bias, gain, conv, table, a_log, bmat, cmat, dvec, head].map(|id| g.param(id));
            let h = g.matmul(xv, wv)?;
            let h = g.add_row(h, biasv)?;
            let h = g.layer_norm(h, gainv, biasv)?;
            let h = g.activation(h, Activation::Gelu);
            let r = g.rms_norm(h, gainv)?;
            let c = g.causal_conv1d(r, convv, biasv)?;
            let c = g.activation(c, Activation::Silu);
            let emb = g.gather_rows(tablev, &[1, 4, 4, 0, 8])?;
            let c = g.mul(c, emb)?;
            let att = g.matmul_nt(c, emb)?;
            let att = g.scale(att, 0.3);
            let att = g.softmax(att);
            let mixed = g.matmul(att, c)?;
            let left = g.slice_cols(mixed, 0, 2)?;
            let right = g.slice_cols(mixed, 2, 4)?;
            let delta = g.activation(left, Activation::Softplus);
            let a = g.neg_exp(alogv);
            let ys = g.selective_scan(left, delta, a, bv, cv, dv)?;
            let both = g.concat_cols(&[ys, right])?;
            let top = g.slice_rows(both, 0, 2)?;
            let rest = g.slice_rows(both, 2, 3)?;
            let re = g.concat_rows(&[rest, top])?;
            let re = g.activation(re, Activation::Relu);
            let re = g.add(re, mixed)?;
            let logits = g.matmul(re, headv)?;
            let p = g.activation(logits, Activation::Sigmoid);
            let l = g.bce(p, &[1.0, 0.0, 0.0, 1.0, 1.0])?;
            let m = g.mean(re);
            let total = g.concat_rows(&[l, m])?;
            Ok(g.mean(total))
        };
        let err = grad_check(&mut store, build, 1e-5, None).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn dropout_identity_outside_training() {
        let store = ParamStore::<f32>::new();
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::from_fn(&[3, 3], |i| i as f32));
        let y = g.dropout(x, 0.2, None);
        assert_eq!(g.value(y), g.value(x));
        let mut rng = seeded_rng(0);
        let y = g.dropout(x, 0.0, Some(&mut rng));
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn dropout_survivor_fraction() {
        let store = ParamStore::<f32>::new();
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::full(&[100_000], 1.0));
        let mut rng = seeded_rng(42);
        let y = g.dropout(x, 0.2, Some(&mut rng));
        let kept = g.value(y).data().iter().filter(|&&v| v != 0.0).count() as f64 / 1e5;
        assert!((0.78..=0.82).contains(&kept), "{kept}");
        assert!(g.value(y).data().iter().all(|&v| v == 0.0 || (v - 1.25).abs() < 1e-6));
    }

    #[test]
    fn dropout_is_seed_deterministic() {
        let store = ParamStore::<f32>::new();
        let run = |seed| {
            let mut g = Graph::new(&store);
            let x = g.input(Tensor::full(&[64], 1.0));
            let mut rng = seeded_rng(seed);
            let y = g.dropout(x, 0.2, Some(&mut rng));
            g.value(y).clone()
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }
}
