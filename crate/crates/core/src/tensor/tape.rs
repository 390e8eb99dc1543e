use super::{cost, kernels, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sum(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gelu(Var),
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    GatherRows {
        x: Var,
        rows: Vec<usize>,
    },
    AssembleRows {
        sources: Vec<(Var, usize)>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Records a forward computation and replays it in reverse for gradients.
///
/// Every kernel charges its FLOPs (see [`cost`]) to a counter readable with
/// [`Tape::flops`]; the closed-form cost model is checked against it.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    flops: u64,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
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

    /// Scalar operations charged by forward kernels so far.
    pub fn flops(&self) -> u64 {
        self.flops
    }

    pub fn reset_flops(&mut self) {
        self.flops = 0;
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of `v`, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Copies `v` into a new constant leaf; no gradient flows back through it.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = ta.matrix_dims("matmul")?;
        let (k2, n) = tb.matrix_dims("matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", ta, tb));
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul_acc(ta.data(), tb.data(), &mut out, m, k, n);
        self.flops += cost::MAC * (m * k * n) as u64;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ` for `a: [m,k]`, `b: [n,k]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = ta.matrix_dims("matmul_nt")?;
        let (n, k2) = tb.matrix_dims("matmul_nt")?;
        if k != k2 {
            return Err(shape_err("matmul_nt", ta, tb));
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul_nt_acc(ta.data(), tb.data(), &mut out, m, k, n);
        self.flops += cost::MAC * (m * k * n) as u64;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMulNt(a, b), rg))
    }

    fn zip_same(
        &mut self,
        a: Var,
        b: Var,
        op: &'static str,
        f: fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, ta, tb));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let shape = ta.shape().to_vec();
        self.flops += cost::ELEMENTWISE * ta.numel() as u64;
        Tensor::new(shape, data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// Adds a `[n]` vector to every row of `x: [..., n]`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (tx, tr) = (self.value(x), self.value(row));
        let n = tx.cols();
        if tr.numel() != n || tr.shape().len() != 1 {
            return Err(shape_err("add_row", tx, tr));
        }
        let mut data = tx.data().to_vec();
        for chunk in data.chunks_mut(n) {
            for (d, r) in chunk.iter_mut().zip(tr.data()) {
                *d += r;
            }
        }
        let shape = tx.shape().to_vec();
        self.flops += cost::ELEMENTWISE * tx.numel() as u64;
        let rg = self.rg(&[x, row]);
        Ok(self.push(Tensor::new(shape, data)?, Op::AddRow(x, row), rg))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let tx = self.value(x);
        let data = tx.data().iter().map(|v| v * s).collect();
        let shape = tx.shape().to_vec();
        self.flops += cost::ELEMENTWISE * tx.numel() as u64;
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(shape, data)?, Op::Scale(x, s), rg))
    }

    /// Adds a constant; the constant carries no gradient.
    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let tx = self.value(x);
        let data = tx.data().iter().map(|v| v + c).collect();
        let shape = tx.shape().to_vec();
        self.flops += cost::ELEMENTWISE * tx.numel() as u64;
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(shape, data)?, Op::AddScalar(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let s = tx.data().iter().sum();
        self.flops += cost::ELEMENTWISE * tx.numel() as u64;
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::scalar(s), Op::Sum(x), rg))
    }

    /// Row-wise softmax over the last dimension. NaN inputs propagate to NaN outputs.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let n = tx.cols();
        if n == 0 {
            return Err(Error::contract("softmax over an empty last dimension"));
        }
        let mut out = vec![0.0; tx.numel()];
        for (src, dst) in tx.data().chunks(n).zip(out.chunks_mut(n)) {
            kernels::softmax_row(src, dst);
        }
        let shape = tx.shape().to_vec();
        self.flops += cost::SOFTMAX * tx.numel() as u64;
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax(x), rg))
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let n = tx.cols();
        if n == 0 {
            return Err(Error::contract("log-softmax over an empty last dimension"));
        }
        let mut out = vec![0.0; tx.numel()];
        for (src, dst) in tx.data().chunks(n).zip(out.chunks_mut(n)) {
            kernels::log_softmax_row(src, dst);
        }
        let shape = tx.shape().to_vec();
        self.flops += cost::LOG_SOFTMAX * tx.numel() as u64;
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(shape, out)?, Op::LogSoftmax(x), rg))
    }

    /// Per-row layer normalization with affine `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        if eps <= 0.0 {
            return Err(Error::contract("layer_norm eps must be positive"));
        }
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let h = tx.cols();
        if tg.numel() != h || tb.numel() != h {
            return Err(shape_err("layer_norm", tx, tg));
        }
        let rows = tx.rows();
        let mut xhat = vec![0.0; tx.numel()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; tx.numel()];
        for r in 0..rows {
            let src = &tx.data()[r * h..(r + 1) * h];
            let mean = src.iter().sum::<f64>() / h as f64;
            let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / h as f64;
            let s = 1.0 / (var + eps).sqrt();
            rstd[r] = s;
            for c in 0..h {
                let xh = (src[c] - mean) * s;
                xhat[r * h + c] = xh;
                out[r * h + c] = xh * tg.data()[c] + tb.data()[c];
            }
        }
        let shape = tx.shape().to_vec();
        self.flops += cost::LAYER_NORM * tx.numel() as u64;
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// GELU, tanh approximation with coefficient 0.044715.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| kernels::gelu(v)).collect();
        let shape = tx.shape().to_vec();
        self.flops += cost::GELU * tx.numel() as u64;
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(shape, data)?, Op::Gelu(x), rg))
    }

    /// Looks up rows of `table: [V, H]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        let (v, h) = tt.matrix_dims("embedding")?;
        let mut data = Vec::with_capacity(ids.len() * h);
        for &id in ids {
            if id >= v {
                return Err(Error::contract(format!(
                    "embedding id {id} out of range for table of {v} rows"
                )));
            }
            data.extend_from_slice(tt.row(id));
        }
        let rg = self.rg(&[table]);
        Ok(self.push(
            Tensor::new(vec![ids.len(), h], data)?,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Selects rows of `x: [n, H]` in the given order. Gradients scatter back
    /// to the selected rows only.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        let (n, h) = tx.matrix_dims("gather_rows")?;
        let mut data = Vec::with_capacity(rows.len() * h);
        for &r in rows {
            if r >= n {
                return Err(Error::contract(format!(
                    "row {r} out of range for {n} rows"
                )));
            }
            data.extend_from_slice(tx.row(r));
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::new(vec![rows.len(), h], data)?,
            Op::GatherRows {
                x,
                rows: rows.to_vec(),
            },
            rg,
        ))
    }

    /// Builds a matrix whose row `i` is row `sources[i].1` of matrix
    /// `sources[i].0`. All sources must share a column count.
    pub fn assemble_rows(&mut self, sources: &[(Var, usize)]) -> Result<Var> {
        let h = match sources.first() {
            Some((v, _)) => self.value(*v).cols(),
            None => return Err(Error::contract("assemble_rows needs at least one row")),
        };
        let mut data = Vec::with_capacity(sources.len() * h);
        for &(v, r) in sources {
            let t = self.value(v);
            if t.cols() != h || t.shape().len() != 2 {
                return Err(shape_err("assemble_rows", self.value(sources[0].0), t));
            }
            if r >= t.rows() {
                return Err(Error::contract(format!(
                    "row {r} out of range for {} rows",
                    t.rows()
                )));
            }
            data.extend_from_slice(t.row(r));
        }
        let vars: Vec<Var> = sources.iter().map(|s| s.0).collect();
        let rg = self.rg(&vars);
        Ok(self.push(
            Tensor::new(vec![sources.len(), h], data)?,
            Op::AssembleRows {
                sources: sources.to_vec(),
            },
            rg,
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = tx.matrix_dims("slice_cols")?;
        if start + len > n {
            return Err(Error::contract(format!(
                "columns {start}..{} out of range for {n}",
                start + len
            )));
        }
        let mut data = Vec::with_capacity(m * len);
        for r in 0..m {
            data.extend_from_slice(&tx.row(r)[start..start + len]);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor::new(vec![m, len], data)?,
            Op::SliceCols { x, start },
            rg,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = match parts.first() {
            Some(v) => self.value(*v),
            None => return Err(Error::contract("concat_cols needs at least one part")),
        };
        let (m, _) = first.matrix_dims("concat_cols")?;
        let mut total = 0;
        for &p in parts {
            let t = self.value(p);
            let (pm, pn) = t.matrix_dims("concat_cols")?;
            if pm != m {
                return Err(shape_err("concat_cols", first, t));
            }
            total += pn;
        }
        let mut data = Vec::with_capacity(m * total);
        for r in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor::new(vec![m, total], data)?,
            Op::ConcatCols(parts.to_vec()),
            rg,
        ))
    }

    /// Mean negative log-likelihood of `targets` under row-softmaxed `logits: [m, c]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let tl = self.value(logits);
        let (m, c) = tl.matrix_dims("cross_entropy")?;
        if targets.len() != m {
            return Err(Error::contract(format!(
                "{} targets for {m} rows",
                targets.len()
            )));
        }
        let mut lp = vec![0.0; c];
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            if t >= c {
                return Err(Error::contract(format!(
                    "target {t} out of range for {c} classes"
                )));
            }
            kernels::log_softmax_row(tl.row(r), &mut lp);
            total -= lp[t];
        }
        self.flops += cost::CROSS_ENTROPY * tl.numel() as u64;
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(total / m as f64),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse pass from a scalar `loss`. Gradients accumulate into every
    /// reachable node that requires them; call [`Tape::zero_grad`] to reset.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let g = match adj[i].take() {
                Some(g) => g,
                None => continue,
            };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut adj)?;
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) -> Result<()> {
        let nodes = &self.nodes;
        let wants = |v: Var| nodes[v.0].requires_grad;
        let val = |v: Var| &nodes[v.0].value;
        let out = &nodes[i].value;

        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = val(*a).matrix_dims("matmul")?;
                let n = val(*b).cols();
                if wants(*a) {
                    kernels::matmul_nt_acc(g, val(*b).data(), slot(adj, *a, m * k), m, n, k);
                }
                if wants(*b) {
                    kernels::matmul_tn_acc(val(*a).data(), g, slot(adj, *b, k * n), m, k, n);
                }
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = val(*a).matrix_dims("matmul_nt")?;
                let n = val(*b).rows();
                if wants(*a) {
                    kernels::matmul_acc(g, val(*b).data(), slot(adj, *a, m * k), m, n, k);
                }
                if wants(*b) {
                    kernels::matmul_tn_acc(g, val(*a).data(), slot(adj, *b, n * k), m, n, k);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if wants(v) {
                        add_into(slot(adj, v, g.len()), g);
                    }
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let s = slot(adj, *a, g.len());
                    for ((d, gv), bv) in s.iter_mut().zip(g).zip(val(*b).data()) {
                        *d += gv * bv;
                    }
                }
                if wants(*b) {
                    let s = slot(adj, *b, g.len());
                    for ((d, gv), av) in s.iter_mut().zip(g).zip(val(*a).data()) {
                        *d += gv * av;
                    }
                }
            }
            Op::AddRow(x, row) => {
                if wants(*x) {
                    add_into(slot(adj, *x, g.len()), g);
                }
                if wants(*row) {
                    let n = val(*row).numel();
                    let s = slot(adj, *row, n);
                    for chunk in g.chunks(n) {
                        add_into(s, chunk);
                    }
                }
            }
            Op::Scale(x, c) => {
                if wants(*x) {
                    let s = slot(adj, *x, g.len());
                    for (d, gv) in s.iter_mut().zip(g) {
                        *d += gv * c;
                    }
                }
            }
            Op::AddScalar(x) => {
                if wants(*x) {
                    add_into(slot(adj, *x, g.len()), g);
                }
            }
            Op::Sum(x) => {
                if wants(*x) {
                    let n = val(*x).numel();
                    slot(adj, *x, n).iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Softmax(x) => {
                if wants(*x) {
                    let n = out.cols();
                    let s = slot(adj, *x, g.len());
                    for ((y, gy), d) in out.data().chunks(n).zip(g.chunks(n)).zip(s.chunks_mut(n)) {
                        let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                        for c in 0..n {
                            d[c] += y[c] * (gy[c] - dot);
                        }
                    }
                }
            }
            Op::LogSoftmax(x) => {
                if wants(*x) {
                    let n = out.cols();
                    let s = slot(adj, *x, g.len());
                    for ((y, gy), d) in out.data().chunks(n).zip(g.chunks(n)).zip(s.chunks_mut(n)) {
                        let total: f64 = gy.iter().sum();
                        for c in 0..n {
                            d[c] += gy[c] - y[c].exp() * total;
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let h = out.cols();
                let gn = val(*gain).data();
                if wants(*gain) {
                    let s = slot(adj, *gain, h);
                    for (gr, xr) in g.chunks(h).zip(xhat.chunks(h)) {
                        for c in 0..h {
                            s[c] += gr[c] * xr[c];
                        }
                    }
                }
                if wants(*bias) {
                    let s = slot(adj, *bias, h);
                    for gr in g.chunks(h) {
                        add_into(s, gr);
                    }
                }
                if wants(*x) {
                    let s = slot(adj, *x, g.len());
                    let hf = h as f64;
                    for (r, ((gr, xr), dr)) in g
                        .chunks(h)
                        .zip(xhat.chunks(h))
                        .zip(s.chunks_mut(h))
                        .enumerate()
                    {
                        let mut sum_dxh = 0.0;
                        let mut sum_dxh_xh = 0.0;
                        for c in 0..h {
                            let dxh = gr[c] * gn[c];
                            sum_dxh += dxh;
                            sum_dxh_xh += dxh * xr[c];
                        }
                        for c in 0..h {
                            let dxh = gr[c] * gn[c];
                            dr[c] += rstd[r] * (dxh - sum_dxh / hf - xr[c] * sum_dxh_xh / hf);
                        }
                    }
                }
            }
            Op::Gelu(x) => {
                if wants(*x) {
                    let s = slot(adj, *x, g.len());
                    for ((d, gv), xv) in s.iter_mut().zip(g).zip(val(*x).data()) {
                        *d += gv * kernels::gelu_grad(*xv);
                    }
                }
            }
            Op::Embedding { table, ids } => {
                if wants(*table) {
                    let h = out.cols();
                    let s = slot(adj, *table, val(*table).numel());
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut s[id * h..(id + 1) * h], &g[r * h..(r + 1) * h]);
                    }
                }
            }
            Op::GatherRows { x, rows } => {
                if wants(*x) {
                    let h = out.cols();
                    let s = slot(adj, *x, val(*x).numel());
                    for (r, &src) in rows.iter().enumerate() {
                        add_into(&mut s[src * h..(src + 1) * h], &g[r * h..(r + 1) * h]);
                    }
                }
            }
            Op::AssembleRows { sources } => {
                let h = out.cols();
                for (r, &(v, src)) in sources.iter().enumerate() {
                    if wants(v) {
                        let n = val(v).numel();
                        let s = slot(adj, v, n);
                        add_into(&mut s[src * h..(src + 1) * h], &g[r * h..(r + 1) * h]);
                    }
                }
            }
            Op::SliceCols { x, start } => {
                if wants(*x) {
                    let len = out.cols();
                    let n = val(*x).cols();
                    let s = slot(adj, *x, val(*x).numel());
                    for (r, gr) in g.chunks(len).enumerate() {
                        add_into(&mut s[r * n + start..r * n + start + len], gr);
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = out.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).cols();
                    if wants(p) {
                        let s = slot(adj, p, val(p).numel());
                        for (r, dr) in s.chunks_mut(w).enumerate() {
                            add_into(dr, &g[r * total + offset..r * total + offset + w]);
                        }
                    }
                    offset += w;
                }
            }
            Op::CrossEntropy { logits, targets } => {
                if wants(*logits) {
                    let tl = val(*logits);
                    let c = tl.cols();
                    let m = targets.len() as f64;
                    let s = slot(adj, *logits, tl.numel());
                    let mut p = vec![0.0; c];
                    for (r, &t) in targets.iter().enumerate() {
                        kernels::softmax_row(tl.row(r), &mut p);
                        let d = &mut s[r * c..(r + 1) * c];
                        for k in 0..c {
                            let onehot = if k == t { 1.0 } else { 0.0 };
                            d[k] += g[0] * (p[k] - onehot) / m;
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn slot(adj: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    adj[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
