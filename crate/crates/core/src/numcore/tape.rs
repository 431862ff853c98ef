use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels;
use super::{NumError, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`GradTape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    index: usize,
    tape: u64,
}

/// Caller-chosen identifier of a trainable parameter.
pub type ParamKey = usize;

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamKey),
    Matmul(usize, usize),
    MatmulNt(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Gelu(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        stats: Vec<(f64, f64)>,
    },
    Softmax(usize),
    CausalAttention {
        q: usize,
        k: usize,
        v: usize,
        heads: usize,
        segments: Vec<(usize, usize)>,
        probs: Vec<f64>,
    },
    Gather {
        table: usize,
        indices: Vec<usize>,
    },
    SliceRows {
        x: usize,
        start: usize,
    },
    ConcatRows(Vec<usize>),
    SliceCols {
        x: usize,
        start: usize,
    },
    ConcatCols(Vec<usize>),
    Sum(usize),
    CrossEntropy {
        logits: usize,
        targets: Vec<Option<usize>>,
        probs: Vec<f64>,
        count: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`GradTape::backward`], keyed by parameter.
#[derive(Debug, Default)]
pub struct Gradients {
    grads: BTreeMap<ParamKey, Tensor>,
    /// Number of nodes the reverse sweep passed over.
    pub nodes_visited: usize,
}

impl Gradients {
    pub fn get(&self, key: ParamKey) -> Option<&Tensor> {
        self.grads.get(&key)
    }

    pub fn keys(&self) -> impl Iterator<Item = ParamKey> + '_ {
        self.grads.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn take(&mut self, key: ParamKey) -> Option<Tensor> {
        self.grads.remove(&key)
    }
}

/// Reverse-mode tape over a fixed set of primitive ops.
///
/// Values are recorded in forward order; `backward` walks them once in
/// reverse. Only subgraphs reachable from a trainable parameter carry
/// gradients.
#[derive(Debug)]
pub struct GradTape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for GradTape {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, left: &Tensor, right: &Tensor) -> NumError {
    NumError::ShapeMismatch {
        op,
        left: left.shape().to_vec(),
        right: right.shape().to_vec(),
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], idx: usize, contribution: Vec<f64>) {
    match &mut grads[idx] {
        Some(g) => {
            for (a, b) in g.iter_mut().zip(contribution) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(contribution),
    }
}

impl GradTape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<usize, NumError> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(NumError::TapeMismatch);
        }
        Ok(v.index)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            index: self.nodes.len() - 1,
            tape: self.id,
        }
    }

    fn rg(&self, idx: usize) -> bool {
        self.nodes[idx].requires_grad
    }

    pub fn value(&self, v: Var) -> Result<&Tensor, NumError> {
        let i = self.check(v)?;
        Ok(&self.nodes[i].value)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records a parameter. Frozen parameters (`trainable == false`) never
    /// receive a gradient.
    pub fn param(&mut self, key: ParamKey, value: &Tensor, trainable: bool) -> Var {
        if trainable {
            self.push(value.clone(), Op::Param(key), true)
        } else {
            self.push(value.clone(), Op::Leaf, false)
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let (m, k) = va.dims2()?;
        let (k2, n) = vb.dims2()?;
        if k != k2 {
            return Err(mismatch("matmul", va, vb));
        }
        let bt = kernels::transpose(vb.data(), k, n);
        let out = kernels::matmul_nt(va.data(), m, k, &bt, n);
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::Matmul(ia, ib), rg))
    }

    /// `a · bᵀ`, the product used by linear layers storing `[d_out × d_in]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let (m, k) = va.dims2()?;
        let (n, k2) = vb.dims2()?;
        if k != k2 {
            return Err(mismatch("matmul_nt", va, vb));
        }
        let out = kernels::matmul_nt(va.data(), m, k, vb.data(), n);
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatmulNt(ia, ib), rg))
    }

    fn zip_same(&self, ia: usize, ib: usize, op: &'static str) -> Result<(), NumError> {
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        if va.shape() != vb.shape() {
            return Err(mismatch(op, va, vb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        self.zip_same(ia, ib, "add")?;
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::from_parts(va.shape().to_vec(), data);
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(value, Op::Add(ia, ib), rg))
    }

    /// Adds a `[cols]` vector to every row of a `[rows × cols]` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, NumError> {
        let (ia, ib) = (self.check(a)?, self.check(bias)?);
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let (_, c) = va.dims2()?;
        if vb.numel() != c {
            return Err(mismatch("add_row", va, vb));
        }
        let mut data = va.data().to_vec();
        for row in data.chunks_mut(c) {
            for (x, b) in row.iter_mut().zip(vb.data()) {
                *x += b;
            }
        }
        let value = Tensor::from_parts(va.shape().to_vec(), data);
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(value, Op::AddRow(ia, ib), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        self.zip_same(ia, ib, "mul")?;
        let (va, vb) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::from_parts(va.shape().to_vec(), data);
        let rg = self.rg(ia) || self.rg(ib);
        Ok(self.push(value, Op::Mul(ia, ib), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, NumError> {
        let ia = self.check(a)?;
        let va = &self.nodes[ia].value;
        let data = va.data().iter().map(|x| x * c).collect();
        let value = Tensor::from_parts(va.shape().to_vec(), data);
        let rg = self.rg(ia);
        Ok(self.push(value, Op::Scale(ia, c), rg))
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var, NumError> {
        let ia = self.check(a)?;
        let va = &self.nodes[ia].value;
        let data = va.data().iter().map(|&x| kernels::gelu(x)).collect();
        let value = Tensor::from_parts(va.shape().to_vec(), data);
        let rg = self.rg(ia);
        Ok(self.push(value, Op::Gelu(ia), rg))
    }

    /// Row-wise layer normalisation with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, NumError> {
        let (ix, ig, ib) = (self.check(x)?, self.check(gain)?, self.check(bias)?);
        let (vx, vg, vb) = (
            &self.nodes[ix].value,
            &self.nodes[ig].value,
            &self.nodes[ib].value,
        );
        let (rows, c) = vx.dims2()?;
        if vg.numel() != c || vb.numel() != c {
            return Err(mismatch("layer_norm", vx, vg));
        }
        let mut out = vec![0.0; rows * c];
        let mut stats = Vec::with_capacity(rows);
        for r in 0..rows {
            stats.push(kernels::layer_norm_row(
                &vx.data()[r * c..(r + 1) * c],
                vg.data(),
                vb.data(),
                &mut out[r * c..(r + 1) * c],
            ));
        }
        let value = Tensor::from_parts(vec![rows, c], out);
        let rg = self.rg(ix) || self.rg(ig) || self.rg(ib);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x: ix,
                gain: ig,
                bias: ib,
                stats,
            },
            rg,
        ))
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, a: Var) -> Result<Var, NumError> {
        let ia = self.check(a)?;
        let value = super::tensor::softmax(&self.nodes[ia].value);
        let rg = self.rg(ia);
        Ok(self.push(value, Op::Softmax(ia), rg))
    }

    /// Multi-head causal self-attention over stacked sequences.
    ///
    /// `q`, `k`, `v` are `[rows × d]`; `segments` lists `(start, len)` row
    /// ranges, each an independent sequence. Row `i` of a segment attends to
    /// rows `0..=i` of the same segment only.
    pub fn causal_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        segments: &[(usize, usize)],
    ) -> Result<Var, NumError> {
        let (iq, ik, iv) = (self.check(q)?, self.check(k)?, self.check(v)?);
        let (vq, vk, vv) = (
            &self.nodes[iq].value,
            &self.nodes[ik].value,
            &self.nodes[iv].value,
        );
        let (rows, d) = vq.dims2()?;
        if vk.shape() != vq.shape() || vv.shape() != vq.shape() {
            return Err(mismatch("causal_attention", vq, vk));
        }
        if heads == 0 || d % heads != 0 {
            return Err(NumError::InvalidShape(vec![d, heads]));
        }
        let mut covered = 0;
        for &(start, len) in segments {
            if start != covered || len == 0 {
                return Err(NumError::InvalidShape(vec![start, len]));
            }
            covered += len;
        }
        if covered != rows {
            return Err(NumError::InvalidShape(vec![covered, rows]));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = vec![0.0; rows * d];
        let probs_len: usize = segments.iter().map(|&(_, l)| l * l * heads).sum();
        let mut probs = vec![0.0; probs_len];
        let mut poff = 0;
        let (qd, kd, vd) = (vq.data(), vk.data(), vv.data());
        for &(start, len) in segments {
            for h in 0..heads {
                let col = h * dh;
                for i in 0..len {
                    let qi = &qd[(start + i) * d + col..(start + i) * d + col + dh];
                    let p = &mut probs[poff + i * len..poff + i * len + i + 1];
                    for (j, pj) in p.iter_mut().enumerate() {
                        let kj = &kd[(start + j) * d + col..(start + j) * d + col + dh];
                        *pj = kernels::dot(qi, kj) * scale;
                    }
                    kernels::softmax_in_place(p);
                    let oi = &mut out[(start + i) * d + col..(start + i) * d + col + dh];
                    for (j, &pj) in p.iter().enumerate() {
                        let vj = &vd[(start + j) * d + col..(start + j) * d + col + dh];
                        for (o, x) in oi.iter_mut().zip(vj) {
                            *o += pj * x;
                        }
                    }
                }
                poff += len * len;
            }
        }
        let value = Tensor::from_parts(vec![rows, d], out);
        let rg = self.rg(iq) || self.rg(ik) || self.rg(iv);
        Ok(self.push(
            value,
            Op::CausalAttention {
                q: iq,
                k: ik,
                v: iv,
                heads,
                segments: segments.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Embedding lookup: rows of `table` selected by `indices`.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var, NumError> {
        let it = self.check(table)?;
        let vt = &self.nodes[it].value;
        let (n, c) = vt.dims2()?;
        if indices.is_empty() {
            return Err(NumError::InvalidShape(vec![0, c]));
        }
        let mut data = Vec::with_capacity(indices.len() * c);
        for &ix in indices {
            if ix >= n {
                return Err(NumError::IndexOutOfRange { index: ix, bound: n });
            }
            data.extend_from_slice(&vt.data()[ix * c..(ix + 1) * c]);
        }
        let value = Tensor::from_parts(vec![indices.len(), c], data);
        let rg = self.rg(it);
        Ok(self.push(
            value,
            Op::Gather {
                table: it,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NumError> {
        let ix = self.check(x)?;
        let vx = &self.nodes[ix].value;
        let (r, c) = vx.dims2()?;
        if len == 0 || start + len > r {
            return Err(NumError::IndexOutOfRange {
                index: start + len,
                bound: r,
            });
        }
        let value = Tensor::from_parts(
            vec![len, c],
            vx.data()[start * c..(start + len) * c].to_vec(),
        );
        let rg = self.rg(ix);
        Ok(self.push(value, Op::SliceRows { x: ix, start }, rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        let idx = parts
            .iter()
            .map(|&p| self.check(p))
            .collect::<Result<Vec<_>, _>>()?;
        let first = idx.first().ok_or(NumError::InvalidShape(vec![0]))?;
        let (_, c) = self.nodes[*first].value.dims2()?;
        let mut data = Vec::new();
        let mut rows = 0;
        for &i in &idx {
            let v = &self.nodes[i].value;
            let (r, c2) = v.dims2()?;
            if c2 != c {
                return Err(mismatch("concat_rows", &self.nodes[*first].value, v));
            }
            rows += r;
            data.extend_from_slice(v.data());
        }
        let rg = idx.iter().any(|&i| self.rg(i));
        Ok(self.push(Tensor::from_parts(vec![rows, c], data), Op::ConcatRows(idx), rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NumError> {
        let ix = self.check(x)?;
        let vx = &self.nodes[ix].value;
        let (r, c) = vx.dims2()?;
        if len == 0 || start + len > c {
            return Err(NumError::IndexOutOfRange {
                index: start + len,
                bound: c,
            });
        }
        let mut data = Vec::with_capacity(r * len);
        for row in vx.data().chunks(c) {
            data.extend_from_slice(&row[start..start + len]);
        }
        let rg = self.rg(ix);
        Ok(self.push(
            Tensor::from_parts(vec![r, len], data),
            Op::SliceCols { x: ix, start },
            rg,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        let idx = parts
            .iter()
            .map(|&p| self.check(p))
            .collect::<Result<Vec<_>, _>>()?;
        let first = idx.first().ok_or(NumError::InvalidShape(vec![0]))?;
        let (r, _) = self.nodes[*first].value.dims2()?;
        let mut widths = Vec::with_capacity(idx.len());
        for &i in &idx {
            let (r2, c) = self.nodes[i].value.dims2()?;
            if r2 != r {
                return Err(mismatch(
                    "concat_cols",
                    &self.nodes[*first].value,
                    &self.nodes[i].value,
                ));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for row in 0..r {
            for (&i, &w) in idx.iter().zip(&widths) {
                data.extend_from_slice(&self.nodes[i].value.data()[row * w..(row + 1) * w]);
            }
        }
        let rg = idx.iter().any(|&i| self.rg(i));
        Ok(self.push(Tensor::from_parts(vec![r, total], data), Op::ConcatCols(idx), rg))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, NumError> {
        let ia = self.check(a)?;
        let s = self.nodes[ia].value.data().iter().sum();
        let rg = self.rg(ia);
        Ok(self.push(Tensor::scalar(s), Op::Sum(ia), rg))
    }

    /// Mean token cross-entropy over the rows that carry a target.
    ///
    /// `logits` is `[rows × vocab]`; rows whose target is `None` are masked
    /// out of both the loss and its gradient.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var, NumError> {
        let il = self.check(logits)?;
        let vl = &self.nodes[il].value;
        let (rows, vocab) = vl.dims2()?;
        if targets.len() != rows {
            return Err(NumError::LengthMismatch {
                expected: rows,
                actual: targets.len(),
            });
        }
        let count = targets.iter().filter(|t| t.is_some()).count();
        if count == 0 {
            return Err(NumError::EmptyTargets);
        }
        let mut probs = vl.data().to_vec();
        let mut loss = 0.0;
        for (r, t) in targets.iter().enumerate() {
            let row = &mut probs[r * vocab..(r + 1) * vocab];
            if let Some(t) = *t {
                if t >= vocab {
                    return Err(NumError::IndexOutOfRange {
                        index: t,
                        bound: vocab,
                    });
                }
                loss -= kernels::log_softmax_at(row, t);
                kernels::softmax_in_place(row);
            }
        }
        loss /= count as f64;
        let rg = self.rg(il);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits: il,
                targets: targets.to_vec(),
                probs,
                count,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`; returns gradients for every
    /// trainable parameter that influenced it.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumError> {
        let il = self.check(loss)?;
        if self.nodes[il].value.numel() != 1 {
            return Err(NumError::NotScalar(self.nodes[il].value.shape().to_vec()));
        }
        let mut out = Gradients::default();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; il + 1];
        grads[il] = Some(vec![1.0]);
        for i in (0..=il).rev() {
            out.nodes_visited += 1;
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.backprop_node(node, g, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn backprop_node(
        &self,
        node: &Node,
        g: Vec<f64>,
        grads: &mut [Option<Vec<f64>>],
        out: &mut Gradients,
    ) {
        let val = |i: usize| &self.nodes[i].value;
        let rg = |i: usize| self.nodes[i].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Param(key) => {
                let t = Tensor::from_parts(node.value.shape().to_vec(), g);
                match out.grads.get_mut(key) {
                    // A parameter recorded twice accumulates.
                    Some(prev) => {
                        for (a, b) in prev.data_mut().iter_mut().zip(t.data()) {
                            *a += b;
                        }
                    }
                    None => {
                        out.grads.insert(*key, t);
                    }
                }
            }
            &Op::Matmul(a, b) => {
                let (m, k) = val(a).dims2().expect("2-D");
                let (_, n) = val(b).dims2().expect("2-D");
                if rg(a) {
                    accumulate(grads, a, kernels::matmul_nt(&g, m, n, val(b).data(), k));
                }
                if rg(b) {
                    let at = kernels::transpose(val(a).data(), m, k);
                    let gt = kernels::transpose(&g, m, n);
                    accumulate(grads, b, kernels::matmul_nt(&at, k, m, &gt, n));
                }
            }
            &Op::MatmulNt(a, b) => {
                let (m, k) = val(a).dims2().expect("2-D");
                let (n, _) = val(b).dims2().expect("2-D");
                if rg(a) {
                    let bt = kernels::transpose(val(b).data(), n, k);
                    accumulate(grads, a, kernels::matmul_nt(&g, m, n, &bt, k));
                }
                if rg(b) {
                    let gt = kernels::transpose(&g, m, n);
                    let at = kernels::transpose(val(a).data(), m, k);
                    accumulate(grads, b, kernels::matmul_nt(&gt, n, m, &at, k));
                }
            }
            &Op::Add(a, b) => {
                if rg(a) {
                    accumulate(grads, a, g.clone());
                }
                if rg(b) {
                    accumulate(grads, b, g);
                }
            }
            &Op::AddRow(a, b) => {
                let c = val(b).numel();
                if rg(b) {
                    let mut gb = vec![0.0; c];
                    for row in g.chunks(c) {
                        for (x, y) in gb.iter_mut().zip(row) {
                            *x += y;
                        }
                    }
                    accumulate(grads, b, gb);
                }
                if rg(a) {
                    accumulate(grads, a, g);
                }
            }
            &Op::Mul(a, b) => {
                if rg(a) {
                    let ga = g.iter().zip(val(b).data()).map(|(x, y)| x * y).collect();
                    accumulate(grads, a, ga);
                }
                if rg(b) {
                    let gb = g.iter().zip(val(a).data()).map(|(x, y)| x * y).collect();
                    accumulate(grads, b, gb);
                }
            }
            &Op::Scale(a, c) => {
                accumulate(grads, a, g.iter().map(|x| x * c).collect());
            }
            &Op::Gelu(a) => {
                let ga = g
                    .iter()
                    .zip(val(a).data())
                    .map(|(gy, &x)| gy * kernels::gelu_grad(x))
                    .collect();
                accumulate(grads, a, ga);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                stats,
            } => {
                let (x, gain, bias) = (*x, *gain, *bias);
                let (rows, c) = val(x).dims2().expect("2-D");
                let xd = val(x).data();
                let gd = val(gain).data();
                let mut gx = vec![0.0; rows * c];
                let mut gg = vec![0.0; c];
                let mut gbias = vec![0.0; c];
                let n = c as f64;
                for r in 0..rows {
                    let (mean, rstd) = stats[r];
                    let xr = &xd[r * c..(r + 1) * c];
                    let gr = &g[r * c..(r + 1) * c];
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    for j in 0..c {
                        let xhat = (xr[j] - mean) * rstd;
                        let dxhat = gr[j] * gd[j];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                        gg[j] += gr[j] * xhat;
                        gbias[j] += gr[j];
                    }
                    for j in 0..c {
                        let xhat = (xr[j] - mean) * rstd;
                        let dxhat = gr[j] * gd[j];
                        gx[r * c + j] =
                            rstd * (dxhat - sum_dxhat / n - xhat * sum_dxhat_xhat / n);
                    }
                }
                if rg(x) {
                    accumulate(grads, x, gx);
                }
                if rg(gain) {
                    accumulate(grads, gain, gg);
                }
                if rg(bias) {
                    accumulate(grads, bias, gbias);
                }
            }
            &Op::Softmax(a) => {
                let p = node.value.data();
                let c = *node.value.shape().last().expect("shape");
                let mut ga = vec![0.0; p.len()];
                for ((pr, gr), out_r) in p.chunks(c).zip(g.chunks(c)).zip(ga.chunks_mut(c)) {
                    let s: f64 = pr.iter().zip(gr).map(|(x, y)| x * y).sum();
                    for j in 0..c {
                        out_r[j] = pr[j] * (gr[j] - s);
                    }
                }
                accumulate(grads, a, ga);
            }
            Op::CausalAttention {
                q,
                k,
                v,
                heads,
                segments,
                probs,
            } => {
                let (q, k, v, heads) = (*q, *k, *v, *heads);
                let (rows, d) = val(q).dims2().expect("2-D");
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let (qd, kd, vd) = (val(q).data(), val(k).data(), val(v).data());
                let mut gq = vec![0.0; rows * d];
                let mut gk = vec![0.0; rows * d];
                let mut gv = vec![0.0; rows * d];
                let mut poff = 0;
                let mut dp = Vec::new();
                for &(start, len) in segments {
                    for h in 0..heads {
                        let col = h * dh;
                        let at = |r: usize| (start + r) * d + col..(start + r) * d + col + dh;
                        for i in 0..len {
                            let p = &probs[poff + i * len..poff + i * len + i + 1];
                            let go = &g[at(i)];
                            dp.clear();
                            for (j, &pj) in p.iter().enumerate() {
                                dp.push(kernels::dot(go, &vd[at(j)]));
                                let gvj = &mut gv[at(j)];
                                for (x, y) in gvj.iter_mut().zip(go) {
                                    *x += pj * y;
                                }
                            }
                            let s: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
                            for (j, &pj) in p.iter().enumerate() {
                                let ds = pj * (dp[j] - s) * scale;
                                if ds == 0.0 {
                                    continue;
                                }
                                let kj = &kd[at(j)];
                                let qi = &qd[at(i)];
                                let gqi = &mut gq[at(i)];
                                for (x, y) in gqi.iter_mut().zip(kj) {
                                    *x += ds * y;
                                }
                                let gkj = &mut gk[at(j)];
                                for (x, y) in gkj.iter_mut().zip(qi) {
                                    *x += ds * y;
                                }
                            }
                        }
                        poff += len * len;
                    }
                }
                if rg(q) {
                    accumulate(grads, q, gq);
                }
                if rg(k) {
                    accumulate(grads, k, gk);
                }
                if rg(v) {
                    accumulate(grads, v, gv);
                }
            }
            Op::Gather { table, indices } => {
                let (n, c) = val(*table).dims2().expect("2-D");
                let mut gt = vec![0.0; n * c];
                for (r, &ix) in indices.iter().enumerate() {
                    for j in 0..c {
                        gt[ix * c + j] += g[r * c + j];
                    }
                }
                accumulate(grads, *table, gt);
            }
            &Op::SliceRows { x, start } => {
                let (r, c) = val(x).dims2().expect("2-D");
                let mut gx = vec![0.0; r * c];
                gx[start * c..start * c + g.len()].copy_from_slice(&g);
                accumulate(grads, x, gx);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = val(p).numel();
                    if rg(p) {
                        accumulate(grads, p, g[off..off + n].to_vec());
                    }
                    off += n;
                }
            }
            &Op::SliceCols { x, start } => {
                let (r, c) = val(x).dims2().expect("2-D");
                let len = g.len() / r;
                let mut gx = vec![0.0; r * c];
                for row in 0..r {
                    gx[row * c + start..row * c + start + len]
                        .copy_from_slice(&g[row * len..(row + 1) * len]);
                }
                accumulate(grads, x, gx);
            }
            Op::ConcatCols(parts) => {
                let total = *node.value.shape().last().expect("shape");
                let rows = node.value.numel() / total;
                let mut off = 0;
                for &p in parts {
                    let w = val(p).numel() / rows;
                    if rg(p) {
                        let mut gp = Vec::with_capacity(rows * w);
                        for row in 0..rows {
                            gp.extend_from_slice(&g[row * total + off..row * total + off + w]);
                        }
                        accumulate(grads, p, gp);
                    }
                    off += w;
                }
            }
            &Op::Sum(a) => {
                accumulate(grads, a, vec![g[0]; val(a).numel()]);
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => {
                let (_, vocab) = val(*logits).dims2().expect("2-D");
                let coef = g[0] / *count as f64;
                let mut gl = vec![0.0; probs.len()];
                for (r, t) in targets.iter().enumerate() {
                    if let Some(t) = *t {
                        let row = &mut gl[r * vocab..(r + 1) * vocab];
                        for (x, p) in row.iter_mut().zip(&probs[r * vocab..(r + 1) * vocab]) {
                            *x = coef * p;
                        }
                        row[t] -= coef;
                    }
                }
                accumulate(grads, *logits, gl);
            }
        }
    }
}
