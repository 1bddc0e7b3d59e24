//! Tape-based reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the node index is a valid
//! topological order and the graph can never contain a cycle. `backward`
//! walks the tape from the loss towards the leaves, accumulating each
//! node's upstream gradient into its parents.

use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Constant,
    Variable,
    Param,
    MatMul(NodeId, NodeId),
    MatVec(NodeId, NodeId),
    MatTVec(NodeId, NodeId),
    Dot(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddScalar(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Sum(NodeId),
    Concat(Vec<NodeId>),
    Stack(Vec<NodeId>),
    Row(NodeId, usize),
    Slice(NodeId, usize),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Softmax(NodeId),
    Gather(NodeId, Vec<usize>),
    Conv1d {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        window: usize,
    },
    MaxPool(NodeId, Vec<usize>),
    Dropout(NodeId, Tensor),
    LstmCell {
        x: NodeId,
        h: NodeId,
        c: NodeId,
        w: NodeId,
        b: NodeId,
        /// Post-activation gates `[i, f, g, o]` and `tanh(c_new)`.
        saved: Vec<f64>,
    },
    Bce {
        p: NodeId,
        label: f64,
        clamped: bool,
    },
}

/// Lower clamp applied to probabilities before taking logarithms.
pub const PROB_EPS: f64 = 1e-7;

/// A differentiation graph over a borrowed parameter store.
///
/// Parameters enter the graph once per graph through [`Graph::param`];
/// repeated calls return the same node so that their gradients accumulate.
pub struct Graph<'p> {
    params: &'p ParamStore,
    values: Vec<Tensor>,
    ops: Vec<Op>,
    requires_grad: Vec<bool>,
    grads: Vec<Option<Tensor>>,
    param_nodes: HashMap<ParamId, NodeId>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            values: Vec::new(),
            ops: Vec::new(),
            requires_grad: Vec::new(),
            grads: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        let id = NodeId(self.values.len());
        self.values.push(value);
        self.ops.push(op);
        self.requires_grad.push(requires_grad);
        self.grads.push(None);
        id
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.requires_grad[id.0])
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.requires_grad[id.0]
    }

    /// Gradient of the last backward pass with respect to `id`; zeros for
    /// nodes that did not participate.
    pub fn grad(&self, id: NodeId) -> Tensor {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.values[id.0].shape()),
        }
    }

    /// Gradients of every trainable parameter that entered this graph.
    pub fn param_grads(&self) -> Vec<(ParamId, Tensor)> {
        let mut out: Vec<_> = self
            .param_nodes
            .iter()
            .filter(|(pid, _)| !self.params.get(**pid).frozen)
            .map(|(pid, node)| (*pid, self.grad(*node)))
            .collect();
        out.sort_by_key(|(pid, _)| *pid);
        out
    }

    pub fn reset_grads(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    // ---- leaves -------------------------------------------------------

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Constant, false)
    }

    /// A free leaf that receives a gradient (used for gradient checks).
    pub fn variable(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Variable, true)
    }

    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(&node) = self.param_nodes.get(&id) {
            return node;
        }
        let p = self.params.get(id);
        let node = self.push(p.value.clone(), Op::Param, !p.frozen);
        self.param_nodes.insert(id, node);
        node
    }

    pub fn param_by_name(&mut self, name: &str) -> Result<NodeId> {
        let id = self
            .params
            .id(name)
            .ok_or_else(|| Error::InvalidInput(format!("unknown parameter `{name}`")))?;
        Ok(self.param(id))
    }

    // ---- linear algebra -----------------------------------------------

    /// `[m × k] · [k × n] → [m × n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.values[a.0], &self.values[b.0]);
        let ((m, k), (k2, n)) = match (va.dims2(), vb.dims2()) {
            (Some(x), Some(y)) if x.1 == y.0 => (x, y),
            _ => return Err(shape_err("matmul", va, vb)),
        };
        debug_assert_eq!(k, k2);
        let (ad, bd) = (va.data(), vb.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = ad[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                for (o, bv) in orow.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                    *o += aip * bv;
                }
            }
        }
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// `[m × k] · [k] → [m]`.
    pub fn matvec(&mut self, a: NodeId, v: NodeId) -> Result<NodeId> {
        let (va, vv) = (&self.values[a.0], &self.values[v.0]);
        let (m, k) = match va.dims2() {
            Some((m, k)) if vv.ndim() == 1 && vv.len() == k => (m, k),
            _ => return Err(shape_err("matvec", va, vv)),
        };
        let out: Vec<f64> = (0..m)
            .map(|i| dot(&va.data()[i * k..(i + 1) * k], vv.data()))
            .collect();
        let rg = self.needs(&[a, v]);
        Ok(self.push(Tensor::vector(out), Op::MatVec(a, v), rg))
    }

    /// `[m × k]ᵀ · [m] → [k]`: a weighted sum of the rows of `a`.
    pub fn matvec_t(&mut self, a: NodeId, p: NodeId) -> Result<NodeId> {
        let (va, vp) = (&self.values[a.0], &self.values[p.0]);
        let (m, k) = match va.dims2() {
            Some((m, k)) if vp.ndim() == 1 && vp.len() == m => (m, k),
            _ => return Err(shape_err("matvec_t", va, vp)),
        };
        let mut out = vec![0.0; k];
        for i in 0..m {
            axpy(&mut out, vp.data()[i], &va.data()[i * k..(i + 1) * k]);
        }
        let rg = self.needs(&[a, p]);
        Ok(self.push(Tensor::vector(out), Op::MatTVec(a, p), rg))
    }

    /// Inner product of two equal-length vectors, as a scalar node.
    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.values[a.0], &self.values[b.0]);
        if va.ndim() != 1 || va.shape() != vb.shape() {
            return Err(shape_err("dot", va, vb));
        }
        let v = dot(va.data(), vb.data());
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor::scalar(v), Op::Dot(a, b), rg))
    }

    // ---- elementwise --------------------------------------------------

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.values[a.0], &self.values[b.0]);
        if va.shape() != vb.shape() {
            return Err(shape_err("add", va, vb));
        }
        let out = zip_map(va, vb, |x, y| x + y);
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Adds a single-element tensor to every entry of `a`.
    pub fn add_scalar(&mut self, a: NodeId, s: NodeId) -> Result<NodeId> {
        let (va, vs) = (&self.values[a.0], &self.values[s.0]);
        if !vs.is_scalar() {
            return Err(shape_err("add_scalar", va, vs));
        }
        let c = vs.item();
        let out = map(va, |x| x + c);
        let rg = self.needs(&[a, s]);
        Ok(self.push(out, Op::AddScalar(a, s), rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.values[a.0], &self.values[b.0]);
        if va.shape() != vb.shape() {
            return Err(shape_err("mul", va, vb));
        }
        let out = zip_map(va, vb, |x, y| x * y);
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let out = map(&self.values[a.0], |x| x * factor);
        let rg = self.needs(&[a]);
        self.push(out, Op::Scale(a, factor), rg)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.values[a.0].sum();
        let rg = self.needs(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Sum of a list of scalar nodes.
    pub fn sum_scalars(&mut self, items: &[NodeId]) -> Result<NodeId> {
        if items.is_empty() {
            return Err(Error::InvalidInput("sum_scalars: no terms".into()));
        }
        let stacked = self.concat(items)?;
        Ok(self.sum(stacked))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let out = map(&self.values[a.0], sigmoid);
        let rg = self.needs(&[a]);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let out = map(&self.values[a.0], f64::tanh);
        let rg = self.needs(&[a]);
        self.push(out, Op::Tanh(a), rg)
    }

    /// Softmax over a 1-D vector.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let va = &self.values[a.0];
        if va.ndim() != 1 {
            return Err(Error::Shape {
                op: "softmax",
                left: va.shape().to_vec(),
                right: vec![va.len()],
            });
        }
        let out = Tensor::vector(softmax(va.data())?);
        let rg = self.needs(&[a]);
        Ok(self.push(out, Op::Softmax(a), rg))
    }

    // ---- structural ---------------------------------------------------

    /// Concatenates along the last axis. All inputs must agree on every
    /// other axis.
    pub fn concat(&mut self, items: &[NodeId]) -> Result<NodeId> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidInput("concat: no inputs".into()))?;
        let lead = self.values[first.0].shape()[..self.values[first.0].ndim() - 1].to_vec();
        let rows = self.values[first.0].outer_len();
        let mut width = 0;
        for id in items {
            let v = &self.values[id.0];
            if v.shape()[..v.ndim() - 1] != lead[..] {
                return Err(shape_err("concat", &self.values[first.0], v));
            }
            width += v.last_dim();
        }
        let mut out = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for id in items {
                out.extend_from_slice(self.values[id.0].row(r));
            }
        }
        let mut shape = lead;
        shape.push(width);
        let rg = self.needs(items);
        Ok(self.push(Tensor::new(shape, out)?, Op::Concat(items.to_vec()), rg))
    }

    /// Stacks equal-length vectors as the rows of a matrix.
    pub fn stack(&mut self, items: &[NodeId]) -> Result<NodeId> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidInput("stack: no inputs".into()))?;
        let width = self.values[first.0].len();
        let mut out = Vec::with_capacity(items.len() * width);
        for id in items {
            let v = &self.values[id.0];
            if v.ndim() != 1 || v.len() != width {
                return Err(shape_err("stack", &self.values[first.0], v));
            }
            out.extend_from_slice(v.data());
        }
        let rg = self.needs(items);
        Ok(self.push(
            Tensor::matrix(items.len(), width, out)?,
            Op::Stack(items.to_vec()),
            rg,
        ))
    }

    pub fn row(&mut self, a: NodeId, i: usize) -> Result<NodeId> {
        let va = &self.values[a.0];
        match va.dims2() {
            Some((m, _)) if i < m => {}
            _ => return Err(shape_err("row", va, &Tensor::scalar(i as f64))),
        }
        let out = Tensor::vector(va.row(i).to_vec());
        let rg = self.needs(&[a]);
        Ok(self.push(out, Op::Row(a, i), rg))
    }

    /// Contiguous sub-vector `a[start..start + len]`.
    pub fn slice(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let va = &self.values[a.0];
        if va.ndim() != 1 || len == 0 || start + len > va.len() {
            return Err(Error::Shape {
                op: "slice",
                left: va.shape().to_vec(),
                right: vec![start, len],
            });
        }
        let out = Tensor::vector(va.data()[start..start + len].to_vec());
        let rg = self.needs(&[a]);
        Ok(self.push(out, Op::Slice(a, start), rg))
    }

    /// Embedding lookup: rows `indices` of a `[n × d]` table.
    pub fn gather(&mut self, table: NodeId, indices: &[usize]) -> Result<NodeId> {
        let vt = &self.values[table.0];
        let (n, d) = vt
            .dims2()
            .ok_or_else(|| shape_err("gather", vt, &Tensor::scalar(0.0)))?;
        if indices.is_empty() {
            return Err(Error::InvalidInput("gather: no indices".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::Shape {
                op: "gather",
                left: vec![n, d],
                right: vec![bad],
            });
        }
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            out.extend_from_slice(vt.row(i));
        }
        let rg = self.needs(&[table]);
        Ok(self.push(
            Tensor::matrix(indices.len(), d, out)?,
            Op::Gather(table, indices.to_vec()),
            rg,
        ))
    }

    /// Valid 1-D convolution over the rows of `input` (`[len × c_in]`).
    ///
    /// `weight` is `[filters × window·c_in]` with window-major layout and
    /// `bias` is `[filters]`. Inputs shorter than the window are padded at
    /// the end with zero rows, so the output always has at least one row.
    pub fn conv1d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        window: usize,
    ) -> Result<NodeId> {
        let (vx, vw, vb) = (
            &self.values[input.0],
            &self.values[weight.0],
            &self.values[bias.0],
        );
        let (len, c_in) = vx
            .dims2()
            .ok_or_else(|| shape_err("conv1d", vx, vw))?;
        let (filters, span) = vw
            .dims2()
            .ok_or_else(|| shape_err("conv1d", vx, vw))?;
        if window == 0 || span != window * c_in || vb.shape() != [filters] {
            return Err(shape_err("conv1d", vx, vw));
        }
        let padded = len.max(window);
        let steps = padded - window + 1;
        let mut out = vec![0.0; steps * filters];
        for t in 0..steps {
            // Number of real (unpadded) rows covered by this window.
            let real = window.min(len.saturating_sub(t));
            let x = &vx.data()[t * c_in..(t + real) * c_in];
            for f in 0..filters {
                let wrow = &vw.data()[f * span..f * span + real * c_in];
                out[t * filters + f] = vb.data()[f] + dot(wrow, x);
            }
        }
        let rg = self.needs(&[input, weight, bias]);
        Ok(self.push(
            Tensor::matrix(steps, filters, out)?,
            Op::Conv1d {
                input,
                weight,
                bias,
                window,
            },
            rg,
        ))
    }

    /// Max over the time (row) axis of a `[T × c]` matrix.
    pub fn max_pool_time(&mut self, a: NodeId) -> Result<NodeId> {
        let va = &self.values[a.0];
        let (t, c) = va
            .dims2()
            .ok_or_else(|| shape_err("max_pool_time", va, va))?;
        let mut best = va.row(0).to_vec();
        let mut arg = vec![0usize; c];
        for r in 1..t {
            for (j, &x) in va.row(r).iter().enumerate() {
                if x > best[j] {
                    best[j] = x;
                    arg[j] = r;
                }
            }
        }
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor::vector(best), Op::MaxPool(a, arg), rg))
    }

    /// Multiplies by a fixed mask. The mask either has the same shape as
    /// `a` or the shape of a single row, in which case it is reused for
    /// every row. Masks carry the inverse keep-probability scaling.
    pub fn dropout(&mut self, a: NodeId, mask: &Tensor) -> Result<NodeId> {
        let va = &self.values[a.0];
        let out = if mask.shape() == va.shape() {
            zip_map(va, mask, |x, m| x * m)
        } else if mask.ndim() == 1 && mask.len() == va.last_dim() {
            let mut data = va.data().to_vec();
            for row in data.chunks_mut(mask.len()) {
                for (x, m) in row.iter_mut().zip(mask.data()) {
                    *x *= m;
                }
            }
            Tensor::new(va.shape().to_vec(), data)?
        } else {
            return Err(shape_err("dropout", va, mask));
        };
        let rg = self.needs(&[a]);
        Ok(self.push(out, Op::Dropout(a, mask.clone()), rg))
    }

    /// One LSTM step with gate order `[input, forget, cell, output]`.
    ///
    /// `w` is `[4H × (d_in + H)]` acting on `[x; h]`, `b` is `[4H]`.
    /// Returns a `[2H]` node holding `[h_new; c_new]`.
    pub fn lstm_cell(
        &mut self,
        x: NodeId,
        h: NodeId,
        c: NodeId,
        w: NodeId,
        b: NodeId,
    ) -> Result<NodeId> {
        let (vx, vh, vc, vw, vb) = (
            &self.values[x.0],
            &self.values[h.0],
            &self.values[c.0],
            &self.values[w.0],
            &self.values[b.0],
        );
        let hid = vh.len();
        let d_in = vx.len();
        if vx.ndim() != 1 || vh.ndim() != 1 || vc.shape() != vh.shape() {
            return Err(shape_err("lstm_cell", vx, vh));
        }
        if vw.dims2() != Some((4 * hid, d_in + hid)) || vb.shape() != [4 * hid] {
            return Err(shape_err("lstm_cell", vw, &Tensor::zeros(&[4 * hid, d_in + hid])));
        }
        let span = d_in + hid;
        let wd = vw.data();
        let mut saved = vec![0.0; 5 * hid];
        for r in 0..4 * hid {
            let row = &wd[r * span..(r + 1) * span];
            let z = vb.data()[r] + dot(&row[..d_in], vx.data()) + dot(&row[d_in..], vh.data());
            saved[r] = if (2 * hid..3 * hid).contains(&r) {
                z.tanh()
            } else {
                sigmoid(z)
            };
        }
        let mut out = vec![0.0; 2 * hid];
        for k in 0..hid {
            let (i, f, g, o) = (saved[k], saved[hid + k], saved[2 * hid + k], saved[3 * hid + k]);
            let c_new = f * vc.data()[k] + i * g;
            let tc = c_new.tanh();
            saved[4 * hid + k] = tc;
            out[k] = o * tc;
            out[hid + k] = c_new;
        }
        let rg = self.needs(&[x, h, c, w, b]);
        Ok(self.push(
            Tensor::vector(out),
            Op::LstmCell {
                x,
                h,
                c,
                w,
                b,
                saved,
            },
            rg,
        ))
    }

    /// Binary cross entropy of a single probability against a 0/1 label.
    /// The probability is clamped to `[PROB_EPS, 1 - PROB_EPS]` first.
    pub fn bce(&mut self, p: NodeId, label: f64) -> Result<NodeId> {
        let vp = &self.values[p.0];
        if !vp.is_scalar() {
            return Err(shape_err("bce", vp, &Tensor::scalar(label)));
        }
        let raw = vp.item();
        let q = raw.clamp(PROB_EPS, 1.0 - PROB_EPS);
        let loss = -(label * q.ln() + (1.0 - label) * (1.0 - q).ln());
        let rg = self.needs(&[p]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                p,
                label,
                clamped: q != raw,
            },
            rg,
        ))
    }

    // ---- reverse pass -------------------------------------------------

    /// Accumulates `∂loss/∂node` into every node that requires a gradient.
    /// Gradients add up across calls until [`Graph::reset_grads`].
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let lv = &self.values[loss.0];
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        accumulate(&mut self.grads, &self.values, loss, |g| g[0] += 1.0);
        for idx in (0..=loss.0).rev() {
            if !self.requires_grad[idx] {
                continue;
            }
            let Some(g) = self.grads[idx].take() else {
                continue;
            };
            self.backprop(idx, &g);
            self.grads[idx] = Some(g);
        }
        Ok(())
    }

    fn backprop(&mut self, idx: usize, g: &Tensor) {
        let values = &self.values;
        let grads = &mut self.grads;
        let rg = &self.requires_grad;
        let gd = g.data();
        let mut acc = |id: NodeId, f: &mut dyn FnMut(&mut [f64])| {
            if rg[id.0] {
                accumulate(grads, values, id, f);
            }
        };
        match &self.ops[idx] {
            Op::Constant | Op::Variable | Op::Param => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (&values[a.0], &values[b.0]);
                let (m, k) = va.dims2().unwrap();
                let n = vb.dims2().unwrap().1;
                acc(*a, &mut |da| {
                    for i in 0..m {
                        let grow = &gd[i * n..(i + 1) * n];
                        for p in 0..k {
                            da[i * k + p] += dot(grow, &vb.data()[p * n..(p + 1) * n]);
                        }
                    }
                });
                acc(*b, &mut |db| {
                    for i in 0..m {
                        let grow = &gd[i * n..(i + 1) * n];
                        for p in 0..k {
                            axpy(&mut db[p * n..(p + 1) * n], va.data()[i * k + p], grow);
                        }
                    }
                });
            }
            Op::MatVec(a, v) => {
                let (va, vv) = (&values[a.0], &values[v.0]);
                let k = vv.len();
                acc(*a, &mut |da| {
                    for (i, &gi) in gd.iter().enumerate() {
                        axpy(&mut da[i * k..(i + 1) * k], gi, vv.data());
                    }
                });
                acc(*v, &mut |dv| {
                    for (i, &gi) in gd.iter().enumerate() {
                        axpy(dv, gi, &va.data()[i * k..(i + 1) * k]);
                    }
                });
            }
            Op::MatTVec(a, p) => {
                let (va, vp) = (&values[a.0], &values[p.0]);
                let k = gd.len();
                acc(*a, &mut |da| {
                    for (i, &pi) in vp.data().iter().enumerate() {
                        axpy(&mut da[i * k..(i + 1) * k], pi, gd);
                    }
                });
                acc(*p, &mut |dp| {
                    for (i, d) in dp.iter_mut().enumerate() {
                        *d += dot(&va.data()[i * k..(i + 1) * k], gd);
                    }
                });
            }
            Op::Dot(a, b) => {
                let (va, vb) = (&values[a.0], &values[b.0]);
                acc(*a, &mut |da| axpy(da, gd[0], vb.data()));
                acc(*b, &mut |db| axpy(db, gd[0], va.data()));
            }
            Op::Add(a, b) => {
                acc(*a, &mut |da| axpy(da, 1.0, gd));
                acc(*b, &mut |db| axpy(db, 1.0, gd));
            }
            Op::AddScalar(a, s) => {
                acc(*a, &mut |da| axpy(da, 1.0, gd));
                acc(*s, &mut |ds| ds[0] += gd.iter().sum::<f64>());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&values[a.0], &values[b.0]);
                acc(*a, &mut |da| {
                    for ((d, gi), y) in da.iter_mut().zip(gd).zip(vb.data()) {
                        *d += gi * y;
                    }
                });
                acc(*b, &mut |db| {
                    for ((d, gi), x) in db.iter_mut().zip(gd).zip(va.data()) {
                        *d += gi * x;
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |da| axpy(da, *c, gd)),
            Op::Sum(a) => acc(*a, &mut |da| da.iter_mut().for_each(|d| *d += gd[0])),
            Op::Concat(items) => {
                let width = g.last_dim();
                let rows = g.outer_len();
                let mut offset = 0;
                for id in items {
                    let w = values[id.0].last_dim();
                    acc(*id, &mut |di| {
                        for r in 0..rows {
                            axpy(
                                &mut di[r * w..(r + 1) * w],
                                1.0,
                                &gd[r * width + offset..r * width + offset + w],
                            );
                        }
                    });
                    offset += w;
                }
            }
            Op::Stack(items) => {
                let w = g.last_dim();
                for (r, id) in items.iter().enumerate() {
                    acc(*id, &mut |di| axpy(di, 1.0, &gd[r * w..(r + 1) * w]));
                }
            }
            Op::Row(a, i) => {
                let w = gd.len();
                acc(*a, &mut |da| axpy(&mut da[i * w..(i + 1) * w], 1.0, gd));
            }
            Op::Slice(a, start) => {
                acc(*a, &mut |da| axpy(&mut da[*start..start + gd.len()], 1.0, gd));
            }
            Op::Sigmoid(a) => {
                let y = values[idx].data();
                acc(*a, &mut |da| {
                    for ((d, gi), yi) in da.iter_mut().zip(gd).zip(y) {
                        *d += gi * yi * (1.0 - yi);
                    }
                });
            }
            Op::Tanh(a) => {
                let y = values[idx].data();
                acc(*a, &mut |da| {
                    for ((d, gi), yi) in da.iter_mut().zip(gd).zip(y) {
                        *d += gi * (1.0 - yi * yi);
                    }
                });
            }
            Op::Softmax(a) => {
                let y = values[idx].data();
                let inner = dot(y, gd);
                acc(*a, &mut |da| {
                    for ((d, gi), yi) in da.iter_mut().zip(gd).zip(y) {
                        *d += yi * (gi - inner);
                    }
                });
            }
            Op::Gather(table, indices) => {
                let d = g.last_dim();
                acc(*table, &mut |dt| {
                    for (r, &i) in indices.iter().enumerate() {
                        axpy(&mut dt[i * d..(i + 1) * d], 1.0, &gd[r * d..(r + 1) * d]);
                    }
                });
            }
            Op::Conv1d {
                input,
                weight,
                bias,
                window,
            } => {
                let (vx, vw) = (&values[input.0], &values[weight.0]);
                let (len, c_in) = vx.dims2().unwrap();
                let (filters, span) = vw.dims2().unwrap();
                let steps = g.outer_len();
                let real = |t: usize| (*window).min(len.saturating_sub(t));
                acc(*input, &mut |dx| {
                    for t in 0..steps {
                        let n = real(t) * c_in;
                        let dxs = &mut dx[t * c_in..t * c_in + n];
                        for f in 0..filters {
                            axpy(dxs, gd[t * filters + f], &vw.data()[f * span..f * span + n]);
                        }
                    }
                });
                acc(*weight, &mut |dw| {
                    for t in 0..steps {
                        let n = real(t) * c_in;
                        let xs = &vx.data()[t * c_in..t * c_in + n];
                        for f in 0..filters {
                            axpy(&mut dw[f * span..f * span + n], gd[t * filters + f], xs);
                        }
                    }
                });
                acc(*bias, &mut |db| {
                    for t in 0..steps {
                        axpy(db, 1.0, &gd[t * filters..(t + 1) * filters]);
                    }
                });
            }
            Op::MaxPool(a, arg) => {
                let c = gd.len();
                acc(*a, &mut |da| {
                    for (j, &r) in arg.iter().enumerate() {
                        da[r * c + j] += gd[j];
                    }
                });
            }
            Op::Dropout(a, mask) => {
                let m = mask.data();
                acc(*a, &mut |da| {
                    for (i, (d, gi)) in da.iter_mut().zip(gd).enumerate() {
                        *d += gi * m[i % m.len()];
                    }
                });
            }
            Op::LstmCell {
                x,
                h,
                c,
                w,
                b,
                saved,
            } => {
                let hid = values[h.0].len();
                let d_in = values[x.0].len();
                let span = d_in + hid;
                let c_prev = values[c.0].data();
                let (gi, gf, gg, go, tc) = (
                    &saved[..hid],
                    &saved[hid..2 * hid],
                    &saved[2 * hid..3 * hid],
                    &saved[3 * hid..4 * hid],
                    &saved[4 * hid..],
                );
                let (dh, dc_out) = gd.split_at(hid);
                let mut dz = vec![0.0; 4 * hid];
                let mut dc_prev = vec![0.0; hid];
                for k in 0..hid {
                    let dc = dc_out[k] + dh[k] * go[k] * (1.0 - tc[k] * tc[k]);
                    dc_prev[k] = dc * gf[k];
                    dz[k] = dc * gg[k] * gi[k] * (1.0 - gi[k]);
                    dz[hid + k] = dc * c_prev[k] * gf[k] * (1.0 - gf[k]);
                    dz[2 * hid + k] = dc * gi[k] * (1.0 - gg[k] * gg[k]);
                    dz[3 * hid + k] = dh[k] * tc[k] * go[k] * (1.0 - go[k]);
                }
                let wd = values[w.0].data();
                if rg[x.0] || rg[h.0] {
                    let mut dxh = vec![0.0; span];
                    for (r, &dzr) in dz.iter().enumerate() {
                        if dzr != 0.0 {
                            axpy(&mut dxh, dzr, &wd[r * span..(r + 1) * span]);
                        }
                    }
                    acc(*x, &mut |dx| axpy(dx, 1.0, &dxh[..d_in]));
                    acc(*h, &mut |dhp| axpy(dhp, 1.0, &dxh[d_in..]));
                }
                acc(*c, &mut |dcp| axpy(dcp, 1.0, &dc_prev));
                let (xv, hv) = (values[x.0].data(), values[h.0].data());
                acc(*w, &mut |dw| {
                    for (r, &dzr) in dz.iter().enumerate() {
                        if dzr == 0.0 {
                            continue;
                        }
                        let row = &mut dw[r * span..(r + 1) * span];
                        axpy(&mut row[..d_in], dzr, xv);
                        axpy(&mut row[d_in..], dzr, hv);
                    }
                });
                acc(*b, &mut |db| axpy(db, 1.0, &dz));
            }
            Op::Bce { p, label, clamped } => {
                if !clamped {
                    let q = values[p.0].item();
                    let local = -label / q + (1.0 - label) / (1.0 - q);
                    acc(*p, &mut |dp| dp[0] += gd[0] * local);
                }
            }
        }
    }
}

fn accumulate(
    grads: &mut [Option<Tensor>],
    values: &[Tensor],
    id: NodeId,
    f: impl FnOnce(&mut [f64]),
) {
    let slot = grads[id.0].get_or_insert_with(|| Tensor::zeros(values[id.0].shape()));
    f(slot.data_mut());
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn map(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(a.shape().to_vec(), a.data().iter().map(|&x| f(x)).collect())
        .expect("map preserves shape")
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::new(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
    .expect("zip_map preserves shape")
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax; errors on an empty input.
pub fn softmax(x: &[f64]) -> Result<Vec<f64>> {
    let max = x
        .iter()
        .copied()
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))
        .ok_or(Error::EmptySoftmax)?;
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}
