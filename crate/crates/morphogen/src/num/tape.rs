use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use super::store::{ParamId, ParamStore};
use super::tensor::{softmax, Tensor};
use super::{NumError, NumResult};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Where a node's forward value lives. Parameter leaves read straight from
/// the store (no copy); every computed node owns its value.
enum Slot {
    Owned(Tensor),
    Param(ParamId),
}

/// One recorded operation. Fields are the argument nodes; shapes were
/// validated when the node was pushed.
enum Op {
    Input,
    Param,
    /// w.x + b for a matrix w, vector x, vector b.
    Affine { w: Var, x: Var, b: Var },
    /// m.x for a matrix m and vector x.
    MatVec { m: Var, x: Var },
    /// m^T.x for a matrix m and vector x of length rows(m).
    MatTVec { m: Var, x: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, c: f64 },
    Sigmoid { a: Var },
    Tanh { a: Var },
    Concat { parts: Vec<Var> },
    Slice { a: Var, start: usize, len: usize },
    /// Sum of selected rows of a matrix node (embedding lookups).
    RowSum { m: Var, rows: Vec<usize> },
    /// Stack vector nodes of equal length into a matrix, one per row.
    Stack { rows: Vec<Var> },
    Softmax { a: Var },
    /// Elementwise product with a constant mask (dropout and friends).
    MaskMul { a: Var, mask: Tensor },
    /// Sum of scalar nodes into one scalar.
    SumScalars { parts: Vec<Var> },
    /// Stable softmax cross-entropy against a one-hot target index:
    /// loss = logsumexp(logits) - logits[target].
    CrossEntropy { logits: Var, target: usize },
}

struct Node {
    slot: Slot,
    op: Op,
}

/// Gradients of one backward pass keyed by parameter, ready to be folded
/// into a store with [`ParamStore::accumulate`].
pub struct ParamGrads(pub(crate) BTreeMap<usize, Tensor>);

impl ParamStore {
    /// Fold a backward pass's gradients into the per-parameter accumulators.
    pub fn accumulate(&mut self, grads: &ParamGrads) {
        for (&id, g) in &grads.0 {
            self.accumulate_grad(ParamId(id), g);
        }
    }
}

impl ParamGrads {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.0.get(&id.0)
    }
}

/// Reverse-mode autodiff tape over a parameter store.
///
/// A tape records one forward computation; [`Tape::backward`] consumes it and
/// returns gradients with respect to every parameter that was reachable from
/// the requested scalar root. Parameters never touched by the computation
/// simply do not appear in the result (their gradient is zero).
pub struct Tape<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
        }
    }

    fn push(&mut self, slot: Slot, op: Op) -> Var {
        self.nodes.push(Node { slot, op });
        Var(self.nodes.len() - 1)
    }

    /// Forward value of a node.
    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].slot {
            Slot::Owned(t) => t,
            Slot::Param(id) => self.store.value(*id),
        }
    }

    /// Constant leaf.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Slot::Owned(t), Op::Input)
    }

    /// Parameter leaf; the value is read from the store, not copied.
    pub fn param(&mut self, id: ParamId) -> Var {
        self.push(Slot::Param(id), Op::Param)
    }

    fn want_vector(&self, op: &'static str, v: Var) -> NumResult<usize> {
        let s = self.value(v).shape();
        if s.len() == 1 {
            Ok(s[0])
        } else {
            Err(NumError::ShapeMismatch {
                op,
                detail: format!("expected a vector, got shape {s:?}"),
            })
        }
    }

    fn want_matrix(&self, op: &'static str, v: Var) -> NumResult<(usize, usize)> {
        let s = self.value(v).shape();
        if s.len() == 2 {
            Ok((s[0], s[1]))
        } else {
            Err(NumError::ShapeMismatch {
                op,
                detail: format!("expected a matrix, got shape {s:?}"),
            })
        }
    }

    /// w.x + b.
    pub fn affine(&mut self, w: Var, x: Var, b: Var) -> NumResult<Var> {
        let (n, d) = self.want_matrix("affine", w)?;
        let dx = self.want_vector("affine", x)?;
        let db = self.want_vector("affine", b)?;
        if d != dx || n != db {
            return Err(NumError::ShapeMismatch {
                op: "affine",
                detail: format!("w is {n}x{d}, x has length {dx}, b has length {db}"),
            });
        }
        let wt = self.value(w);
        let xt = self.value(x);
        let bt = self.value(b);
        let mut out = bt.data().to_vec();
        for (i, o) in out.iter_mut().enumerate() {
            let row = wt.row(i);
            let mut acc = 0.0;
            for (wv, xv) in row.iter().zip(xt.data()) {
                acc += wv * xv;
            }
            *o += acc;
        }
        Ok(self.push(Slot::Owned(Tensor::vector(out)), Op::Affine { w, x, b }))
    }

    /// m.x.
    pub fn matvec(&mut self, m: Var, x: Var) -> NumResult<Var> {
        let (n, d) = self.want_matrix("matvec", m)?;
        let dx = self.want_vector("matvec", x)?;
        if d != dx {
            return Err(NumError::ShapeMismatch {
                op: "matvec",
                detail: format!("m is {n}x{d}, x has length {dx}"),
            });
        }
        let mt = self.value(m);
        let xt = self.value(x);
        let mut out = vec![0.0; n];
        for (i, o) in out.iter_mut().enumerate() {
            let row = mt.row(i);
            let mut acc = 0.0;
            for (mv, xv) in row.iter().zip(xt.data()) {
                acc += mv * xv;
            }
            *o = acc;
        }
        Ok(self.push(Slot::Owned(Tensor::vector(out)), Op::MatVec { m, x }))
    }

    /// m^T.x.
    pub fn mat_t_vec(&mut self, m: Var, x: Var) -> NumResult<Var> {
        let (n, d) = self.want_matrix("mat_t_vec", m)?;
        let dx = self.want_vector("mat_t_vec", x)?;
        if n != dx {
            return Err(NumError::ShapeMismatch {
                op: "mat_t_vec",
                detail: format!("m is {n}x{d}, x has length {dx}"),
            });
        }
        let mt = self.value(m);
        let xt = self.value(x);
        let mut out = vec![0.0; d];
        for i in 0..n {
            let xi = xt.data()[i];
            for (o, mv) in out.iter_mut().zip(mt.row(i)) {
                *o += xi * mv;
            }
        }
        Ok(self.push(Slot::Owned(Tensor::vector(out)), Op::MatTVec { m, x }))
    }

    fn want_same_shape(&self, op: &'static str, a: Var, b: Var) -> NumResult<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(NumError::ShapeMismatch {
                op,
                detail: format!(
                    "shapes {:?} and {:?} differ",
                    self.value(a).shape(),
                    self.value(b).shape()
                ),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> NumResult<Var> {
        self.want_same_shape("add", a, b)?;
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let t = Tensor::from_vec(&shape, out)?;
        Ok(self.push(Slot::Owned(t), Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> NumResult<Var> {
        self.want_same_shape("mul", a, b)?;
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let t = Tensor::from_vec(&shape, out)?;
        Ok(self.push(Slot::Owned(t), Op::Mul { a, b }))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out: Vec<f64> = self.value(a).data().iter().map(|x| c * x).collect();
        let shape = self.value(a).shape().to_vec();
        let t = Tensor::from_vec(&shape, out).expect("same shape");
        self.push(Slot::Owned(t), Op::Scale { a, c })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .map(|x| 1.0 / (1.0 + (-x).exp()))
            .collect();
        let shape = self.value(a).shape().to_vec();
        let t = Tensor::from_vec(&shape, out).expect("same shape");
        self.push(Slot::Owned(t), Op::Sigmoid { a })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out: Vec<f64> = self.value(a).data().iter().map(|x| x.tanh()).collect();
        let shape = self.value(a).shape().to_vec();
        let t = Tensor::from_vec(&shape, out).expect("same shape");
        self.push(Slot::Owned(t), Op::Tanh { a })
    }

    /// Concatenate vector nodes into one vector.
    pub fn concat(&mut self, parts: &[Var]) -> NumResult<Var> {
        let mut out = Vec::new();
        for &p in parts {
            self.want_vector("concat", p)?;
            out.extend_from_slice(self.value(p).data());
        }
        Ok(self.push(
            Slot::Owned(Tensor::vector(out)),
            Op::Concat {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Contiguous slice of a vector node.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> NumResult<Var> {
        let n = self.want_vector("slice", a)?;
        if start + len > n {
            return Err(NumError::IndexOutOfRange {
                op: "slice",
                index: start + len,
                limit: n,
            });
        }
        let out = self.value(a).data()[start..start + len].to_vec();
        Ok(self.push(Slot::Owned(Tensor::vector(out)), Op::Slice { a, start, len }))
    }

    /// Sum of the selected rows of a matrix node. `rows` may repeat.
    pub fn row_sum(&mut self, m: Var, rows: &[usize]) -> NumResult<Var> {
        let (n, d) = self.want_matrix("row_sum", m)?;
        let mut out = vec![0.0; d];
        for &r in rows {
            if r >= n {
                return Err(NumError::IndexOutOfRange {
                    op: "row_sum",
                    index: r,
                    limit: n,
                });
            }
            for (o, v) in out.iter_mut().zip(self.value(m).row(r)) {
                *o += v;
            }
        }
        Ok(self.push(
            Slot::Owned(Tensor::vector(out)),
            Op::RowSum {
                m,
                rows: rows.to_vec(),
            },
        ))
    }

    /// Stack equal-length vector nodes into a matrix, one node per row.
    pub fn stack(&mut self, rows: &[Var]) -> NumResult<Var> {
        if rows.is_empty() {
            return Err(NumError::InvalidArgument {
                op: "stack",
                detail: "cannot stack zero rows".into(),
            });
        }
        let d = self.want_vector("stack", rows[0])?;
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            let dr = self.want_vector("stack", r)?;
            if dr != d {
                return Err(NumError::ShapeMismatch {
                    op: "stack",
                    detail: format!("row lengths {d} and {dr} differ"),
                });
            }
            data.extend_from_slice(self.value(r).data());
        }
        let t = Tensor::from_vec(&[rows.len(), d], data)?;
        Ok(self.push(
            Slot::Owned(t),
            Op::Stack {
                rows: rows.to_vec(),
            },
        ))
    }

    /// Softmax over a vector node.
    pub fn softmax(&mut self, a: Var) -> NumResult<Var> {
        self.want_vector("softmax", a)?;
        let out = softmax(self.value(a).data());
        Ok(self.push(Slot::Owned(Tensor::vector(out)), Op::Softmax { a }))
    }

    /// Elementwise product with a constant mask of the same shape.
    pub fn mask_mul(&mut self, a: Var, mask: Tensor) -> NumResult<Var> {
        if self.value(a).shape() != mask.shape() {
            return Err(NumError::ShapeMismatch {
                op: "mask_mul",
                detail: format!(
                    "value shape {:?} vs mask shape {:?}",
                    self.value(a).shape(),
                    mask.shape()
                ),
            });
        }
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(mask.data())
            .map(|(x, m)| x * m)
            .collect();
        let shape = self.value(a).shape().to_vec();
        let t = Tensor::from_vec(&shape, out)?;
        Ok(self.push(Slot::Owned(t), Op::MaskMul { a, mask }))
    }

    /// Sum scalar nodes into one scalar.
    pub fn sum_scalars(&mut self, parts: &[Var]) -> NumResult<Var> {
        let mut acc = 0.0;
        for &p in parts {
            let t = self.value(p);
            if !t.is_scalar() {
                return Err(NumError::NotScalar {
                    op: "sum_scalars",
                    shape: t.shape().to_vec(),
                });
            }
            acc += t.item();
        }
        Ok(self.push(
            Slot::Owned(Tensor::scalar(acc)),
            Op::SumScalars {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Softmax cross-entropy of a logit vector against a target index,
    /// computed stably as `logsumexp(logits) - logits[target]`.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> NumResult<Var> {
        let n = self.want_vector("cross_entropy", logits)?;
        if target >= n {
            return Err(NumError::IndexOutOfRange {
                op: "cross_entropy",
                index: target,
                limit: n,
            });
        }
        let xs = self.value(logits).data();
        let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
        let loss = lse - xs[target];
        Ok(self.push(
            Slot::Owned(Tensor::scalar(loss)),
            Op::CrossEntropy { logits, target },
        ))
    }

    /// Run reverse-mode accumulation from a scalar root. Consumes the tape
    /// and returns the gradient of the root with respect to every parameter
    /// node that influences it.
    pub fn backward(self, root: Var) -> NumResult<ParamGrads> {
        let root_t = self.value(root);
        if !root_t.is_scalar() {
            return Err(NumError::NotScalar {
                op: "backward",
                shape: root_t.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));

        // Walk the tape backwards, pushing each node's adjoint into its
        // arguments. Nodes with no adjoint never influenced the root.
        for i in (0..self.nodes.len()).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[i].op {
                Op::Input | Op::Param => {
                    grads[i] = Some(g); // keep for the final sweep
                    continue;
                }
                Op::Affine { w, x, b } => {
                    let (n, d) = (self.value(*w).rows(), self.value(*w).cols());
                    let xt = self.value(*x).data().to_vec();
                    let wt = self.value(*w);
                    // gw += g (outer) x ; gx += w^T g ; gb += g
                    {
                        let gw = Self::slot(&mut grads, w.0, &[n, d]);
                        for r in 0..n {
                            let gr = g.data()[r];
                            for (o, xv) in gw.row_mut(r).iter_mut().zip(&xt) {
                                *o += gr * xv;
                            }
                        }
                    }
                    {
                        let gx = Self::slot(&mut grads, x.0, &[d]);
                        for r in 0..n {
                            let gr = g.data()[r];
                            for (o, wv) in gx.data_mut().iter_mut().zip(wt.row(r)) {
                                *o += gr * wv;
                            }
                        }
                    }
                    let gb = Self::slot(&mut grads, b.0, &[n]);
                    for (o, gv) in gb.data_mut().iter_mut().zip(g.data()) {
                        *o += gv;
                    }
                }
                Op::MatVec { m, x } => {
                    let (n, d) = (self.value(*m).rows(), self.value(*m).cols());
                    let xt = self.value(*x).data().to_vec();
                    let mt = self.value(*m);
                    {
                        let gm = Self::slot(&mut grads, m.0, &[n, d]);
                        for r in 0..n {
                            let gr = g.data()[r];
                            for (o, xv) in gm.row_mut(r).iter_mut().zip(&xt) {
                                *o += gr * xv;
                            }
                        }
                    }
                    let gx = Self::slot(&mut grads, x.0, &[d]);
                    for r in 0..n {
                        let gr = g.data()[r];
                        for (o, mv) in gx.data_mut().iter_mut().zip(mt.row(r)) {
                            *o += gr * mv;
                        }
                    }
                }
                Op::MatTVec { m, x } => {
                    // y = m^T x : gm[r, :] += x[r] * g ; gx[r] += m[r, :].g
                    let (n, d) = (self.value(*m).rows(), self.value(*m).cols());
                    let xt = self.value(*x).data().to_vec();
                    let mt = self.value(*m);
                    {
                        let gm = Self::slot(&mut grads, m.0, &[n, d]);
                        for r in 0..n {
                            let xv = xt[r];
                            for (o, gv) in gm.row_mut(r).iter_mut().zip(g.data()) {
                                *o += xv * gv;
                            }
                        }
                    }
                    let gx = Self::slot(&mut grads, x.0, &[n]);
                    for r in 0..n {
                        let mut acc = 0.0;
                        for (mv, gv) in mt.row(r).iter().zip(g.data()) {
                            acc += mv * gv;
                        }
                        gx.data_mut()[r] += acc;
                    }
                }
                Op::Add { a, b } => {
                    let shape = self.value(*a).shape().to_vec();
                    for child in [a, b] {
                        let gc = Self::slot(&mut grads, child.0, &shape);
                        for (o, gv) in gc.data_mut().iter_mut().zip(g.data()) {
                            *o += gv;
                        }
                    }
                }
                Op::Mul { a, b } => {
                    let shape = self.value(*a).shape().to_vec();
                    let at = self.value(*a).data().to_vec();
                    let bt = self.value(*b).data().to_vec();
                    {
                        let ga = Self::slot(&mut grads, a.0, &shape);
                        for ((o, gv), bv) in ga.data_mut().iter_mut().zip(g.data()).zip(&bt) {
                            *o += gv * bv;
                        }
                    }
                    let gb = Self::slot(&mut grads, b.0, &shape);
                    for ((o, gv), av) in gb.data_mut().iter_mut().zip(g.data()).zip(&at) {
                        *o += gv * av;
                    }
                }
                Op::Scale { a, c } => {
                    let shape = self.value(*a).shape().to_vec();
                    let c = *c;
                    let ga = Self::slot(&mut grads, a.0, &shape);
                    for (o, gv) in ga.data_mut().iter_mut().zip(g.data()) {
                        *o += c * gv;
                    }
                }
                Op::Sigmoid { a } => {
                    let y = self.value(Var(i)).data().to_vec();
                    let shape = self.value(*a).shape().to_vec();
                    let ga = Self::slot(&mut grads, a.0, &shape);
                    for ((o, gv), yv) in ga.data_mut().iter_mut().zip(g.data()).zip(&y) {
                        *o += gv * yv * (1.0 - yv);
                    }
                }
                Op::Tanh { a } => {
                    let y = self.value(Var(i)).data().to_vec();
                    let shape = self.value(*a).shape().to_vec();
                    let ga = Self::slot(&mut grads, a.0, &shape);
                    for ((o, gv), yv) in ga.data_mut().iter_mut().zip(g.data()).zip(&y) {
                        *o += gv * (1.0 - yv * yv);
                    }
                }
                Op::Concat { parts } => {
                    let parts = parts.clone();
                    let mut off = 0;
                    for p in parts {
                        let len = self.value(p).len();
                        let gp = Self::slot(&mut grads, p.0, &[len]);
                        for (o, gv) in gp.data_mut().iter_mut().zip(&g.data()[off..off + len]) {
                            *o += gv;
                        }
                        off += len;
                    }
                }
                Op::Slice { a, start, len } => {
                    let (start, len) = (*start, *len);
                    let n = self.value(*a).len();
                    let ga = Self::slot(&mut grads, a.0, &[n]);
                    for (o, gv) in ga.data_mut()[start..start + len].iter_mut().zip(g.data()) {
                        *o += gv;
                    }
                }
                Op::RowSum { m, rows } => {
                    let rows = rows.clone();
                    let (n, d) = (self.value(*m).rows(), self.value(*m).cols());
                    let gm = Self::slot(&mut grads, m.0, &[n, d]);
                    for r in rows {
                        for (o, gv) in gm.row_mut(r).iter_mut().zip(g.data()) {
                            *o += gv;
                        }
                    }
                }
                Op::Stack { rows } => {
                    let rows = rows.clone();
                    let d = self.value(Var(i)).cols();
                    for (r, p) in rows.into_iter().enumerate() {
                        let gp = Self::slot(&mut grads, p.0, &[d]);
                        for (o, gv) in gp.data_mut().iter_mut().zip(&g.data()[r * d..(r + 1) * d])
                        {
                            *o += gv;
                        }
                    }
                }
                Op::Softmax { a } => {
                    // gx = y * (g - (g . y))
                    let y = self.value(Var(i)).data().to_vec();
                    let dot: f64 = g.data().iter().zip(&y).map(|(gv, yv)| gv * yv).sum();
                    let ga = Self::slot(&mut grads, a.0, &[y.len()]);
                    for ((o, gv), yv) in ga.data_mut().iter_mut().zip(g.data()).zip(&y) {
                        *o += yv * (gv - dot);
                    }
                }
                Op::MaskMul { a, mask } => {
                    let mask = mask.clone();
                    let shape = self.value(*a).shape().to_vec();
                    let ga = Self::slot(&mut grads, a.0, &shape);
                    for ((o, gv), mv) in ga.data_mut().iter_mut().zip(g.data()).zip(mask.data()) {
                        *o += gv * mv;
                    }
                }
                Op::SumScalars { parts } => {
                    let parts = parts.clone();
                    let gv = g.item();
                    for p in parts {
                        let gp = Self::slot(&mut grads, p.0, &[]);
                        gp.data_mut()[0] += gv;
                    }
                }
                Op::CrossEntropy { logits, target } => {
                    let (logits, target) = (*logits, *target);
                    let probs = softmax(self.value(logits).data());
                    let gv = g.item();
                    let gl = Self::slot(&mut grads, logits.0, &[probs.len()]);
                    for (j, (o, pv)) in gl.data_mut().iter_mut().zip(&probs).enumerate() {
                        *o += gv * (pv - if j == target { 1.0 } else { 0.0 });
                    }
                }
            }
        }

        // Collect adjoints of parameter leaves. The same parameter may have
        // been leased as several nodes; sum them.
        let mut out: BTreeMap<usize, Tensor> = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Slot::Param(id), Some(g)) = (&node.slot, &grads[i]) {
                match out.get_mut(&id.0) {
                    Some(acc) => {
                        for (o, gv) in acc.data_mut().iter_mut().zip(g.data()) {
                            *o += gv;
                        }
                    }
                    None => {
                        out.insert(id.0, g.clone());
                    }
                }
            }
        }
        Ok(ParamGrads(out))
    }

    /// Fetch-or-create the gradient buffer for node `idx`.
    fn slot<'g>(grads: &'g mut [Option<Tensor>], idx: usize, shape: &[usize]) -> &'g mut Tensor {
        if grads[idx].is_none() {
            grads[idx] = Some(Tensor::zeros(shape));
        }
        grads[idx].as_mut().unwrap()
    }
}

/// Inverted-dropout mask: each component keeps with probability `1 - rate`
/// and is scaled by `1 / (1 - rate)`, so the expectation is the identity.
/// `rate` must lie in `[0, 1)`.
pub fn dropout_mask(len: usize, rate: f64, rng: &mut ChaCha20Rng) -> NumResult<Tensor> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NumError::InvalidArgument {
            op: "dropout_mask",
            detail: format!("rate {rate} must lie in [0, 1)"),
        });
    }
    let keep = 1.0 - rate;
    let data: Vec<f64> = (0..len)
        .map(|_| {
            if rng.random_range(0.0..1.0) < keep {
                1.0 / keep
            } else {
                0.0
            }
        })
        .collect();
    Ok(Tensor::vector(data))
}
