//! Tape-recorded reverse-mode differentiation.
//!
//! A [`Tape`] is a topologically ordered record of primitive operations.
//! Recording an operation evaluates it immediately; [`Tape::backward`]
//! walks the record in reverse and produces one adjoint per node, which is
//! then accumulated into the [`ParamStore`] gradients. Replaying the record
//! reproduces every forward value bit for bit because record and replay
//! share the same evaluation kernels.

use crate::{Error, Result};

use super::{Array, ParamId, ParamStore};

pub type NodeId = usize;

/// A primitive operation linking node values to their inputs.
#[derive(Clone, Debug)]
pub enum Op {
    /// Leaf holding a constant input value.
    Input,
    /// Leaf holding a copy of a parameter value.
    Param(ParamId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Neg(NodeId),
    Scale(NodeId, f64),
    AddConst(NodeId, f64),
    Exp(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    /// `x [B,in] . w [in,out] + b [out]`.
    Affine { x: NodeId, w: NodeId, b: NodeId },
    /// Length-preserving 1-D convolution, stride 1, zero padding.
    /// `x [B,Cin,L]`, `w [Cout,Cin,K]` (K odd), `b [Cout]`.
    Conv1d { x: NodeId, w: NodeId, b: NodeId },
    /// Per-channel standardization with scale and shift. `mean`/`var` are the
    /// statistics used in the forward pass; `batch_stats` records whether they
    /// were computed from the batch (gradients flow through them) or frozen.
    BatchNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: Vec<f64>,
        var: Vec<f64>,
        eps: f64,
        batch_stats: bool,
    },
    /// `[B,d] -> [B]` sum over axis 1.
    RowSum(NodeId),
    /// Sum of all entries, yielding a scalar.
    SumAll(NodeId),
    /// Concatenate along axis 1: `[B,d1] ++ [B,d2] -> [B,d1+d2]`.
    Concat(NodeId, NodeId),
    /// Columns `start..start+len` of a `[B,d]` array.
    Slice { x: NodeId, start: usize, len: usize },
    Reshape(NodeId),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Array,
}

/// Gradients produced by a backward pass, keyed by parameter id in leaf
/// recording order.
#[derive(Debug, Default)]
pub struct Gradients {
    entries: Vec<(ParamId, Vec<f64>)>,
}

impl Gradients {
    /// Accumulate every entry whose parameter lives in `store`.
    /// Returns the number of entries applied.
    pub fn accumulate(&self, store: &mut ParamStore) -> Result<usize> {
        let mut applied = 0;
        for (id, grad) in &self.entries {
            if store.get(*id).is_some() {
                store.accumulate_grad(*id, grad)?;
                applied += 1;
            }
        }
        Ok(applied)
    }

    pub fn entries(&self) -> &[(ParamId, Vec<f64>)] {
        &self.entries
    }
}

/// Topologically ordered record of a forward computation.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array {
        &self.nodes[id].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id].value.shape()
    }

    fn push(&mut self, op: Op, value: Array) -> NodeId {
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    fn push_eval(&mut self, op: Op) -> Result<NodeId> {
        let value = eval_op(&op, |i| &self.nodes[i].value)?;
        Ok(self.push(op, value))
    }

    // ---- leaves -------------------------------------------------------

    pub fn input(&mut self, value: Array) -> NodeId {
        self.push(Op::Input, value)
    }

    /// Record a parameter leaf. The current value is copied onto the tape;
    /// the id must refer to a live parameter in `store`.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<NodeId> {
        let value = store
            .get(id)
            .ok_or_else(|| Error::Shape(format!("parameter {:?} is not in the store", id)))?
            .value
            .clone();
        Ok(self.push(Op::Param(id), value))
    }

    // ---- elementwise ---------------------------------------------------

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push_eval(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push_eval(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push_eval(Op::Mul(a, b))
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId> {
        self.push_eval(Op::Neg(a))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> Result<NodeId> {
        self.push_eval(Op::Scale(a, k))
    }

    pub fn add_const(&mut self, a: NodeId, k: f64) -> Result<NodeId> {
        self.push_eval(Op::AddConst(a, k))
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.push_eval(Op::Exp(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.push_eval(Op::Tanh(a))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.push_eval(Op::Relu(a))
    }

    // ---- linear maps ----------------------------------------------------

    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        self.push_eval(Op::Affine { x, w, b })
    }

    pub fn conv1d(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        self.push_eval(Op::Conv1d { x, w, b })
    }

    /// Record batch normalization with explicit statistics. Callers in
    /// training mode pass the batch statistics (and set `batch_stats`), in
    /// inference mode the frozen running statistics.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: Vec<f64>,
        var: Vec<f64>,
        eps: f64,
        batch_stats: bool,
    ) -> Result<NodeId> {
        self.push_eval(Op::BatchNorm { x, gamma, beta, mean, var, eps, batch_stats })
    }

    // ---- reductions and layout ------------------------------------------

    pub fn row_sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.push_eval(Op::RowSum(a))
    }

    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId> {
        self.push_eval(Op::SumAll(a))
    }

    /// Mean of all entries (sum followed by a scale).
    pub fn mean_all(&mut self, a: NodeId) -> Result<NodeId> {
        let n = self.nodes[a].value.len();
        let s = self.sum_all(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push_eval(Op::Concat(a, b))
    }

    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        self.push_eval(Op::Slice { x, start, len })
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let n: usize = shape.iter().product();
        if n != self.nodes[a].value.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {} elements into {:?}",
                self.nodes[a].value.len(),
                shape
            )));
        }
        let value = Array::new(shape, self.nodes[a].value.data().to_vec())?;
        Ok(self.push(Op::Reshape(a), value))
    }

    // ---- backward --------------------------------------------------------

    /// Reverse pass from a scalar output. Returns per-parameter gradients
    /// in leaf order; accumulate them with [`Gradients::accumulate`].
    pub fn backward(&self, output: NodeId) -> Result<Gradients> {
        let out = &self.nodes[output].value;
        if !out.is_scalar() {
            return Err(Error::Shape(format!(
                "backward requires a scalar output, got shape {:?}",
                out.shape()
            )));
        }

        let mut adjoints: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adjoints[output] = Some(vec![1.0]);

        for i in (0..=output).rev() {
            let Some(grad) = adjoints[i].take() else { continue };
            self.propagate(i, &grad, &mut adjoints)?;
            adjoints[i] = Some(grad);
        }

        let mut entries = Vec::new();
        for (i, node) in self.nodes.iter().enumerate().take(output + 1) {
            if let Op::Param(id) = node.op {
                let grad = adjoints[i].take().unwrap_or_else(|| vec![0.0; node.value.len()]);
                entries.push((id, grad));
            }
        }
        Ok(Gradients { entries })
    }

    /// Backward pass that immediately accumulates into `store`.
    pub fn backward_into(&self, output: NodeId, store: &mut ParamStore) -> Result<()> {
        self.backward(output)?.accumulate(store)?;
        Ok(())
    }

    fn add_adjoint(adjoints: &mut [Option<Vec<f64>>], id: NodeId, len: usize, f: impl FnOnce(&mut [f64])) {
        let slot = adjoints[id].get_or_insert_with(|| vec![0.0; len]);
        f(slot);
    }

    fn propagate(&self, i: NodeId, grad: &[f64], adjoints: &mut [Option<Vec<f64>>]) -> Result<()> {
        let val = |id: NodeId| self.nodes[id].value.data();
        let len = |id: NodeId| self.nodes[id].value.len();

        match &self.nodes[i].op {
            Op::Input | Op::Param(_) => {}
            Op::Add(a, b) => {
                Self::add_adjoint(adjoints, *a, len(*a), |s| {
                    for (x, g) in s.iter_mut().zip(grad) {
                        *x += g;
                    }
                });
                Self::add_adjoint(adjoints, *b, len(*b), |s| {
                    for (x, g) in s.iter_mut().zip(grad) {
                        *x += g;
                    }
                });
            }
            Op::Sub(a, b) => {
                Self::add_adjoint(adjoints, *a, len(*a), |s| {
                    for (x, g) in s.iter_mut().zip(grad) {
                        *x += g;
                    }
                });
                Self::add_adjoint(adjoints, *b, len(*b), |s| {
                    for (x, g) in s.iter_mut().zip(grad) {
                        *x -= g;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a).to_vec(), val(*b).to_vec());
                Self::add_adjoint(adjoints, *a, len(*a), |s| {
                    for ((x, g), y) in s.iter_mut().zip(grad).zip(&vb) {
                        *x += g * y;
                    }
                });
                Self::add_adjoint(adjoints, *b, len(*b), |s| {
                    for ((x, g), y) in s.iter_mut().zip(grad).zip(&va) {
                        *x += g * y;
                    }
                });
            }
            Op::Neg(a) => {
                Self::add_adjoint(adjoints, *a, len(*a), |s| {
                    for (x, g) in s.iter_mut().zip(grad) {
                        *x -= g;
                    }
                });
            }
            Op::Scale(a, k) => {
                let k = *k;
                Self::add_adjoint(adjoints, *a, len(*a), |s| {
                    for (x, g) in s.iter_mut().zip(grad) {
                        *x += g * k;
                    }
                });
            }
            Op::AddConst(a, _) => {
                Self::add_adjoint(adjoints, *a, len(*a), |s| {
                    for (x, g) in s.iter_mut().zip(grad) {
                        *x += g;
                    }
                });
            }
            Op::Exp(a) => {
                let y = self.nodes[i].value.data().to_vec();
                Self::add_adjoint(adjoints, *a, len(*a), |s| {
                    for ((x, g), y) in s.iter_mut().zip(grad).zip(&y) {
                        *x += g * y;
                    }
                });
            }
            Op::Tanh(a) => {
                let y = self.nodes[i].value.data().to_vec();
                Self::add_adjoint(adjoints, *a, len(*a), |s| {
                    for ((x, g), y) in s.iter_mut().zip(grad).zip(&y) {
                        *x += g * (1.0 - y * y);
                    }
                });
            }
            Op::Relu(a) => {
                let xin = val(*a).to_vec();
                Self::add_adjoint(adjoints, *a, len(*a), |s| {
                    for ((x, g), v) in s.iter_mut().zip(grad).zip(&xin) {
                        if *v > 0.0 {
                            *x += g;
                        }
                    }
                });
            }
            Op::Affine { x, w, b } => {
                let (bsz, in_dim) = (self.shape(*x)[0], self.shape(*x)[1]);
                let out_dim = self.shape(*w)[1];
                let xv = val(*x).to_vec();
                let wv = val(*w).to_vec();
                Self::add_adjoint(adjoints, *x, len(*x), |s| {
                    for r in 0..bsz {
                        for ii in 0..in_dim {
                            let mut acc = 0.0;
                            for o in 0..out_dim {
                                acc += grad[r * out_dim + o] * wv[ii * out_dim + o];
                            }
                            s[r * in_dim + ii] += acc;
                        }
                    }
                });
                Self::add_adjoint(adjoints, *w, len(*w), |s| {
                    for r in 0..bsz {
                        for ii in 0..in_dim {
                            let xv_ri = xv[r * in_dim + ii];
                            for o in 0..out_dim {
                                s[ii * out_dim + o] += xv_ri * grad[r * out_dim + o];
                            }
                        }
                    }
                });
                Self::add_adjoint(adjoints, *b, len(*b), |s| {
                    for r in 0..bsz {
                        for o in 0..out_dim {
                            s[o] += grad[r * out_dim + o];
                        }
                    }
                });
            }
            Op::Conv1d { x, w, b } => {
                let (bsz, cin, l) = {
                    let sh = self.shape(*x);
                    (sh[0], sh[1], sh[2])
                };
                let (cout, ksz) = {
                    let sh = self.shape(*w);
                    (sh[0], sh[2])
                };
                let pad = (ksz - 1) / 2;
                let xv = val(*x).to_vec();
                let wv = val(*w).to_vec();
                Self::add_adjoint(adjoints, *x, len(*x), |s| {
                    for bi in 0..bsz {
                        for co in 0..cout {
                            for pos in 0..l {
                                let g = grad[(bi * cout + co) * l + pos];
                                if g == 0.0 {
                                    continue;
                                }
                                for ci in 0..cin {
                                    for j in 0..ksz {
                                        let t = pos + j;
                                        if t < pad || t - pad >= l {
                                            continue;
                                        }
                                        s[(bi * cin + ci) * l + (t - pad)] +=
                                            g * wv[(co * cin + ci) * ksz + j];
                                    }
                                }
                            }
                        }
                    }
                });
                Self::add_adjoint(adjoints, *w, len(*w), |s| {
                    for bi in 0..bsz {
                        for co in 0..cout {
                            for pos in 0..l {
                                let g = grad[(bi * cout + co) * l + pos];
                                if g == 0.0 {
                                    continue;
                                }
                                for ci in 0..cin {
                                    for j in 0..ksz {
                                        let t = pos + j;
                                        if t < pad || t - pad >= l {
                                            continue;
                                        }
                                        s[(co * cin + ci) * ksz + j] +=
                                            g * xv[(bi * cin + ci) * l + (t - pad)];
                                    }
                                }
                            }
                        }
                    }
                });
                Self::add_adjoint(adjoints, *b, len(*b), |s| {
                    for bi in 0..bsz {
                        for co in 0..cout {
                            for pos in 0..l {
                                s[co] += grad[(bi * cout + co) * l + pos];
                            }
                        }
                    }
                });
            }
            Op::BatchNorm { x, gamma, beta, mean, var, eps, batch_stats } => {
                let (channels, per_channel) = bn_layout(self.shape(*x))?;
                let xv = val(*x).to_vec();
                let gv = val(*gamma).to_vec();
                let bsz = self.shape(*x)[0];
                let stride: usize = self.shape(*x)[2..].iter().product::<usize>().max(1);
                let m = (bsz * stride) as f64;
                debug_assert_eq!(per_channel, bsz * stride);

                // Per-channel sums needed by both the parameter and, in
                // batch-stat mode, the input adjoints.
                let mut sum_g = vec![0.0; channels];
                let mut sum_gx = vec![0.0; channels];
                for bi in 0..bsz {
                    for c in 0..channels {
                        for t in 0..stride {
                            let idx = (bi * channels + c) * stride + t;
                            let xhat = (xv[idx] - mean[c]) / (var[c] + eps).sqrt();
                            sum_g[c] += grad[idx];
                            sum_gx[c] += grad[idx] * xhat;
                        }
                    }
                }
                Self::add_adjoint(adjoints, *gamma, channels, |s| {
                    for c in 0..channels {
                        s[c] += sum_gx[c];
                    }
                });
                Self::add_adjoint(adjoints, *beta, channels, |s| {
                    for c in 0..channels {
                        s[c] += sum_g[c];
                    }
                });
                let batch_stats = *batch_stats;
                let (mean, var, eps) = (mean.clone(), var.clone(), *eps);
                Self::add_adjoint(adjoints, *x, len(*x), |s| {
                    for bi in 0..bsz {
                        for c in 0..channels {
                            let inv_s = 1.0 / (var[c] + eps).sqrt();
                            for t in 0..stride {
                                let idx = (bi * channels + c) * stride + t;
                                if batch_stats {
                                    let xhat = (xv[idx] - mean[c]) * inv_s;
                                    s[idx] += gv[c]
                                        * inv_s
                                        * (grad[idx] - sum_g[c] / m - xhat * sum_gx[c] / m);
                                } else {
                                    s[idx] += grad[idx] * gv[c] * inv_s;
                                }
                            }
                        }
                    }
                });
            }
            Op::RowSum(a) => {
                let cols = self.shape(*a)[1];
                Self::add_adjoint(adjoints, *a, len(*a), |s| {
                    for (r, g) in grad.iter().enumerate() {
                        for x in &mut s[r * cols..(r + 1) * cols] {
                            *x += g;
                        }
                    }
                });
            }
            Op::SumAll(a) => {
                let g = grad[0];
                Self::add_adjoint(adjoints, *a, len(*a), |s| {
                    for x in s.iter_mut() {
                        *x += g;
                    }
                });
            }
            Op::Concat(a, b) => {
                let (bsz, da) = (self.shape(*a)[0], self.shape(*a)[1]);
                let db = self.shape(*b)[1];
                let cols = da + db;
                Self::add_adjoint(adjoints, *a, len(*a), |s| {
                    for r in 0..bsz {
                        for c in 0..da {
                            s[r * da + c] += grad[r * cols + c];
                        }
                    }
                });
                Self::add_adjoint(adjoints, *b, len(*b), |s| {
                    for r in 0..bsz {
                        for c in 0..db {
                            s[r * db + c] += grad[r * cols + da + c];
                        }
                    }
                });
            }
            Op::Slice { x, start, len: slen } => {
                let (bsz, cols) = (self.shape(*x)[0], self.shape(*x)[1]);
                let (start, slen) = (*start, *slen);
                Self::add_adjoint(adjoints, *x, len(*x), |s| {
                    for r in 0..bsz {
                        for c in 0..slen {
                            s[r * cols + start + c] += grad[r * slen + c];
                        }
                    }
                });
            }
            Op::Reshape(a) => {
                Self::add_adjoint(adjoints, *a, len(*a), |s| {
                    for (x, g) in s.iter_mut().zip(grad) {
                        *x += g;
                    }
                });
            }
        }
        Ok(())
    }

    /// Re-evaluate every recorded operation from the leaves. The result is
    /// bit-identical to the recorded values; used to validate the record.
    pub fn replay(&self) -> Result<Vec<Array>> {
        let mut values: Vec<Array> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match &node.op {
                Op::Input | Op::Param(_) => node.value.clone(),
                Op::Reshape(a) => {
                    Array::new(node.value.shape().to_vec(), values[*a].data().to_vec())?
                }
                op => eval_op(op, |i| &values[i])?,
            };
            values.push(v);
        }
        Ok(values)
    }
}

/// Channel count and elements-per-channel of a batch-norm input.
fn bn_layout(shape: &[usize]) -> Result<(usize, usize)> {
    match shape.len() {
        2 => Ok((shape[1], shape[0])),
        3 => Ok((shape[1], shape[0] * shape[2])),
        _ => Err(Error::Shape(format!("batch norm expects [B,C] or [B,C,L], got {:?}", shape))),
    }
}

fn require_same_shape(a: &Array, b: &Array, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{} operands differ: {:?} vs {:?}",
            what,
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Evaluate one operation given a value lookup for its inputs.
fn eval_op<'a>(op: &Op, get: impl Fn(NodeId) -> &'a Array) -> Result<Array> {
    match op {
        Op::Input | Op::Param(_) => {
            Err(Error::Shape("leaf nodes carry their own values".into()))
        }
        Op::Add(a, b) => {
            let (a, b) = (get(*a), get(*b));
            require_same_shape(a, b, "add")?;
            let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
            Array::new(a.shape().to_vec(), data)
        }
        Op::Sub(a, b) => {
            let (a, b) = (get(*a), get(*b));
            require_same_shape(a, b, "sub")?;
            let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
            Array::new(a.shape().to_vec(), data)
        }
        Op::Mul(a, b) => {
            let (a, b) = (get(*a), get(*b));
            require_same_shape(a, b, "mul")?;
            let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
            Array::new(a.shape().to_vec(), data)
        }
        Op::Neg(a) => {
            let a = get(*a);
            Array::new(a.shape().to_vec(), a.data().iter().map(|x| -x).collect())
        }
        Op::Scale(a, k) => {
            let a = get(*a);
            Array::new(a.shape().to_vec(), a.data().iter().map(|x| x * k).collect())
        }
        Op::AddConst(a, k) => {
            let a = get(*a);
            Array::new(a.shape().to_vec(), a.data().iter().map(|x| x + k).collect())
        }
        Op::Exp(a) => {
            let a = get(*a);
            Array::new(a.shape().to_vec(), a.data().iter().map(|x| x.exp()).collect())
        }
        Op::Tanh(a) => {
            let a = get(*a);
            Array::new(a.shape().to_vec(), a.data().iter().map(|x| x.tanh()).collect())
        }
        Op::Relu(a) => {
            let a = get(*a);
            Array::new(a.shape().to_vec(), a.data().iter().map(|x| x.max(0.0)).collect())
        }
        Op::Affine { x, w, b } => {
            let (x, w, b) = (get(*x), get(*w), get(*b));
            if x.shape().len() != 2 || w.shape().len() != 2 {
                return Err(Error::Shape("affine expects 2-D input and weight".into()));
            }
            let (bsz, in_dim) = (x.dim(0), x.dim(1));
            let (win, out_dim) = (w.dim(0), w.dim(1));
            if win != in_dim || b.len() != out_dim {
                return Err(Error::Shape(format!(
                    "affine: x {:?}, w {:?}, b {:?}",
                    x.shape(),
                    w.shape(),
                    b.shape()
                )));
            }
            let (xv, wv, bv) = (x.data(), w.data(), b.data());
            let mut out = vec![0.0; bsz * out_dim];
            for r in 0..bsz {
                let row = &xv[r * in_dim..(r + 1) * in_dim];
                let dst = &mut out[r * out_dim..(r + 1) * out_dim];
                dst.copy_from_slice(bv);
                for (ii, &xi) in row.iter().enumerate() {
                    if xi == 0.0 {
                        continue;
                    }
                    let wrow = &wv[ii * out_dim..(ii + 1) * out_dim];
                    for (d, w) in dst.iter_mut().zip(wrow) {
                        *d += xi * w;
                    }
                }
            }
            Array::new(vec![bsz, out_dim], out)
        }
        Op::Conv1d { x, w, b } => {
            let (x, w, b) = (get(*x), get(*w), get(*b));
            if x.shape().len() != 3 || w.shape().len() != 3 {
                return Err(Error::Shape("conv1d expects [B,Cin,L] input and [Cout,Cin,K] weight".into()));
            }
            let (bsz, cin, l) = (x.dim(0), x.dim(1), x.dim(2));
            let (cout, wcin, ksz) = (w.dim(0), w.dim(1), w.dim(2));
            if wcin != cin || b.len() != cout || ksz % 2 == 0 {
                return Err(Error::Shape(format!(
                    "conv1d: x {:?}, w {:?}, b {:?}",
                    x.shape(),
                    w.shape(),
                    b.shape()
                )));
            }
            let pad = (ksz - 1) / 2;
            let (xv, wv, bv) = (x.data(), w.data(), b.data());
            let mut out = vec![0.0; bsz * cout * l];
            for bi in 0..bsz {
                for co in 0..cout {
                    for pos in 0..l {
                        let mut acc = bv[co];
                        for ci in 0..cin {
                            for j in 0..ksz {
                                let t = pos + j;
                                if t < pad || t - pad >= l {
                                    continue;
                                }
                                acc += xv[(bi * cin + ci) * l + (t - pad)]
                                    * wv[(co * cin + ci) * ksz + j];
                            }
                        }
                        out[(bi * cout + co) * l + pos] = acc;
                    }
                }
            }
            Array::new(vec![bsz, cout, l], out)
        }
        Op::BatchNorm { x, gamma, beta, mean, var, eps, .. } => {
            let (x, gamma, beta) = (get(*x), get(*gamma), get(*beta));
            let (channels, _) = bn_layout(x.shape())?;
            if gamma.len() != channels || beta.len() != channels || mean.len() != channels {
                return Err(Error::Shape("batch norm parameter length != channels".into()));
            }
            let bsz = x.dim(0);
            let stride: usize = x.shape()[2..].iter().product::<usize>().max(1);
            let (xv, gv, bv) = (x.data(), gamma.data(), beta.data());
            let mut out = vec![0.0; x.len()];
            for bi in 0..bsz {
                for c in 0..channels {
                    let inv_s = 1.0 / (var[c] + eps).sqrt();
                    for t in 0..stride {
                        let idx = (bi * channels + c) * stride + t;
                        out[idx] = gv[c] * (xv[idx] - mean[c]) * inv_s + bv[c];
                    }
                }
            }
            Array::new(x.shape().to_vec(), out)
        }
        Op::RowSum(a) => {
            let a = get(*a);
            if a.shape().len() != 2 {
                return Err(Error::Shape("row_sum expects a 2-D array".into()));
            }
            let (bsz, cols) = (a.dim(0), a.dim(1));
            let data = (0..bsz)
                .map(|r| a.data()[r * cols..(r + 1) * cols].iter().sum())
                .collect();
            Array::new(vec![bsz], data)
        }
        Op::SumAll(a) => Ok(Array::scalar(get(*a).data().iter().sum())),
        Op::Concat(a, b) => {
            let (a, b) = (get(*a), get(*b));
            if a.shape().len() != 2 || b.shape().len() != 2 || a.dim(0) != b.dim(0) {
                return Err(Error::Shape(format!(
                    "concat expects matching 2-D batches: {:?} vs {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
            let (bsz, da, db) = (a.dim(0), a.dim(1), b.dim(1));
            let mut out = Vec::with_capacity(bsz * (da + db));
            for r in 0..bsz {
                out.extend_from_slice(&a.data()[r * da..(r + 1) * da]);
                out.extend_from_slice(&b.data()[r * db..(r + 1) * db]);
            }
            Array::new(vec![bsz, da + db], out)
        }
        Op::Slice { x, start, len } => {
            let x = get(*x);
            if x.shape().len() != 2 || start + len > x.dim(1) {
                return Err(Error::Shape(format!(
                    "slice {}..{} out of bounds for {:?}",
                    start,
                    start + len,
                    x.shape()
                )));
            }
            let (bsz, cols) = (x.dim(0), x.dim(1));
            let mut out = Vec::with_capacity(bsz * len);
            for r in 0..bsz {
                out.extend_from_slice(&x.data()[r * cols + start..r * cols + start + len]);
            }
            Array::new(vec![bsz, *len], out)
        }
        Op::Reshape(_) => Err(Error::Shape("reshape is evaluated at record time".into())),
    }
}

/// Compute batch mean and biased variance per channel of `x`.
pub fn batch_stats(x: &Array) -> Result<(Vec<f64>, Vec<f64>)> {
    let (channels, per_channel) = bn_layout(x.shape())?;
    let bsz = x.dim(0);
    let stride: usize = x.shape()[2..].iter().product::<usize>().max(1);
    let m = per_channel as f64;
    let mut mean = vec![0.0; channels];
    let mut var = vec![0.0; channels];
    for bi in 0..bsz {
        for c in 0..channels {
            for t in 0..stride {
                mean[c] += x.data()[(bi * channels + c) * stride + t];
            }
        }
    }
    for mc in &mut mean {
        *mc /= m;
    }
    for bi in 0..bsz {
        for c in 0..channels {
            for t in 0..stride {
                let d = x.data()[(bi * channels + c) * stride + t] - mean[c];
                var[c] += d * d;
            }
        }
    }
    for vc in &mut var {
        *vc /= m;
    }
    Ok((mean, var))
}
