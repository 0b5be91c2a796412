//! Reverse-mode automatic differentiation over a recorded tensor-op graph.
//!
//! A [`Graph`] records every operation of a forward pass; [`Graph::backward`]
//! replays the tape in reverse and accumulates gradients for every node that
//! requires them. Nodes whose inputs are all constants propagate no gradient,
//! so frozen weights cost nothing extra on the backward pass.
//!
//! Every op has a fixed, single-threaded accumulation order: identical inputs
//! produce bit-identical outputs and gradients.

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::tensor::{dot, mm_nn, mm_nt, mm_tn, Element, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<E> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// out = x + bias, bias shape [d] broadcast over all rows of x.
    AddBias { x: usize, bias: usize },
    /// x [B, N, d] scaled per batch row-group by s [B, d].
    ScaleRows { x: usize, s: usize },
    /// x [B, N, d] shifted per batch row-group by s [B, d].
    AddRows { x: usize, s: usize },
    /// out = x * mul + add; only mul matters on the backward pass.
    Affine { x: usize, mul: E },
    /// a [B?, m, k] @ b [B?, k, n]; b may be rank-2 and shared across batch.
    Matmul { a: usize, b: usize },
    /// a [B?, m, k] @ b [B?, n, k]^T; b may be rank-2 and shared across batch.
    MatmulNT { a: usize, b: usize },
    Softmax { x: usize },
    RmsNorm { x: usize, gain: usize, inv_rms: Tensor<E> },
    /// Channel-pair rotation; cos/sin [s, d/2] are constants of the op.
    Rope { x: usize, cos: Tensor<E>, sin: Tensor<E> },
    Silu { x: usize },
    /// [B, N, H*dh] -> [B*H, N, dh]
    SplitHeads { x: usize, heads: usize },
    /// [B*H, N, dh] -> [B, N, H*dh]
    MergeHeads { x: usize, heads: usize },
    Concat { parts: Vec<usize>, axis: usize },
    Slice { x: usize, axis: usize, start: usize, len: usize },
    Reshape { x: usize },
    MeanAll { x: usize },
    /// Row lookup into a [M, d] table; ids are constants of the op.
    GatherRows { table: usize, ids: Vec<usize> },
}

struct Node<E> {
    value: Tensor<E>,
    op: Op<E>,
    requires_grad: bool,
}

/// Recorded operation graph for one forward pass.
pub struct Graph<E: Element> {
    nodes: RefCell<Vec<Node<E>>>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<E> {
    grads: Vec<Option<Tensor<E>>>,
}

impl<E: Element> Gradients<E> {
    pub fn get(&self, v: Var) -> Option<&Tensor<E>> {
        self.grads[v.0].as_ref()
    }
}

impl<E: Element> Default for Graph<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Graph<E> {
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
        }
    }

    fn push(&self, value: Tensor<E>, op: Op<E>, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    fn val(&self, v: Var) -> Tensor<E> {
        self.nodes.borrow()[v.0].value.clone()
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Register a differentiable leaf (a parameter).
    pub fn leaf(&self, t: Tensor<E>, requires_grad: bool) -> Var {
        self.push(t, Op::Leaf, requires_grad)
    }

    /// Register a constant input (no gradient ever flows to it).
    pub fn constant(&self, t: Tensor<E>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> Tensor<E> {
        self.val(v)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    // -- elementwise ---------------------------------------------------------

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.val(a), self.val(b));
        let v = ta.add(&tb)?;
        Ok(self.push(v, Op::Add(a.0, b.0), self.requires(a) || self.requires(b)))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.val(a), self.val(b));
        let v = ta.sub(&tb)?;
        Ok(self.push(v, Op::Sub(a.0, b.0), self.requires(a) || self.requires(b)))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.val(a), self.val(b));
        let v = ta.zip(&tb, "mul", |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a.0, b.0), self.requires(a) || self.requires(b)))
    }

    pub fn affine(&self, x: Var, mul: E, add: E) -> Result<Var> {
        let v = self.val(x).map(|e| e * mul + add);
        Ok(self.push(v, Op::Affine { x: x.0, mul }, self.requires(x)))
    }

    pub fn add_bias(&self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.val(x), self.val(bias));
        let d = tx.last_dim();
        if tb.shape() != [d] {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                lhs: tx.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let bd = tb.data();
        let mut out = Vec::with_capacity(tx.numel());
        for row in tx.data().chunks_exact(d) {
            out.extend(row.iter().zip(bd.iter()).map(|(&a, &b)| a + b));
        }
        let v = Tensor::from_vec(tx.shape().to_vec(), out)?;
        Ok(self.push(
            v,
            Op::AddBias { x: x.0, bias: bias.0 },
            self.requires(x) || self.requires(bias),
        ))
    }

    fn rows_check(tx: &Tensor<E>, ts: &Tensor<E>, op: &'static str) -> Result<(usize, usize, usize)> {
        let xs = tx.shape();
        let ss = ts.shape();
        if xs.len() != 3 || ss.len() != 2 || xs[0] != ss[0] || xs[2] != ss[1] {
            return Err(Error::ShapeMismatch {
                op,
                lhs: xs.to_vec(),
                rhs: ss.to_vec(),
            });
        }
        Ok((xs[0], xs[1], xs[2]))
    }

    /// out[b,n,:] = x[b,n,:] * s[b,:] ; x [B,N,d], s [B,d].
    pub fn scale_rows(&self, x: Var, s: Var) -> Result<Var> {
        let (tx, ts) = (self.val(x), self.val(s));
        let (bsz, n, d) = Self::rows_check(&tx, &ts, "scale_rows")?;
        let mut out = Vec::with_capacity(tx.numel());
        for b in 0..bsz {
            let srow = &ts.data()[b * d..(b + 1) * d];
            for row in tx.data()[b * n * d..(b + 1) * n * d].chunks_exact(d) {
                out.extend(row.iter().zip(srow.iter()).map(|(&a, &c)| a * c));
            }
        }
        let v = Tensor::from_vec(tx.shape().to_vec(), out)?;
        Ok(self.push(
            v,
            Op::ScaleRows { x: x.0, s: s.0 },
            self.requires(x) || self.requires(s),
        ))
    }

    /// out[b,n,:] = x[b,n,:] + s[b,:] ; x [B,N,d], s [B,d].
    pub fn add_rows(&self, x: Var, s: Var) -> Result<Var> {
        let (tx, ts) = (self.val(x), self.val(s));
        let (bsz, n, d) = Self::rows_check(&tx, &ts, "add_rows")?;
        let mut out = Vec::with_capacity(tx.numel());
        for b in 0..bsz {
            let srow = &ts.data()[b * d..(b + 1) * d];
            for row in tx.data()[b * n * d..(b + 1) * n * d].chunks_exact(d) {
                out.extend(row.iter().zip(srow.iter()).map(|(&a, &c)| a + c));
            }
        }
        let v = Tensor::from_vec(tx.shape().to_vec(), out)?;
        Ok(self.push(
            v,
            Op::AddRows { x: x.0, s: s.0 },
            self.requires(x) || self.requires(s),
        ))
    }

    // -- matmul --------------------------------------------------------------

    fn mm_dims(
        sa: &[usize],
        sb: &[usize],
        transposed_b: bool,
    ) -> Result<(usize, usize, usize, usize, bool)> {
        // returns (batch, m, k, n, b_is_batched)
        let op = if transposed_b { "matmul_nt" } else { "matmul" };
        let (m, k) = match sa.len() {
            2 => (sa[0], sa[1]),
            3 => (sa[1], sa[2]),
            _ => {
                return Err(Error::invalid(op, format!("lhs rank {} unsupported", sa.len())));
            }
        };
        let batch = if sa.len() == 3 { sa[0] } else { 1 };
        let (kb, n, b_batched) = match sb.len() {
            2 => {
                if transposed_b {
                    (sb[1], sb[0], false)
                } else {
                    (sb[0], sb[1], false)
                }
            }
            3 => {
                if sb[0] != batch {
                    return Err(Error::ShapeMismatch {
                        op,
                        lhs: sa.to_vec(),
                        rhs: sb.to_vec(),
                    });
                }
                if transposed_b {
                    (sb[2], sb[1], true)
                } else {
                    (sb[1], sb[2], true)
                }
            }
            _ => {
                return Err(Error::invalid(op, format!("rhs rank {} unsupported", sb.len())));
            }
        };
        if kb != k {
            return Err(Error::ShapeMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok((batch, m, k, n, b_batched))
    }

    /// Batched contraction: a [B?, m, k] @ b [B?, k, n].
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.val(a), self.val(b));
        let (batch, m, k, n, b_batched) = Self::mm_dims(ta.shape(), tb.shape(), false)?;
        let mut out = vec![E::zero(); batch * m * n];
        for bi in 0..batch {
            let asl = &ta.data()[bi * m * k..(bi + 1) * m * k];
            let bsl = if b_batched {
                &tb.data()[bi * k * n..(bi + 1) * k * n]
            } else {
                tb.data()
            };
            mm_nn(asl, bsl, &mut out[bi * m * n..(bi + 1) * m * n], m, k, n);
        }
        let shape = if ta.shape().len() == 3 {
            vec![batch, m, n]
        } else {
            vec![m, n]
        };
        let v = Tensor::from_vec(shape, out)?;
        Ok(self.push(
            v,
            Op::Matmul { a: a.0, b: b.0 },
            self.requires(a) || self.requires(b),
        ))
    }

    /// Batched contraction against a transposed rhs: a [B?, m, k] @ b [B?, n, k]^T.
    pub fn matmul_nt(&self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.val(a), self.val(b));
        let (batch, m, k, n, b_batched) = Self::mm_dims(ta.shape(), tb.shape(), true)?;
        let mut out = vec![E::zero(); batch * m * n];
        for bi in 0..batch {
            let asl = &ta.data()[bi * m * k..(bi + 1) * m * k];
            let bsl = if b_batched {
                &tb.data()[bi * n * k..(bi + 1) * n * k]
            } else {
                tb.data()
            };
            mm_nt(asl, bsl, &mut out[bi * m * n..(bi + 1) * m * n], m, k, n);
        }
        let shape = if ta.shape().len() == 3 {
            vec![batch, m, n]
        } else {
            vec![m, n]
        };
        let v = Tensor::from_vec(shape, out)?;
        Ok(self.push(
            v,
            Op::MatmulNT { a: a.0, b: b.0 },
            self.requires(a) || self.requires(b),
        ))
    }

    // -- nonlinearities ------------------------------------------------------

    /// Row-wise softmax over the last dimension, with max subtraction.
    pub fn softmax_lastdim(&self, x: Var) -> Result<Var> {
        let tx = self.val(x);
        let d = tx.last_dim();
        if d < 1 {
            return Err(Error::invalid("softmax", "last extent must be >= 1"));
        }
        let mut out = Vec::with_capacity(tx.numel());
        for row in tx.data().chunks_exact(d) {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    op: "softmax(input)".into(),
                });
            }
            let mut mx = row[0];
            for &v in &row[1..] {
                if v > mx {
                    mx = v;
                }
            }
            let start = out.len();
            let mut sum = E::zero();
            for &v in row {
                let e = (v - mx).exp();
                sum = sum + e;
                out.push(e);
            }
            let inv = E::one() / sum;
            for v in &mut out[start..] {
                *v = *v * inv;
            }
        }
        let v = Tensor::from_vec(tx.shape().to_vec(), out)?;
        Ok(self.push(v, Op::Softmax { x: x.0 }, self.requires(x)))
    }

    /// x / sqrt(mean(x^2) + 1e-6) * gain over the last dimension.
    pub fn rms_norm(&self, x: Var, gain: Var) -> Result<Var> {
        let (tx, tg) = (self.val(x), self.val(gain));
        let d = tx.last_dim();
        if tg.shape() != [d] {
            return Err(Error::ShapeMismatch {
                op: "rms_norm",
                lhs: tx.shape().to_vec(),
                rhs: tg.shape().to_vec(),
            });
        }
        let eps = E::from_f64(1e-6);
        let gd = tg.data();
        let rows = tx.rows();
        let mut out = Vec::with_capacity(tx.numel());
        let mut inv_rms = Vec::with_capacity(rows);
        let dn = E::from_f64(d as f64);
        for row in tx.data().chunks_exact(d) {
            let ss = dot(row, row);
            let r = E::one() / (ss / dn + eps).sqrt();
            inv_rms.push(r);
            out.extend(row.iter().zip(gd.iter()).map(|(&v, &g)| v * r * g));
        }
        let v = Tensor::from_vec(tx.shape().to_vec(), out)?;
        let inv_rms = Tensor::from_vec(vec![rows], inv_rms)?;
        Ok(self.push(
            v,
            Op::RmsNorm {
                x: x.0,
                gain: gain.0,
                inv_rms,
            },
            self.requires(x) || self.requires(gain),
        ))
    }

    /// Rotate consecutive channel pairs of x [R, s, d] by per-token angles [s, d/2].
    pub fn rope_rotate(&self, x: Var, angles: &Tensor<E>) -> Result<Var> {
        let tx = self.val(x);
        let xs = tx.shape().to_vec();
        if xs.len() != 3 {
            return Err(Error::invalid("rope_rotate", format!("rank {} input", xs.len())));
        }
        let (r, s, d) = (xs[0], xs[1], xs[2]);
        if d % 2 != 0 {
            return Err(Error::invalid("rope_rotate", format!("odd channel dim {d}")));
        }
        if angles.shape() != [s, d / 2] {
            return Err(Error::ShapeMismatch {
                op: "rope_rotate",
                lhs: xs,
                rhs: angles.shape().to_vec(),
            });
        }
        let cos = angles.map(|a| a.cos());
        let sin = angles.map(|a| a.sin());
        let half = d / 2;
        let mut out = Vec::with_capacity(tx.numel());
        let xd = tx.data();
        for ri in 0..r {
            for si in 0..s {
                let row = &xd[(ri * s + si) * d..(ri * s + si + 1) * d];
                let c = &cos.data()[si * half..(si + 1) * half];
                let sn = &sin.data()[si * half..(si + 1) * half];
                for i in 0..half {
                    let (a, b) = (row[2 * i], row[2 * i + 1]);
                    out.push(a * c[i] - b * sn[i]);
                    out.push(a * sn[i] + b * c[i]);
                }
            }
        }
        let v = Tensor::from_vec(tx.shape().to_vec(), out)?;
        Ok(self.push(v, Op::Rope { x: x.0, cos, sin }, self.requires(x)))
    }

    pub fn silu(&self, x: Var) -> Result<Var> {
        let tx = self.val(x);
        let v = tx.map(|e| e / (E::one() + (-e).exp()));
        Ok(self.push(v, Op::Silu { x: x.0 }, self.requires(x)))
    }

    // -- shape movement ------------------------------------------------------

    pub fn reshape(&self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let v = self.val(x).reshaped(shape)?;
        Ok(self.push(v, Op::Reshape { x: x.0 }, self.requires(x)))
    }

    /// [B, N, H*dh] -> [B*H, N, dh] (heads folded into the batch extent).
    pub fn split_heads(&self, x: Var, heads: usize) -> Result<Var> {
        let tx = self.val(x);
        let xs = tx.shape();
        if xs.len() != 3 || xs[2] % heads != 0 {
            return Err(Error::invalid(
                "split_heads",
                format!("shape {:?} not splittable into {} heads", xs, heads),
            ));
        }
        let (b, n, d) = (xs[0], xs[1], xs[2]);
        let dh = d / heads;
        let mut out = vec![E::zero(); tx.numel()];
        let xd = tx.data();
        for bi in 0..b {
            for h in 0..heads {
                for ni in 0..n {
                    let src = (bi * n + ni) * d + h * dh;
                    let dst = ((bi * heads + h) * n + ni) * dh;
                    out[dst..dst + dh].copy_from_slice(&xd[src..src + dh]);
                }
            }
        }
        let v = Tensor::from_vec(vec![b * heads, n, dh], out)?;
        Ok(self.push(v, Op::SplitHeads { x: x.0, heads }, self.requires(x)))
    }

    /// [B*H, N, dh] -> [B, N, H*dh]; inverse of [`Graph::split_heads`].
    pub fn merge_heads(&self, x: Var, heads: usize) -> Result<Var> {
        let tx = self.val(x);
        let xs = tx.shape();
        if xs.len() != 3 || xs[0] % heads != 0 {
            return Err(Error::invalid(
                "merge_heads",
                format!("shape {:?} not mergeable from {} heads", xs, heads),
            ));
        }
        let (bh, n, dh) = (xs[0], xs[1], xs[2]);
        let b = bh / heads;
        let d = dh * heads;
        let mut out = vec![E::zero(); tx.numel()];
        let xd = tx.data();
        for bi in 0..b {
            for h in 0..heads {
                for ni in 0..n {
                    let src = ((bi * heads + h) * n + ni) * dh;
                    let dst = (bi * n + ni) * d + h * dh;
                    out[dst..dst + dh].copy_from_slice(&xd[src..src + dh]);
                }
            }
        }
        let v = Tensor::from_vec(vec![b, n, d], out)?;
        Ok(self.push(v, Op::MergeHeads { x: x.0, heads }, self.requires(x)))
    }

    fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
        let outer: usize = shape[..axis].iter().product();
        let mid = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        (outer, mid, inner)
    }

    pub fn concat(&self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::invalid("concat", "no parts"));
        }
        let tensors: Vec<Tensor<E>> = parts.iter().map(|&p| self.val(p)).collect();
        let base = tensors[0].shape().to_vec();
        if axis >= base.len() {
            return Err(Error::invalid("concat", format!("axis {axis} out of range")));
        }
        let mut mid_total = 0;
        for t in &tensors {
            let s = t.shape();
            if s.len() != base.len()
                || s.iter()
                    .zip(base.iter())
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: s.to_vec(),
                });
            }
            mid_total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = mid_total;
        let (outer, _, inner) = Self::axis_split(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for t in &tensors {
                let mid = t.shape()[axis];
                let blk = mid * inner;
                out.extend_from_slice(&t.data()[o * blk..(o + 1) * blk]);
            }
        }
        let v = Tensor::from_vec(shape, out)?;
        let req = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(
            v,
            Op::Concat {
                parts: parts.iter().map(|p| p.0).collect(),
                axis,
            },
            req,
        ))
    }

    pub fn slice(&self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let tx = self.val(x);
        let xs = tx.shape().to_vec();
        if axis >= xs.len() || start + len > xs[axis] {
            return Err(Error::invalid(
                "slice",
                format!("range {start}..{} on axis {axis} of {:?}", start + len, xs),
            ));
        }
        let (outer, mid, inner) = Self::axis_split(&xs, axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * mid * inner + start * inner;
            out.extend_from_slice(&tx.data()[base..base + len * inner]);
        }
        let mut shape = xs;
        shape[axis] = len;
        let v = Tensor::from_vec(shape, out)?;
        Ok(self.push(
            v,
            Op::Slice {
                x: x.0,
                axis,
                start,
                len,
            },
            self.requires(x),
        ))
    }

    // -- reductions / lookup --------------------------------------------------

    /// Mean over all elements -> scalar shaped [1].
    pub fn mean_all(&self, x: Var) -> Result<Var> {
        let tx = self.val(x);
        let mut acc = E::zero();
        for &v in tx.data() {
            acc = acc + v;
        }
        let v = Tensor::scalar(acc / E::from_f64(tx.numel() as f64));
        Ok(self.push(v, Op::MeanAll { x: x.0 }, self.requires(x)))
    }

    /// Rows of a [M, d] table selected by constant indices -> [ids.len(), d].
    pub fn gather_rows(&self, table: Var, ids: &[usize]) -> Result<Var> {
        let tt = self.val(table);
        let ts = tt.shape();
        if ts.len() != 2 {
            return Err(Error::invalid("gather_rows", format!("table rank {}", ts.len())));
        }
        let (m, d) = (ts[0], ts[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= m) {
            return Err(Error::invalid(
                "gather_rows",
                format!("index {bad} out of range for table with {m} rows"),
            ));
        }
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&tt.data()[i * d..(i + 1) * d]);
        }
        let v = Tensor::from_vec(vec![ids.len(), d], out)?;
        Ok(self.push(
            v,
            Op::GatherRows {
                table: table.0,
                ids: ids.to_vec(),
            },
            self.requires(table),
        ))
    }

    // -- backward --------------------------------------------------------------

    /// Backpropagate from a scalar root. Returns per-node gradients.
    pub fn backward(&self, root: Var) -> Result<Gradients<E>> {
        let nodes = self.nodes.borrow();
        if nodes[root.0].value.numel() != 1 {
            return Err(Error::invalid("backward", "root must be a scalar"));
        }
        let mut grads: Vec<Option<Vec<E>>> = vec![None; nodes.len()];
        grads[root.0] = Some(vec![E::one()]);

        for idx in (0..=root.0).rev() {
            if !nodes[idx].requires_grad {
                continue;
            }
            let Some(go) = grads[idx].take() else {
                continue;
            };
            self.propagate(&nodes, idx, &go, &mut grads);
            // reattach so callers can read interior grads too
            grads[idx] = Some(go);
        }

        let out = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.map(|v| Tensor::from_vec(nodes[i].value.shape().to_vec(), v).expect("grad shape"))
            })
            .collect();
        Ok(Gradients { grads: out })
    }

    fn propagate(&self, nodes: &[Node<E>], idx: usize, go: &[E], grads: &mut [Option<Vec<E>>]) {
        // helper: lazily allocate the gradient buffer of node j
        macro_rules! buf {
            ($j:expr) => {{
                let j = $j;
                if grads[j].is_none() {
                    grads[j] = Some(vec![E::zero(); nodes[j].value.numel()]);
                }
                grads[j].as_mut().unwrap()
            }};
        }
        let need = |j: usize| nodes[j].requires_grad;

        match &nodes[idx].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if need(*a) {
                    for (g, &o) in buf!(*a).iter_mut().zip(go) {
                        *g = *g + o;
                    }
                }
                if need(*b) {
                    for (g, &o) in buf!(*b).iter_mut().zip(go) {
                        *g = *g + o;
                    }
                }
            }
            Op::Sub(a, b) => {
                if need(*a) {
                    for (g, &o) in buf!(*a).iter_mut().zip(go) {
                        *g = *g + o;
                    }
                }
                if need(*b) {
                    for (g, &o) in buf!(*b).iter_mut().zip(go) {
                        *g = *g - o;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (&nodes[*a].value, &nodes[*b].value);
                if need(*a) {
                    for ((g, &o), &bv) in buf!(*a).iter_mut().zip(go).zip(tb.data()) {
                        *g = *g + o * bv;
                    }
                }
                if need(*b) {
                    for ((g, &o), &av) in buf!(*b).iter_mut().zip(go).zip(ta.data()) {
                        *g = *g + o * av;
                    }
                }
            }
            Op::Affine { x, mul } => {
                if need(*x) {
                    for (g, &o) in buf!(*x).iter_mut().zip(go) {
                        *g = *g + o * *mul;
                    }
                }
            }
            Op::AddBias { x, bias } => {
                if need(*x) {
                    for (g, &o) in buf!(*x).iter_mut().zip(go) {
                        *g = *g + o;
                    }
                }
                if need(*bias) {
                    let d = nodes[*bias].value.numel();
                    let gb = buf!(*bias);
                    for row in go.chunks_exact(d) {
                        for (g, &o) in gb.iter_mut().zip(row) {
                            *g = *g + o;
                        }
                    }
                }
            }
            Op::ScaleRows { x, s } => {
                let (tx, ts) = (&nodes[*x].value, &nodes[*s].value);
                let (bsz, n, d) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
                if need(*x) {
                    let gx = buf!(*x);
                    for b in 0..bsz {
                        let srow = &ts.data()[b * d..(b + 1) * d];
                        for ni in 0..n {
                            let off = (b * n + ni) * d;
                            for i in 0..d {
                                gx[off + i] = gx[off + i] + go[off + i] * srow[i];
                            }
                        }
                    }
                }
                if need(*s) {
                    let gs = buf!(*s);
                    for b in 0..bsz {
                        for ni in 0..n {
                            let off = (b * n + ni) * d;
                            for i in 0..d {
                                gs[b * d + i] = gs[b * d + i] + go[off + i] * tx.data()[off + i];
                            }
                        }
                    }
                }
            }
            Op::AddRows { x, s } => {
                let tx = &nodes[*x].value;
                let (bsz, n, d) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
                if need(*x) {
                    for (g, &o) in buf!(*x).iter_mut().zip(go) {
                        *g = *g + o;
                    }
                }
                if need(*s) {
                    let gs = buf!(*s);
                    for b in 0..bsz {
                        for ni in 0..n {
                            let off = (b * n + ni) * d;
                            for i in 0..d {
                                gs[b * d + i] = gs[b * d + i] + go[off + i];
                            }
                        }
                    }
                }
            }
            Op::Matmul { a, b } => {
                let (ta, tb) = (&nodes[*a].value, &nodes[*b].value);
                let (batch, m, k, n, b_batched) =
                    Self::mm_dims(ta.shape(), tb.shape(), false).expect("checked at forward");
                if need(*a) {
                    // dA = dC @ B^T
                    let ga = buf!(*a);
                    for bi in 0..batch {
                        let gsl = &go[bi * m * n..(bi + 1) * m * n];
                        let bsl = if b_batched {
                            &tb.data()[bi * k * n..(bi + 1) * k * n]
                        } else {
                            tb.data()
                        };
                        mm_nt(gsl, bsl, &mut ga[bi * m * k..(bi + 1) * m * k], m, n, k);
                    }
                }
                if need(*b) {
                    // dB = A^T @ dC (accumulated over batch when B is shared)
                    let gb = buf!(*b);
                    for bi in 0..batch {
                        let asl = &ta.data()[bi * m * k..(bi + 1) * m * k];
                        let gsl = &go[bi * m * n..(bi + 1) * m * n];
                        let dst = if b_batched {
                            &mut gb[bi * k * n..(bi + 1) * k * n]
                        } else {
                            &mut gb[..]
                        };
                        mm_tn(asl, gsl, dst, m, k, n);
                    }
                }
            }
            Op::MatmulNT { a, b } => {
                let (ta, tb) = (&nodes[*a].value, &nodes[*b].value);
                let (batch, m, k, n, b_batched) =
                    Self::mm_dims(ta.shape(), tb.shape(), true).expect("checked at forward");
                if need(*a) {
                    // dA = dC @ B
                    let ga = buf!(*a);
                    for bi in 0..batch {
                        let gsl = &go[bi * m * n..(bi + 1) * m * n];
                        let bsl = if b_batched {
                            &tb.data()[bi * n * k..(bi + 1) * n * k]
                        } else {
                            tb.data()
                        };
                        mm_nn(gsl, bsl, &mut ga[bi * m * k..(bi + 1) * m * k], m, n, k);
                    }
                }
                if need(*b) {
                    // dB = dC^T @ A
                    let gb = buf!(*b);
                    for bi in 0..batch {
                        let gsl = &go[bi * m * n..(bi + 1) * m * n];
                        let asl = &ta.data()[bi * m * k..(bi + 1) * m * k];
                        let dst = if b_batched {
                            &mut gb[bi * n * k..(bi + 1) * n * k]
                        } else {
                            &mut gb[..]
                        };
                        mm_tn(gsl, asl, dst, m, n, k);
                    }
                }
            }
            Op::Softmax { x } => {
                if need(*x) {
                    let y = &nodes[idx].value;
                    let d = y.last_dim();
                    let gx = buf!(*x);
                    for (r, (yrow, grow)) in y.data().chunks_exact(d).zip(go.chunks_exact(d)).enumerate()
                    {
                        let sdot = dot(yrow, grow);
                        let dst = &mut gx[r * d..(r + 1) * d];
                        for i in 0..d {
                            dst[i] = dst[i] + yrow[i] * (grow[i] - sdot);
                        }
                    }
                }
            }
            Op::RmsNorm { x, gain, inv_rms } => {
                let (tx, tg) = (&nodes[*x].value, &nodes[*gain].value);
                let d = tx.last_dim();
                let dn = E::from_f64(d as f64);
                let gd = tg.data();
                if need(*x) {
                    let gx = buf!(*x);
                    for (r, (xrow, grow)) in
                        tx.data().chunks_exact(d).zip(go.chunks_exact(d)).enumerate()
                    {
                        let rr = inv_rms.data()[r];
                        // s = sum_i go_i * g_i * x_i
                        let mut s = E::zero();
                        for i in 0..d {
                            s = s + grow[i] * gd[i] * xrow[i];
                        }
                        let coef = rr * rr * rr / dn * s;
                        let dst = &mut gx[r * d..(r + 1) * d];
                        for i in 0..d {
                            dst[i] = dst[i] + grow[i] * gd[i] * rr - xrow[i] * coef;
                        }
                    }
                }
                if need(*gain) {
                    let gg = buf!(*gain);
                    for (r, (xrow, grow)) in
                        tx.data().chunks_exact(d).zip(go.chunks_exact(d)).enumerate()
                    {
                        let rr = inv_rms.data()[r];
                        for i in 0..d {
                            gg[i] = gg[i] + grow[i] * xrow[i] * rr;
                        }
                    }
                }
            }
            Op::Rope { x, cos, sin } => {
                if need(*x) {
                    let xs = nodes[*x].value.shape().to_vec();
                    let (r, s, d) = (xs[0], xs[1], xs[2]);
                    let half = d / 2;
                    let gx = buf!(*x);
                    for ri in 0..r {
                        for si in 0..s {
                            let off = (ri * s + si) * d;
                            let c = &cos.data()[si * half..(si + 1) * half];
                            let sn = &sin.data()[si * half..(si + 1) * half];
                            for i in 0..half {
                                let (ga, gb) = (go[off + 2 * i], go[off + 2 * i + 1]);
                                gx[off + 2 * i] = gx[off + 2 * i] + ga * c[i] + gb * sn[i];
                                gx[off + 2 * i + 1] = gx[off + 2 * i + 1] - ga * sn[i] + gb * c[i];
                            }
                        }
                    }
                }
            }
            Op::Silu { x } => {
                if need(*x) {
                    let tx = &nodes[*x].value;
                    let gx = buf!(*x);
                    for ((g, &o), &v) in gx.iter_mut().zip(go).zip(tx.data()) {
                        let s = E::one() / (E::one() + (-v).exp());
                        *g = *g + o * (s + v * s * (E::one() - s));
                    }
                }
            }
            Op::SplitHeads { x, heads } => {
                if need(*x) {
                    let xs = nodes[*x].value.shape().to_vec();
                    let (b, n, d) = (xs[0], xs[1], xs[2]);
                    let dh = d / heads;
                    let gx = buf!(*x);
                    for bi in 0..b {
                        for h in 0..*heads {
                            for ni in 0..n {
                                let dst = (bi * n + ni) * d + h * dh;
                                let src = ((bi * heads + h) * n + ni) * dh;
                                for i in 0..dh {
                                    gx[dst + i] = gx[dst + i] + go[src + i];
                                }
                            }
                        }
                    }
                }
            }
            Op::MergeHeads { x, heads } => {
                if need(*x) {
                    let xs = nodes[*x].value.shape().to_vec();
                    let (bh, n, dh) = (xs[0], xs[1], xs[2]);
                    let b = bh / heads;
                    let d = dh * heads;
                    let gx = buf!(*x);
                    for bi in 0..b {
                        for h in 0..*heads {
                            for ni in 0..n {
                                let src = (bi * n + ni) * d + h * dh;
                                let dst = ((bi * heads + h) * n + ni) * dh;
                                for i in 0..dh {
                                    gx[dst + i] = gx[dst + i] + go[src + i];
                                }
                            }
                        }
                    }
                }
            }
            Op::Concat { parts, axis } => {
                let shape = nodes[idx].value.shape().to_vec();
                let (outer, _, inner) = Self::axis_split(&shape, *axis);
                // per-outer offsets of each part within the concat axis
                let mut off = 0;
                for &p in parts {
                    let mid = nodes[p].value.shape()[*axis];
                    if need(p) {
                        let total_mid = shape[*axis];
                        let gp = buf!(p);
                        for o in 0..outer {
                            let src = o * total_mid * inner + off * inner;
                            let dst = o * mid * inner;
                            for i in 0..mid * inner {
                                gp[dst + i] = gp[dst + i] + go[src + i];
                            }
                        }
                    }
                    off += mid;
                }
            }
            Op::Slice { x, axis, start, len } => {
                if need(*x) {
                    let xs = nodes[*x].value.shape().to_vec();
                    let (outer, mid, inner) = Self::axis_split(&xs, *axis);
                    let gx = buf!(*x);
                    for o in 0..outer {
                        let dst = o * mid * inner + start * inner;
                        let src = o * len * inner;
                        for i in 0..len * inner {
                            gx[dst + i] = gx[dst + i] + go[src + i];
                        }
                    }
                }
            }
            Op::Reshape { x } => {
                if need(*x) {
                    for (g, &o) in buf!(*x).iter_mut().zip(go) {
                        *g = *g + o;
                    }
                }
            }
            Op::MeanAll { x } => {
                if need(*x) {
                    let n = nodes[*x].value.numel();
                    let c = go[0] / E::from_f64(n as f64);
                    for g in buf!(*x).iter_mut() {
                        *g = *g + c;
                    }
                }
            }
            Op::GatherRows { table, ids } => {
                if need(*table) {
                    let d = nodes[*table].value.shape()[1];
                    let gt = buf!(*table);
                    for (row, &id) in ids.iter().enumerate() {
                        for i in 0..d {
                            gt[id * d + i] = gt[id * d + i] + go[row * d + i];
                        }
                    }
                }
            }
        }
    }
}

/// Softmax(Q K^T / sqrt(d')) V with heads already folded into the batch dim.
///
/// Q [b, s, d'], K [b, s', d'], V [b, s', d'] -> [b, s, d'].
pub fn scaled_dot_attention<E: Element>(g: &Graph<E>, q: Var, k: Var, v: Var) -> Result<Var> {
    let dq = g.shape(q);
    let dk = g.shape(k);
    let d_head = *dq.last().ok_or_else(|| Error::invalid("attention", "rank-0 q"))?;
    if d_head == 0 {
        return Err(Error::invalid("attention", "zero head dimension"));
    }
    if dk.last() != Some(&d_head) {
        return Err(Error::ShapeMismatch {
            op: "attention",
            lhs: dq,
            rhs: dk,
        });
    }
    let scale = E::from_f64(1.0 / (d_head as f64).sqrt());
    let qs = g.affine(q, scale, E::zero())?;
    let logits = g.matmul_nt(qs, k)?;
    let probs = g.softmax_lastdim(logits)?;
    g.matmul(probs, v)
}
