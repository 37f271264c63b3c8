//! Reverse-mode automatic differentiation over dense f32 tensors.
//!
//! A [`Tape`] is a define-by-run arena: every operation appends a node that
//! owns its forward value; [`Tape::backward`] replays the nodes in reverse
//! and accumulates gradients for every `requires_grad` ancestor of the root.
//! Tapes are rebuilt per forward pass and confined to one thread.

use std::collections::HashMap;
use std::rc::Rc;

use super::params::{ParamId, ParamSet};
use super::tensor::Tensor;
use crate::geometry;

/// Handle to a node on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf { param: Option<ParamId> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f32),
    MatMul(Var, Var),
    VnLinear { w: Var, v: Var, vt: Vec<f32> },
    TransposeLast2(Var),
    Reshape(Var),
    Concat(Var, Var, usize),
    Slice { a: Var, axis: usize, start: usize },
    IndexRows { a: Var, idx: Vec<usize> },
    SelectMaxVec { a: Var, idx: Vec<usize> },
    ReduceSum { a: Var, axis: usize },
    ReduceMean { a: Var, axis: usize },
    ReduceMax { a: Var, axis: usize, argmax: Vec<usize> },
    SumAll(Var),
    Relu(Var),
    Tanh(Var),
    Sqrt(Var),
    AcosSafe(Var),
    ExpandTail { a: Var, m: usize },
    VnGate { v: Var, d: Var, slope: f32 },
    Cross3(Var, Var),
    Chamfer { p: Var, q: Var, nn_pq: Vec<usize>, nn_qp: Vec<usize> },
}

struct Node {
    op: Op,
    shape: Vec<usize>,
    data: Rc<Vec<f32>>,
    needs_grad: bool,
}

/// Append-only operation record plus forward values.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_cache: HashMap<usize, Var>,
}

/// Result of [`Tape::backward`]: gradients by node and by named parameter.
pub struct Gradients {
    by_node: Vec<Option<Tensor>>,
    by_param: HashMap<usize, Tensor>,
}

impl Gradients {
    /// Gradient of the root with respect to a tape variable, if it was
    /// reached and required gradients.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.by_node.get(v.0).and_then(|g| g.as_ref())
    }

    /// Rescale the listed parameters' gradients so their joint 2-norm is at
    /// most `max_norm`; returns the pre-clip norm. Tames the rare loss-term
    /// gradient spikes (e.g. geodesic loss near 0/pi) that otherwise inflate
    /// Adam's second moments for a long time.
    pub fn clip_param_global_norm(&mut self, ids: &[ParamId], max_norm: f32) -> f64 {
        let mut acc = 0.0f64;
        for id in ids {
            if let Some(g) = self.by_param.get(&id.index()) {
                acc += g.data().iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>();
            }
        }
        let norm = acc.sqrt();
        if norm > max_norm as f64 {
            let scale = (max_norm as f64 / norm) as f32;
            for id in ids {
                if let Some(g) = self.by_param.get_mut(&id.index()) {
                    for v in g.data_mut() {
                        *v *= scale;
                    }
                }
            }
        }
        norm
    }

    /// Gradient for a lifted parameter; zero-filled if the parameter did not
    /// influence the root.
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.by_param.get(&id.index())
    }
}

// ---- elementwise broadcast resolution ----

#[derive(Clone, Copy, Debug, PartialEq)]
enum Bc {
    Equal,
    /// rhs has `len` elements and cycles over the lhs (scalar or suffix).
    RhsCycle(usize),
    /// lhs cycles over the rhs.
    LhsCycle(usize),
}

fn broadcast(a: &[usize], b: &[usize]) -> (Vec<usize>, Bc) {
    if a == b {
        return (a.to_vec(), Bc::Equal);
    }
    let an: usize = a.iter().product();
    let bn: usize = b.iter().product();
    if bn == 1 {
        return (a.to_vec(), Bc::RhsCycle(1));
    }
    if an == 1 {
        return (b.to_vec(), Bc::LhsCycle(1));
    }
    if a.len() > b.len() && a.ends_with(b) {
        return (a.to_vec(), Bc::RhsCycle(bn));
    }
    if b.len() > a.len() && b.ends_with(a) {
        return (b.to_vec(), Bc::LhsCycle(an));
    }
    panic!("elementwise shape mismatch: {a:?} vs {b:?}");
}

// ---- flat GEMM kernels (accumulating) ----

/// c[m,n] += a[m,k] * b[k,n]
pub(crate) fn gemm_nn(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

/// c[m,n] += a[m,k] * b[n,k]^T
fn gemm_nt(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (j, cv) in c_row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = 0.0f32;
            for (&av, &bv) in a_row.iter().zip(b_row) {
                acc += av * bv;
            }
            *cv += acc;
        }
    }
}

/// c[m,n] += a[k,m]^T * b[k,n]
fn gemm_tn(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

/// Resolve batched matmul shapes: `[batch.., p, q] x [batch.., q, r]`, where
/// either operand may be plain 2D and broadcasts across the other's batch.
fn matmul_dims(a: &[usize], b: &[usize]) -> (Vec<usize>, usize, usize, usize, usize, bool, bool) {
    assert!(
        a.len() >= 2 && b.len() >= 2,
        "matmul needs rank >= 2, got {a:?} x {b:?}"
    );
    let (p, qa) = (a[a.len() - 2], a[a.len() - 1]);
    let (qb, r) = (b[b.len() - 2], b[b.len() - 1]);
    assert_eq!(qa, qb, "matmul inner dims disagree: {a:?} x {b:?}");
    let batch_a = &a[..a.len() - 2];
    let batch_b = &b[..b.len() - 2];
    let (batch, a_batched, b_batched) = if batch_a == batch_b {
        (batch_a.to_vec(), !batch_a.is_empty(), !batch_b.is_empty())
    } else if batch_a.is_empty() {
        (batch_b.to_vec(), false, true)
    } else if batch_b.is_empty() {
        (batch_a.to_vec(), true, false)
    } else {
        panic!("matmul batch dims disagree: {a:?} x {b:?}");
    };
    let nb = batch.iter().product::<usize>().max(1);
    let mut out_shape = batch;
    out_shape.push(p);
    out_shape.push(r);
    (out_shape, nb, p, qa, r, a_batched, b_batched)
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    assert!(axis < shape.len(), "axis {axis} out of range for {shape:?}");
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

/// Block-transpose `[blocks, c, w] -> [blocks*w, c]`.
pub(crate) fn blocks_to_rows(v: &[f32], c: usize, w: usize) -> Vec<f32> {
    let blocks = v.len() / (c * w);
    let mut out = vec![0.0f32; v.len()];
    for b in 0..blocks {
        let src = &v[b * c * w..(b + 1) * c * w];
        for ci in 0..c {
            for x in 0..w {
                out[(b * w + x) * c + ci] = src[ci * w + x];
            }
        }
    }
    out
}

/// Inverse of [`blocks_to_rows`], accumulating into `out`.
fn rows_to_blocks_add(rows: &[f32], c: usize, w: usize, out: &mut [f32]) {
    let blocks = out.len() / (c * w);
    for b in 0..blocks {
        let dst = &mut out[b * c * w..(b + 1) * c * w];
        for ci in 0..c {
            for x in 0..w {
                dst[ci * w + x] += rows[(b * w + x) * c + ci];
            }
        }
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f32] {
        &self.nodes[v.0].data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn numel(&self, v: Var) -> usize {
        self.nodes[v.0].data.len()
    }

    /// Clone the node value out as a tensor (node_id set).
    pub fn tensor(&self, v: Var) -> Tensor {
        let node = &self.nodes[v.0];
        let mut t = Tensor::from_vec(node.shape.clone(), node.data.as_ref().clone());
        t.requires_grad = node.needs_grad;
        t.node_id = Some(v.0);
        t
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, data: Vec<f32>, needs_grad: bool) -> Var {
        self.push_shared(op, shape, Rc::new(data), needs_grad)
    }

    fn push_shared(
        &mut self,
        op: Op,
        shape: Vec<usize>,
        data: Rc<Vec<f32>>,
        needs_grad: bool,
    ) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node {
            op,
            shape,
            data,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Record a non-differentiable input.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(
            Op::Leaf { param: None },
            t.shape().to_vec(),
            t.data().to_vec(),
            false,
        )
    }

    pub fn constant_data(&mut self, shape: Vec<usize>, data: Vec<f32>) -> Var {
        self.push(Op::Leaf { param: None }, shape, data, false)
    }

    /// Record a differentiable leaf (e.g. an input being gradient-checked).
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(
            Op::Leaf { param: None },
            t.shape().to_vec(),
            t.data().to_vec(),
            true,
        )
    }

    /// Lift a named parameter onto the tape. Repeated lifts of the same
    /// parameter within one tape share a single node, so gradients from all
    /// uses accumulate.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        if let Some(&v) = self.param_cache.get(&id.index()) {
            return v;
        }
        let t = params.get(id);
        let v = self.push(
            Op::Leaf { param: Some(id) },
            t.shape().to_vec(),
            t.data().to_vec(),
            true,
        );
        self.param_cache.insert(id.index(), v);
        v
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x / y, Op::Div(a, b))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f32, f32) -> f32, op: Op) -> Var {
        let (shape, bc) = broadcast(&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        let (av, bv) = (&self.nodes[a.0].data, &self.nodes[b.0].data);
        let data = match bc {
            Bc::Equal => av.iter().zip(bv.iter()).map(|(&x, &y)| f(x, y)).collect(),
            Bc::RhsCycle(nb) => (0..av.len()).map(|i| f(av[i], bv[i % nb])).collect(),
            Bc::LhsCycle(na) => (0..bv.len()).map(|i| f(av[i % na], bv[i])).collect(),
        };
        let needs = self.needs(a) || self.needs(b);
        self.push(op, shape, data, needs)
    }

    pub fn scale(&mut self, a: Var, c: f32) -> Var {
        let data = self.nodes[a.0].data.iter().map(|&x| x * c).collect();
        let shape = self.nodes[a.0].shape.clone();
        let needs = self.needs(a);
        self.push(Op::Scale(a, c), shape, data, needs)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (out_shape, nb, p, q, r, ab, bb) =
            matmul_dims(&self.nodes[a.0].shape, &self.nodes[b.0].shape);
        let mut data = vec![0.0f32; nb * p * r];
        let (av, bv) = (&self.nodes[a.0].data, &self.nodes[b.0].data);
        let (sa, sb) = (
            if ab { p * q } else { 0 },
            if bb { q * r } else { 0 },
        );
        for bi in 0..nb {
            gemm_nn(
                p,
                q,
                r,
                &av[bi * sa..bi * sa + p * q],
                &bv[bi * sb..bi * sb + q * r],
                &mut data[bi * p * r..(bi + 1) * p * r],
            );
        }
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::MatMul(a, b), out_shape, data, needs)
    }

    /// Channel-mixing linear map of vector features:
    /// `out[.., c', :] = sum_c w[c', c] * v[.., c, :]`.
    pub fn vn_linear(&mut self, w: Var, v: Var) -> Var {
        let ws = self.nodes[w.0].shape.clone();
        let vs = self.nodes[v.0].shape.clone();
        assert!(
            ws.len() == 2 && vs.len() >= 2 && *vs.last().unwrap() == 3,
            "vn_linear expects w [c_out, c_in], v [.., c_in, 3]; got {ws:?}, {vs:?}"
        );
        let (co, ci) = (ws[0], ws[1]);
        assert_eq!(
            vs[vs.len() - 2],
            ci,
            "vn_linear channel mismatch: w {ws:?} vs v {vs:?}"
        );
        let blocks = self.nodes[v.0].data.len() / (ci * 3);
        let vt = blocks_to_rows(&self.nodes[v.0].data, ci, 3);
        // wt [ci, co]
        let wv = &self.nodes[w.0].data;
        let mut wt = vec![0.0f32; ci * co];
        for o in 0..co {
            for c in 0..ci {
                wt[c * co + o] = wv[o * ci + c];
            }
        }
        let mut yt = vec![0.0f32; blocks * 3 * co];
        gemm_nn(blocks * 3, ci, co, &vt, &wt, &mut yt);
        let mut data = vec![0.0f32; blocks * co * 3];
        for b in 0..blocks {
            for o in 0..co {
                for x in 0..3 {
                    data[(b * co + o) * 3 + x] = yt[(b * 3 + x) * co + o];
                }
            }
        }
        let mut shape = vs;
        let ln = shape.len();
        shape[ln - 2] = co;
        let needs = self.needs(w) || self.needs(v);
        self.push(Op::VnLinear { w, v, vt }, shape, data, needs)
    }

    pub fn transpose_last2(&mut self, a: Var) -> Var {
        let shape = self.nodes[a.0].shape.clone();
        assert!(shape.len() >= 2, "transpose_last2 needs rank >= 2");
        let (p, q) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let av = &self.nodes[a.0].data;
        let blocks = av.len() / (p * q);
        let mut data = vec![0.0f32; av.len()];
        for b in 0..blocks {
            let src = &av[b * p * q..(b + 1) * p * q];
            let dst = &mut data[b * p * q..(b + 1) * p * q];
            for i in 0..p {
                for j in 0..q {
                    dst[j * p + i] = src[i * q + j];
                }
            }
        }
        let mut out_shape = shape;
        let ln = out_shape.len();
        out_shape.swap(ln - 2, ln - 1);
        let needs = self.needs(a);
        self.push(Op::TransposeLast2(a), out_shape, data, needs)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Var {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            self.nodes[a.0].data.len(),
            "reshape {:?} -> {shape:?} changes element count",
            self.nodes[a.0].shape
        );
        // zero-copy: the new node shares the source buffer
        let data = Rc::clone(&self.nodes[a.0].data);
        let needs = self.needs(a);
        self.push_shared(Op::Reshape(a), shape, data, needs)
    }

    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Var {
        let sa = self.nodes[a.0].shape.clone();
        let sb = self.nodes[b.0].shape.clone();
        assert_eq!(sa.len(), sb.len(), "concat rank mismatch: {sa:?} vs {sb:?}");
        for (d, (x, y)) in sa.iter().zip(&sb).enumerate() {
            assert!(
                d == axis || x == y,
                "concat non-axis dims differ: {sa:?} vs {sb:?} at axis {axis}"
            );
        }
        let (outer, la, inner) = axis_split(&sa, axis);
        let lb = sb[axis];
        let mut shape = sa.clone();
        shape[axis] = la + lb;
        let (av, bv) = (&self.nodes[a.0].data, &self.nodes[b.0].data);
        let mut data = vec![0.0f32; outer * (la + lb) * inner];
        for o in 0..outer {
            let dst = &mut data[o * (la + lb) * inner..(o + 1) * (la + lb) * inner];
            dst[..la * inner].copy_from_slice(&av[o * la * inner..(o + 1) * la * inner]);
            dst[la * inner..].copy_from_slice(&bv[o * lb * inner..(o + 1) * lb * inner]);
        }
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::Concat(a, b, axis), shape, data, needs)
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Var {
        let sa = self.nodes[a.0].shape.clone();
        let (outer, la, inner) = axis_split(&sa, axis);
        assert!(start + len <= la, "slice [{start}, {}) out of {sa:?}", start + len);
        let mut shape = sa;
        shape[axis] = len;
        let av = &self.nodes[a.0].data;
        let mut data = vec![0.0f32; outer * len * inner];
        for o in 0..outer {
            let src = &av[(o * la + start) * inner..(o * la + start + len) * inner];
            data[o * len * inner..(o + 1) * len * inner].copy_from_slice(src);
        }
        let needs = self.needs(a);
        self.push(Op::Slice { a, axis, start }, shape, data, needs)
    }

    /// Gather rows of a `[n, rest..]` tensor; gradient scatter-adds back.
    pub fn index_rows(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let sa = self.nodes[a.0].shape.clone();
        assert!(!sa.is_empty(), "index_rows needs rank >= 1");
        let n = sa[0];
        let row: usize = sa[1..].iter().product();
        let av = &self.nodes[a.0].data;
        let mut data = vec![0.0f32; idx.len() * row];
        for (o, &src) in idx.iter().enumerate() {
            assert!(src < n, "index_rows index {src} out of {n}");
            data[o * row..(o + 1) * row].copy_from_slice(&av[src * row..(src + 1) * row]);
        }
        let mut shape = sa;
        shape[0] = idx.len();
        let needs = self.needs(a);
        self.push(Op::IndexRows { a, idx }, shape, data, needs)
    }

    /// Select one vector per channel along axis -3: input `[.., s, c, 3]`,
    /// `idx[prefix, c] in 0..s`, output `[.., c, 3]`. The indices come from
    /// the caller (argmax of some score); the selection itself is treated as
    /// locally constant, so gradients flow only through the chosen vectors.
    pub fn select_max_vec(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let sa = self.nodes[a.0].shape.clone();
        assert!(
            sa.len() >= 3 && *sa.last().unwrap() == 3,
            "select_max_vec expects [.., s, c, 3], got {sa:?}"
        );
        let c = sa[sa.len() - 2];
        let s = sa[sa.len() - 3];
        let prefix: usize = sa[..sa.len() - 3].iter().product();
        assert_eq!(idx.len(), prefix * c, "select_max_vec index count");
        let av = &self.nodes[a.0].data;
        let mut data = vec![0.0f32; prefix * c * 3];
        for p in 0..prefix {
            for ch in 0..c {
                let sel = idx[p * c + ch];
                debug_assert!(sel < s);
                let src = ((p * s + sel) * c + ch) * 3;
                let dst = (p * c + ch) * 3;
                data[dst..dst + 3].copy_from_slice(&av[src..src + 3]);
            }
        }
        let mut shape: Vec<usize> = sa[..sa.len() - 3].to_vec();
        shape.push(c);
        shape.push(3);
        let needs = self.needs(a);
        self.push(Op::SelectMaxVec { a, idx }, shape, data, needs)
    }

    // ---- reductions ----

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Var {
        let (shape, data) = self.reduce_sum_impl(a, axis, false);
        let needs = self.needs(a);
        self.push(Op::ReduceSum { a, axis }, shape, data, needs)
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Var {
        let (shape, data) = self.reduce_sum_impl(a, axis, true);
        let needs = self.needs(a);
        self.push(Op::ReduceMean { a, axis }, shape, data, needs)
    }

    fn reduce_sum_impl(&self, a: Var, axis: usize, mean: bool) -> (Vec<usize>, Vec<f32>) {
        let sa = &self.nodes[a.0].shape;
        let (outer, len, inner) = axis_split(sa, axis);
        assert!(len > 0, "reduce over empty axis {axis} of {sa:?}");
        let av = &self.nodes[a.0].data;
        let mut data = vec![0.0f32; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &av[(o * len + l) * inner..(o * len + l + 1) * inner];
                let dst = &mut data[o * inner..(o + 1) * inner];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        if mean {
            let inv = 1.0 / len as f32;
            for d in &mut data {
                *d *= inv;
            }
        }
        let mut shape = sa.clone();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        (shape, data)
    }

    pub fn max_axis(&mut self, a: Var, axis: usize) -> Var {
        let sa = self.nodes[a.0].shape.clone();
        let (outer, len, inner) = axis_split(&sa, axis);
        assert!(len > 0, "max over empty axis {axis} of {sa:?}");
        let av = &self.nodes[a.0].data;
        let mut data = vec![f32::NEG_INFINITY; outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                for i in 0..inner {
                    let v = av[(o * len + l) * inner + i];
                    let d = &mut data[o * inner + i];
                    if v > *d {
                        *d = v;
                        argmax[o * inner + i] = l;
                    }
                }
            }
        }
        let mut shape = sa;
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        let needs = self.needs(a);
        self.push(Op::ReduceMax { a, axis, argmax }, shape, data, needs)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let total: f32 = self.nodes[a.0].data.iter().sum();
        let needs = self.needs(a);
        self.push(Op::SumAll(a), vec![1], vec![total], needs)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].data.len();
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n as f32)
    }

    /// Sum of a list of same-shaped vars.
    pub fn add_n(&mut self, vs: &[Var]) -> Var {
        assert!(!vs.is_empty(), "add_n of empty list");
        let mut acc = vs[0];
        for &v in &vs[1..] {
            acc = self.add(acc, v);
        }
        acc
    }

    // ---- nonlinearities ----

    pub fn relu(&mut self, a: Var) -> Var {
        let data = self.nodes[a.0].data.iter().map(|&x| x.max(0.0)).collect();
        let shape = self.nodes[a.0].shape.clone();
        let needs = self.needs(a);
        self.push(Op::Relu(a), shape, data, needs)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let data = self.nodes[a.0].data.iter().map(|&x| x.tanh()).collect();
        let shape = self.nodes[a.0].shape.clone();
        let needs = self.needs(a);
        self.push(Op::Tanh(a), shape, data, needs)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let data = self.nodes[a.0].data.iter().map(|&x| x.max(0.0).sqrt()).collect();
        let shape = self.nodes[a.0].shape.clone();
        let needs = self.needs(a);
        self.push(Op::Sqrt(a), shape, data, needs)
    }

    /// arccos with the argument clamped to [-1, 1]; the backward pass clamps
    /// to [-1+1e-7, 1-1e-7] so the gradient stays bounded at the endpoints.
    pub fn acos_safe(&mut self, a: Var) -> Var {
        let data = self
            .nodes[a.0]
            .data
            .iter()
            .map(|&x| x.clamp(-1.0, 1.0).acos())
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let needs = self.needs(a);
        self.push(Op::AcosSafe(a), shape, data, needs)
    }

    /// Append a trailing axis of size `m` by repetition; gradient sums over it.
    pub fn expand_tail(&mut self, a: Var, m: usize) -> Var {
        let av = &self.nodes[a.0].data;
        let mut data = vec![0.0f32; av.len() * m];
        for (i, &x) in av.iter().enumerate() {
            data[i * m..(i + 1) * m].fill(x);
        }
        let mut shape = self.nodes[a.0].shape.clone();
        shape.push(m);
        let needs = self.needs(a);
        self.push(Op::ExpandTail { a, m }, shape, data, needs)
    }

    /// Vector-neuron gating, fused: per trailing 3-vector pair (v, d), with
    /// dh = d / (|d| + 1e-8) and s = <v, dh>, the output is v when s >= 0
    /// and v - (1 - slope) * s * dh otherwise.
    pub fn vn_gate(&mut self, v: Var, d: Var, slope: f32) -> Var {
        let vs = self.nodes[v.0].shape.clone();
        assert_eq!(
            vs, self.nodes[d.0].shape,
            "vn_gate shape mismatch: {:?} vs {:?}",
            vs, self.nodes[d.0].shape
        );
        assert_eq!(*vs.last().unwrap(), 3, "vn_gate needs trailing dim 3");
        let a = 1.0 - slope;
        let (vv, dv) = (&self.nodes[v.0].data, &self.nodes[d.0].data);
        let mut data = vec![0.0f32; vv.len()];
        for i in (0..vv.len()).step_by(3) {
            let (v3, d3) = (&vv[i..i + 3], &dv[i..i + 3]);
            let n = (d3[0] * d3[0] + d3[1] * d3[1] + d3[2] * d3[2]).sqrt();
            let out = &mut data[i..i + 3];
            out.copy_from_slice(v3);
            if n > 1e-20 {
                let u = n + 1e-8;
                let s = (v3[0] * d3[0] + v3[1] * d3[1] + v3[2] * d3[2]) / u;
                if s < 0.0 {
                    let w = a * s / u;
                    for x in 0..3 {
                        out[x] -= w * d3[x];
                    }
                }
            }
        }
        let needs = self.needs(v) || self.needs(d);
        self.push(Op::VnGate { v, d, slope }, vs, data, needs)
    }

    /// Cross product over trailing 3-vectors; shapes must match.
    pub fn cross3(&mut self, a: Var, b: Var) -> Var {
        let sa = self.nodes[a.0].shape.clone();
        assert_eq!(
            sa, self.nodes[b.0].shape,
            "cross3 shape mismatch: {:?} vs {:?}",
            sa, self.nodes[b.0].shape
        );
        assert_eq!(*sa.last().unwrap(), 3, "cross3 needs trailing dim 3");
        let (av, bv) = (&self.nodes[a.0].data, &self.nodes[b.0].data);
        let mut data = vec![0.0f32; av.len()];
        for i in (0..av.len()).step_by(3) {
            data[i] = av[i + 1] * bv[i + 2] - av[i + 2] * bv[i + 1];
            data[i + 1] = av[i + 2] * bv[i] - av[i] * bv[i + 2];
            data[i + 2] = av[i] * bv[i + 1] - av[i + 1] * bv[i];
        }
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::Cross3(a, b), sa, data, needs)
    }

    /// Differentiable symmetric squared chamfer between `[n, 3]` clouds.
    /// Gradients route through the nearest-neighbor assignments recorded at
    /// forward time.
    pub fn chamfer(&mut self, p: Var, q: Var) -> Var {
        let sp = self.nodes[p.0].shape.clone();
        let sq = self.nodes[q.0].shape.clone();
        assert!(
            sp.len() == 2 && sp[1] == 3 && sq.len() == 2 && sq[1] == 3 && sp[0] > 0 && sq[0] > 0,
            "chamfer expects non-empty [n, 3] clouds, got {sp:?}, {sq:?}"
        );
        let (value, nn_pq, nn_qp) =
            geometry::chamfer_flat_with_argmin(&self.nodes[p.0].data, &self.nodes[q.0].data);
        let needs = self.needs(p) || self.needs(q);
        self.push(
            Op::Chamfer { p, q, nn_pq, nn_qp },
            vec![1],
            vec![value],
            needs,
        )
    }

    // ---- backward ----

    /// Reverse sweep from a scalar root. Gradients accumulate (sum) across
    /// shared subexpressions and repeated parameter uses.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(
            self.nodes[root.0].data.len(),
            1,
            "backward root must be scalar, got shape {:?}",
            self.nodes[root.0].shape
        );
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);
        for id in (0..=root.0).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let Some(g) = std::mem::take(&mut grads[id]) else {
                continue;
            };
            self.backprop_node(id, &g, &mut grads);
            grads[id] = Some(g);
        }

        let mut by_param = HashMap::new();
        let mut by_node: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        for (id, node) in self.nodes.iter().enumerate() {
            let t = grads[id]
                .take()
                .map(|g| Tensor::from_vec(node.shape.clone(), g));
            if let Op::Leaf { param: Some(pid) } = node.op {
                let grad = t
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(node.shape.clone()));
                by_param.insert(pid.index(), grad);
            }
            by_node.push(t);
        }
        Gradients { by_node, by_param }
    }

    fn grad_buf<'g>(&self, grads: &'g mut [Option<Vec<f32>>], v: Var) -> &'g mut [f32] {
        let numel = self.nodes[v.0].data.len();
        grads[v.0].get_or_insert_with(|| vec![0.0f32; numel])
    }

    fn backprop_node(&self, id: usize, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        match &self.nodes[id].op {
            Op::Leaf { .. } => {}
            Op::Add(a, b) => {
                let bc = broadcast(&self.nodes[a.0].shape, &self.nodes[b.0].shape).1;
                if self.needs(*a) {
                    self.bc_accum(grads, *a, g, bc, true);
                }
                if self.needs(*b) {
                    self.bc_accum(grads, *b, g, bc, false);
                }
            }
            Op::Sub(a, b) => {
                let bc = broadcast(&self.nodes[a.0].shape, &self.nodes[b.0].shape).1;
                if self.needs(*a) {
                    self.bc_accum(grads, *a, g, bc, true);
                }
                if self.needs(*b) {
                    let neg: Vec<f32> = g.iter().map(|&x| -x).collect();
                    self.bc_accum(grads, *b, &neg, bc, false);
                }
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                let bc = broadcast(&self.nodes[a.0].shape, &self.nodes[b.0].shape).1;
                if self.needs(a) {
                    let other = &self.nodes[b.0].data;
                    let scaled = bc_mul(g, other, bc, false);
                    self.bc_accum(grads, a, &scaled, bc, true);
                }
                if self.needs(b) {
                    let other = &self.nodes[a.0].data;
                    let scaled = bc_mul(g, other, bc, true);
                    self.bc_accum(grads, b, &scaled, bc, false);
                }
            }
            Op::Div(a, b) => {
                let (a, b) = (*a, *b);
                let bc = broadcast(&self.nodes[a.0].shape, &self.nodes[b.0].shape).1;
                let bd = &self.nodes[b.0].data;
                if self.needs(a) {
                    let inv: Vec<f32> = bd.iter().map(|&y| 1.0 / y).collect();
                    let scaled = bc_mul(g, &inv, bc, false);
                    self.bc_accum(grads, a, &scaled, bc, true);
                }
                if self.needs(b) {
                    // d/db (a/b) = -a / b^2
                    let ad = &self.nodes[a.0].data;
                    let out_len = g.len();
                    let mut scaled = vec![0.0f32; out_len];
                    for i in 0..out_len {
                        let (ai, bi) = match bc {
                            Bc::Equal => (ad[i], bd[i]),
                            Bc::RhsCycle(nb) => (ad[i], bd[i % nb]),
                            Bc::LhsCycle(na) => (ad[i % na], bd[i]),
                        };
                        scaled[i] = -g[i] * ai / (bi * bi);
                    }
                    self.bc_accum(grads, b, &scaled, bc, false);
                }
            }
            Op::Scale(a, c) => {
                if self.needs(*a) {
                    let (a, c) = (*a, *c);
                    let ga = self.grad_buf(grads, a);
                    for (d, &x) in ga.iter_mut().zip(g) {
                        *d += x * c;
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let (_, nb, p, q, r, ab, bb) =
                    matmul_dims(&self.nodes[a.0].shape, &self.nodes[b.0].shape);
                let (sa, sb) = (if ab { p * q } else { 0 }, if bb { q * r } else { 0 });
                if self.needs(a) {
                    let bv = Rc::clone(&self.nodes[b.0].data);
                    let ga = self.grad_buf(grads, a);
                    for bi in 0..nb {
                        gemm_nt(
                            p,
                            r,
                            q,
                            &g[bi * p * r..(bi + 1) * p * r],
                            &bv[bi * sb..bi * sb + q * r],
                            &mut ga[bi * sa..bi * sa + p * q],
                        );
                    }
                }
                if self.needs(b) {
                    let av = Rc::clone(&self.nodes[a.0].data);
                    let gb = self.grad_buf(grads, b);
                    for bi in 0..nb {
                        gemm_tn(
                            q,
                            p,
                            r,
                            &av[bi * sa..bi * sa + p * q],
                            &g[bi * p * r..(bi + 1) * p * r],
                            &mut gb[bi * sb..bi * sb + q * r],
                        );
                    }
                }
            }
            Op::VnLinear { w, v, vt } => {
                let (w, v) = (*w, *v);
                let (co, ci) = (self.nodes[w.0].shape[0], self.nodes[w.0].shape[1]);
                let blocks = self.nodes[v.0].data.len() / (ci * 3);
                // gyt [blocks*3, co]
                let mut gyt = vec![0.0f32; blocks * 3 * co];
                for b in 0..blocks {
                    for o in 0..co {
                        for x in 0..3 {
                            gyt[(b * 3 + x) * co + o] = g[(b * co + o) * 3 + x];
                        }
                    }
                }
                if self.needs(v) {
                    let wv = Rc::clone(&self.nodes[w.0].data);
                    let mut dvt = vec![0.0f32; blocks * 3 * ci];
                    gemm_nn(blocks * 3, co, ci, &gyt, &wv, &mut dvt);
                    let gv = self.grad_buf(grads, v);
                    rows_to_blocks_add(&dvt, ci, 3, gv);
                }
                if self.needs(w) {
                    let gw = self.grad_buf(grads, w);
                    gemm_tn(co, blocks * 3, ci, &gyt, vt, gw);
                }
            }
            Op::TransposeLast2(a) => {
                if self.needs(*a) {
                    let a = *a;
                    let sa = &self.nodes[a.0].shape;
                    let (p, q) = (sa[sa.len() - 2], sa[sa.len() - 1]);
                    let blocks = self.nodes[a.0].data.len() / (p * q);
                    let ga = self.grad_buf(grads, a);
                    for b in 0..blocks {
                        let gsrc = &g[b * p * q..(b + 1) * p * q]; // [q, p]
                        let gdst = &mut ga[b * p * q..(b + 1) * p * q]; // [p, q]
                        for j in 0..q {
                            for i in 0..p {
                                gdst[i * q + j] += gsrc[j * p + i];
                            }
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if self.needs(*a) {
                    let ga = self.grad_buf(grads, *a);
                    for (d, &x) in ga.iter_mut().zip(g) {
                        *d += x;
                    }
                }
            }
            Op::Concat(a, b, axis) => {
                let (a, b, axis) = (*a, *b, *axis);
                let (outer, la, inner) = axis_split(&self.nodes[a.0].shape, axis);
                let lb = self.nodes[b.0].shape[axis];
                if self.needs(a) {
                    let ga = self.grad_buf(grads, a);
                    for o in 0..outer {
                        let gsrc = &g[o * (la + lb) * inner..o * (la + lb) * inner + la * inner];
                        let gdst = &mut ga[o * la * inner..(o + 1) * la * inner];
                        for (d, &x) in gdst.iter_mut().zip(gsrc) {
                            *d += x;
                        }
                    }
                }
                if self.needs(b) {
                    let gb = self.grad_buf(grads, b);
                    for o in 0..outer {
                        let base = o * (la + lb) * inner + la * inner;
                        let gsrc = &g[base..base + lb * inner];
                        let gdst = &mut gb[o * lb * inner..(o + 1) * lb * inner];
                        for (d, &x) in gdst.iter_mut().zip(gsrc) {
                            *d += x;
                        }
                    }
                }
            }
            Op::Slice { a, axis, start } => {
                if self.needs(*a) {
                    let (a, axis, start) = (*a, *axis, *start);
                    let (outer, la, inner) = axis_split(&self.nodes[a.0].shape, axis);
                    let len = self.nodes[id].shape[axis];
                    let ga = self.grad_buf(grads, a);
                    for o in 0..outer {
                        let gsrc = &g[o * len * inner..(o + 1) * len * inner];
                        let gdst =
                            &mut ga[(o * la + start) * inner..(o * la + start + len) * inner];
                        for (d, &x) in gdst.iter_mut().zip(gsrc) {
                            *d += x;
                        }
                    }
                }
            }
            Op::IndexRows { a, idx } => {
                if self.needs(*a) {
                    let a = *a;
                    let row: usize = self.nodes[a.0].shape[1..].iter().product();
                    let ga = self.grad_buf(grads, a);
                    for (o, &src) in idx.iter().enumerate() {
                        let gsrc = &g[o * row..(o + 1) * row];
                        let gdst = &mut ga[src * row..(src + 1) * row];
                        for (d, &x) in gdst.iter_mut().zip(gsrc) {
                            *d += x;
                        }
                    }
                }
            }
            Op::SelectMaxVec { a, idx } => {
                if self.needs(*a) {
                    let a = *a;
                    let sa = &self.nodes[a.0].shape;
                    let c = sa[sa.len() - 2];
                    let s = sa[sa.len() - 3];
                    let prefix: usize = sa[..sa.len() - 3].iter().product();
                    let ga = self.grad_buf(grads, a);
                    for p in 0..prefix {
                        for ch in 0..c {
                            let sel = idx[p * c + ch];
                            let dst = ((p * s + sel) * c + ch) * 3;
                            let src = (p * c + ch) * 3;
                            for x in 0..3 {
                                ga[dst + x] += g[src + x];
                            }
                        }
                    }
                }
            }
            Op::ReduceSum { a, axis } | Op::ReduceMean { a, axis } => {
                if self.needs(*a) {
                    let mean = matches!(self.nodes[id].op, Op::ReduceMean { .. });
                    let (a, axis) = (*a, *axis);
                    let (outer, len, inner) = axis_split(&self.nodes[a.0].shape, axis);
                    let scale = if mean { 1.0 / len as f32 } else { 1.0 };
                    let ga = self.grad_buf(grads, a);
                    for o in 0..outer {
                        let gsrc = &g[o * inner..(o + 1) * inner];
                        for l in 0..len {
                            let gdst = &mut ga[(o * len + l) * inner..(o * len + l + 1) * inner];
                            for (d, &x) in gdst.iter_mut().zip(gsrc) {
                                *d += x * scale;
                            }
                        }
                    }
                }
            }
            Op::ReduceMax { a, axis, argmax } => {
                if self.needs(*a) {
                    let (a, axis) = (*a, *axis);
                    let (outer, len, inner) = axis_split(&self.nodes[a.0].shape, axis);
                    let ga = self.grad_buf(grads, a);
                    for o in 0..outer {
                        for i in 0..inner {
                            let l = argmax[o * inner + i];
                            debug_assert!(l < len);
                            ga[(o * len + l) * inner + i] += g[o * inner + i];
                        }
                    }
                }
            }
            Op::SumAll(a) => {
                if self.needs(*a) {
                    let ga = self.grad_buf(grads, *a);
                    for d in ga.iter_mut() {
                        *d += g[0];
                    }
                }
            }
            Op::Relu(a) => {
                if self.needs(*a) {
                    let a = *a;
                    let out = Rc::clone(&self.nodes[id].data);
                    let ga = self.grad_buf(grads, a);
                    for ((d, &x), &y) in ga.iter_mut().zip(g).zip(out.iter()) {
                        if y > 0.0 {
                            *d += x;
                        }
                    }
                }
            }
            Op::Tanh(a) => {
                if self.needs(*a) {
                    let a = *a;
                    let out = Rc::clone(&self.nodes[id].data);
                    let ga = self.grad_buf(grads, a);
                    for ((d, &x), &y) in ga.iter_mut().zip(g).zip(out.iter()) {
                        *d += x * (1.0 - y * y);
                    }
                }
            }
            Op::Sqrt(a) => {
                if self.needs(*a) {
                    let a = *a;
                    let out = Rc::clone(&self.nodes[id].data);
                    let ga = self.grad_buf(grads, a);
                    for ((d, &x), &y) in ga.iter_mut().zip(g).zip(out.iter()) {
                        *d += x * 0.5 / y.max(1e-12);
                    }
                }
            }
            Op::AcosSafe(a) => {
                if self.needs(*a) {
                    let a = *a;
                    let inp = Rc::clone(&self.nodes[a.0].data);
                    let ga = self.grad_buf(grads, a);
                    for ((d, &x), &v) in ga.iter_mut().zip(g).zip(inp.iter()) {
                        let vc = v.clamp(-1.0 + 1e-7, 1.0 - 1e-7);
                        *d += -x / (1.0 - vc * vc).sqrt();
                    }
                }
            }
            Op::ExpandTail { a, m } => {
                if self.needs(*a) {
                    let (a, m) = (*a, *m);
                    let ga = self.grad_buf(grads, a);
                    for (i, d) in ga.iter_mut().enumerate() {
                        let mut acc = 0.0f32;
                        for t in 0..m {
                            acc += g[i * m + t];
                        }
                        *d += acc;
                    }
                }
            }
            Op::VnGate { v, d, slope } => {
                let (v, d, a) = (*v, *d, 1.0 - *slope);
                let vv = Rc::clone(&self.nodes[v.0].data);
                let dv = Rc::clone(&self.nodes[d.0].data);
                let needs_v = self.needs(v);
                let needs_d = self.needs(d);
                for i in (0..vv.len()).step_by(3) {
                    let (v3, d3, g3) = (&vv[i..i + 3], &dv[i..i + 3], &g[i..i + 3]);
                    let n = (d3[0] * d3[0] + d3[1] * d3[1] + d3[2] * d3[2]).sqrt();
                    if n <= 1e-20 {
                        // degenerate direction: output was v exactly
                        if needs_v {
                            let gv = self.grad_buf(grads, v);
                            for x in 0..3 {
                                gv[i + x] += g3[x];
                            }
                        }
                        continue;
                    }
                    let u = n + 1e-8;
                    let dh = [d3[0] / u, d3[1] / u, d3[2] / u];
                    let s = v3[0] * dh[0] + v3[1] * dh[1] + v3[2] * dh[2];
                    if s >= 0.0 {
                        if needs_v {
                            let gv = self.grad_buf(grads, v);
                            for x in 0..3 {
                                gv[i + x] += g3[x];
                            }
                        }
                        continue;
                    }
                    let g_dot_dh = g3[0] * dh[0] + g3[1] * dh[1] + g3[2] * dh[2];
                    if needs_v {
                        // dv = g - a <dh, g> dh
                        let gv = self.grad_buf(grads, v);
                        for x in 0..3 {
                            gv[i + x] += g3[x] - a * g_dot_dh * dh[x];
                        }
                    }
                    if needs_d {
                        // through dh: g_dh = -a (<g, dh> v + s g), then
                        // g_d = g_dh/u - d <g_dh, d> / (n u^2)
                        let g_dh = [
                            -a * (g_dot_dh * v3[0] + s * g3[0]),
                            -a * (g_dot_dh * v3[1] + s * g3[1]),
                            -a * (g_dot_dh * v3[2] + s * g3[2]),
                        ];
                        let gdh_dot_d = g_dh[0] * d3[0] + g_dh[1] * d3[1] + g_dh[2] * d3[2];
                        let back = gdh_dot_d / (n * u * u);
                        let gd = self.grad_buf(grads, d);
                        for x in 0..3 {
                            gd[i + x] += g_dh[x] / u - d3[x] * back;
                        }
                    }
                }
            }
            Op::Cross3(a, b) => {
                let (a, b) = (*a, *b);
                let av = Rc::clone(&self.nodes[a.0].data);
                let bv = Rc::clone(&self.nodes[b.0].data);
                if self.needs(a) {
                    let ga = self.grad_buf(grads, a);
                    for i in (0..av.len()).step_by(3) {
                        // d/da = b x g
                        ga[i] += bv[i + 1] * g[i + 2] - bv[i + 2] * g[i + 1];
                        ga[i + 1] += bv[i + 2] * g[i] - bv[i] * g[i + 2];
                        ga[i + 2] += bv[i] * g[i + 1] - bv[i + 1] * g[i];
                    }
                }
                if self.needs(b) {
                    let gb = self.grad_buf(grads, b);
                    for i in (0..bv.len()).step_by(3) {
                        // d/db = g x a
                        gb[i] += g[i + 1] * av[i + 2] - g[i + 2] * av[i + 1];
                        gb[i + 1] += g[i + 2] * av[i] - g[i] * av[i + 2];
                        gb[i + 2] += g[i] * av[i + 1] - g[i + 1] * av[i];
                    }
                }
            }
            Op::Chamfer { p, q, nn_pq, nn_qp } => {
                let (p, q) = (*p, *q);
                let pv = Rc::clone(&self.nodes[p.0].data);
                let qv = Rc::clone(&self.nodes[q.0].data);
                let n = pv.len() / 3;
                let m = qv.len() / 3;
                let g0 = g[0];
                // term 1: (1/n) sum_i |p_i - q_{nn(i)}|^2
                for (i, &j) in nn_pq.iter().enumerate() {
                    let w = 2.0 * g0 / n as f32;
                    for x in 0..3 {
                        let diff = pv[i * 3 + x] - qv[j * 3 + x];
                        if self.needs(p) {
                            self.grad_buf(grads, p)[i * 3 + x] += w * diff;
                        }
                        if self.needs(q) {
                            self.grad_buf(grads, q)[j * 3 + x] -= w * diff;
                        }
                    }
                }
                // term 2: (1/m) sum_j |q_j - p_{nn(j)}|^2
                for (j, &i) in nn_qp.iter().enumerate() {
                    let w = 2.0 * g0 / m as f32;
                    for x in 0..3 {
                        let diff = qv[j * 3 + x] - pv[i * 3 + x];
                        if self.needs(q) {
                            self.grad_buf(grads, q)[j * 3 + x] += w * diff;
                        }
                        if self.needs(p) {
                            self.grad_buf(grads, p)[i * 3 + x] -= w * diff;
                        }
                    }
                }
            }
        }
    }

    fn bc_accum(
        &self,
        grads: &mut [Option<Vec<f32>>],
        target: Var,
        g: &[f32],
        bc: Bc,
        target_is_lhs: bool,
    ) {
        let buf = self.grad_buf(grads, target);
        match (bc, target_is_lhs) {
            (Bc::Equal, _) | (Bc::RhsCycle(_), true) | (Bc::LhsCycle(_), false) => {
                for (d, &x) in buf.iter_mut().zip(g) {
                    *d += x;
                }
            }
            (Bc::RhsCycle(nb), false) => {
                for (i, &x) in g.iter().enumerate() {
                    buf[i % nb] += x;
                }
            }
            (Bc::LhsCycle(na), true) => {
                for (i, &x) in g.iter().enumerate() {
                    buf[i % na] += x;
                }
            }
        }
    }
}

/// Multiply `g` (in broadcast output space) pointwise by `other`, which may
/// be the cycled side. `other_is_lhs` says which operand `other` was.
fn bc_mul(g: &[f32], other: &[f32], bc: Bc, other_is_lhs: bool) -> Vec<f32> {
    match (bc, other_is_lhs) {
        (Bc::Equal, _) => g.iter().zip(other).map(|(&x, &y)| x * y).collect(),
        (Bc::RhsCycle(nb), false) => (0..g.len()).map(|i| g[i] * other[i % nb]).collect(),
        (Bc::LhsCycle(na), true) => (0..g.len()).map(|i| g[i] * other[i % na]).collect(),
        // `other` is the full-size side
        _ => g.iter().zip(other).map(|(&x, &y)| x * y).collect(),
    }
}
