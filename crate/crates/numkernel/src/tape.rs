//! Reverse-mode differentiation over vectors.
//!
//! A [`Tape`] records every operation in creation order, so node indices are
//! already a topological order and `backward` is a single reverse sweep.
//! Parameters are read in place from the borrowed [`ParamRegistry`]; each
//! parameter gets at most one leaf node per tape.

use crate::error::{dim_err, KernelError, Result};
use crate::ops::{self, LOG_FLOOR};
use crate::registry::{ParamId, ParamRegistry};
use crate::rng::Rng;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Norm floor used by the cosine similarity op.
pub const COSINE_EPS: f64 = 1e-8;

#[derive(Debug)]
enum Op {
    Const,
    Param(ParamId),
    MatVec(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Abs(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Row(Var, usize),
    Dot(Var, Var),
    Softmax(Var),
    Sum(Vec<Var>),
    Mean(Vec<Var>),
    Pick(Var, usize),
    NegLog(Var, usize),
    Norm(Var),
    Cosine(Var, Var),
    Mask(Var, Vec<f64>),
    Gru(Box<GruCache>),
}

#[derive(Debug)]
struct GruCache {
    x: Var,
    h: Var,
    w: Var,
    u: Var,
    b: Var,
    z: Vec<f64>,
    r: Vec<f64>,
    cand: Vec<f64>,
    rh: Vec<f64>,
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Vec<f64>,
    rows: usize,
    cols: usize,
}

/// Gradients of one backward sweep, keyed by parameter.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    by_param: Vec<(ParamId, Vec<f64>)>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.by_param.iter().find(|(p, _)| *p == id).map(|(_, g)| g.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.by_param.iter().map(|(p, g)| (*p, g.as_slice()))
    }

    /// Adds these gradients into the registry. Every trainable parameter ends
    /// with a populated gradient; parameters the tape never touched get zeros.
    pub fn accumulate_into(&self, registry: &mut ParamRegistry) -> Result<()> {
        let ids: Vec<ParamId> = registry.ids().collect();
        for id in ids {
            if !registry.is_trainable(id) {
                continue;
            }
            let t = registry.get_mut(id);
            let mut acc = t.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]);
            if let Some(g) = self.get(id) {
                for (a, v) in acc.iter_mut().zip(g) {
                    *a += v;
                }
            }
            t.set_grad(acc)?;
        }
        Ok(())
    }
}

pub struct Tape<'r> {
    registry: &'r ParamRegistry,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
    branches: u64,
}

fn check_finite(op: &'static str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(KernelError::Numeric(op))
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn matvec_into(w: &[f64], cols: usize, x: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o = dot(row, x);
    }
}

fn add_into(acc: &mut Vec<f64>, len: usize, g: &[f64]) {
    if acc.is_empty() {
        acc.resize(len, 0.0);
    }
    for (a, v) in acc.iter_mut().zip(g) {
        *a += v;
    }
}

/// `acc += outer(g, x)` for a `[g.len(), x.len()]` block starting at row `row0`.
fn add_outer(acc: &mut [f64], cols: usize, row0: usize, g: &[f64], x: &[f64]) {
    for (i, gi) in g.iter().enumerate() {
        if *gi == 0.0 {
            continue;
        }
        let row = &mut acc[(row0 + i) * cols..(row0 + i + 1) * cols];
        for (a, xv) in row.iter_mut().zip(x) {
            *a += gi * xv;
        }
    }
}

/// `out += W[row0..row0+g.len()]^T g`.
fn add_matvec_t(out: &mut [f64], w: &[f64], cols: usize, row0: usize, g: &[f64]) {
    for (i, gi) in g.iter().enumerate() {
        if *gi == 0.0 {
            continue;
        }
        let row = &w[(row0 + i) * cols..(row0 + i + 1) * cols];
        for (o, wv) in out.iter_mut().zip(row) {
            *o += gi * wv;
        }
    }
}

impl<'r> Tape<'r> {
    pub fn new(registry: &'r ParamRegistry) -> Self {
        Self {
            registry,
            nodes: Vec::with_capacity(1024),
            param_nodes: vec![None; registry.len()],
            branches: 0,
        }
    }

    /// Hash of every branch taken at a non-differentiable point so far: the
    /// sign class of each relu and abs input and which floors were active.
    /// Two evaluations with equal signatures lie on the same smooth piece.
    pub fn branch_signature(&self) -> u64 {
        self.branches
    }

    fn record_branch(&mut self, class: u64) {
        let mut z = (self.branches ^ class).wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        self.branches = z ^ (z >> 31);
    }

    fn record_signs(&mut self, a: Var) {
        let classes: Vec<u64> = self.value(a).iter().map(|&x| (x > 0.0) as u64 + 2 * (x < 0.0) as u64).collect();
        for c in classes {
            self.record_branch(c);
        }
    }

    pub fn registry(&self) -> &'r ParamRegistry {
        self.registry
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => self.registry.get(id).values(),
            _ => &node.value,
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn vec_len(&self, v: Var) -> usize {
        let n = &self.nodes[v.0];
        n.rows * n.cols
    }

    fn push(&mut self, op: Op, value: Vec<f64>, rows: usize, cols: usize, name: &'static str) -> Result<Var> {
        check_finite(name, &value)?;
        self.nodes.push(Node { op, value, rows, cols });
        Ok(Var(self.nodes.len() - 1))
    }

    fn push_vec(&mut self, op: Op, value: Vec<f64>, name: &'static str) -> Result<Var> {
        let n = value.len();
        self.push(op, value, n, 1, name)
    }

    fn same_len(&self, op: &'static str, a: Var, b: Var) -> Result<usize> {
        let (la, lb) = (self.vec_len(a), self.vec_len(b));
        if la != lb {
            return Err(dim_err(op, la, lb));
        }
        Ok(la)
    }

    pub fn constant(&mut self, values: Vec<f64>) -> Result<Var> {
        self.push_vec(Op::Const, values, "constant")
    }

    pub fn zeros(&mut self, n: usize) -> Var {
        self.nodes.push(Node {
            op: Op::Const,
            value: vec![0.0; n],
            rows: n,
            cols: 1,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf node for a registered parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        let (rows, cols) = self.registry.get(id).matrix_dims();
        self.nodes.push(Node {
            op: Op::Param(id),
            value: Vec::new(),
            rows,
            cols,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(v);
        v
    }

    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let (rows, cols) = self.dims(w);
        if self.vec_len(x) != cols {
            return Err(dim_err("matvec", cols, self.vec_len(x)));
        }
        let mut out = vec![0.0; rows];
        matvec_into(self.value(w), cols, self.value(x), &mut out);
        self.push_vec(Op::MatVec(w, x), out, "matvec")
    }

    pub fn affine(&mut self, w: Var, x: Var, b: Var) -> Result<Var> {
        let y = self.matvec(w, x)?;
        self.add(y, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len("add", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        self.push_vec(Op::Add(a, b), out, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len("sub", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x - y).collect();
        self.push_vec(Op::Sub(a, b), out, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len("mul", a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        self.push_vec(Op::Mul(a, b), out, "mul")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.value(a).iter().map(|x| x * s).collect();
        self.push_vec(Op::Scale(a, s), out, "scale")
    }

    /// Vector `a` times the scalar node `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.vec_len(s) != 1 {
            return Err(dim_err("scale_by", "scalar", self.vec_len(s)));
        }
        let k = self.scalar(s);
        let out = self.value(a).iter().map(|x| x * k).collect();
        self.push_vec(Op::ScaleBy(a, s), out, "scale_by")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).iter().map(|x| x.tanh()).collect();
        self.push_vec(Op::Tanh(a), out, "tanh")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).iter().map(|&x| sigmoid(x)).collect();
        self.push_vec(Op::Sigmoid(a), out, "sigmoid")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.record_signs(a);
        let out = self.value(a).iter().map(|x| x.max(0.0)).collect();
        self.push_vec(Op::Relu(a), out, "relu")
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.record_signs(a);
        let out = self.value(a).iter().map(|x| x.abs()).collect();
        self.push_vec(Op::Abs(a), out, "abs")
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(KernelError::Domain("concat of zero parts".into()));
        }
        let total = parts.iter().map(|&p| self.vec_len(p)).sum();
        let mut out = Vec::with_capacity(total);
        for &p in parts {
            out.extend_from_slice(self.value(p));
        }
        self.push_vec(Op::Concat(parts.to_vec()), out, "concat")
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let n = self.vec_len(a);
        if start + len > n {
            return Err(dim_err("slice", format!("range within {n}"), format!("{start}..{}", start + len)));
        }
        let out = self.value(a)[start..start + len].to_vec();
        self.push_vec(Op::Slice(a, start), out, "slice")
    }

    /// Row `idx` of a matrix node, as a vector.
    pub fn row(&mut self, table: Var, idx: usize) -> Result<Var> {
        let (rows, cols) = self.dims(table);
        if idx >= rows {
            return Err(dim_err("row", format!("index < {rows}"), idx));
        }
        let out = self.value(table)[idx * cols..(idx + 1) * cols].to_vec();
        self.push_vec(Op::Row(table, idx), out, "row")
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len("dot", a, b)?;
        let out = vec![dot(self.value(a), self.value(b))];
        self.push_vec(Op::Dot(a, b), out, "dot")
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let out = ops::softmax(self.value(a))?;
        self.push_vec(Op::Softmax(a), out, "softmax")
    }

    pub fn sum(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(KernelError::Domain("sum of zero terms".into()));
        };
        let n = self.vec_len(first);
        let mut out = vec![0.0; n];
        for &p in parts {
            if self.vec_len(p) != n {
                return Err(dim_err("sum", n, self.vec_len(p)));
            }
            for (o, v) in out.iter_mut().zip(self.value(p)) {
                *o += v;
            }
        }
        self.push_vec(Op::Sum(parts.to_vec()), out, "sum")
    }

    /// Running mean, so identical inputs average to themselves exactly.
    pub fn mean(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(KernelError::Domain("mean of zero terms".into()));
        };
        let n = self.vec_len(first);
        let mut out = self.value(first).to_vec();
        for (k, &p) in parts.iter().enumerate().skip(1) {
            if self.vec_len(p) != n {
                return Err(dim_err("mean", n, self.vec_len(p)));
            }
            let inv = 1.0 / (k + 1) as f64;
            for (o, v) in out.iter_mut().zip(self.value(p)) {
                *o += (v - *o) * inv;
            }
        }
        self.push_vec(Op::Mean(parts.to_vec()), out, "mean")
    }

    pub fn pick(&mut self, a: Var, idx: usize) -> Result<Var> {
        let n = self.vec_len(a);
        if idx >= n {
            return Err(dim_err("pick", format!("index < {n}"), idx));
        }
        let out = vec![self.value(a)[idx]];
        self.push_vec(Op::Pick(a, idx), out, "pick")
    }

    /// `-ln(max(p[target], 1e-12))` for a probability vector `p`.
    pub fn cross_entropy(&mut self, p: Var, target: usize) -> Result<Var> {
        let out = vec![ops::cross_entropy(self.value(p), target)?];
        let floored = self.value(p).get(target).is_some_and(|&v| v <= LOG_FLOOR);
        self.record_branch(floored as u64);
        self.push_vec(Op::NegLog(p, target), out, "cross_entropy")
    }

    /// Euclidean norm.
    pub fn norm(&mut self, a: Var) -> Result<Var> {
        let out = vec![dot(self.value(a), self.value(a)).sqrt()];
        self.record_branch((out[0] > 0.0) as u64);
        self.push_vec(Op::Norm(a), out, "norm")
    }

    /// Cosine similarity with each norm floored at [`COSINE_EPS`].
    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len("cosine", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let (ra, rb) = (dot(va, va).sqrt(), dot(vb, vb).sqrt());
        let out = vec![dot(va, vb) / (ra.max(COSINE_EPS) * rb.max(COSINE_EPS))];
        self.record_branch((ra <= COSINE_EPS) as u64 + 2 * (rb <= COSINE_EPS) as u64);
        self.push_vec(Op::Cosine(a, b), out, "cosine")
    }

    /// Inverted dropout. In eval mode, or at rate 0, returns `a` unchanged.
    pub fn dropout(&mut self, a: Var, rate: f64, rng: &mut Rng, training: bool) -> Result<Var> {
        ops::check_dropout_rate(rate)?;
        if !training || rate == 0.0 {
            return Ok(a);
        }
        let mask = ops::dropout_mask(self.vec_len(a), rate, rng);
        let out = self.value(a).iter().zip(&mask).map(|(x, m)| x * m).collect();
        self.push_vec(Op::Mask(a, mask), out, "dropout")
    }

    /// One GRU step. `w` is `[3H, I]`, `u` is `[3H, H]`, `b` has `3H` entries;
    /// row blocks are ordered update gate, reset gate, candidate.
    pub fn gru(&mut self, x: Var, h: Var, w: Var, u: Var, b: Var) -> Result<Var> {
        let hid = self.vec_len(h);
        let inp = self.vec_len(x);
        if self.dims(w) != (3 * hid, inp) {
            return Err(dim_err("gru_cell W", format!("[{}, {inp}]", 3 * hid), format!("{:?}", self.dims(w))));
        }
        if self.dims(u) != (3 * hid, hid) {
            return Err(dim_err("gru_cell U", format!("[{}, {hid}]", 3 * hid), format!("{:?}", self.dims(u))));
        }
        if self.vec_len(b) != 3 * hid {
            return Err(dim_err("gru_cell b", 3 * hid, self.vec_len(b)));
        }
        let (xv, hv, wv, uv, bv) = (self.value(x), self.value(h), self.value(w), self.value(u), self.value(b));
        let mut wx = vec![0.0; 3 * hid];
        matvec_into(wv, inp, xv, &mut wx);
        let mut uh = vec![0.0; 2 * hid];
        matvec_into(&uv[..2 * hid * hid], hid, hv, &mut uh);
        let z: Vec<f64> = (0..hid).map(|i| sigmoid(wx[i] + uh[i] + bv[i])).collect();
        let r: Vec<f64> = (0..hid)
            .map(|i| sigmoid(wx[hid + i] + uh[hid + i] + bv[hid + i]))
            .collect();
        let rh: Vec<f64> = r.iter().zip(hv).map(|(a, b)| a * b).collect();
        let mut urh = vec![0.0; hid];
        matvec_into(&uv[2 * hid * hid..], hid, &rh, &mut urh);
        let cand: Vec<f64> = (0..hid)
            .map(|i| (wx[2 * hid + i] + urh[i] + bv[2 * hid + i]).tanh())
            .collect();
        let out: Vec<f64> = (0..hid).map(|i| (1.0 - z[i]) * hv[i] + z[i] * cand[i]).collect();
        let cache = GruCache {
            x,
            h,
            w,
            u,
            b,
            z,
            r,
            cand,
            rh,
        };
        self.push_vec(Op::Gru(Box::new(cache)), out, "gru_cell")
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.vec_len(loss) != 1 {
            return Err(dim_err("backward", "scalar loss", self.vec_len(loss)));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); n];
        grads[loss.0] = vec![1.0];
        for i in (0..=loss.0).rev() {
            if grads[i].is_empty() {
                continue;
            }
            let g = std::mem::take(&mut grads[i]);
            let node = &self.nodes[i];
            match &node.op {
                Op::Const => {}
                Op::Param(_) => {
                    grads[i] = g;
                }
                Op::MatVec(w, x) => {
                    let (rows, cols) = self.dims(*w);
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    let gw = &mut grads[w.0];
                    if gw.is_empty() {
                        gw.resize(rows * cols, 0.0);
                    }
                    add_outer(gw, cols, 0, &g, xv);
                    let gx = &mut grads[x.0];
                    if gx.is_empty() {
                        gx.resize(cols, 0.0);
                    }
                    add_matvec_t(gx, wv, cols, 0, &g);
                }
                Op::Add(a, b) => {
                    add_into(&mut grads[a.0], g.len(), &g);
                    add_into(&mut grads[b.0], g.len(), &g);
                }
                Op::Sub(a, b) => {
                    add_into(&mut grads[a.0], g.len(), &g);
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    add_into(&mut grads[b.0], g.len(), &neg);
                }
                Op::Mul(a, b) => {
                    let ga: Vec<f64> = g.iter().zip(self.value(*b)).map(|(x, y)| x * y).collect();
                    let gb: Vec<f64> = g.iter().zip(self.value(*a)).map(|(x, y)| x * y).collect();
                    add_into(&mut grads[a.0], g.len(), &ga);
                    add_into(&mut grads[b.0], g.len(), &gb);
                }
                Op::Scale(a, s) => {
                    let ga: Vec<f64> = g.iter().map(|v| v * s).collect();
                    add_into(&mut grads[a.0], g.len(), &ga);
                }
                Op::ScaleBy(a, s) => {
                    let k = self.scalar(*s);
                    let ga: Vec<f64> = g.iter().map(|v| v * k).collect();
                    let gs = dot(&g, self.value(*a));
                    add_into(&mut grads[a.0], g.len(), &ga);
                    add_into(&mut grads[s.0], 1, &[gs]);
                }
                Op::Tanh(a) => {
                    let ga: Vec<f64> = g.iter().zip(&node.value).map(|(gv, y)| gv * (1.0 - y * y)).collect();
                    add_into(&mut grads[a.0], g.len(), &ga);
                }
                Op::Sigmoid(a) => {
                    let ga: Vec<f64> = g.iter().zip(&node.value).map(|(gv, y)| gv * y * (1.0 - y)).collect();
                    add_into(&mut grads[a.0], g.len(), &ga);
                }
                Op::Relu(a) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(self.value(*a))
                        .map(|(gv, x)| if *x > 0.0 { *gv } else { 0.0 })
                        .collect();
                    add_into(&mut grads[a.0], g.len(), &ga);
                }
                Op::Abs(a) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(self.value(*a))
                        .map(|(gv, x)| {
                            if *x > 0.0 {
                                *gv
                            } else if *x < 0.0 {
                                -gv
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    add_into(&mut grads[a.0], g.len(), &ga);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let len = self.vec_len(*p);
                        add_into(&mut grads[p.0], len, &g[off..off + len]);
                        off += len;
                    }
                }
                Op::Slice(a, start) => {
                    let len = self.vec_len(*a);
                    let ga = &mut grads[a.0];
                    if ga.is_empty() {
                        ga.resize(len, 0.0);
                    }
                    for (k, v) in g.iter().enumerate() {
                        ga[start + k] += v;
                    }
                }
                Op::Row(t, idx) => {
                    let (rows, cols) = self.dims(*t);
                    let gt = &mut grads[t.0];
                    if gt.is_empty() {
                        gt.resize(rows * cols, 0.0);
                    }
                    for (k, v) in g.iter().enumerate() {
                        gt[idx * cols + k] += v;
                    }
                }
                Op::Dot(a, b) => {
                    let ga: Vec<f64> = self.value(*b).iter().map(|v| v * g[0]).collect();
                    let gb: Vec<f64> = self.value(*a).iter().map(|v| v * g[0]).collect();
                    add_into(&mut grads[a.0], ga.len(), &ga);
                    add_into(&mut grads[b.0], gb.len(), &gb);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let gy = dot(&g, y);
                    let ga: Vec<f64> = y.iter().zip(&g).map(|(yv, gv)| yv * (gv - gy)).collect();
                    add_into(&mut grads[a.0], ga.len(), &ga);
                }
                Op::Sum(parts) => {
                    for p in parts {
                        add_into(&mut grads[p.0], g.len(), &g);
                    }
                }
                Op::Mean(parts) => {
                    let inv = 1.0 / parts.len() as f64;
                    let gp: Vec<f64> = g.iter().map(|v| v * inv).collect();
                    for p in parts {
                        add_into(&mut grads[p.0], gp.len(), &gp);
                    }
                }
                Op::Pick(a, idx) => {
                    let len = self.vec_len(*a);
                    let ga = &mut grads[a.0];
                    if ga.is_empty() {
                        ga.resize(len, 0.0);
                    }
                    ga[*idx] += g[0];
                }
                Op::NegLog(p, idx) => {
                    let pv = self.value(*p)[*idx];
                    let len = self.vec_len(*p);
                    let gp = &mut grads[p.0];
                    if gp.is_empty() {
                        gp.resize(len, 0.0);
                    }
                    if pv > LOG_FLOOR {
                        gp[*idx] -= g[0] / pv;
                    }
                }
                Op::Norm(a) => {
                    let y = node.value[0];
                    if y > 0.0 {
                        let ga: Vec<f64> = self.value(*a).iter().map(|v| g[0] * v / y).collect();
                        add_into(&mut grads[a.0], ga.len(), &ga);
                    }
                }
                Op::Cosine(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let ra = dot(va, va).sqrt();
                    let rb = dot(vb, vb).sqrt();
                    let na = ra.max(COSINE_EPS);
                    let nb = rb.max(COSINE_EPS);
                    let y = node.value[0];
                    let ga: Vec<f64> = va
                        .iter()
                        .zip(vb)
                        .map(|(x, w)| {
                            let mut d = w / (na * nb);
                            if ra > COSINE_EPS {
                                d -= y * x / (na * na);
                            }
                            g[0] * d
                        })
                        .collect();
                    let gb: Vec<f64> = vb
                        .iter()
                        .zip(va)
                        .map(|(w, x)| {
                            let mut d = x / (na * nb);
                            if rb > COSINE_EPS {
                                d -= y * w / (nb * nb);
                            }
                            g[0] * d
                        })
                        .collect();
                    add_into(&mut grads[a.0], ga.len(), &ga);
                    add_into(&mut grads[b.0], gb.len(), &gb);
                }
                Op::Mask(a, mask) => {
                    let ga: Vec<f64> = g.iter().zip(mask).map(|(x, m)| x * m).collect();
                    add_into(&mut grads[a.0], ga.len(), &ga);
                }
                Op::Gru(c) => self.gru_backward(c, &g, &mut grads),
            }
        }
        let mut by_param = Vec::new();
        for (pid, slot) in self.param_nodes.iter().enumerate() {
            if let Some(v) = slot {
                let g = std::mem::take(&mut grads[v.0]);
                let g = if g.is_empty() { vec![0.0; self.vec_len(*v)] } else { g };
                by_param.push((ParamId(pid), g));
            }
        }
        Ok(Gradients { by_param })
    }

    fn gru_backward(&self, c: &GruCache, g: &[f64], grads: &mut [Vec<f64>]) {
        let hid = g.len();
        let inp = self.vec_len(c.x);
        let hv = self.value(c.h);
        let xv = self.value(c.x);
        let wv = self.value(c.w);
        let uv = self.value(c.u);

        // pre-activation gradients, stacked [z; r; cand]
        let mut da = vec![0.0; 3 * hid];
        let mut dh = vec![0.0; hid];
        for i in 0..hid {
            let z = c.z[i];
            let cand = c.cand[i];
            dh[i] = g[i] * (1.0 - z);
            da[i] = g[i] * (cand - hv[i]) * z * (1.0 - z);
            da[2 * hid + i] = g[i] * z * (1.0 - cand * cand);
        }
        // through U_h (r ∘ h)
        let mut drh = vec![0.0; hid];
        add_matvec_t(&mut drh, &uv[2 * hid * hid..], hid, 0, &da[2 * hid..]);
        for i in 0..hid {
            let r = c.r[i];
            dh[i] += drh[i] * r;
            da[hid + i] = drh[i] * hv[i] * r * (1.0 - r);
        }
        add_matvec_t(&mut dh, uv, hid, 0, &da[..2 * hid]);

        let gw = &mut grads[c.w.0];
        if gw.is_empty() {
            gw.resize(3 * hid * inp, 0.0);
        }
        add_outer(gw, inp, 0, &da, xv);

        let gu = &mut grads[c.u.0];
        if gu.is_empty() {
            gu.resize(3 * hid * hid, 0.0);
        }
        add_outer(gu, hid, 0, &da[..2 * hid], hv);
        add_outer(gu, hid, 2 * hid, &da[2 * hid..], &c.rh);

        add_into(&mut grads[c.b.0], 3 * hid, &da);

        let mut dx = vec![0.0; inp];
        add_matvec_t(&mut dx, wv, inp, 0, &da);
        add_into(&mut grads[c.x.0], inp, &dx);
        add_into(&mut grads[c.h.0], hid, &dh);
    }
}
