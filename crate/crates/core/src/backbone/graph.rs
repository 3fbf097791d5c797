//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Nodes are appended in evaluation order, so walking the tape backwards is a
//! valid reverse topological order. Parameters are bound once per graph by
//! [`ParamId`]; a parameter used by two flows therefore receives the sum of
//! both flows' gradients.

use std::collections::HashMap;

use super::params::{Param, ParamId};
use super::tensor::{log_sum_exp, matmul, matmul_nt_acc, matmul_tn_acc, softmax_into, Scalar, Tensor};
use crate::vancl::loss::{divergence_row, divergence_row_grad, DivergenceKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

const LN_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Gather {
        table: NodeId,
        idx: Vec<usize>,
    },
    Gelu(NodeId),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Attention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        ranges: Vec<(usize, usize)>,
        heads: usize,
        bias: Option<AttnBias>,
        probs: Vec<T>,
    },
    Dropout {
        x: NodeId,
        mask: Vec<T>,
    },
    Im2Col {
        x: NodeId,
        geom: ConvGeom,
    },
    AvgPool2 {
        x: NodeId,
        geom: ConvGeom,
    },
    Reshape(NodeId),
    Detach,
    CrossEntropy {
        logits: NodeId,
        gold: Vec<usize>,
        probs: Vec<T>,
    },
    Divergence {
        p: NodeId,
        q: NodeId,
        kind: DivergenceKind,
        p_probs: Vec<T>,
        q_probs: Vec<T>,
    },
    WeightedSum(Vec<(NodeId, T)>),
    HalfSumSquares(NodeId),
}

/// Additive attention-score bias looked up from `table` (`[rows, heads]`). Query/key pairs
/// are enumerated block by block, query-major; pair `p` adds rows `idx[p*per_pair..][..per_pair]`.
#[derive(Debug, Clone)]
pub struct AttnBias {
    pub table: NodeId,
    pub idx: Vec<usize>,
    pub per_pair: usize,
}

/// Batch of `n` images of `h x w` pixels with `c` channels, stored as `[n*h*w, c]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, NodeId>,
    param_names: HashMap<ParamId, String>,
}

/// Parameter gradients produced by [`Graph::backward`].
#[derive(Debug, Clone, Default)]
pub struct Gradients<T> {
    pub by_param: HashMap<ParamId, Vec<T>>,
    pub names: HashMap<ParamId, String>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        self.by_param.get(&id).map(Vec::as_slice)
    }

    pub fn global_norm(&self) -> f64 {
        let mut ids: Vec<_> = self.by_param.keys().copied().collect();
        ids.sort_unstable();
        ids.iter()
            .flat_map(|id| self.by_param[id].iter())
            .map(|g| {
                let g = g.to_f64_lossless();
                g * g
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Name of the first parameter (by id) holding a non-finite gradient.
    pub fn first_non_finite(&self) -> Option<String> {
        let mut ids: Vec<_> = self.by_param.keys().copied().collect();
        ids.sort_unstable();
        ids.into_iter()
            .find(|id| self.by_param[id].iter().any(|g| !g.is_finite()))
            .map(|id| self.names.get(&id).cloned().unwrap_or_else(|| format!("{id:?}")))
    }
}

#[inline]
fn gelu<T: Scalar>(x: T) -> (T, T) {
    // tanh approximation; returns value and derivative
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let a = T::lit(0.044715);
    let half = T::lit(0.5);
    let inner = c * (x + a * x * x * x);
    let t = inner.tanh();
    let y = half * x * (T::one() + t);
    let dinner = c * (T::one() + T::lit(3.0) * a * x * x);
    let dy = half * (T::one() + t) + half * x * (T::one() - t * t) * dinner;
    (y, dy)
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            param_names: HashMap::new(),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn ng(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> T {
        self.nodes[id.0].value.data[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Binds a trainable parameter; repeated calls with the same id return the same node.
    pub fn param(&mut self, p: &Param<T>) -> NodeId {
        if let Some(&id) = self.params.get(&p.id) {
            return id;
        }
        let id = self.push(p.value.clone(), Op::Leaf, true);
        self.params.insert(p.id, id);
        self.param_names.insert(p.id, p.name.clone());
        id
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (n, k, m) = (av.rows(), av.cols(), bv.cols());
        assert_eq!(k, bv.rows(), "matmul inner dims {:?} x {:?}", av.shape, bv.shape);
        let out = Tensor::from_vec(&[n, m], matmul(&av.data, &bv.data, n, k, m));
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMul(a, b), ng)
    }

    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> NodeId {
        let (xv, bv) = (&self.nodes[x.0].value, &self.nodes[bias.0].value);
        let m = xv.cols();
        assert_eq!(bv.len(), m, "bias of {} for width {m}", bv.len());
        let mut out = xv.clone();
        for row in out.data.chunks_mut(m) {
            for (o, &b) in row.iter_mut().zip(&bv.data) {
                *o += b;
            }
        }
        out.shape = vec![xv.rows(), m];
        let ng = self.ng(x) || self.ng(bias);
        self.push(out, Op::AddBias(x, bias), ng)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(av.len(), bv.len(), "add {:?} + {:?}", av.shape, bv.shape);
        let mut out = av.clone();
        for (o, &y) in out.data.iter_mut().zip(&bv.data) {
            *o += y;
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Add(a, b), ng)
    }

    /// Sum of several same-shaped nodes, left to right.
    pub fn add_all(&mut self, xs: &[NodeId]) -> NodeId {
        let mut acc = xs[0];
        for &x in &xs[1..] {
            acc = self.add(acc, x);
        }
        acc
    }

    /// Row lookup: `out[i] = table[idx[i]]`.
    pub fn gather(&mut self, table: NodeId, idx: Vec<usize>) -> NodeId {
        let tv = &self.nodes[table.0].value;
        let d = tv.cols();
        let mut data = Vec::with_capacity(idx.len() * d);
        for &i in &idx {
            assert!(i < tv.rows(), "gather index {i} out of {} rows", tv.rows());
            data.extend_from_slice(tv.row(i));
        }
        let out = Tensor::from_vec(&[idx.len(), d], data);
        let ng = self.ng(table);
        self.push(out, Op::Gather { table, idx }, ng)
    }

    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let out = Tensor::from_vec(&xv.shape, xv.data.iter().map(|&v| gelu(v).0).collect());
        let ng = self.ng(x);
        self.push(out, Op::Gelu(x), ng)
    }

    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let (n, d) = (xv.rows(), xv.cols());
        let g = &self.nodes[gamma.0].value.data;
        let b = &self.nodes[beta.0].value.data;
        let eps = T::lit(LN_EPS);
        let dn = T::lit(d as f64);
        let mut out = vec![T::zero(); n * d];
        let mut xhat = vec![T::zero(); n * d];
        let mut inv_std = vec![T::zero(); n];
        for i in 0..n {
            let row = xv.row(i);
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let is = T::one() / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[i * d + j] = h;
                out[i * d + j] = h * g[j] + b[j];
            }
        }
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        self.push(
            Tensor::from_vec(&[n, d], out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            ng,
        )
    }

    /// Scaled dot-product attention restricted to blocks `ranges` (one per sequence).
    pub fn attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        ranges: Vec<(usize, usize)>,
        heads: usize,
        bias: Option<AttnBias>,
    ) -> NodeId {
        let (qv, kv, vv) = (&self.nodes[q.0].value, &self.nodes[k.0].value, &self.nodes[v.0].value);
        let (n, d) = (qv.rows(), qv.cols());
        assert!(d % heads == 0, "width {d} not divisible by {heads} heads");
        let bias_table = bias.as_ref().map(|b| {
            let t = &self.nodes[b.table.0].value;
            assert_eq!(t.cols(), heads, "bias table {:?} for {heads} heads", t.shape);
            let pairs: usize = ranges.iter().map(|(s, e)| (e - s) * (e - s)).sum();
            assert_eq!(b.idx.len(), pairs * b.per_pair, "bias indices for {pairs} pairs");
            (t, b)
        });
        let dh = d / heads;
        let scale = T::one() / T::lit(dh as f64).sqrt();
        let mut out = vec![T::zero(); n * d];
        let mut probs = Vec::new();
        let mut scores = Vec::new();
        let mut pair_base = 0;
        for &(s, e) in &ranges {
            let len = e - s;
            for h in 0..heads {
                let c0 = h * dh;
                for i in s..e {
                    let qi = &qv.data[i * d + c0..i * d + c0 + dh];
                    scores.clear();
                    for j in s..e {
                        let kj = &kv.data[j * d + c0..j * d + c0 + dh];
                        let dot: T = qi.iter().zip(kj).map(|(&a, &b)| a * b).sum();
                        let mut sc = dot * scale;
                        if let Some((t, b)) = bias_table {
                            let p = pair_base + (i - s) * len + (j - s);
                            for &r in &b.idx[p * b.per_pair..(p + 1) * b.per_pair] {
                                sc += t.data[r * heads + h];
                            }
                        }
                        scores.push(sc);
                    }
                    let base = probs.len();
                    probs.resize(base + len, T::zero());
                    softmax_into(&scores, &mut probs[base..]);
                    let orow = &mut out[i * d + c0..i * d + c0 + dh];
                    for (jj, j) in (s..e).enumerate() {
                        let a = probs[base + jj];
                        let vj = &vv.data[j * d + c0..j * d + c0 + dh];
                        for (o, &x) in orow.iter_mut().zip(vj) {
                            *o += a * x;
                        }
                    }
                }
            }
            pair_base += len * len;
        }
        let ng = self.ng(q) || self.ng(k) || self.ng(v) || bias.as_ref().is_some_and(|b| self.ng(b.table));
        self.push(
            Tensor::from_vec(&[n, d], out),
            Op::Attention {
                q,
                k,
                v,
                ranges,
                heads,
                bias,
                probs,
            },
            ng,
        )
    }

    /// Multiplies by a precomputed mask (entries 0 or `1/(1-p)`).
    pub fn dropout(&mut self, x: NodeId, mask: Vec<T>) -> NodeId {
        let xv = &self.nodes[x.0].value;
        assert_eq!(mask.len(), xv.len());
        let out = Tensor::from_vec(&xv.shape, xv.data.iter().zip(&mask).map(|(&a, &m)| a * m).collect());
        let ng = self.ng(x);
        self.push(out, Op::Dropout { x, mask }, ng)
    }

    /// 3x3 patches with zero padding: `[n*h*w, c] -> [n*h*w, 9*c]`.
    pub fn im2col3x3(&mut self, x: NodeId, geom: ConvGeom) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let ConvGeom { n, h, w, c } = geom;
        assert_eq!(xv.len(), n * h * w * c, "im2col input {:?} vs {geom:?}", xv.shape);
        let k = 9 * c;
        let mut out = vec![T::zero(); n * h * w * k];
        for img in 0..n {
            for y in 0..h {
                for xx in 0..w {
                    let orow = ((img * h + y) * w + xx) * k;
                    for dy in 0..3 {
                        let sy = y as isize + dy as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for dx in 0..3 {
                            let sx = xx as isize + dx as isize - 1;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            let src = ((img * h + sy as usize) * w + sx as usize) * c;
                            let dst = orow + (dy * 3 + dx) * c;
                            out[dst..dst + c].copy_from_slice(&xv.data[src..src + c]);
                        }
                    }
                }
            }
        }
        let ng = self.ng(x);
        self.push(Tensor::from_vec(&[n * h * w, k], out), Op::Im2Col { x, geom }, ng)
    }

    /// 2x2 average pooling, stride 2: `[n*h*w, c] -> [n*(h/2)*(w/2), c]`.
    pub fn avg_pool2(&mut self, x: NodeId, geom: ConvGeom) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let ConvGeom { n, h, w, c } = geom;
        assert!(h % 2 == 0 && w % 2 == 0);
        let (ho, wo) = (h / 2, w / 2);
        let quarter = T::lit(0.25);
        let mut out = vec![T::zero(); n * ho * wo * c];
        for img in 0..n {
            for y in 0..ho {
                for xx in 0..wo {
                    let dst = ((img * ho + y) * wo + xx) * c;
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let src = ((img * h + 2 * y + dy) * w + 2 * xx + dx) * c;
                        for ch in 0..c {
                            out[dst + ch] += xv.data[src + ch] * quarter;
                        }
                    }
                }
            }
        }
        let ng = self.ng(x);
        self.push(Tensor::from_vec(&[n * ho * wo, c], out), Op::AvgPool2 { x, geom }, ng)
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> NodeId {
        let xv = &self.nodes[x.0].value;
        let out = Tensor::from_vec(shape, xv.data.clone());
        let ng = self.ng(x);
        self.push(out, Op::Reshape(x), ng)
    }

    /// Copies a value and blocks gradient flow through it.
    pub fn detach(&mut self, x: NodeId) -> NodeId {
        let v = self.nodes[x.0].value.clone();
        self.push(v, Op::Detach, false)
    }

    /// Mean over rows of `-log softmax(logits)[gold]`.
    pub fn cross_entropy(&mut self, logits: NodeId, gold: Vec<usize>) -> NodeId {
        let lv = &self.nodes[logits.0].value;
        let (n, t) = (lv.rows(), lv.cols());
        assert_eq!(gold.len(), n);
        let mut probs = vec![T::zero(); n * t];
        let mut sum = T::zero();
        for i in 0..n {
            let row = lv.row(i);
            sum += log_sum_exp(row) - row[gold[i]];
            softmax_into(row, &mut probs[i * t..(i + 1) * t]);
        }
        let loss = if n == 0 { T::zero() } else { sum / T::lit(n as f64) };
        let ng = self.ng(logits);
        self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, gold, probs }, ng)
    }

    /// Mean over rows of the divergence between `softmax(p)` and `softmax(q)`.
    pub fn divergence(&mut self, p: NodeId, q: NodeId, kind: DivergenceKind) -> NodeId {
        let (pv, qv) = (&self.nodes[p.0].value, &self.nodes[q.0].value);
        assert_eq!(pv.shape, qv.shape);
        let (n, t) = (pv.rows(), pv.cols());
        let mut p_probs = vec![T::zero(); n * t];
        let mut q_probs = vec![T::zero(); n * t];
        let mut sum = T::zero();
        for i in 0..n {
            softmax_into(pv.row(i), &mut p_probs[i * t..(i + 1) * t]);
            softmax_into(qv.row(i), &mut q_probs[i * t..(i + 1) * t]);
            sum += divergence_row(kind, &p_probs[i * t..(i + 1) * t], &q_probs[i * t..(i + 1) * t]);
        }
        let loss = if n == 0 { T::zero() } else { sum / T::lit(n as f64) };
        let ng = self.ng(p) || self.ng(q);
        self.push(
            Tensor::scalar(loss),
            Op::Divergence {
                p,
                q,
                kind,
                p_probs,
                q_probs,
            },
            ng,
        )
    }

    /// `sum_i coef_i * x_i` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: Vec<(NodeId, T)>) -> NodeId {
        let mut s = T::zero();
        for &(id, c) in &terms {
            s += c * self.scalar(id);
        }
        let ng = terms.iter().any(|(id, _)| self.ng(*id));
        self.push(Tensor::scalar(s), Op::WeightedSum(terms), ng)
    }

    pub fn half_sum_squares(&mut self, x: NodeId) -> NodeId {
        let s = self.nodes[x.0].value.data.iter().map(|&v| v * v).sum::<T>() * T::lit(0.5);
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::HalfSumSquares(x), ng)
    }

    /// Back-propagates from scalar node `loss` and returns the gradients of every bound parameter.
    pub fn backward(&self, loss: NodeId) -> Gradients<T> {
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.backward_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let mut out = Gradients::default();
        for (pid, nid) in &self.params {
            if let Some(g) = grads[nid.0].take() {
                out.by_param.insert(*pid, g);
                out.names.insert(*pid, self.param_names[pid].clone());
            }
        }
        out
    }

    fn backward_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let acc = |id: NodeId, grads: &mut [Option<Vec<T>>]| -> Option<usize> {
            if nodes[id.0].needs_grad {
                if grads[id.0].is_none() {
                    grads[id.0] = Some(vec![T::zero(); nodes[id.0].value.len()]);
                }
                Some(id.0)
            } else {
                None
            }
        };
        match &node.op {
            Op::Leaf | Op::Detach => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                if let Some(i) = acc(*a, grads) {
                    matmul_nt_acc(grads[i].as_mut().unwrap(), g, &bv.data, n, k, m);
                }
                if let Some(i) = acc(*b, grads) {
                    matmul_tn_acc(grads[i].as_mut().unwrap(), &av.data, g, n, k, m);
                }
            }
            Op::AddBias(x, b) => {
                let m = nodes[b.0].value.len();
                if let Some(i) = acc(*x, grads) {
                    for (o, &v) in grads[i].as_mut().unwrap().iter_mut().zip(g) {
                        *o += v;
                    }
                }
                if let Some(i) = acc(*b, grads) {
                    let gb = grads[i].as_mut().unwrap();
                    for row in g.chunks(m) {
                        for (o, &v) in gb.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for id in [a, b] {
                    if let Some(i) = acc(*id, grads) {
                        for (o, &v) in grads[i].as_mut().unwrap().iter_mut().zip(g) {
                            *o += v;
                        }
                    }
                }
            }
            Op::Gather { table, idx } => {
                if let Some(i) = acc(*table, grads) {
                    let d = nodes[table.0].value.cols();
                    let gt = grads[i].as_mut().unwrap();
                    for (r, &t) in idx.iter().enumerate() {
                        for (o, &v) in gt[t * d..(t + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]) {
                            *o += v;
                        }
                    }
                }
            }
            Op::Gelu(x) => {
                if let Some(i) = acc(*x, grads) {
                    let xv = &nodes[x.0].value.data;
                    for ((o, &gv), &xi) in grads[i].as_mut().unwrap().iter_mut().zip(g).zip(xv) {
                        *o += gv * gelu(xi).1;
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gam = &nodes[gamma.0].value.data;
                let d = gam.len();
                let n = inv_std.len();
                if let Some(i) = acc(*gamma, grads) {
                    let gg = grads[i].as_mut().unwrap();
                    for r in 0..n {
                        for j in 0..d {
                            gg[j] += g[r * d + j] * xhat[r * d + j];
                        }
                    }
                }
                if let Some(i) = acc(*beta, grads) {
                    let gb = grads[i].as_mut().unwrap();
                    for r in 0..n {
                        for j in 0..d {
                            gb[j] += g[r * d + j];
                        }
                    }
                }
                if let Some(i) = acc(*x, grads) {
                    let gx = grads[i].as_mut().unwrap();
                    let dn = T::lit(d as f64);
                    for r in 0..n {
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for j in 0..d {
                            let dxh = g[r * d + j] * gam[j];
                            s1 += dxh;
                            s2 += dxh * xhat[r * d + j];
                        }
                        for j in 0..d {
                            let dxh = g[r * d + j] * gam[j];
                            gx[r * d + j] += inv_std[r] / dn * (dn * dxh - s1 - xhat[r * d + j] * s2);
                        }
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                ranges,
                heads,
                bias,
                probs,
            } => self.attention_backward(*q, *k, *v, ranges, *heads, bias.as_ref(), probs, g, grads),
            Op::Dropout { x, mask } => {
                if let Some(i) = acc(*x, grads) {
                    for ((o, &gv), &m) in grads[i].as_mut().unwrap().iter_mut().zip(g).zip(mask) {
                        *o += gv * m;
                    }
                }
            }
            Op::Im2Col { x, geom } => {
                if let Some(i) = acc(*x, grads) {
                    let ConvGeom { n, h, w, c } = *geom;
                    let k = 9 * c;
                    let gx = grads[i].as_mut().unwrap();
                    for img in 0..n {
                        for y in 0..h {
                            for xx in 0..w {
                                let orow = ((img * h + y) * w + xx) * k;
                                for dy in 0..3 {
                                    let sy = y as isize + dy as isize - 1;
                                    if sy < 0 || sy >= h as isize {
                                        continue;
                                    }
                                    for dx in 0..3 {
                                        let sx = xx as isize + dx as isize - 1;
                                        if sx < 0 || sx >= w as isize {
                                            continue;
                                        }
                                        let src = ((img * h + sy as usize) * w + sx as usize) * c;
                                        let dst = orow + (dy * 3 + dx) * c;
                                        for ch in 0..c {
                                            gx[src + ch] += g[dst + ch];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::AvgPool2 { x, geom } => {
                if let Some(i) = acc(*x, grads) {
                    let ConvGeom { n, h, w, c } = *geom;
                    let (ho, wo) = (h / 2, w / 2);
                    let quarter = T::lit(0.25);
                    let gx = grads[i].as_mut().unwrap();
                    for img in 0..n {
                        for y in 0..ho {
                            for xx in 0..wo {
                                let dst = ((img * ho + y) * wo + xx) * c;
                                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                                    let src = ((img * h + 2 * y + dy) * w + 2 * xx + dx) * c;
                                    for ch in 0..c {
                                        gx[src + ch] += g[dst + ch] * quarter;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(i) = acc(*x, grads) {
                    for (o, &v) in grads[i].as_mut().unwrap().iter_mut().zip(g) {
                        *o += v;
                    }
                }
            }
            Op::CrossEntropy { logits, gold, probs } => {
                if let Some(i) = acc(*logits, grads) {
                    let t = nodes[logits.0].value.cols();
                    let n = gold.len();
                    let scale = g[0] / T::lit(n.max(1) as f64);
                    let gl = grads[i].as_mut().unwrap();
                    for r in 0..n {
                        for j in 0..t {
                            let mut d = probs[r * t + j];
                            if j == gold[r] {
                                d -= T::one();
                            }
                            gl[r * t + j] += scale * d;
                        }
                    }
                }
            }
            Op::Divergence {
                p,
                q,
                kind,
                p_probs,
                q_probs,
            } => {
                let t = nodes[p.0].value.cols();
                let n = nodes[p.0].value.rows();
                let scale = g[0] / T::lit(n.max(1) as f64);
                let mut dp = vec![T::zero(); n * t];
                let mut dq = vec![T::zero(); n * t];
                for r in 0..n {
                    let s = r * t..(r + 1) * t;
                    divergence_row_grad(
                        *kind,
                        &p_probs[s.clone()],
                        &q_probs[s.clone()],
                        scale,
                        &mut dp[s.clone()],
                        &mut dq[s],
                    );
                }
                // through the softmax: dz = p * (dp - <p, dp>)
                for (node, probs, dprob) in [(p, p_probs, &dp), (q, q_probs, &dq)] {
                    if let Some(i) = acc(*node, grads) {
                        let gz = grads[i].as_mut().unwrap();
                        for r in 0..n {
                            let pr = &probs[r * t..(r + 1) * t];
                            let dr = &dprob[r * t..(r + 1) * t];
                            let dot: T = pr.iter().zip(dr).map(|(&a, &b)| a * b).sum();
                            for j in 0..t {
                                gz[r * t + j] += pr[j] * (dr[j] - dot);
                            }
                        }
                    }
                }
            }
            Op::WeightedSum(terms) => {
                for &(id, c) in terms {
                    if let Some(i) = acc(id, grads) {
                        grads[i].as_mut().unwrap()[0] += c * g[0];
                    }
                }
            }
            Op::HalfSumSquares(x) => {
                if let Some(i) = acc(*x, grads) {
                    let xv = &nodes[x.0].value.data;
                    for (o, &v) in grads[i].as_mut().unwrap().iter_mut().zip(xv) {
                        *o += g[0] * v;
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        ranges: &[(usize, usize)],
        heads: usize,
        bias: Option<&AttnBias>,
        probs: &[T],
        g: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let nodes = &self.nodes;
        let (qv, kv, vv) = (&nodes[q.0].value, &nodes[k.0].value, &nodes[v.0].value);
        let d = qv.cols();
        let dh = d / heads;
        let scale = T::one() / T::lit(dh as f64).sqrt();
        let mut gq = vec![T::zero(); qv.len()];
        let mut gk = vec![T::zero(); kv.len()];
        let mut gv = vec![T::zero(); vv.len()];
        let bias = bias.filter(|b| nodes[b.table.0].needs_grad);
        let mut gb = bias.map(|b| vec![T::zero(); nodes[b.table.0].value.len()]);
        let mut da = Vec::new();
        let mut off = 0;
        let mut pair_base = 0;
        for &(s, e) in ranges {
            let len = e - s;
            for h in 0..heads {
                let c0 = h * dh;
                for i in s..e {
                    let a = &probs[off..off + len];
                    off += len;
                    let gi = &g[i * d + c0..i * d + c0 + dh];
                    da.clear();
                    for (jj, j) in (s..e).enumerate() {
                        let vj = &vv.data[j * d + c0..j * d + c0 + dh];
                        da.push(gi.iter().zip(vj).map(|(&x, &y)| x * y).sum::<T>());
                        for (o, &x) in gv[j * d + c0..j * d + c0 + dh].iter_mut().zip(gi) {
                            *o += a[jj] * x;
                        }
                    }
                    let dot: T = a.iter().zip(&da).map(|(&x, &y)| x * y).sum();
                    for (jj, j) in (s..e).enumerate() {
                        let raw = a[jj] * (da[jj] - dot);
                        if let (Some(b), Some(gb)) = (bias, gb.as_mut()) {
                            let p = pair_base + (i - s) * len + jj;
                            for &r in &b.idx[p * b.per_pair..(p + 1) * b.per_pair] {
                                gb[r * heads + h] += raw;
                            }
                        }
                        let ds = raw * scale;
                        if ds == T::zero() {
                            continue;
                        }
                        for c in 0..dh {
                            gq[i * d + c0 + c] += ds * kv.data[j * d + c0 + c];
                            gk[j * d + c0 + c] += ds * qv.data[i * d + c0 + c];
                        }
                    }
                }
            }
            pair_base += len * len;
        }
        if let (Some(b), Some(local)) = (bias, gb) {
            let slot = grads[b.table.0].get_or_insert_with(|| vec![T::zero(); local.len()]);
            for (o, x) in slot.iter_mut().zip(local) {
                *o += x;
            }
        }
        for (id, local) in [(q, gq), (k, gk), (v, gv)] {
            if nodes[id.0].needs_grad {
                let slot = grads[id.0].get_or_insert_with(|| vec![T::zero(); local.len()]);
                for (o, x) in slot.iter_mut().zip(local) {
                    *o += x;
                }
            }
        }
    }
}
