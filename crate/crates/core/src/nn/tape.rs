//! Reverse-mode automatic differentiation over 2-D row-major tensors.
//!
//! A [`Tape`] records every operation in evaluation order; [`Tape::backward`]
//! walks it in reverse and accumulates adjoints. All reductions run in a fixed
//! order, so gradients are bit-reproducible.

use serde::{Deserialize, Serialize};

/// Dense tensor in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data length does not match shape {shape:?}"
        );
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Handle to a node on the tape.
pub type Var = usize;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Gelu(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Im2Col {
        x: Var,
        geom: ConvGeom,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    MeanRows(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Var, Var),
    Row(Var, usize),
    BceWithLogits(Var, f64),
}

/// Geometry of a convolution lowered to a matrix product. The input is an
/// `h x w` grid of `c`-channel pixels stored as `[h * w, c]`; kernels are
/// `kh x kw`. Columns of the lowered matrix are ordered (tap row, tap col, channel).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub kh: usize,
    pub kw: usize,
    pub pad_h: usize,
    pub pad_w: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        self.h + 2 * self.pad_h + 1 - self.kh
    }

    pub fn out_w(&self) -> usize {
        self.w + 2 * self.pad_w + 1 - self.kw
    }

    pub fn patch_len(&self) -> usize {
        self.kh * self.kw * self.c
    }
}

struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(Var, usize)>,
}

// ---------------------------------------------------------------------------
// kernels

const LANES: usize = 8;

/// c[m, n] += a[m, k] * b[k, n]. Each output sums its k products in order, so
/// results do not depend on the blocking.
fn matmul_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    if k == 0 || n == 0 {
        return;
    }
    let pairs = m / 2;
    for (a2, c2) in a.chunks_exact(2 * k).zip(c.chunks_exact_mut(2 * n)).take(pairs) {
        let (a0, a1) = a2.split_at(k);
        let (c0, c1) = c2.split_at_mut(n);
        row_pair(a0, a1, b, n, c0, c1);
    }
    if m % 2 == 1 {
        let i = m - 1;
        row_single(&a[i * k..(i + 1) * k], b, n, &mut c[i * n..(i + 1) * n]);
    }
}

#[inline(always)]
fn row_pair(a0: &[f64], a1: &[f64], b: &[f64], n: usize, c0: &mut [f64], c1: &mut [f64]) {
    let full = n - n % LANES;
    for j in (0..full).step_by(LANES) {
        let mut s0 = [0.0; LANES];
        let mut s1 = [0.0; LANES];
        s0.copy_from_slice(&c0[j..j + LANES]);
        s1.copy_from_slice(&c1[j..j + LANES]);
        for ((x0, x1), brow) in a0.iter().zip(a1).zip(b[j..].chunks(n)) {
            let seg: &[f64; LANES] = brow[..LANES].try_into().unwrap();
            for l in 0..LANES {
                s0[l] += x0 * seg[l];
                s1[l] += x1 * seg[l];
            }
        }
        c0[j..j + LANES].copy_from_slice(&s0);
        c1[j..j + LANES].copy_from_slice(&s1);
    }
    for j in full..n {
        let (mut s0, mut s1) = (c0[j], c1[j]);
        for ((x0, x1), brow) in a0.iter().zip(a1).zip(b[j..].chunks(n)) {
            s0 += x0 * brow[0];
            s1 += x1 * brow[0];
        }
        c0[j] = s0;
        c1[j] = s1;
    }
}

#[inline(always)]
fn row_single(a0: &[f64], b: &[f64], n: usize, c0: &mut [f64]) {
    let full = n - n % LANES;
    for j in (0..full).step_by(LANES) {
        let mut s0 = [0.0; LANES];
        s0.copy_from_slice(&c0[j..j + LANES]);
        for (x0, brow) in a0.iter().zip(b[j..].chunks(n)) {
            let seg: &[f64; LANES] = brow[..LANES].try_into().unwrap();
            for l in 0..LANES {
                s0[l] += x0 * seg[l];
            }
        }
        c0[j..j + LANES].copy_from_slice(&s0);
    }
    for j in full..n {
        let mut s0 = c0[j];
        for (x0, brow) in a0.iter().zip(b[j..].chunks(n)) {
            s0 += x0 * brow[0];
        }
        c0[j] = s0;
    }
}

fn transpose(b: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; b.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = b[r * cols + c];
        }
    }
    t
}

/// c[m, n] = a[m, k] * b[k, n]
fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    matmul_acc(a, b, m, k, n, &mut c);
    c
}

/// c[m, n] += a[m, k] * b[n, k]^T
fn matmul_bt_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    matmul_acc(a, &transpose(b, n, k), m, k, n, c);
}

/// c[m, n] = a[m, k] * b[n, k]^T
fn matmul_bt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    matmul_bt_acc(a, b, m, k, n, &mut c);
    c
}

/// out[k, n] += a[m, k]^T * g[m, n]
fn matmul_at_acc(a: &[f64], g: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    matmul_acc(&transpose(a, m, k), g, k, m, n, out);
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[inline]
fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

#[inline]
fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable binary cross-entropy of a logit.
pub fn bce_with_logits(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
        });
        self.nodes.len() - 1
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        (self.nodes[v].rows, self.nodes[v].cols)
    }

    /// Constant input leaf.
    pub fn input(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Var {
        self.push(rows, cols, data, Op::Leaf)
    }

    /// Parameter leaf copied from `weights[offset..offset + rows * cols]`.
    pub fn param(&mut self, weights: &[f64], offset: usize, rows: usize, cols: usize) -> Var {
        let v = self.push(
            rows,
            cols,
            weights[offset..offset + rows * cols].to_vec(),
            Op::Leaf,
        );
        self.params.push((v, offset));
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dimensions");
        let v = matmul(&self.nodes[a].value, &self.nodes[b].value, m, k, n);
        self.push(m, n, v, Op::MatMul(a, b))
    }

    /// a * b^T
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (n, k2) = self.shape(b);
        assert_eq!(k, k2, "matmul_t inner dimensions");
        let v = matmul_bt(&self.nodes[a].value, &self.nodes[b].value, m, k, n);
        self.push(m, n, v, Op::MatMulT(a, b))
    }

    /// Adds a `[1, n]` bias to every row.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let (m, n) = self.shape(x);
        assert_eq!(self.shape(b), (1, n), "bias shape");
        let bias = &self.nodes[b].value;
        let mut v = self.nodes[x].value.clone();
        for row in v.chunks_mut(n) {
            add_into(row, bias);
        }
        self.push(m, n, v, Op::AddBias(x, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shapes");
        let (m, n) = self.shape(a);
        let mut v = self.nodes[a].value.clone();
        add_into(&mut v, &self.nodes[b].value);
        self.push(m, n, v, Op::Add(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let (m, n) = self.shape(a);
        let v = self.nodes[a].value.iter().map(|x| x * s).collect();
        self.push(m, n, v, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let v = self.nodes[a].value.iter().map(|&x| x.max(0.0)).collect();
        self.push(m, n, v, Op::Relu(a))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let v = self.nodes[a].value.iter().map(|&x| gelu(x)).collect();
        self.push(m, n, v, Op::Gelu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let mut v = self.nodes[a].value.clone();
        for row in v.chunks_mut(n) {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for x in row.iter_mut() {
                *x = (*x - mx).exp();
                s += *x;
            }
            for x in row.iter_mut() {
                *x /= s;
            }
        }
        self.push(m, n, v, Op::SoftmaxRows(a))
    }

    /// Per-row layer normalization with `[1, n]` gain and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (m, n) = self.shape(x);
        let xv = &self.nodes[x].value;
        let g = &self.nodes[gamma].value;
        let b = &self.nodes[beta].value;
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &xv[i * n..(i + 1) * n];
            let mu = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[i] = is;
            for j in 0..n {
                let xh = (row[j] - mu) * is;
                xhat[i * n + j] = xh;
                out[i * n + j] = g[j] * xh + b[j];
            }
        }
        self.push(
            m,
            n,
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// Lowers a convolution input to `[out_h * out_w, kh * kw * c]`, zero-padded.
    pub fn im2col(&mut self, x: Var, geom: ConvGeom) -> Var {
        assert_eq!(self.shape(x), (geom.h * geom.w, geom.c), "im2col input shape");
        let (oh, ow) = (geom.out_h(), geom.out_w());
        let plen = geom.patch_len();
        let xv = &self.nodes[x].value;
        let mut out = vec![0.0; oh * ow * plen];
        for r in 0..oh {
            for c in 0..ow {
                let base = (r * ow + c) * plen;
                for i in 0..geom.kh {
                    let sr = r + i;
                    if sr < geom.pad_h || sr >= geom.h + geom.pad_h {
                        continue;
                    }
                    let sr = sr - geom.pad_h;
                    for j in 0..geom.kw {
                        let sc = c + j;
                        if sc < geom.pad_w || sc >= geom.w + geom.pad_w {
                            continue;
                        }
                        let sc = sc - geom.pad_w;
                        let src = (sr * geom.w + sc) * geom.c;
                        let dst = base + (i * geom.kw + j) * geom.c;
                        out[dst..dst + geom.c].copy_from_slice(&xv[src..src + geom.c]);
                    }
                }
            }
        }
        self.push(oh * ow, plen, out, Op::Im2Col { x, geom })
    }

    /// Non-overlapping `size x size` max pooling of an `[h * w, c]` grid (floor division).
    pub fn max_pool(&mut self, x: Var, h: usize, w: usize, size: usize) -> Var {
        let (rows, c) = self.shape(x);
        assert_eq!(rows, h * w, "max_pool input shape");
        let (oh, ow) = (h / size, w / size);
        let xv = &self.nodes[x].value;
        let mut out = vec![f64::NEG_INFINITY; oh * ow * c];
        let mut argmax = vec![0usize; oh * ow * c];
        for r in 0..oh {
            for cc in 0..ow {
                let o = (r * ow + cc) * c;
                for i in 0..size {
                    for j in 0..size {
                        let src = ((r * size + i) * w + cc * size + j) * c;
                        for ch in 0..c {
                            if xv[src + ch] > out[o + ch] {
                                out[o + ch] = xv[src + ch];
                                argmax[o + ch] = src + ch;
                            }
                        }
                    }
                }
            }
        }
        self.push(oh * ow, c, out, Op::MaxPool { x, argmax })
    }

    /// Column means as a `[1, n]` row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let mut v = vec![0.0; n];
        for row in self.nodes[a].value.chunks(n) {
            add_into(&mut v, row);
        }
        v.iter_mut().for_each(|x| *x /= m as f64);
        self.push(1, n, v, Op::MeanRows(a))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let (m, n) = self.shape(a);
        assert!(start + len <= n, "slice_cols out of range");
        let av = &self.nodes[a].value;
        let mut v = Vec::with_capacity(m * len);
        for i in 0..m {
            v.extend_from_slice(&av[i * n + start..i * n + start + len]);
        }
        self.push(m, len, v, Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let m = self.shape(parts[0]).0;
        let n: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut v = Vec::with_capacity(m * n);
        for i in 0..m {
            for &p in parts {
                let (pm, pn) = self.shape(p);
                assert_eq!(pm, m, "concat_cols row counts");
                v.extend_from_slice(&self.nodes[p].value[i * pn..(i + 1) * pn]);
            }
        }
        self.push(m, n, v, Op::ConcatCols(parts.to_vec()))
    }

    /// Stacks `top` above `bottom`.
    pub fn concat_rows(&mut self, top: Var, bottom: Var) -> Var {
        let (m1, n) = self.shape(top);
        let (m2, n2) = self.shape(bottom);
        assert_eq!(n, n2, "concat_rows column counts");
        let mut v = self.nodes[top].value.clone();
        v.extend_from_slice(&self.nodes[bottom].value);
        self.push(m1 + m2, n, v, Op::ConcatRows(top, bottom))
    }

    pub fn row(&mut self, a: Var, i: usize) -> Var {
        let n = self.shape(a).1;
        let v = self.nodes[a].value[i * n..(i + 1) * n].to_vec();
        self.push(1, n, v, Op::Row(a, i))
    }

    /// Binary cross-entropy of a `[1, 1]` logit against `label`.
    pub fn bce_with_logits(&mut self, logit: Var, label: f64) -> Var {
        assert_eq!(self.shape(logit), (1, 1), "loss expects a single logit");
        let z = self.nodes[logit].value[0];
        self.push(1, 1, vec![bce_with_logits(z, label)], Op::BceWithLogits(logit, label))
    }

    /// Values of every softmax node, in evaluation order.
    pub fn softmax_outputs(&self) -> Vec<(usize, usize, &[f64])> {
        self.nodes
            .iter()
            .filter(|n| matches!(n.op, Op::SoftmaxRows(_)))
            .map(|n| (n.rows, n.cols, n.value.as_slice()))
            .collect()
    }

    /// Reverse pass from a scalar `output`, seeded with `seed`. Returns adjoints per node.
    pub fn backward(&self, output: Var, seed: f64) -> Vec<Option<Vec<f64>>> {
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output] = Some(vec![seed; self.nodes[output].value.len()]);

        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
            grads[v].get_or_insert_with(|| vec![0.0; len])
        }

        for id in (0..=output).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            let len_of = |v: Var| self.nodes[v].value.len();
            match &node.op {
                Op::Leaf => {}
                &Op::MatMul(a, b) => {
                    let (m, k) = self.shape(a);
                    let n = node.cols;
                    matmul_bt_acc(&g, &self.nodes[b].value, m, n, k, acc(&mut grads, a, m * k));
                    let db = acc(&mut grads, b, k * n);
                    matmul_at_acc(&self.nodes[a].value, &g, m, k, n, db);
                }
                &Op::MatMulT(a, b) => {
                    let (m, k) = self.shape(a);
                    let n = node.cols;
                    matmul_acc(&g, &self.nodes[b].value, m, n, k, acc(&mut grads, a, m * k));
                    let db = acc(&mut grads, b, n * k);
                    matmul_at_acc(&g, &self.nodes[a].value, m, n, k, db);
                }
                &Op::AddBias(x, b) => {
                    add_into(acc(&mut grads, x, g.len()), &g);
                    let db = acc(&mut grads, b, node.cols);
                    for row in g.chunks(node.cols) {
                        add_into(db, row);
                    }
                }
                &Op::Add(a, b) => {
                    add_into(acc(&mut grads, a, g.len()), &g);
                    add_into(acc(&mut grads, b, g.len()), &g);
                }
                &Op::Scale(a, s) => {
                    let da = acc(&mut grads, a, g.len());
                    for (d, gv) in da.iter_mut().zip(&g) {
                        *d += s * gv;
                    }
                }
                &Op::Relu(a) => {
                    let av = &self.nodes[a].value;
                    let da = acc(&mut grads, a, g.len());
                    for i in 0..g.len() {
                        if av[i] > 0.0 {
                            da[i] += g[i];
                        }
                    }
                }
                &Op::Gelu(a) => {
                    let av = &self.nodes[a].value;
                    let da = acc(&mut grads, a, g.len());
                    for i in 0..g.len() {
                        da[i] += g[i] * gelu_grad(av[i]);
                    }
                }
                &Op::SoftmaxRows(a) => {
                    let n = node.cols;
                    let y = &node.value;
                    let da = acc(&mut grads, a, g.len());
                    for (i, (grow, yrow)) in g.chunks(n).zip(y.chunks(n)).enumerate() {
                        let s: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            da[i * n + j] += yrow[j] * (grow[j] - s);
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
                    let (m, n) = (node.rows, node.cols);
                    let gv = self.nodes[*gamma].value.clone();
                    {
                        let db = acc(&mut grads, *beta, n);
                        for row in g.chunks(n) {
                            add_into(db, row);
                        }
                    }
                    {
                        let dg = acc(&mut grads, *gamma, n);
                        for i in 0..m {
                            for j in 0..n {
                                dg[j] += g[i * n + j] * xhat[i * n + j];
                            }
                        }
                    }
                    let dx = acc(&mut grads, *x, m * n);
                    let mut dxh = vec![0.0; n];
                    for i in 0..m {
                        let xh = &xhat[i * n..(i + 1) * n];
                        for j in 0..n {
                            dxh[j] = g[i * n + j] * gv[j];
                        }
                        let s1: f64 = dxh.iter().sum();
                        let s2: f64 = dxh.iter().zip(xh).map(|(a, b)| a * b).sum();
                        let k = inv_std[i] / n as f64;
                        for j in 0..n {
                            dx[i * n + j] += k * (n as f64 * dxh[j] - s1 - xh[j] * s2);
                        }
                    }
                }
                &Op::Im2Col { x, geom } => {
                    let (oh, ow) = (geom.out_h(), geom.out_w());
                    let plen = geom.patch_len();
                    let dx = acc(&mut grads, x, len_of(x));
                    for r in 0..oh {
                        for c in 0..ow {
                            let base = (r * ow + c) * plen;
                            for i in 0..geom.kh {
                                let sr = r + i;
                                if sr < geom.pad_h || sr >= geom.h + geom.pad_h {
                                    continue;
                                }
                                let sr = sr - geom.pad_h;
                                for j in 0..geom.kw {
                                    let sc = c + j;
                                    if sc < geom.pad_w || sc >= geom.w + geom.pad_w {
                                        continue;
                                    }
                                    let sc = sc - geom.pad_w;
                                    let dst = (sr * geom.w + sc) * geom.c;
                                    let src = base + (i * geom.kw + j) * geom.c;
                                    add_into(&mut dx[dst..dst + geom.c], &g[src..src + geom.c]);
                                }
                            }
                        }
                    }
                }
                Op::MaxPool { x, argmax } => {
                    let dx = acc(&mut grads, *x, len_of(*x));
                    for (o, &src) in argmax.iter().enumerate() {
                        dx[src] += g[o];
                    }
                }
                &Op::MeanRows(a) => {
                    let (m, n) = self.shape(a);
                    let da = acc(&mut grads, a, m * n);
                    for row in da.chunks_mut(n) {
                        for (d, gv) in row.iter_mut().zip(&g) {
                            *d += gv / m as f64;
                        }
                    }
                }
                &Op::SliceCols(a, start) => {
                    let (m, n) = self.shape(a);
                    let len = node.cols;
                    let da = acc(&mut grads, a, m * n);
                    for i in 0..m {
                        add_into(
                            &mut da[i * n + start..i * n + start + len],
                            &g[i * len..(i + 1) * len],
                        );
                    }
                }
                Op::ConcatCols(parts) => {
                    let (m, n) = (node.rows, node.cols);
                    let mut off = 0;
                    for &p in parts {
                        let pn = self.nodes[p].cols;
                        let dp = acc(&mut grads, p, m * pn);
                        for i in 0..m {
                            add_into(
                                &mut dp[i * pn..(i + 1) * pn],
                                &g[i * n + off..i * n + off + pn],
                            );
                        }
                        off += pn;
                    }
                }
                &Op::ConcatRows(top, bottom) => {
                    let lt = len_of(top);
                    add_into(acc(&mut grads, top, lt), &g[..lt]);
                    let lb = len_of(bottom);
                    add_into(acc(&mut grads, bottom, lb), &g[lt..]);
                }
                &Op::Row(a, i) => {
                    let n = node.cols;
                    let la = len_of(a);
                    let da = acc(&mut grads, a, la);
                    add_into(&mut da[i * n..(i + 1) * n], &g);
                }
                &Op::BceWithLogits(z, y) => {
                    let zv = self.nodes[z].value[0];
                    acc(&mut grads, z, 1)[0] += g[0] * (sigmoid(zv) - y);
                }
            }
            // keep leaf adjoints for parameter extraction
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
            }
        }
        grads
    }

    /// Adds parameter adjoints into a flat gradient vector at their weight offsets.
    pub fn accumulate_param_grads(&self, grads: &[Option<Vec<f64>>], out: &mut [f64]) {
        for &(v, off) in &self.params {
            if let Some(g) = &grads[v] {
                add_into(&mut out[off..off + g.len()], g);
            }
        }
    }

    /// Adjoint of an input leaf, if it received one.
    pub fn grad_of<'a>(&self, grads: &'a [Option<Vec<f64>>], v: Var) -> Option<&'a [f64]> {
        grads[v].as_deref()
    }
}
