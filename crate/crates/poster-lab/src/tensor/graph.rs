//! Eager autodiff tape.

use super::{ParamGrads, ParamSet, Scalar, Tensor};

const LN_EPS: f64 = 1e-6;

/// Handle to a node in the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Param(usize),
    Const,
    /// y = x * w^T (+ b broadcast over rows); w is [out, in].
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Scale(Var, f64),
    /// y = x * (1 + scale) + shift, rows broadcast; scale/shift are [1, D].
    Modulate { x: Var, scale: Var, shift: Var },
    /// y = x * gate, rows broadcast; gate is [1, D].
    GateRows { x: Var, gate: Var },
    /// Per-row normalization, no affine.
    LayerNorm { x: Var },
    Silu(Var),
    /// Pairwise rotations per head; cos/sin are [T, pairs_per_head].
    Rope { x: Var, n_heads: usize, pairs: usize, cos: Vec<f64>, sin: Vec<f64> },
    /// Joint softmax attention over all rows, multi-head.
    Attention { q: Var, k: Var, v: Var, n_heads: usize },
    Concat0(Vec<Var>),
    SliceRows { x: Var, start: usize },
    SliceCols { x: Var, start: usize },
    /// Rows of `table` selected by index; backward scatter-adds.
    Gather { table: Var, indices: Vec<usize> },
    /// Mean squared error over all elements; target takes no gradient.
    MseLoss { pred: Var, target: Var },
}

struct Node<S> {
    value: Tensor<S>,
    op: Op,
    needs_grad: bool,
    /// Op-specific cache (layer-norm rstd, attention probabilities).
    aux: Vec<S>,
}

pub struct Graph<'p, S: Scalar> {
    params: &'p ParamSet<S>,
    nodes: Vec<Node<S>>,
}

impl<'p, S: Scalar> Graph<'p, S> {
    pub fn new(params: &'p ParamSet<S>) -> Self {
        Graph { params, nodes: Vec::new() }
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        match self.nodes[v.0].op {
            Op::Param(i) => &self.params.entries[i].value,
            _ => &self.nodes[v.0].value,
        }
    }

    fn push(&mut self, value: Tensor<S>, op: Op, needs_grad: bool, aux: Vec<S>) -> Var {
        self.nodes.push(Node { value, op, needs_grad, aux });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn param(&mut self, index: usize) -> Var {
        let trainable = self.params.entries[index].trainable;
        self.push(Tensor::zeros(0, 0), Op::Param(index), trainable, Vec::new())
    }

    pub fn param_named(&mut self, name: &str) -> Var {
        let index = self
            .params
            .index_of(name)
            .unwrap_or_else(|| panic!("no parameter named {name}"));
        self.param(index)
    }

    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Const, false, Vec::new())
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.constant(Tensor::zeros(rows, cols))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        assert_eq!(xv.cols, wv.cols, "linear: in-dim mismatch");
        let (n, out) = (xv.rows, wv.rows);
        let mut y = Tensor::zeros(n, out);
        for i in 0..n {
            let xr = xv.row(i);
            for j in 0..out {
                let wr = wv.row(j);
                let mut acc = S::zero();
                for k in 0..xv.cols {
                    acc += xr[k] * wr[k];
                }
                y.data[i * out + j] = acc;
            }
        }
        if let Some(b) = b {
            let bv = self.value(b);
            assert_eq!(bv.cols, out, "linear: bias dim mismatch");
            for i in 0..n {
                for j in 0..out {
                    y.data[i * out + j] += bv.data[j];
                }
            }
        }
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        self.push(y, Op::Linear { x, w, b }, needs, Vec::new())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        assert_eq!((av.rows, av.cols), (bv.rows, bv.cols), "add: shape mismatch");
        let data = av.data.iter().zip(&bv.data).map(|(&x, &y)| x + y).collect();
        let value = Tensor::from_vec(av.rows, av.cols, data);
        let needs = self.needs(a) || self.needs(b);
        self.push(value, Op::Add(a, b), needs, Vec::new())
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let xv = self.value(x);
        let f = S::from_f64(factor);
        let value = Tensor::from_vec(xv.rows, xv.cols, xv.data.iter().map(|&v| v * f).collect());
        let needs = self.needs(x);
        self.push(value, Op::Scale(x, factor), needs, Vec::new())
    }

    pub fn modulate(&mut self, x: Var, scale: Var, shift: Var) -> Var {
        let xv = self.value(x);
        let sv = self.value(scale);
        let hv = self.value(shift);
        assert_eq!(sv.rows, 1);
        assert_eq!(hv.rows, 1);
        assert_eq!(sv.cols, xv.cols);
        assert_eq!(hv.cols, xv.cols);
        let mut value = Tensor::zeros(xv.rows, xv.cols);
        for i in 0..xv.rows {
            for j in 0..xv.cols {
                value.data[i * xv.cols + j] =
                    xv.data[i * xv.cols + j] * (S::one() + sv.data[j]) + hv.data[j];
            }
        }
        let needs = self.needs(x) || self.needs(scale) || self.needs(shift);
        self.push(value, Op::Modulate { x, scale, shift }, needs, Vec::new())
    }

    pub fn gate_rows(&mut self, x: Var, gate: Var) -> Var {
        let xv = self.value(x);
        let gv = self.value(gate);
        assert_eq!(gv.rows, 1);
        assert_eq!(gv.cols, xv.cols);
        let mut value = Tensor::zeros(xv.rows, xv.cols);
        for i in 0..xv.rows {
            for j in 0..xv.cols {
                value.data[i * xv.cols + j] = xv.data[i * xv.cols + j] * gv.data[j];
            }
        }
        let needs = self.needs(x) || self.needs(gate);
        self.push(value, Op::GateRows { x, gate }, needs, Vec::new())
    }

    pub fn layer_norm(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (n, d) = (xv.rows, xv.cols);
        let mut value = Tensor::zeros(n, d);
        let mut aux = vec![S::zero(); n];
        let dn = S::from_f64(d as f64);
        for i in 0..n {
            let row = xv.row(i);
            let mut mean = S::zero();
            for &v in row {
                mean += v;
            }
            mean = mean / dn;
            let mut var = S::zero();
            for &v in row {
                var += (v - mean) * (v - mean);
            }
            var = var / dn;
            let rstd = S::one() / (var + S::from_f64(LN_EPS)).sqrt();
            aux[i] = rstd;
            for j in 0..d {
                value.data[i * d + j] = (row[j] - mean) * rstd;
            }
        }
        let needs = self.needs(x);
        self.push(value, Op::LayerNorm { x }, needs, aux)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv
            .data
            .iter()
            .map(|&v| {
                let sig = S::one() / (S::one() + (-v).exp());
                v * sig
            })
            .collect();
        let value = Tensor::from_vec(xv.rows, xv.cols, data);
        let needs = self.needs(x);
        self.push(value, Op::Silu(x), needs, Vec::new())
    }

    /// Apply per-head pairwise rotations. `cos`/`sin` hold one angle per
    /// (token, pair-within-head), shared across heads.
    pub fn rope(&mut self, x: Var, n_heads: usize, cos: Vec<f64>, sin: Vec<f64>) -> Var {
        let xv = self.value(x);
        let (n, d) = (xv.rows, xv.cols);
        assert_eq!(d % n_heads, 0);
        let hd = d / n_heads;
        assert_eq!(hd % 2, 0);
        let pairs = hd / 2;
        assert_eq!(cos.len(), n * pairs, "rope: angle table size");
        assert_eq!(sin.len(), n * pairs, "rope: angle table size");
        let mut value = Tensor::zeros(n, d);
        for i in 0..n {
            for h in 0..n_heads {
                for p in 0..pairs {
                    let c = S::from_f64(cos[i * pairs + p]);
                    let s = S::from_f64(sin[i * pairs + p]);
                    let a = xv.data[i * d + h * hd + 2 * p];
                    let b = xv.data[i * d + h * hd + 2 * p + 1];
                    value.data[i * d + h * hd + 2 * p] = a * c - b * s;
                    value.data[i * d + h * hd + 2 * p + 1] = a * s + b * c;
                }
            }
        }
        let needs = self.needs(x);
        self.push(value, Op::Rope { x, n_heads, pairs, cos, sin }, needs, Vec::new())
    }

    pub fn attention(&mut self, q: Var, k: Var, v: Var, n_heads: usize) -> Var {
        let qv = self.value(q);
        let kv = self.value(k);
        let vv = self.value(v);
        let (n, d) = (qv.rows, qv.cols);
        assert_eq!((kv.rows, kv.cols), (n, d));
        assert_eq!((vv.rows, vv.cols), (n, d));
        assert_eq!(d % n_heads, 0);
        let hd = d / n_heads;
        let scale = S::from_f64(1.0 / (hd as f64).sqrt());
        let mut value = Tensor::zeros(n, d);
        // aux: per-head softmax probabilities, [h][i][j].
        let mut aux = vec![S::zero(); n_heads * n * n];
        for h in 0..n_heads {
            let off = h * hd;
            for i in 0..n {
                let probs = &mut aux[h * n * n + i * n..h * n * n + (i + 1) * n];
                let mut max = S::from_f64(f64::NEG_INFINITY);
                for j in 0..n {
                    let mut s = S::zero();
                    for t in 0..hd {
                        s += qv.data[i * d + off + t] * kv.data[j * d + off + t];
                    }
                    let s = s * scale;
                    probs[j] = s;
                    if s > max {
                        max = s;
                    }
                }
                let mut sum = S::zero();
                for p in probs.iter_mut() {
                    *p = (*p - max).exp();
                    sum += *p;
                }
                for p in probs.iter_mut() {
                    *p = *p / sum;
                }
                for j in 0..n {
                    let pj = probs[j];
                    for t in 0..hd {
                        value.data[i * d + off + t] += pj * vv.data[j * d + off + t];
                    }
                }
            }
        }
        let needs = self.needs(q) || self.needs(k) || self.needs(v);
        self.push(value, Op::Attention { q, k, v, n_heads }, needs, aux)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).cols;
        let rows: usize = parts.iter().map(|&p| self.value(p).rows).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols, cols, "concat_rows: col mismatch");
            data.extend_from_slice(&pv.data);
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(Tensor::from_vec(rows, cols, data), Op::Concat0(parts.to_vec()), needs, Vec::new())
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        assert!(start + len <= xv.rows);
        let cols = xv.cols;
        let data = xv.data[start * cols..(start + len) * cols].to_vec();
        let needs = self.needs(x);
        self.push(Tensor::from_vec(len, cols, data), Op::SliceRows { x, start }, needs, Vec::new())
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = self.value(x);
        assert!(start + len <= xv.cols);
        let mut data = Vec::with_capacity(xv.rows * len);
        for i in 0..xv.rows {
            data.extend_from_slice(&xv.row(i)[start..start + len]);
        }
        let needs = self.needs(x);
        self.push(
            Tensor::from_vec(xv.rows, len, data),
            Op::SliceCols { x, start },
            needs,
            Vec::new(),
        )
    }

    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Var {
        let tv = self.value(table);
        let cols = tv.cols;
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            assert!(i < tv.rows, "gather: index out of range");
            data.extend_from_slice(tv.row(i));
        }
        let needs = self.needs(table);
        self.push(
            Tensor::from_vec(indices.len(), cols, data),
            Op::Gather { table, indices: indices.to_vec() },
            needs,
            Vec::new(),
        )
    }

    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Var {
        let pv = self.value(pred);
        let tv = self.value(target);
        assert_eq!((pv.rows, pv.cols), (tv.rows, tv.cols), "mse: shape mismatch");
        let n = S::from_f64(pv.len() as f64);
        let mut acc = S::zero();
        for (&a, &b) in pv.data.iter().zip(&tv.data) {
            acc += (a - b) * (a - b);
        }
        let value = Tensor::from_vec(1, 1, vec![acc / n]);
        let needs = self.needs(pred);
        self.push(value, Op::MseLoss { pred, target }, needs, Vec::new())
    }

    /// Reverse pass from a scalar loss node. Returns gradients for trainable
    /// parameters, aligned with the parameter set.
    pub fn backward(&self, loss: Var) -> ParamGrads<S> {
        let lv = self.value(loss);
        assert_eq!(lv.len(), 1, "backward: loss must be scalar");
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut param_grads: ParamGrads<S> =
            (0..self.params.entries.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_vec(1, 1, vec![S::one()]));

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Param(i) => {
                    if self.params.entries[*i].trainable {
                        let pv = &self.params.entries[*i].value;
                        let slot = param_grads[*i]
                            .get_or_insert_with(|| Tensor::zeros(pv.rows, pv.cols));
                        for (a, &b) in slot.data.iter_mut().zip(&g.data) {
                            *a += b;
                        }
                    }
                }
                Op::Const => {}
                Op::Linear { x, w, b } => {
                    let (x, w, b) = (*x, *w, *b);
                    let xv = self.value(x);
                    let wv = self.value(w);
                    let (n, out, inn) = (xv.rows, wv.rows, wv.cols);
                    if self.needs(x) {
                        let gx = self.grad_slot(&mut grads, x, n, inn);
                        for i in 0..n {
                            for j in 0..out {
                                let c = g.data[i * out + j];
                                let wr = wv.row(j);
                                let gr = &mut gx.data[i * inn..(i + 1) * inn];
                                for t in 0..inn {
                                    gr[t] += c * wr[t];
                                }
                            }
                        }
                    }
                    if self.needs(w) {
                        let gw = self.grad_slot(&mut grads, w, out, inn);
                        for i in 0..n {
                            let xr = xv.row(i);
                            for j in 0..out {
                                let c = g.data[i * out + j];
                                let gr = &mut gw.data[j * inn..(j + 1) * inn];
                                for t in 0..inn {
                                    gr[t] += c * xr[t];
                                }
                            }
                        }
                    }
                    if let Some(b) = b {
                        if self.needs(b) {
                            let gb = self.grad_slot(&mut grads, b, 1, out);
                            for i in 0..n {
                                for j in 0..out {
                                    gb.data[j] += g.data[i * out + j];
                                }
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for &src in [a, b].iter() {
                        if self.needs(*src) {
                            let gs = self.grad_slot(&mut grads, *src, g.rows, g.cols);
                            for (t, &v) in gs.data.iter_mut().zip(&g.data) {
                                *t += v;
                            }
                        }
                    }
                }
                Op::Scale(x, f) => {
                    if self.needs(*x) {
                        let f = S::from_f64(*f);
                        let gs = self.grad_slot(&mut grads, *x, g.rows, g.cols);
                        for (t, &v) in gs.data.iter_mut().zip(&g.data) {
                            *t += v * f;
                        }
                    }
                }
                Op::Modulate { x, scale, shift } => {
                    let (x, scale, shift) = (*x, *scale, *shift);
                    let xv = self.value(x);
                    let sv = self.value(scale);
                    let (n, d) = (xv.rows, xv.cols);
                    if self.needs(x) {
                        let gx = self.grad_slot(&mut grads, x, n, d);
                        for i in 0..n {
                            for j in 0..d {
                                gx.data[i * d + j] += g.data[i * d + j] * (S::one() + sv.data[j]);
                            }
                        }
                    }
                    if self.needs(scale) {
                        let gs = self.grad_slot(&mut grads, scale, 1, d);
                        for i in 0..n {
                            for j in 0..d {
                                gs.data[j] += g.data[i * d + j] * xv.data[i * d + j];
                            }
                        }
                    }
                    if self.needs(shift) {
                        let gh = self.grad_slot(&mut grads, shift, 1, d);
                        for i in 0..n {
                            for j in 0..d {
                                gh.data[j] += g.data[i * d + j];
                            }
                        }
                    }
                }
                Op::GateRows { x, gate } => {
                    let (x, gate) = (*x, *gate);
                    let xv = self.value(x);
                    let gv = self.value(gate);
                    let (n, d) = (xv.rows, xv.cols);
                    if self.needs(x) {
                        let gx = self.grad_slot(&mut grads, x, n, d);
                        for i in 0..n {
                            for j in 0..d {
                                gx.data[i * d + j] += g.data[i * d + j] * gv.data[j];
                            }
                        }
                    }
                    if self.needs(gate) {
                        let gg = self.grad_slot(&mut grads, gate, 1, d);
                        for i in 0..n {
                            for j in 0..d {
                                gg.data[j] += g.data[i * d + j] * xv.data[i * d + j];
                            }
                        }
                    }
                }
                Op::LayerNorm { x } => {
                    let x = *x;
                    if self.needs(x) {
                        let yv = &self.nodes[id].value;
                        let aux = &self.nodes[id].aux;
                        let (n, d) = (yv.rows, yv.cols);
                        let dn = S::from_f64(d as f64);
                        let gx = self.grad_slot(&mut grads, x, n, d);
                        for i in 0..n {
                            let rstd = aux[i];
                            let yr = yv.row(i);
                            let gr = &g.data[i * d..(i + 1) * d];
                            let mut mean_g = S::zero();
                            let mut mean_gy = S::zero();
                            for j in 0..d {
                                mean_g += gr[j];
                                mean_gy += gr[j] * yr[j];
                            }
                            mean_g = mean_g / dn;
                            mean_gy = mean_gy / dn;
                            for j in 0..d {
                                gx.data[i * d + j] +=
                                    rstd * (gr[j] - mean_g - yr[j] * mean_gy);
                            }
                        }
                    }
                }
                Op::Silu(x) => {
                    let x = *x;
                    if self.needs(x) {
                        let xv = self.value(x);
                        let gx = self.grad_slot(&mut grads, x, xv.rows, xv.cols);
                        for (t, (&v, &gv)) in
                            gx.data.iter_mut().zip(xv.data.iter().zip(&g.data))
                        {
                            let sig = S::one() / (S::one() + (-v).exp());
                            *t += gv * sig * (S::one() + v * (S::one() - sig));
                        }
                    }
                }
                Op::Rope { x, n_heads, pairs, cos, sin } => {
                    let x = *x;
                    if self.needs(x) {
                        let (n_heads, pairs) = (*n_heads, *pairs);
                        let (n, d) = (g.rows, g.cols);
                        let hd = d / n_heads;
                        let gx = self.grad_slot(&mut grads, x, n, d);
                        for i in 0..n {
                            for h in 0..n_heads {
                                for p in 0..pairs {
                                    let c = S::from_f64(cos[i * pairs + p]);
                                    let s = S::from_f64(sin[i * pairs + p]);
                                    let ga = g.data[i * d + h * hd + 2 * p];
                                    let gb = g.data[i * d + h * hd + 2 * p + 1];
                                    gx.data[i * d + h * hd + 2 * p] += ga * c + gb * s;
                                    gx.data[i * d + h * hd + 2 * p + 1] += -ga * s + gb * c;
                                }
                            }
                        }
                    }
                }
                Op::Attention { q, k, v, n_heads } => {
                    let (q, k, v, n_heads) = (*q, *k, *v, *n_heads);
                    let qv = self.value(q);
                    let kv = self.value(k);
                    let vv = self.value(v);
                    let (n, d) = (qv.rows, qv.cols);
                    let hd = d / n_heads;
                    let scale = S::from_f64(1.0 / (hd as f64).sqrt());
                    let aux = &self.nodes[id].aux;
                    let mut gq = Tensor::zeros(n, d);
                    let mut gk = Tensor::zeros(n, d);
                    let mut gv = Tensor::zeros(n, d);
                    let mut dp = vec![S::zero(); n];
                    for h in 0..n_heads {
                        let off = h * hd;
                        for i in 0..n {
                            let probs = &aux[h * n * n + i * n..h * n * n + (i + 1) * n];
                            // dP and dV.
                            let mut dot = S::zero();
                            for j in 0..n {
                                let mut s = S::zero();
                                for t in 0..hd {
                                    s += g.data[i * d + off + t] * vv.data[j * d + off + t];
                                }
                                dp[j] = s;
                                dot += probs[j] * s;
                                let pj = probs[j];
                                for t in 0..hd {
                                    gv.data[j * d + off + t] += pj * g.data[i * d + off + t];
                                }
                            }
                            // dS = P o (dP - sum P o dP); then dQ, dK.
                            for j in 0..n {
                                let ds = probs[j] * (dp[j] - dot) * scale;
                                for t in 0..hd {
                                    gq.data[i * d + off + t] += ds * kv.data[j * d + off + t];
                                    gk.data[j * d + off + t] += ds * qv.data[i * d + off + t];
                                }
                            }
                        }
                    }
                    for (src, gsrc) in [(q, gq), (k, gk), (v, gv)] {
                        if self.needs(src) {
                            let slot = self.grad_slot(&mut grads, src, n, d);
                            for (t, &x) in slot.data.iter_mut().zip(&gsrc.data) {
                                *t += x;
                            }
                        }
                    }
                }
                Op::Concat0(parts) => {
                    let mut row = 0;
                    for &p in parts.iter() {
                        let pv = self.value(p);
                        let rows = pv.rows;
                        if self.needs(p) {
                            let gs = self.grad_slot(&mut grads, p, rows, pv.cols);
                            let cols = g.cols;
                            for (t, &v) in gs
                                .data
                                .iter_mut()
                                .zip(&g.data[row * cols..(row + rows) * cols])
                            {
                                *t += v;
                            }
                        }
                        row += rows;
                    }
                }
                Op::SliceRows { x, start } => {
                    let (x, start) = (*x, *start);
                    if self.needs(x) {
                        let xv = self.value(x);
                        let cols = xv.cols;
                        let (rows_full, len) = (xv.rows, g.rows);
                        let gs = self.grad_slot(&mut grads, x, rows_full, cols);
                        for (t, &v) in gs.data[start * cols..(start + len) * cols]
                            .iter_mut()
                            .zip(&g.data)
                        {
                            *t += v;
                        }
                    }
                }
                Op::SliceCols { x, start } => {
                    let (x, start) = (*x, *start);
                    if self.needs(x) {
                        let xv = self.value(x);
                        let (rows, cols_full) = (xv.rows, xv.cols);
                        let len = g.cols;
                        let gs = self.grad_slot(&mut grads, x, rows, cols_full);
                        for i in 0..rows {
                            for j in 0..len {
                                gs.data[i * cols_full + start + j] += g.data[i * len + j];
                            }
                        }
                    }
                }
                Op::Gather { table, indices } => {
                    let table = *table;
                    if self.needs(table) {
                        let tv = self.value(table);
                        let cols = tv.cols;
                        let (rows, _) = (tv.rows, tv.cols);
                        let gs = self.grad_slot(&mut grads, table, rows, cols);
                        for (r, &i) in indices.iter().enumerate() {
                            for j in 0..cols {
                                gs.data[i * cols + j] += g.data[r * cols + j];
                            }
                        }
                    }
                }
                Op::MseLoss { pred, target } => {
                    let (pred, target) = (*pred, *target);
                    if self.needs(pred) {
                        let pv = self.value(pred);
                        let tv = self.value(target);
                        let c = g.data[0] * S::from_f64(2.0 / pv.len() as f64);
                        let gs = self.grad_slot(&mut grads, pred, pv.rows, pv.cols);
                        for (t, (&a, &b)) in
                            gs.data.iter_mut().zip(pv.data.iter().zip(&tv.data))
                        {
                            *t += c * (a - b);
                        }
                    }
                }
            }
        }
        param_grads
    }

    #[allow(clippy::mut_from_ref)]
    fn grad_slot<'g>(
        &self,
        grads: &'g mut Vec<Option<Tensor<S>>>,
        v: Var,
        rows: usize,
        cols: usize,
    ) -> &'g mut Tensor<S> {
        grads[v.0].get_or_insert_with(|| Tensor::zeros(rows, cols))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_params(shapes: &[(usize, usize)], seed: u64) -> ParamSet<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::default();
        for (i, &(r, c)) in shapes.iter().enumerate() {
            let data: Vec<f64> = (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
            ps.push(format!("p{i}"), Tensor::from_vec(r, c, data), true);
        }
        ps
    }

    /// Check analytic gradients of `build` (params -> scalar loss) against
    /// central differences for every trainable scalar.
    fn gradcheck(
        shapes: &[(usize, usize)],
        seed: u64,
        tol: f64,
        build: impl Fn(&mut Graph<f64>) -> Var,
    ) {
        let mut ps = random_params(shapes, seed);
        let grads = {
            let mut g = Graph::new(&ps);
            let loss = build(&mut g);
            g.backward(loss)
        };
        let eps = 1e-6;
        for pi in 0..ps.entries.len() {
            let n = ps.entries[pi].value.len();
            for t in 0..n {
                let orig = ps.entries[pi].value.data[t];
                ps.entries[pi].value.data[t] = orig + eps;
                let up = {
                    let mut g = Graph::new(&ps);
                    let l = build(&mut g);
                    g.value(l).data[0]
                };
                ps.entries[pi].value.data[t] = orig - eps;
                let down = {
                    let mut g = Graph::new(&ps);
                    let l = build(&mut g);
                    g.value(l).data[0]
                };
                ps.entries[pi].value.data[t] = orig;
                let fd = (up - down) / (2.0 * eps);
                let an = grads[pi].as_ref().map_or(0.0, |g| g.data[t]);
                let denom = fd.abs().max(an.abs()).max(1e-4);
                assert!(
                    (fd - an).abs() / denom < tol,
                    "param {pi} elem {t}: fd {fd} vs analytic {an}"
                );
            }
        }
    }

    #[test]
    fn linear_grad() {
        gradcheck(&[(3, 4), (5, 4), (1, 5)], 1, 1e-6, |g| {
            let x = g.param(0);
            let w = g.param(1);
            let b = g.param(2);
            let y = g.linear(x, w, Some(b));
            let tgt = g.zeros(3, 5);
            g.mse_loss(y, tgt)
        });
    }

    #[test]
    fn add_scale_grad() {
        gradcheck(&[(2, 3), (2, 3)], 2, 1e-6, |g| {
            let a = g.param(0);
            let b = g.param(1);
            let s = g.add(a, b);
            let s = g.scale(s, -1.7);
            let tgt = g.zeros(2, 3);
            g.mse_loss(s, tgt)
        });
    }

    #[test]
    fn modulate_gate_grad() {
        gradcheck(&[(3, 4), (1, 4), (1, 4), (1, 4)], 3, 1e-6, |g| {
            let x = g.param(0);
            let sc = g.param(1);
            let sh = g.param(2);
            let gate = g.param(3);
            let m = g.modulate(x, sc, sh);
            let m = g.gate_rows(m, gate);
            let tgt = g.zeros(3, 4);
            g.mse_loss(m, tgt)
        });
    }

    #[test]
    fn layer_norm_grad() {
        gradcheck(&[(3, 6), (6, 6)], 4, 1e-5, |g| {
            let x = g.param(0);
            let w = g.param(1);
            let n = g.layer_norm(x);
            // Project so the loss is not invariant to the normalized scale.
            let y = g.linear(n, w, None);
            let s = g.silu(y);
            let tgt = g.zeros(3, 6);
            g.mse_loss(s, tgt)
        });
    }

    #[test]
    fn silu_grad() {
        gradcheck(&[(4, 3)], 5, 1e-6, |g| {
            let x = g.param(0);
            let y = g.silu(x);
            let tgt = g.zeros(4, 3);
            g.mse_loss(y, tgt)
        });
    }

    #[test]
    fn rope_grad_and_norm() {
        let n = 3;
        let pairs = 2; // head_dim 4, two heads -> cols 8
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cos_sin: Vec<(f64, f64)> = (0..n * pairs)
            .map(|_| {
                let a: f64 = rng.gen_range(-3.0..3.0);
                (a.cos(), a.sin())
            })
            .collect();
        let cos: Vec<f64> = cos_sin.iter().map(|p| p.0).collect();
        let sin: Vec<f64> = cos_sin.iter().map(|p| p.1).collect();
        gradcheck(&[(n, 8)], 6, 1e-6, |g| {
            let x = g.param(0);
            let r = g.rope(x, 2, cos.clone(), sin.clone());
            let tgt = g.constant(Tensor::from_vec(n, 8, vec![0.25; n * 8]));
            g.mse_loss(r, tgt)
        });
        // Rotation preserves per-row norms.
        let ps = random_params(&[(n, 8)], 8);
        let mut g = Graph::new(&ps);
        let x = g.param(0);
        let r = g.rope(x, 2, cos, sin);
        for i in 0..n {
            let a: f64 = ps.entries[0].value.row(i).iter().map(|v| v * v).sum();
            let b: f64 = g.value(r).row(i).iter().map(|v| v * v).sum();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_grad() {
        gradcheck(&[(4, 6), (4, 6), (4, 6)], 9, 1e-5, |g| {
            let q = g.param(0);
            let k = g.param(1);
            let v = g.param(2);
            let o = g.attention(q, k, v, 2);
            let tgt = g.zeros(4, 6);
            g.mse_loss(o, tgt)
        });
    }

    #[test]
    fn attention_uniform_when_keys_equal() {
        // Identical keys -> uniform weights -> output = mean of values.
        let mut ps = ParamSet::<f64>::default();
        ps.push("q", Tensor::from_vec(3, 2, vec![1.0, -2.0, 0.3, 0.0, 5.0, 5.0]), true);
        ps.push("k", Tensor::from_vec(3, 2, vec![0.7, -0.1].repeat(3)), true);
        ps.push("v", Tensor::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), true);
        let mut g = Graph::new(&ps);
        let (q, k, v) = (g.param(0), g.param(1), g.param(2));
        let o = g.attention(q, k, v, 1);
        for i in 0..3 {
            assert!((g.value(o).data[i * 2] - 3.0).abs() < 1e-12);
            assert!((g.value(o).data[i * 2 + 1] - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn concat_slice_gather_grad() {
        gradcheck(&[(2, 3), (3, 3), (4, 3)], 10, 1e-6, |g| {
            let a = g.param(0);
            let b = g.param(1);
            let table = g.param(2);
            let gathered = g.gather(table, &[3, 0, 0, 2]);
            let cat = g.concat_rows(&[a, b, gathered]);
            let mid = g.slice_rows(cat, 1, 6);
            let narrow = g.slice_cols(mid, 1, 2);
            let tgt = g.zeros(6, 2);
            g.mse_loss(narrow, tgt)
        });
    }

    #[test]
    fn frozen_params_get_no_gradient() {
        let mut ps = random_params(&[(2, 2), (2, 2)], 11);
        ps.entries[0].trainable = false;
        let mut g = Graph::new(&ps);
        let a = g.param(0);
        let b = g.param(1);
        let s = g.add(a, b);
        let tgt = g.zeros(2, 2);
        let loss = g.mse_loss(s, tgt);
        let grads = g.backward(loss);
        assert!(grads[0].is_none());
        assert!(grads[1].is_some());
    }

    #[test]
    fn shared_param_grads_accumulate() {
        // loss = mse(x + x, 0) => d/dx = 2 * d(mse)/d(sum).
        let ps = random_params(&[(2, 2)], 12);
        let mut g = Graph::new(&ps);
        let x1 = g.param(0);
        let x2 = g.param(0);
        let s = g.add(x1, x2);
        let tgt = g.zeros(2, 2);
        let loss = g.mse_loss(s, tgt);
        let grads = g.backward(loss);
        let gx = grads[0].as_ref().unwrap();
        for (i, &v) in ps.entries[0].value.data.iter().enumerate() {
            let expect = 2.0 * (2.0 / 4.0) * (2.0 * v);
            assert!((gx.data[i] - expect).abs() < 1e-12);
        }
    }
}
