//! Eager compute graph with per-op backward closures.
//!
//! Every op computes its output immediately and records a closure that
//! maps the output adjoint to parent adjoints. `backward` walks the
//! node list in reverse; because ops only ever reference earlier vars,
//! that order is a valid reverse topological sweep. Parameters enter
//! the graph through [`Graph::param`]; their gradients come back as a
//! name-keyed map so the caller can fold them into the store.

use std::collections::{BTreeMap, HashMap};

use crate::error::{FattnError, Result};
use crate::tensorcore::params::ParamStore;
use crate::tensorcore::tensor::Tensor;

/// Handle to a node in one [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

type BackFn = Box<dyn Fn(&Tensor, &mut dyn FnMut(usize, Tensor))>;

enum NodeKind {
    Leaf,
    Param(String),
    Op(BackFn),
}

struct Node {
    value: Tensor,
    kind: NodeKind,
}

pub struct Graph<'a> {
    store: &'a ParamStore,
    track_params: bool,
    nodes: Vec<Node>,
    param_vars: HashMap<String, Var>,
}

impl<'a> Graph<'a> {
    /// `track_params = false` turns parameters into plain leaves; use it
    /// for inference or finite-difference evaluations.
    pub fn new(store: &'a ParamStore, track_params: bool) -> Self {
        Self {
            store,
            track_params,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn value_cloned(&self, v: Var) -> Tensor {
        self.nodes[v.0].value.clone()
    }

    fn push(&mut self, value: Tensor, kind: NodeKind) -> Var {
        self.nodes.push(Node { value, kind });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, NodeKind::Leaf)
    }

    /// Bring a stored parameter into the graph. Repeated calls with the
    /// same name return the same var so gradients accumulate across uses.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.param_vars.get(name) {
            return Ok(v);
        }
        let value = self.store.value(name)?.clone();
        let kind = if self.track_params {
            NodeKind::Param(name.to_string())
        } else {
            NodeKind::Leaf
        };
        let v = self.push(value, kind);
        self.param_vars.insert(name.to_string(), v);
        Ok(v)
    }

    /// y = x W + b  for x: N x D_in, W: D_in x D_out, b: D_out.
    ///
    /// Adjoints: dx = dy W^T, dW = x^T dy, db = column sums of dy.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if xv.rank() != 2 || wv.rank() != 2 || bv.rank() != 1 {
            return Err(FattnError::ShapeMismatch("linear expects x:2d W:2d b:1d".into()));
        }
        if xv.cols() != wv.rows() || wv.cols() != bv.len() {
            return Err(FattnError::ShapeMismatch(format!(
                "linear {:?} . {:?} + {:?}",
                xv.shape(),
                wv.shape(),
                bv.shape()
            )));
        }
        let mut y = xv.matmul(wv)?;
        let d_out = bv.len();
        for r in 0..y.rows() {
            let row = &mut y.data_mut()[r * d_out..(r + 1) * d_out];
            for (o, bi) in row.iter_mut().zip(bv.data()) {
                *o += bi;
            }
        }
        let (xc, wc) = (xv.clone(), wv.clone());
        let (xi, wi, bi) = (x.0, w.0, b.0);
        Ok(self.push(
            y,
            NodeKind::Op(Box::new(move |dy, emit| {
                emit(xi, dy.matmul_nt(&wc).expect("linear dx"));
                emit(wi, xc.matmul_tn(dy).expect("linear dW"));
                let d_out = dy.cols();
                let mut db = vec![0.0; d_out];
                for r in 0..dy.rows() {
                    for (acc, v) in db.iter_mut().zip(dy.row(r)) {
                        *acc += v;
                    }
                }
                emit(bi, Tensor::new(vec![d_out], db).expect("linear db"));
            })),
        ))
    }

    /// C = A B.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).matmul(self.value(b))?;
        let (ac, bc) = (self.value(a).clone(), self.value(b).clone());
        let (ai, bi) = (a.0, b.0);
        Ok(self.push(
            y,
            NodeKind::Op(Box::new(move |dy, emit| {
                emit(ai, dy.matmul_nt(&bc).expect("matmul dA"));
                emit(bi, ac.matmul_tn(dy).expect("matmul dB"));
            })),
        ))
    }

    /// C = A B^T.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).matmul_nt(self.value(b))?;
        let (ac, bc) = (self.value(a).clone(), self.value(b).clone());
        let (ai, bi) = (a.0, b.0);
        Ok(self.push(
            y,
            NodeKind::Op(Box::new(move |dy, emit| {
                emit(ai, dy.matmul(&bc).expect("matmul_nt dA"));
                emit(bi, dy.matmul_tn(&ac).expect("matmul_nt dB"));
            })),
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(FattnError::ShapeMismatch(format!(
                "add {:?} + {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let mut y = av.clone();
        y.add_assign(bv);
        let (ai, bi) = (a.0, b.0);
        Ok(self.push(
            y,
            NodeKind::Op(Box::new(move |dy, emit| {
                emit(ai, dy.clone());
                emit(bi, dy.clone());
            })),
        ))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let mut y = self.value(x).clone();
        y.scale_assign(c);
        let xi = x.0;
        self.push(
            y,
            NodeKind::Op(Box::new(move |dy, emit| {
                let mut dx = dy.clone();
                dx.scale_assign(c);
                emit(xi, dx);
            })),
        )
    }

    /// Row-wise softmax with max subtraction.
    ///
    /// Adjoint per row: dx = y .* (dy - <dy, y>).
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 {
            return Err(FattnError::ShapeMismatch("softmax_rows expects 2d".into()));
        }
        let (n, m) = (xv.rows(), xv.cols());
        let mut y = Tensor::zeros(vec![n, m]);
        for r in 0..n {
            let row = xv.row(r);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for c in 0..m {
                let e = (row[c] - mx).exp();
                y.set2(r, c, e);
                sum += e;
            }
            for c in 0..m {
                y.set2(r, c, y.at2(r, c) / sum);
            }
        }
        let yc = y.clone();
        let xi = x.0;
        Ok(self.push(
            y,
            NodeKind::Op(Box::new(move |dy, emit| {
                let (n, m) = (yc.rows(), yc.cols());
                let mut dx = Tensor::zeros(vec![n, m]);
                for r in 0..n {
                    let dot: f64 = (0..m).map(|c| dy.at2(r, c) * yc.at2(r, c)).sum();
                    for c in 0..m {
                        dx.set2(r, c, yc.at2(r, c) * (dy.at2(r, c) - dot));
                    }
                }
                emit(xi, dx);
            })),
        ))
    }

    /// Row-wise layer normalization with affine scale/shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        if xv.rank() != 2 || gv.len() != xv.cols() || bv.len() != xv.cols() {
            return Err(FattnError::ShapeMismatch(format!(
                "layer_norm x {:?} gamma {:?} beta {:?}",
                xv.shape(),
                gv.shape(),
                bv.shape()
            )));
        }
        let (n, d) = (xv.rows(), xv.cols());
        let mut y = Tensor::zeros(vec![n, d]);
        let mut xhat = Tensor::zeros(vec![n, d]);
        let mut sigmas = vec![0.0; n];
        for r in 0..n {
            let row = xv.row(r);
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let sigma = (var + eps).sqrt();
            sigmas[r] = sigma;
            for c in 0..d {
                let h = (row[c] - mu) / sigma;
                xhat.set2(r, c, h);
                y.set2(r, c, gv.data()[c] * h + bv.data()[c]);
            }
        }
        let gc = gv.clone();
        let (xi, gi, bi) = (x.0, gamma.0, beta.0);
        Ok(self.push(
            y,
            NodeKind::Op(Box::new(move |dy, emit| {
                let (n, d) = (xhat.rows(), xhat.cols());
                let mut dx = Tensor::zeros(vec![n, d]);
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                for r in 0..n {
                    let mut mean_dh = 0.0;
                    let mut mean_dh_h = 0.0;
                    for c in 0..d {
                        let g = dy.at2(r, c);
                        let h = xhat.at2(r, c);
                        dgamma[c] += g * h;
                        dbeta[c] += g;
                        let dh = g * gc.data()[c];
                        mean_dh += dh;
                        mean_dh_h += dh * h;
                    }
                    mean_dh /= d as f64;
                    mean_dh_h /= d as f64;
                    for c in 0..d {
                        let dh = dy.at2(r, c) * gc.data()[c];
                        let h = xhat.at2(r, c);
                        dx.set2(r, c, (dh - mean_dh - h * mean_dh_h) / sigmas[r]);
                    }
                }
                emit(xi, dx);
                emit(gi, Tensor::new(vec![d], dgamma).expect("ln dgamma"));
                emit(bi, Tensor::new(vec![d], dbeta).expect("ln dbeta"));
            })),
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mask: Vec<bool> = xv.data().iter().map(|&v| v > 0.0).collect();
        let data: Vec<f64> = xv.data().iter().map(|&v| v.max(0.0)).collect();
        let y = Tensor::new(xv.shape().to_vec(), data).expect("relu");
        let xi = x.0;
        self.push(
            y,
            NodeKind::Op(Box::new(move |dy, emit| {
                let data: Vec<f64> = dy
                    .data()
                    .iter()
                    .zip(&mask)
                    .map(|(&g, &m)| if m { g } else { 0.0 })
                    .collect();
                emit(xi, Tensor::new(dy.shape().to_vec(), data).expect("relu dx"));
            })),
        )
    }

    /// Columns [start, start+len) of a 2-D tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 || start + len > xv.cols() {
            return Err(FattnError::ShapeMismatch(format!(
                "slice_cols [{start}, {start}+{len}) of {:?}",
                xv.shape()
            )));
        }
        let (n, m) = (xv.rows(), xv.cols());
        let mut data = Vec::with_capacity(n * len);
        for r in 0..n {
            data.extend_from_slice(&xv.row(r)[start..start + len]);
        }
        let xi = x.0;
        Ok(self.push(
            Tensor::new(vec![n, len], data)?,
            NodeKind::Op(Box::new(move |dy, emit| {
                let mut dx = Tensor::zeros(vec![n, m]);
                for r in 0..n {
                    for c in 0..len {
                        dx.set2(r, start + c, dy.at2(r, c));
                    }
                }
                emit(xi, dx);
            })),
        ))
    }

    /// Horizontal concatenation of 2-D tensors with equal row counts.
    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(FattnError::ShapeMismatch("concat_cols of nothing".into()));
        }
        let n = self.value(xs[0]).rows();
        let widths: Vec<usize> = xs.iter().map(|&v| self.value(v).cols()).collect();
        if xs.iter().any(|&v| self.value(v).rows() != n) {
            return Err(FattnError::ShapeMismatch("concat_cols row counts differ".into()));
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(n * total);
        for r in 0..n {
            for &v in xs {
                data.extend_from_slice(self.value(v).row(r));
            }
        }
        let ids: Vec<usize> = xs.iter().map(|v| v.0).collect();
        Ok(self.push(
            Tensor::new(vec![n, total], data)?,
            NodeKind::Op(Box::new(move |dy, emit| {
                let mut off = 0;
                for (&id, &w) in ids.iter().zip(&widths) {
                    let mut dx = Tensor::zeros(vec![n, w]);
                    for r in 0..n {
                        for c in 0..w {
                            dx.set2(r, c, dy.at2(r, off + c));
                        }
                    }
                    emit(id, dx);
                    off += w;
                }
            })),
        ))
    }

    /// Vertical concatenation of 2-D tensors with equal column counts.
    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(FattnError::ShapeMismatch("concat_rows of nothing".into()));
        }
        let m = self.value(xs[0]).cols();
        if xs.iter().any(|&v| self.value(v).cols() != m) {
            return Err(FattnError::ShapeMismatch("concat_rows col counts differ".into()));
        }
        let heights: Vec<usize> = xs.iter().map(|&v| self.value(v).rows()).collect();
        let total: usize = heights.iter().sum();
        let mut data = Vec::with_capacity(total * m);
        for &v in xs {
            data.extend_from_slice(self.value(v).data());
        }
        let ids: Vec<usize> = xs.iter().map(|v| v.0).collect();
        Ok(self.push(
            Tensor::new(vec![total, m], data)?,
            NodeKind::Op(Box::new(move |dy, emit| {
                let mut off = 0;
                for (&id, &h) in ids.iter().zip(&heights) {
                    let mut dx = Tensor::zeros(vec![h, m]);
                    for r in 0..h {
                        for c in 0..m {
                            dx.set2(r, c, dy.at2(off + r, c));
                        }
                    }
                    emit(id, dx);
                    off += h;
                }
            })),
        ))
    }

    /// Same data, new shape.
    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let y = self.value(x).reshaped(shape)?;
        let old_shape = self.value(x).shape().to_vec();
        let xi = x.0;
        Ok(self.push(
            y,
            NodeKind::Op(Box::new(move |dy, emit| {
                emit(xi, dy.reshaped(old_shape.clone()).expect("reshape dx"));
            })),
        ))
    }

    /// Zero-pad a 2-D tensor at the bottom up to `rows` rows.
    pub fn pad_rows(&mut self, x: Var, rows: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 || rows < xv.rows() {
            return Err(FattnError::ShapeMismatch(format!(
                "pad_rows {:?} to {rows}",
                xv.shape()
            )));
        }
        let (n, m) = (xv.rows(), xv.cols());
        let mut data = xv.data().to_vec();
        data.resize(rows * m, 0.0);
        let xi = x.0;
        Ok(self.push(
            Tensor::new(vec![rows, m], data)?,
            NodeKind::Op(Box::new(move |dy, emit| {
                let mut dx = Tensor::zeros(vec![n, m]);
                dx.data_mut().copy_from_slice(&dy.data()[..n * m]);
                emit(xi, dx);
            })),
        ))
    }

    /// Elementwise maximum over same-shaped tensors. Ties resolve to
    /// the earliest input so the adjoint routing is deterministic.
    pub fn eltwise_max(&mut self, xs: &[Var]) -> Result<Var> {
        self.eltwise_pool(xs, true)
    }

    /// Elementwise mean over same-shaped tensors.
    pub fn eltwise_mean(&mut self, xs: &[Var]) -> Result<Var> {
        self.eltwise_pool(xs, false)
    }

    fn eltwise_pool(&mut self, xs: &[Var], max_mode: bool) -> Result<Var> {
        if xs.is_empty() {
            return Err(FattnError::ShapeMismatch("pool of nothing".into()));
        }
        let shape = self.value(xs[0]).shape().to_vec();
        if xs.iter().any(|&v| self.value(v).shape() != shape.as_slice()) {
            return Err(FattnError::ShapeMismatch("pool shapes differ".into()));
        }
        let n: usize = shape.iter().product();
        let k = xs.len();
        let mut data = vec![0.0; n];
        let mut argmax = vec![0usize; n];
        if max_mode {
            for i in 0..n {
                let mut best = self.value(xs[0]).data()[i];
                let mut who = 0;
                for (j, &v) in xs.iter().enumerate().skip(1) {
                    let cand = self.value(v).data()[i];
                    if cand > best {
                        best = cand;
                        who = j;
                    }
                }
                data[i] = best;
                argmax[i] = who;
            }
        } else {
            for &v in xs {
                for (acc, x) in data.iter_mut().zip(self.value(v).data()) {
                    *acc += x;
                }
            }
            for d in &mut data {
                *d /= k as f64;
            }
        }
        let ids: Vec<usize> = xs.iter().map(|v| v.0).collect();
        let shape_c = shape.clone();
        Ok(self.push(
            Tensor::new(shape, data)?,
            NodeKind::Op(Box::new(move |dy, emit| {
                for (j, &id) in ids.iter().enumerate() {
                    let mut dx = vec![0.0; n];
                    if max_mode {
                        for i in 0..n {
                            if argmax[i] == j {
                                dx[i] = dy.data()[i];
                            }
                        }
                    } else {
                        for i in 0..n {
                            dx[i] = dy.data()[i] / k as f64;
                        }
                    }
                    emit(id, Tensor::new(shape_c.clone(), dx).expect("pool dx"));
                }
            })),
        ))
    }

    /// Mean over the rows of a 2-D tensor, yielding 1 x D.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 {
            return Err(FattnError::ShapeMismatch("mean_rows expects 2d".into()));
        }
        let (n, d) = (xv.rows(), xv.cols());
        let mut data = vec![0.0; d];
        for r in 0..n {
            for (acc, v) in data.iter_mut().zip(xv.row(r)) {
                *acc += v;
            }
        }
        for v in &mut data {
            *v /= n as f64;
        }
        let xi = x.0;
        Ok(self.push(
            Tensor::new(vec![1, d], data)?,
            NodeKind::Op(Box::new(move |dy, emit| {
                let mut dx = Tensor::zeros(vec![n, d]);
                for r in 0..n {
                    for c in 0..d {
                        dx.set2(r, c, dy.at2(0, c) / n as f64);
                    }
                }
                emit(xi, dx);
            })),
        ))
    }

    /// Average of same-shaped tensors (used for batch losses).
    pub fn average(&mut self, xs: &[Var]) -> Result<Var> {
        self.eltwise_mean(xs)
    }

    /// Cross-entropy of a 1 x C logits row against an integer label,
    /// computed as logsumexp(z) - z[label].
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let zv = self.value(logits);
        if zv.rank() != 2 || zv.rows() != 1 || label >= zv.cols() {
            return Err(FattnError::ShapeMismatch(format!(
                "cross_entropy logits {:?} label {label}",
                zv.shape()
            )));
        }
        let c = zv.cols();
        let row = zv.row(0);
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&z| (z - mx).exp()).sum();
        let lse = mx + sum.ln();
        let loss = lse - row[label];
        let probs: Vec<f64> = row.iter().map(|&z| (z - mx).exp() / sum).collect();
        let zi = logits.0;
        Ok(self.push(
            Tensor::scalar(loss),
            NodeKind::Op(Box::new(move |dy, emit| {
                let g = dy.scalar_value();
                let mut dz = vec![0.0; c];
                for (i, dzi) in dz.iter_mut().enumerate() {
                    *dzi = g * (probs[i] - if i == label { 1.0 } else { 0.0 });
                }
                emit(zi, Tensor::new(vec![1, c], dz).expect("ce dz"));
            })),
        ))
    }

    /// 2-D convolution over a (C_in, H, W) input with a
    /// (C_out, C_in, kh, kw) kernel, square stride and zero padding.
    pub fn conv2d(
        &mut self,
        x: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (xv, kv, bv) = (self.value(x), self.value(kernel), self.value(bias));
        if xv.rank() != 3 || kv.rank() != 4 || bv.rank() != 1 {
            return Err(FattnError::ShapeMismatch(
                "conv2d expects x:(C,H,W) k:(Co,Ci,kh,kw) b:(Co)".into(),
            ));
        }
        let (ci, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let (co, kci, kh, kw) = (kv.shape()[0], kv.shape()[1], kv.shape()[2], kv.shape()[3]);
        if kci != ci || bv.len() != co {
            return Err(FattnError::ShapeMismatch("conv2d channel mismatch".into()));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(FattnError::ShapeMismatch("conv2d input smaller than kernel".into()));
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;

        let mut y = Tensor::zeros(vec![co, oh, ow]);
        {
            let xd = xv.data();
            let kd = kv.data();
            let yd = y.data_mut();
            for c_out in 0..co {
                let b = bv.data()[c_out];
                for r in 0..oh {
                    for s in 0..ow {
                        let mut acc = b;
                        for c_in in 0..ci {
                            for i in 0..kh {
                                let ih = (r * stride + i) as isize - pad as isize;
                                if ih < 0 || ih >= h as isize {
                                    continue;
                                }
                                for j in 0..kw {
                                    let iw = (s * stride + j) as isize - pad as isize;
                                    if iw < 0 || iw >= w as isize {
                                        continue;
                                    }
                                    acc += xd[(c_in * h + ih as usize) * w + iw as usize]
                                        * kd[((c_out * ci + c_in) * kh + i) * kw + j];
                                }
                            }
                        }
                        yd[(c_out * oh + r) * ow + s] = acc;
                    }
                }
            }
        }
        let (xc, kc) = (xv.clone(), kv.clone());
        let (xi, ki, bi) = (x.0, kernel.0, bias.0);
        Ok(self.push(
            y,
            NodeKind::Op(Box::new(move |dy, emit| {
                let mut dx = Tensor::zeros(vec![ci, h, w]);
                let mut dk = Tensor::zeros(vec![co, ci, kh, kw]);
                let mut db = vec![0.0; co];
                let xd = xc.data();
                let kd = kc.data();
                for c_out in 0..co {
                    for r in 0..oh {
                        for s in 0..ow {
                            let g = dy.data()[(c_out * oh + r) * ow + s];
                            if g == 0.0 {
                                continue;
                            }
                            db[c_out] += g;
                            for c_in in 0..ci {
                                for i in 0..kh {
                                    let ih = (r * stride + i) as isize - pad as isize;
                                    if ih < 0 || ih >= h as isize {
                                        continue;
                                    }
                                    for j in 0..kw {
                                        let iw = (s * stride + j) as isize - pad as isize;
                                        if iw < 0 || iw >= w as isize {
                                            continue;
                                        }
                                        let xofs = (c_in * h + ih as usize) * w + iw as usize;
                                        let kofs = ((c_out * ci + c_in) * kh + i) * kw + j;
                                        dk.data_mut()[kofs] += g * xd[xofs];
                                        dx.data_mut()[xofs] += g * kd[kofs];
                                    }
                                }
                            }
                        }
                    }
                }
                emit(xi, dx);
                emit(ki, dk);
                emit(bi, Tensor::new(vec![co], db).expect("conv db"));
            })),
        ))
    }

    /// Rearrange (C, H, W) to an H x (W*C) matrix: row h, column w*C + c.
    /// Used to hand a convolution stack off to a per-time-step projection.
    pub fn chw_to_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 3 {
            return Err(FattnError::ShapeMismatch("chw_to_rows expects 3d".into()));
        }
        let (c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
        let mut data = vec![0.0; h * w * c];
        for ci in 0..c {
            for hi in 0..h {
                for wi in 0..w {
                    data[hi * (w * c) + wi * c + ci] = xv.data()[(ci * h + hi) * w + wi];
                }
            }
        }
        let xi = x.0;
        Ok(self.push(
            Tensor::new(vec![h, w * c], data)?,
            NodeKind::Op(Box::new(move |dy, emit| {
                let mut dx = Tensor::zeros(vec![c, h, w]);
                for ci in 0..c {
                    for hi in 0..h {
                        for wi in 0..w {
                            dx.data_mut()[(ci * h + hi) * w + wi] =
                                dy.data()[hi * (w * c) + wi * c + ci];
                        }
                    }
                }
                emit(xi, dx);
            })),
        ))
    }

    /// Reverse sweep from a scalar root. Returns parameter gradients
    /// keyed by name; the caller folds them into the store.
    pub fn backward(&self, root: Var) -> Result<BTreeMap<String, Tensor>> {
        if self.value(root).len() != 1 {
            return Err(FattnError::ShapeMismatch("backward root must be scalar".into()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::new(
            self.value(root).shape().to_vec(),
            vec![1.0],
        )?);
        let mut out: BTreeMap<String, Tensor> = BTreeMap::new();
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].kind {
                NodeKind::Leaf => {}
                NodeKind::Param(name) => match out.get_mut(name) {
                    Some(acc) => acc.add_assign(&g),
                    None => {
                        out.insert(name.clone(), g);
                    }
                },
                NodeKind::Op(back) => {
                    back(&g, &mut |parent, contrib| match &mut grads[parent] {
                        Some(acc) => acc.add_assign(&contrib),
                        slot @ None => *slot = Some(contrib),
                    });
                }
            }
        }
        Ok(out)
    }
}

/// Fold a gradient map produced by [`Graph::backward`] into the store.
pub fn apply_gradients(store: &mut ParamStore, grads: &BTreeMap<String, Tensor>) -> Result<()> {
    for (name, g) in grads {
        store.accumulate_grad(name, g)?;
    }
    Ok(())
}
