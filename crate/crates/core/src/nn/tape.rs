//! Reverse-mode autodiff over a linear tape of tensor ops.

use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{self, ConvGeom, PadMode};
use super::NnError;
use crate::math;
use crate::tensor::{Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<f64>,
        invstd: Vec<f64>,
        batch_stats: bool,
    },
    Gelu { x: Var, slope: Vec<f64> },
    Relu(Var),
    Add(Var, Var),
    Concat(Var, Var),
    Upsample(Var),
    GlobalAvgPool(Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    LinearAttention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    Sum(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Batch statistics observed by a training-mode batch-norm op.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance, the convention for running estimates.
    pub var: Vec<f64>,
}

/// Records a forward computation so it can be differentiated once.
pub struct Tape {
    nodes: Vec<Node>,
    replayed: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of `v`, or `None` if `v` does not influence the output.
    pub fn get(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::new(&self.shapes[v.0], g.clone()).expect("gradient shape"))
    }

    /// Gradient of `v`, zeros when it did not influence the output.
    pub fn get_or_zeros(&self, v: Var) -> Tensor {
        self.get(v).unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

const ATTN_EPS: f64 = 1e-6;

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            replayed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A constant input; no gradient is tracked for it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A differentiable leaf, e.g. a trainable parameter.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    fn dims4(&self, v: Var, op: &'static str) -> Result<(usize, usize, usize, usize), NnError> {
        match *self.shape(v) {
            [b, c, h, w] => Ok((b, c, h, w)),
            _ => Err(NnError::Shape(TensorError::Invalid {
                op,
                reason: "expected a (batch, channels, height, width) tensor",
            })),
        }
    }

    /// Square-kernel convolution with "same" padding (`k / 2`).
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        groups: usize,
        pad_mode: PadMode,
    ) -> Result<Var, NnError> {
        let (batch, cin, h, wd) = self.dims4(x, "conv2d")?;
        let ws = self.shape(w).to_vec();
        let [cout, cin_g, k, k2] = ws[..] else {
            return Err(mismatch("conv2d weight", self.shape(x), &ws));
        };
        let depthwise_ok = groups == cin && cout == cin && cin_g == 1;
        if k != k2 || k % 2 == 0 || stride == 0 || !(groups == 1 && cin_g == cin || depthwise_ok) {
            return Err(mismatch("conv2d", self.shape(x), &ws));
        }
        if pad_mode == PadMode::Replicate && !depthwise_ok {
            return Err(NnError::Shape(TensorError::Invalid {
                op: "conv2d",
                reason: "replicate padding requires a depthwise convolution",
            }));
        }
        if let Some(bv) = b {
            if self.shape(bv) != [cout] {
                return Err(mismatch("conv2d bias", &[cout], self.shape(bv)));
            }
        }
        let geom = ConvGeom {
            batch,
            cin,
            cout,
            h,
            w: wd,
            k,
            stride,
            groups,
            pad_mode,
        };
        let (ho, wo) = geom.out_hw();
        let out = kernels::conv2d_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|bv| self.value(bv).data()),
        );
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|bv| self.rg(bv));
        let t = Tensor::new(&[batch, cout, ho, wo], out)?;
        Ok(self.push(t, Op::Conv { x, w, b, geom }, rg))
    }

    /// Batch normalization with batch statistics; returns the statistics so
    /// running estimates can be updated by the caller.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var) -> Result<(Var, BatchStats), NnError> {
        let (b, c, h, w) = self.dims4(x, "batch_norm")?;
        let plane = h * w;
        let (mean, var) = kernels::channel_moments(self.value(x).data(), b, c, plane);
        let invstd = kernels::inv_std(&var);
        let m = (b * plane) as f64;
        let unbiased = var
            .iter()
            .map(|&v| if m > 1.0 { v * m / (m - 1.0) } else { v })
            .collect();
        let stats = BatchStats {
            mean: mean.clone(),
            var: unbiased,
        };
        let v = self.batch_norm_with(x, gamma, beta, mean, invstd, true)?;
        Ok((v, stats))
    }

    /// Batch normalization with fixed statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
    ) -> Result<Var, NnError> {
        let invstd = kernels::inv_std(running_var);
        self.batch_norm_with(x, gamma, beta, running_mean.to_vec(), invstd, false)
    }

    fn batch_norm_with(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<f64>,
        invstd: Vec<f64>,
        batch_stats: bool,
    ) -> Result<Var, NnError> {
        let (b, c, h, w) = self.dims4(x, "batch_norm")?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] || mean.len() != c {
            return Err(mismatch("batch_norm", &[c], self.shape(gamma)));
        }
        let out = kernels::batchnorm_forward(
            self.value(x).data(),
            b,
            c,
            h * w,
            &mean,
            &invstd,
            self.value(gamma).data(),
            self.value(beta).data(),
        );
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let t = Tensor::new(&[b, c, h, w], out)?;
        Ok(self.push(
            t,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                invstd,
                batch_stats,
            },
            rg,
        ))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let rg = self.rg(x);
        let v = self.value(x);
        let (out, slope): (Vec<f64>, Vec<f64>) = if rg {
            v.data().iter().map(|&a| kernels::gelu_with_grad(a)).unzip()
        } else {
            (v.data().iter().map(|&a| kernels::gelu(a)).collect(), Vec::new())
        };
        let t = Tensor::new(v.shape(), out).expect("same shape");
        self.push(t, Op::Gelu { x, slope }, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let t = Tensor::new(v.shape(), v.data().iter().map(|&a| a.max(0.0)).collect())
            .expect("same shape");
        let rg = self.rg(x);
        self.push(t, Op::Relu(x), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch("add", self.shape(a), self.shape(b)));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::new(self.shape(a), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    /// Concatenate two NCHW tensors along channels.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (ba, ca, h, w) = self.dims4(a, "concat")?;
        let (bb, cb, hb, wb) = self.dims4(b, "concat")?;
        if ba != bb || h != hb || w != wb {
            return Err(mismatch("concat", self.shape(a), self.shape(b)));
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(ba * (ca + cb) * plane);
        for i in 0..ba {
            data.extend_from_slice(&self.value(a).data()[i * ca * plane..(i + 1) * ca * plane]);
            data.extend_from_slice(&self.value(b).data()[i * cb * plane..(i + 1) * cb * plane]);
        }
        let t = Tensor::new(&[ba, ca + cb, h, w], data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Concat(a, b), rg))
    }

    /// Bilinear resize of the spatial dims to `(oh, ow)`.
    pub fn upsample(&mut self, x: Var, oh: usize, ow: usize) -> Result<Var, NnError> {
        let (b, c, h, w) = self.dims4(x, "upsample")?;
        let out = kernels::upsample_forward(self.value(x).data(), b * c, h, w, oh, ow);
        let t = Tensor::new(&[b, c, oh, ow], out)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::Upsample(x), rg))
    }

    /// Mean over the spatial dims: `(b, c, h, w) -> (b, c)`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var, NnError> {
        let (b, c, h, w) = self.dims4(x, "global_avg_pool")?;
        let plane = h * w;
        let data = self
            .value(x)
            .data()
            .chunks_exact(plane)
            .map(|p| p.iter().sum::<f64>() / plane as f64)
            .collect();
        let t = Tensor::new(&[b, c], data)?;
        let rg = self.rg(x);
        Ok(self.push(t, Op::GlobalAvgPool(x), rg))
    }

    /// `x (b, in) * w^T (in, out) + bias`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, NnError> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let (&[batch, fin], &[fout, fin2]) = (&xs[..], &ws[..]) else {
            return Err(mismatch("linear", &xs, &ws));
        };
        if fin != fin2 {
            return Err(mismatch("linear", &xs, &ws));
        }
        let mut out = vec![0.0; batch * fout];
        kernels::gemm(batch, fin, fout, self.value(x).data(), false, self.value(w).data(), true, &mut out, 0.0);
        if let Some(bv) = b {
            if self.shape(bv) != [fout] {
                return Err(mismatch("linear bias", &[fout], self.shape(bv)));
            }
            let bias = self.value(bv).data();
            for row in out.chunks_exact_mut(fout) {
                row.iter_mut().zip(bias).for_each(|(o, b)| *o += b);
            }
        }
        let t = Tensor::new(&[batch, fout], out)?;
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|bv| self.rg(bv));
        Ok(self.push(t, Op::Linear { x, w, b }, rg))
    }

    /// Multi-head ReLU linear attention over the spatial tokens of NCHW
    /// tensors; channels are split evenly into `heads`.
    pub fn linear_attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var, NnError> {
        let (b, c, h, w) = self.dims4(q, "linear_attention")?;
        if self.shape(k) != self.shape(q) || self.shape(v) != self.shape(q) {
            return Err(mismatch("linear_attention", self.shape(q), self.shape(k)));
        }
        if heads == 0 || c % heads != 0 {
            return Err(NnError::Shape(TensorError::Invalid {
                op: "linear_attention",
                reason: "channels must be divisible by heads",
            }));
        }
        let n = h * w;
        let d = c / heads;
        let mut out = vec![0.0; b * c * n];
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut bufs = [vec![0.0; n * d], vec![0.0; n * d], vec![0.0; n * d]];
        for bi in 0..b {
            for hd in 0..heads {
                let base = (bi * c + hd * d) * n;
                for (buf, src) in bufs.iter_mut().zip([qd, kd, vd]) {
                    to_tokens(&src[base..base + d * n], buf, n, d);
                }
                let o = kernels::linear_attention_head(&bufs[0], &bufs[1], &bufs[2], n, d, ATTN_EPS);
                from_tokens(&o, &mut out[base..base + d * n], n, d, false);
            }
        }
        let t = Tensor::new(&[b, c, h, w], out)?;
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        Ok(self.push(t, Op::LinearAttention { q, k, v, heads }, rg))
    }

    /// Mean softmax cross-entropy of `(batch, classes)` logits.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, NnError> {
        let ls = self.shape(logits).to_vec();
        let [batch, classes] = ls[..] else {
            return Err(mismatch("cross_entropy", &ls, &[targets.len()]));
        };
        if batch != targets.len() {
            return Err(mismatch("cross_entropy", &ls, &[targets.len()]));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= classes) {
            return Err(NnError::TargetOutOfRange { target: t, classes });
        }
        let (loss, probs) = softmax_cross_entropy(self.value(logits).data(), targets, classes);
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Differentiate a scalar output.
    pub fn backward(&mut self, output: Var) -> Result<Gradients, NnError> {
        if self.value(output).len() != 1 {
            return Err(NnError::Shape(TensorError::Invalid {
                op: "backward",
                reason: "output must be a scalar; use backward_with_seed",
            }));
        }
        self.backward_with_seed(output, Tensor::scalar(1.0))
    }

    /// Propagate `seed` (the gradient of some objective with respect to
    /// `output`) back through the tape. A tape can be replayed only once.
    pub fn backward_with_seed(&mut self, output: Var, seed: Tensor) -> Result<Gradients, NnError> {
        if self.replayed {
            return Err(NnError::TapeReplayed);
        }
        if seed.shape() != self.shape(output) {
            return Err(mismatch("backward seed", self.shape(output), seed.shape()));
        }
        self.replayed = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(seed.into_data());
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            if self.nodes[idx].requires_grad {
                self.backprop_node(idx, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        for (i, node) in self.nodes.iter().enumerate() {
            if !node.requires_grad {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, w, b, geom } => {
                let mut dx = self.rg(*x).then(|| vec![0.0; self.value(*x).len()]);
                let mut dw = self.rg(*w).then(|| vec![0.0; self.value(*w).len()]);
                let mut db = b.filter(|bv| self.rg(*bv)).map(|bv| vec![0.0; self.value(bv).len()]);
                kernels::conv2d_backward(
                    geom,
                    self.value(*x).data(),
                    self.value(*w).data(),
                    g,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                accumulate(grads, *x, dx);
                accumulate(grads, *w, dw);
                if let Some(bv) = b {
                    accumulate(grads, *bv, db);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                mean,
                invstd,
                batch_stats,
            } => {
                let s = self.shape(*x);
                let (b, c, plane) = (s[0], s[1], s[2] * s[3]);
                let mut dx = self.rg(*x).then(|| vec![0.0; self.value(*x).len()]);
                let mut dg = self.rg(*gamma).then(|| vec![0.0; c]);
                let mut dbeta = self.rg(*beta).then(|| vec![0.0; c]);
                kernels::batchnorm_backward(
                    self.value(*x).data(),
                    g,
                    b,
                    c,
                    plane,
                    mean,
                    invstd,
                    self.value(*gamma).data(),
                    *batch_stats,
                    dx.as_deref_mut(),
                    dg.as_deref_mut(),
                    dbeta.as_deref_mut(),
                );
                accumulate(grads, *x, dx);
                accumulate(grads, *gamma, dg);
                accumulate(grads, *beta, dbeta);
            }
            Op::Gelu { x, slope } => {
                let d = slope.iter().zip(g).map(|(&s, &gv)| gv * s).collect();
                accumulate(grads, *x, Some(d));
            }
            Op::Relu(x) => {
                let d = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&a, &gv)| if a > 0.0 { gv } else { 0.0 })
                    .collect();
                accumulate(grads, *x, Some(d));
            }
            Op::Add(a, b) => {
                if self.rg(*a) {
                    accumulate(grads, *a, Some(g.to_vec()));
                }
                if self.rg(*b) {
                    accumulate(grads, *b, Some(g.to_vec()));
                }
            }
            Op::Concat(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (batch, ca, cb, plane) = (sa[0], sa[1], sb[1], sa[2] * sa[3]);
                let mut da = Vec::with_capacity(batch * ca * plane);
                let mut db = Vec::with_capacity(batch * cb * plane);
                for i in 0..batch {
                    let row = &g[i * (ca + cb) * plane..(i + 1) * (ca + cb) * plane];
                    da.extend_from_slice(&row[..ca * plane]);
                    db.extend_from_slice(&row[ca * plane..]);
                }
                if self.rg(*a) {
                    accumulate(grads, *a, Some(da));
                }
                if self.rg(*b) {
                    accumulate(grads, *b, Some(db));
                }
            }
            Op::Upsample(x) => {
                let s = self.shape(*x);
                let os = node.value.shape();
                let mut dx = vec![0.0; self.value(*x).len()];
                kernels::upsample_backward(g, &mut dx, s[0] * s[1], s[2], s[3], os[2], os[3]);
                accumulate(grads, *x, Some(dx));
            }
            Op::GlobalAvgPool(x) => {
                let s = self.shape(*x);
                let plane = s[2] * s[3];
                let mut dx = Vec::with_capacity(self.value(*x).len());
                for &gv in g {
                    let v = gv / plane as f64;
                    dx.extend(core::iter::repeat(v).take(plane));
                }
                accumulate(grads, *x, Some(dx));
            }
            Op::Linear { x, w, b } => {
                let (batch, fin) = (self.shape(*x)[0], self.shape(*x)[1]);
                let fout = self.shape(*w)[0];
                if self.rg(*x) {
                    let mut dx = vec![0.0; batch * fin];
                    kernels::gemm(batch, fout, fin, g, false, self.value(*w).data(), false, &mut dx, 0.0);
                    accumulate(grads, *x, Some(dx));
                }
                if self.rg(*w) {
                    let mut dw = vec![0.0; fout * fin];
                    kernels::gemm(fout, batch, fin, g, true, self.value(*x).data(), false, &mut dw, 0.0);
                    accumulate(grads, *w, Some(dw));
                }
                if let Some(bv) = b.filter(|bv| self.rg(*bv)) {
                    let mut db = vec![0.0; fout];
                    for row in g.chunks_exact(fout) {
                        db.iter_mut().zip(row).for_each(|(d, r)| *d += r);
                    }
                    accumulate(grads, bv, Some(db));
                }
            }
            Op::LinearAttention { q, k, v, heads } => {
                let s = self.shape(*q);
                let (b, c, n) = (s[0], s[1], s[2] * s[3]);
                let d = c / heads;
                let total = b * c * n;
                let (mut dq, mut dk, mut dv) = (vec![0.0; total], vec![0.0; total], vec![0.0; total]);
                let (qd, kd, vd) = (self.value(*q).data(), self.value(*k).data(), self.value(*v).data());
                let mut bufs = [vec![0.0; n * d], vec![0.0; n * d], vec![0.0; n * d], vec![0.0; n * d]];
                let mut dbufs = [vec![0.0; n * d], vec![0.0; n * d], vec![0.0; n * d]];
                for bi in 0..b {
                    for hd in 0..*heads {
                        let base = (bi * c + hd * d) * n;
                        for (buf, src) in bufs.iter_mut().zip([qd, kd, vd, g]) {
                            to_tokens(&src[base..base + d * n], buf, n, d);
                        }
                        dbufs.iter_mut().for_each(|x| x.iter_mut().for_each(|v| *v = 0.0));
                        let [dqb, dkb, dvb] = &mut dbufs;
                        kernels::linear_attention_head_backward(
                            &bufs[0], &bufs[1], &bufs[2], &bufs[3], n, d, ATTN_EPS, dqb, dkb, dvb,
                        );
                        from_tokens(dqb, &mut dq[base..base + d * n], n, d, true);
                        from_tokens(dkb, &mut dk[base..base + d * n], n, d, true);
                        from_tokens(dvb, &mut dv[base..base + d * n], n, d, true);
                    }
                }
                if self.rg(*q) {
                    accumulate(grads, *q, Some(dq));
                }
                if self.rg(*k) {
                    accumulate(grads, *k, Some(dk));
                }
                if self.rg(*v) {
                    accumulate(grads, *v, Some(dv));
                }
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let batch = targets.len();
                let classes = probs.len() / batch;
                let scale = g[0] / batch as f64;
                let mut d: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (i, &t) in targets.iter().enumerate() {
                    d[i * classes + t] -= scale;
                }
                accumulate(grads, *logits, Some(d));
            }
            Op::Sum(x) => {
                let d = vec![g[0]; self.value(*x).len()];
                accumulate(grads, *x, Some(d));
            }
        }
    }
}

/// Channel-major `(d, n)` slab to token-major `(n, d)`.
fn to_tokens(src: &[f64], dst: &mut [f64], n: usize, d: usize) {
    for j in 0..d {
        for t in 0..n {
            dst[t * d + j] = src[j * n + t];
        }
    }
}

fn from_tokens(src: &[f64], dst: &mut [f64], n: usize, d: usize, add: bool) {
    for j in 0..d {
        for t in 0..n {
            if add {
                dst[j * n + t] += src[t * d + j];
            } else {
                dst[j * n + t] = src[t * d + j];
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: Option<Vec<f64>>) {
    let Some(g) = g else {
        return;
    };
    match &mut grads[v.0] {
        Some(existing) => existing.iter_mut().zip(&g).for_each(|(e, x)| *e += x),
        slot @ None => *slot = Some(g),
    }
}

fn mismatch(op: &'static str, left: &[usize], right: &[usize]) -> NnError {
    NnError::Shape(TensorError::ShapeMismatch {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    })
}

/// Mean cross-entropy and the softmax probabilities, via log-sum-exp.
pub(crate) fn softmax_cross_entropy(logits: &[f64], targets: &[usize], classes: usize) -> (f64, Vec<f64>) {
    let mut probs = vec![0.0; logits.len()];
    let mut loss = 0.0;
    for (i, &t) in targets.iter().enumerate() {
        let row = &logits[i * classes..(i + 1) * classes];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&z| math::exp(z - max)).sum();
        let lse = max + math::ln(sum);
        loss += lse - row[t];
        for (p, &z) in probs[i * classes..(i + 1) * classes].iter_mut().zip(row) {
            *p = math::exp(z - lse);
        }
    }
    (loss / targets.len() as f64, probs)
}
