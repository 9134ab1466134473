use std::collections::HashMap;

use super::kernels::{gemm, Window2d};
use super::tensor::Tensor;
use crate::error::{invalid, Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Per-channel statistics of one training-mode batch normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased (n - 1) variance, as used for running estimates.
    pub var: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub enum NormMode<'a> {
    /// Normalize with the batch's own statistics.
    Train,
    /// Normalize with stored running estimates.
    Eval { mean: &'a [f64], var: &'a [f64] },
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Relu(Var),
    Reshape(Var),
    Conv {
        x: Var,
        w: Var,
        b: Var,
        win: Window2d,
        out_ch: usize,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    GlobalAvgPool(Var),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Concat(Var, Var),
    BceWithLogits {
        logits: Var,
        targets: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Define-by-run tape. Nodes are appended in evaluation order, so every
/// operation's inputs precede it and the reverse sweep in `backward` visits
/// nodes in exactly the reverse of construction order.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    named: HashMap<String, Var>,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0)?.as_deref()
    }

    pub fn tensor(&self, v: Var) -> Option<Tensor> {
        let g = self.get(v)?;
        Tensor::new(self.shapes[v.0].clone(), g.to_vec()).ok()
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(invalid(msg()))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant input; gradients are not tracked.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            requires_grad: false,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable leaf.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            requires_grad: true,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable leaf registered under `name`; repeated calls with the
    /// same name return the first registration.
    pub fn param(&mut self, name: &str, t: &Tensor) -> Var {
        if let Some(&v) = self.named.get(name) {
            return v;
        }
        let v = self.leaf(t.clone());
        self.named.insert(name.to_string(), v);
        v
    }

    pub fn named(&self, name: &str) -> Option<Var> {
        self.named.get(name).copied()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        check(self.shape(a) == self.shape(b), || {
            format!("add: shapes {:?} and {:?} differ", self.shape(a), self.shape(b))
        })?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(t, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        check(self.shape(a) == self.shape(b), || {
            format!("mul: shapes {:?} and {:?} differ", self.shape(a), self.shape(b))
        })?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(t, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let data = self.data(a).iter().map(|x| x * k).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data).expect("same shape");
        self.push(t, Op::Scale(a, k), &[a])
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// `max(0, x)`; the derivative at 0 is taken as 0.
    pub fn relu(&mut self, a: Var) -> Var {
        let data = self.data(a).iter().map(|&x| x.max(0.0)).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data).expect("same shape");
        self.push(t, Op::Relu(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape(a), &[a]))
    }

    /// 1-D cross-correlation: input `[batch, in_ch, len]`, weight
    /// `[out_ch, in_ch, k]`, bias `[out_ch]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        check(xs.len() == 3 && ws.len() == 3, || {
            format!("conv1d expects 3-d input and weight, got {xs:?} and {ws:?}")
        })?;
        self.conv(x, w, b, [xs[0], xs[1], 1, xs[2]], [ws[0], ws[1], 1, ws[2]], (1, stride), (0, padding), false)
    }

    /// 2-D cross-correlation: input `[batch, in_ch, h, w]`, weight
    /// `[out_ch, in_ch, kh, kw]`, bias `[out_ch]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        check(xs.len() == 4 && ws.len() == 4, || {
            format!("conv2d expects 4-d input and weight, got {xs:?} and {ws:?}")
        })?;
        self.conv(
            x,
            w,
            b,
            [xs[0], xs[1], xs[2], xs[3]],
            [ws[0], ws[1], ws[2], ws[3]],
            (stride, stride),
            (padding, padding),
            true,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn conv(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        xs: [usize; 4],
        ws: [usize; 4],
        stride: (usize, usize),
        pad: (usize, usize),
        two_d: bool,
    ) -> Result<Var> {
        let [batch, in_ch, h, wd] = xs;
        let [out_ch, w_in, kh, kw] = ws;
        check(w_in == in_ch, || format!("conv: input has {in_ch} channels, weight expects {w_in}"))?;
        check(self.shape(b) == [out_ch], || {
            format!("conv: bias shape {:?}, expected [{out_ch}]", self.shape(b))
        })?;
        check(stride.0 >= 1 && stride.1 >= 1, || "conv: stride must be at least 1".into())?;
        check(kh >= 1 && kw >= 1, || "conv: empty kernel".into())?;
        check(h + 2 * pad.0 >= kh && wd + 2 * pad.1 >= kw, || {
            format!("conv: padded input {}x{} smaller than kernel {kh}x{kw}", h + 2 * pad.0, wd + 2 * pad.1)
        })?;
        let win = Window2d {
            batch,
            channels: in_ch,
            height: h,
            width: wd,
            kh,
            kw,
            sh: stride.0,
            sw: stride.1,
            ph: pad.0,
            pw: pad.1,
        };
        let (oh, ow) = (win.out_h(), win.out_w());
        let n = oh * ow;
        let kdim = in_ch * kh * kw;
        let mut out = vec![0.0; batch * out_ch * n];
        let mut cols = vec![0.0; kdim * n];
        let (xd, wdta, bd) = (self.data(x), self.data(w), self.data(b));
        for bi in 0..batch {
            win.im2col(&xd[bi * in_ch * h * wd..(bi + 1) * in_ch * h * wd], &mut cols);
            let y = &mut out[bi * out_ch * n..(bi + 1) * out_ch * n];
            for (o, row) in y.chunks_mut(n).enumerate() {
                row.fill(bd[o]);
            }
            gemm(out_ch, kdim, n, wdta, false, &cols, false, y, true);
        }
        let shape = if two_d {
            vec![batch, out_ch, oh, ow]
        } else {
            vec![batch, out_ch, ow]
        };
        let t = Tensor::new(shape, out)?;
        Ok(self.push(t, Op::Conv { x, w, b, win, out_ch }, &[x, w, b]))
    }

    pub fn maxpool1d(&mut self, x: Var, window: usize, stride: usize, padding: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        check(xs.len() == 3, || format!("maxpool1d expects 3-d input, got {xs:?}"))?;
        self.pool(x, [xs[0], xs[1], 1, xs[2]], (1, window), (1, stride), (0, padding), false)
    }

    pub fn maxpool2d(&mut self, x: Var, window: usize, stride: usize, padding: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        check(xs.len() == 4, || format!("maxpool2d expects 4-d input, got {xs:?}"))?;
        self.pool(
            x,
            [xs[0], xs[1], xs[2], xs[3]],
            (window, window),
            (stride, stride),
            (padding, padding),
            true,
        )
    }

    fn pool(
        &mut self,
        x: Var,
        xs: [usize; 4],
        k: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
        two_d: bool,
    ) -> Result<Var> {
        check(k.0 >= 1 && k.1 >= 1 && stride.0 >= 1 && stride.1 >= 1, || {
            "maxpool: window and stride must be at least 1".into()
        })?;
        check(2 * pad.0 <= k.0 && 2 * pad.1 <= k.1, || {
            "maxpool: padding may be at most half the window".into()
        })?;
        check(xs[2] + 2 * pad.0 >= k.0 && xs[3] + 2 * pad.1 >= k.1, || {
            format!("maxpool: input {}x{} smaller than window", xs[2], xs[3])
        })?;
        let win = Window2d {
            batch: xs[0],
            channels: xs[1],
            height: xs[2],
            width: xs[3],
            kh: k.0,
            kw: k.1,
            sh: stride.0,
            sw: stride.1,
            ph: pad.0,
            pw: pad.1,
        };
        let (vals, argmax) = win.max_pool(self.data(x));
        let shape = if two_d {
            vec![xs[0], xs[1], win.out_h(), win.out_w()]
        } else {
            vec![xs[0], xs[1], win.out_w()]
        };
        let t = Tensor::new(shape, vals)?;
        Ok(self.push(t, Op::MaxPool { x, argmax }, &[x]))
    }

    /// Per-channel batch normalization over `[batch, channels, ...]`.
    ///
    /// In training mode the batch statistics are returned so the caller can
    /// update its running estimates.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: NormMode<'_>,
        eps: f64,
    ) -> Result<(Var, Option<BatchStats>)> {
        let xs = self.shape(x).to_vec();
        check(xs.len() >= 2, || format!("batchnorm expects [batch, channels, ...], got {xs:?}"))?;
        let (batch, ch) = (xs[0], xs[1]);
        let spatial: usize = xs[2..].iter().product();
        check(self.shape(gamma) == [ch] && self.shape(beta) == [ch], || {
            format!("batchnorm: gamma/beta must have shape [{ch}]")
        })?;
        let count = batch * spatial;
        let xd = self.data(x);
        let (mean, var, train) = match mode {
            NormMode::Train => {
                if count < 2 {
                    return Err(Error::DegenerateBatch(format!(
                        "training-mode batchnorm needs at least 2 values per channel, got {count}"
                    )));
                }
                let mut mean = vec![0.0; ch];
                let mut var = vec![0.0; ch];
                for c in 0..ch {
                    let vals = (0..batch).flat_map(|b| {
                        let o = (b * ch + c) * spatial;
                        xd[o..o + spatial].iter()
                    });
                    let m = vals.clone().sum::<f64>() / count as f64;
                    mean[c] = m;
                    var[c] = vals.map(|v| (v - m) * (v - m)).sum::<f64>() / count as f64;
                }
                (mean, var, true)
            }
            NormMode::Eval { mean, var } => {
                check(mean.len() == ch && var.len() == ch, || {
                    format!("batchnorm: running stats must have {ch} entries")
                })?;
                (mean.to_vec(), var.to_vec(), false)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (g, bt) = (self.data(gamma), self.data(beta));
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for b in 0..batch {
            for c in 0..ch {
                let o = (b * ch + c) * spatial;
                for i in o..o + spatial {
                    xhat[i] = (xd[i] - mean[c]) * inv_std[c];
                    out[i] = g[c] * xhat[i] + bt[c];
                }
            }
        }
        let stats = train.then(|| BatchStats {
            var: var
                .iter()
                .map(|v| v * count as f64 / (count - 1) as f64)
                .collect(),
            mean,
        });
        let t = Tensor::new(xs, out)?;
        let v = self.push(
            t,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            &[x, gamma, beta],
        );
        Ok((v, stats))
    }

    /// Mean over every axis after the first two: `[batch, ch, ...] -> [batch, ch]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        check(xs.len() >= 3, || format!("global_avg_pool expects spatial axes, got {xs:?}"))?;
        let spatial: usize = xs[2..].iter().product();
        check(spatial > 0, || "global_avg_pool over empty spatial extent".into())?;
        let data = self
            .data(x)
            .chunks(spatial)
            .map(|c| c.iter().sum::<f64>() / spatial as f64)
            .collect();
        let t = Tensor::new(vec![xs[0], xs[1]], data)?;
        Ok(self.push(t, Op::GlobalAvgPool(x), &[x]))
    }

    /// `x * w^T + b` with `x: [batch, in]`, `w: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        check(xs.len() == 2 && ws.len() == 2 && xs[1] == ws[1], || {
            format!("linear: input {xs:?} incompatible with weight {ws:?}")
        })?;
        check(self.shape(b) == [ws[0]], || {
            format!("linear: bias shape {:?}, expected [{}]", self.shape(b), ws[0])
        })?;
        let (batch, inp, out) = (xs[0], xs[1], ws[0]);
        let mut y: Vec<f64> = (0..batch).flat_map(|_| self.data(b).iter().copied()).collect();
        gemm(batch, inp, out, self.data(x), false, self.data(w), true, &mut y, true);
        let t = Tensor::new(vec![batch, out], y)?;
        Ok(self.push(t, Op::Linear { x, w, b }, &[x, w, b]))
    }

    /// Concatenates `[batch, n]` and `[batch, m]` along the feature axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        check(sa.len() == 2 && sb.len() == 2 && sa[0] == sb[0], || {
            format!("concat: incompatible shapes {sa:?} and {sb:?}")
        })?;
        let (batch, n, m) = (sa[0], sa[1], sb[1]);
        let mut data = Vec::with_capacity(batch * (n + m));
        for i in 0..batch {
            data.extend_from_slice(&self.data(a)[i * n..(i + 1) * n]);
            data.extend_from_slice(&self.data(b)[i * m..(i + 1) * m]);
        }
        let t = Tensor::new(vec![batch, n + m], data)?;
        Ok(self.push(t, Op::Concat(a, b), &[a, b]))
    }

    /// Binary cross-entropy on logits, summed over classes and averaged over
    /// the batch, evaluated as `max(x,0) - x*y + ln(1 + exp(-|x|))`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Tensor) -> Result<Var> {
        check(self.shape(logits) == targets.shape(), || {
            format!(
                "bce_with_logits: logits {:?} vs targets {:?}",
                self.shape(logits),
                targets.shape()
            )
        })?;
        check(self.shape(logits).len() == 2, || "bce_with_logits expects [batch, classes]".into())?;
        let batch = self.shape(logits)[0].max(1);
        let total: f64 = self
            .data(logits)
            .iter()
            .zip(targets.data())
            .map(|(&x, &y)| x.max(0.0) - x * y + (-x.abs()).exp().ln_1p())
            .sum();
        Ok(self.push(
            Tensor::scalar(total / batch as f64),
            Op::BceWithLogits {
                logits,
                targets: targets.data().to_vec(),
            },
            &[logits],
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Gradients reaching a value through several consumers are summed.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(gy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(node, &gy, &mut grads);
            }
            grads[idx] = Some(gy);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        // Only differentiable values carry gradients.
        for (g, n) in grads.iter_mut().zip(&self.nodes) {
            if !n.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.wants(v) {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    acc(v, &mut |g| g.iter_mut().zip(gy).for_each(|(g, d)| *g += d));
                }
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.data(*a), self.data(*b));
                acc(*a, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += gy[i] * db[i];
                    }
                });
                acc(*b, &mut |g| {
                    for i in 0..g.len() {
                        g[i] += gy[i] * da[i];
                    }
                });
            }
            Op::Scale(a, k) => acc(*a, &mut |g| g.iter_mut().zip(gy).for_each(|(g, d)| *g += k * d)),
            Op::Sum(a) => acc(*a, &mut |g| g.iter_mut().for_each(|g| *g += gy[0])),
            Op::Relu(a) => {
                let x = self.data(*a);
                acc(*a, &mut |g| {
                    for i in 0..g.len() {
                        if x[i] > 0.0 {
                            g[i] += gy[i];
                        }
                    }
                })
            }
            Op::Reshape(a) => acc(*a, &mut |g| g.iter_mut().zip(gy).for_each(|(g, d)| *g += d)),
            Op::Conv { x, w, b, win, out_ch } => {
                let (n, kdim) = (win.out_plane(), win.channels * win.kh * win.kw);
                let in_size = win.channels * win.plane();
                let out_ch = *out_ch;
                acc(*b, &mut |g| {
                    for (i, chunk) in gy.chunks(n).enumerate() {
                        g[i % out_ch] += chunk.iter().sum::<f64>();
                    }
                });
                let xd = self.data(*x);
                let wd = self.data(*w);
                let mut cols = vec![0.0; kdim * n];
                acc(*w, &mut |g| {
                    for bi in 0..win.batch {
                        win.im2col(&xd[bi * in_size..(bi + 1) * in_size], &mut cols);
                        let dy = &gy[bi * out_ch * n..(bi + 1) * out_ch * n];
                        gemm(out_ch, n, kdim, dy, false, &cols, true, g, true);
                    }
                });
                acc(*x, &mut |g| {
                    for bi in 0..win.batch {
                        let dy = &gy[bi * out_ch * n..(bi + 1) * out_ch * n];
                        gemm(kdim, out_ch, n, wd, true, dy, false, &mut cols, false);
                        win.col2im(&cols, &mut g[bi * in_size..(bi + 1) * in_size]);
                    }
                });
            }
            Op::MaxPool { x, argmax } => acc(*x, &mut |g| {
                for (&i, d) in argmax.iter().zip(gy) {
                    g[i] += d;
                }
            }),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let xs = self.shape(*x);
                let (batch, ch) = (xs[0], xs[1]);
                let spatial: usize = xs[2..].iter().product();
                let count = (batch * spatial) as f64;
                let mut sum_dy = vec![0.0; ch];
                let mut sum_dy_xhat = vec![0.0; ch];
                for bi in 0..batch {
                    for c in 0..ch {
                        let o = (bi * ch + c) * spatial;
                        for i in o..o + spatial {
                            sum_dy[c] += gy[i];
                            sum_dy_xhat[c] += gy[i] * xhat[i];
                        }
                    }
                }
                acc(*gamma, &mut |g| g.iter_mut().zip(&sum_dy_xhat).for_each(|(g, d)| *g += d));
                acc(*beta, &mut |g| g.iter_mut().zip(&sum_dy).for_each(|(g, d)| *g += d));
                let gm = self.data(*gamma);
                acc(*x, &mut |g| {
                    for bi in 0..batch {
                        for c in 0..ch {
                            let o = (bi * ch + c) * spatial;
                            let k = gm[c] * inv_std[c];
                            for i in o..o + spatial {
                                g[i] += if *train {
                                    k * (gy[i] - sum_dy[c] / count - xhat[i] * sum_dy_xhat[c] / count)
                                } else {
                                    k * gy[i]
                                };
                            }
                        }
                    }
                });
            }
            Op::GlobalAvgPool(x) => {
                let xs = self.shape(*x);
                let spatial: usize = xs[2..].iter().product();
                acc(*x, &mut |g| {
                    for (chunk, d) in g.chunks_mut(spatial).zip(gy) {
                        chunk.iter_mut().for_each(|g| *g += d / spatial as f64);
                    }
                });
            }
            Op::Linear { x, w, b } => {
                let ws = self.shape(*w);
                let (out, inp) = (ws[0], ws[1]);
                let batch = self.shape(*x)[0];
                acc(*b, &mut |g| {
                    for row in gy.chunks(out) {
                        g.iter_mut().zip(row).for_each(|(g, d)| *g += d);
                    }
                });
                let (xd, wd) = (self.data(*x), self.data(*w));
                acc(*w, &mut |g| gemm(out, batch, inp, gy, true, xd, false, g, true));
                acc(*x, &mut |g| gemm(batch, out, inp, gy, false, wd, false, g, true));
            }
            Op::Concat(a, b) => {
                let (n, m) = (self.shape(*a)[1], self.shape(*b)[1]);
                acc(*a, &mut |g| {
                    for (gr, row) in g.chunks_mut(n.max(1)).zip(gy.chunks(n + m)) {
                        gr.iter_mut().zip(&row[..n]).for_each(|(g, d)| *g += d);
                    }
                });
                acc(*b, &mut |g| {
                    for (gr, row) in g.chunks_mut(m.max(1)).zip(gy.chunks(n + m)) {
                        gr.iter_mut().zip(&row[n..]).for_each(|(g, d)| *g += d);
                    }
                });
            }
            Op::BceWithLogits { logits, targets } => {
                let batch = self.shape(*logits)[0].max(1) as f64;
                let x = self.data(*logits);
                acc(*logits, &mut |g| {
                    for i in 0..g.len() {
                        let sig = 1.0 / (1.0 + (-x[i]).exp());
                        g[i] += gy[0] * (sig - targets[i]) / batch;
                    }
                });
            }
        }
    }
}
