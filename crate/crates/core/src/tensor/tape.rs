use super::kernels::{self, ConvGeom};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Option<Var>, geom: ConvGeom },
    TransposedConv2d { input: Var, weight: Var, geom: ConvGeom },
    MaxPool { input: Var, argmax: Vec<usize> },
    Relu { input: Var },
    Add { lhs: Var, rhs: Var },
    Crop { input: Var, top: usize, left: usize },
    Flatten { input: Var },
    Dense { input: Var, weight: Var, bias: Option<Var> },
    Sum { input: Var },
    WeightedSum { input: Var, weights: Tensor },
    SoftmaxCrossEntropy { logits: Var, labels: Vec<u8>, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Wengert list of recorded operations. Variables are appended in creation
/// order, so every operation's inputs precede it and a reverse sweep is a
/// valid topological order for backpropagation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], one slot per variable.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`; `None` when `var` does not
    /// require a gradient.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node { value, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Option<Var>]) -> bool {
        vars.iter().flatten().any(|v| self.nodes[v.0].requires_grad)
    }

    /// 2-D cross-correlation of `[N, Cin, H, W]` with `[Cout, Cin, kh, kw]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let [n, cin, h, w] = self.value(input).dims4()?;
        let [cout, wcin, kh, kw] = self.value(weight).dims4()?;
        if wcin != cin {
            return Err(Error::shape(
                "conv2d",
                format!("input has {cin} channels but weight expects {wcin} (weight shape {:?})", self.value(weight).shape()),
            ));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d stride must be positive"));
        }
        if let Some(b) = bias {
            if self.value(b).shape() != [cout] {
                return Err(Error::shape("conv2d", format!("bias shape {:?}, expected [{cout}]", self.value(b).shape())));
            }
        }
        let (Some(oh), Some(ow)) = (
            kernels::conv2d_output_size(h, kh, stride, padding),
            kernels::conv2d_output_size(w, kw, stride, padding),
        ) else {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {kh}x{kw} does not fit a {h}x{w} input with padding {padding}"),
            ));
        };
        let geom = ConvGeom { n, cin, h, w, cout, kh, kw, stride, pad: padding, oh, ow };
        let out = kernels::conv2d_forward(
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
            &geom,
        );
        let value = Tensor::new(vec![n, cout, oh, ow], out)?;
        let rg = self.any_grad(&[Some(input), Some(weight), bias]);
        Ok(self.push(value, rg, Op::Conv2d { input, weight, bias, geom }))
    }

    /// Transposed convolution of `[N, C, H, W]` with `[C, Cout, kh, kw]`;
    /// output is `[N, Cout, (H-1)*stride+kh, (W-1)*stride+kw]`.
    pub fn transposed_conv2d(&mut self, input: Var, weight: Var, stride: usize) -> Result<Var> {
        if stride == 0 {
            return Err(Error::invalid("transposed_conv2d stride must be positive"));
        }
        let [n, c, h, w] = self.value(input).dims4()?;
        let [wc, cout, kh, kw] = self.value(weight).dims4()?;
        if wc != c {
            return Err(Error::shape(
                "transposed_conv2d",
                format!("input has {c} channels but weight expects {wc} (weight shape {:?})", self.value(weight).shape()),
            ));
        }
        let (oh, ow) = ((h - 1) * stride + kh, (w - 1) * stride + kw);
        // Seen as the adjoint of a convolution from the upsampled field back
        // to the input: that convolution has `c` outputs and `cout` inputs.
        let geom = ConvGeom { n, cin: cout, h: oh, w: ow, cout: c, kh, kw, stride, pad: 0, oh: h, ow: w };
        let out = kernels::conv2d_backward_input(self.value(input).data(), self.value(weight).data(), &geom);
        let value = Tensor::new(vec![n, cout, oh, ow], out)?;
        let rg = self.any_grad(&[Some(input), Some(weight)]);
        Ok(self.push(value, rg, Op::TransposedConv2d { input, weight, geom }))
    }

    pub fn max_pool2d(&mut self, input: Var, k: usize, stride: usize) -> Result<Var> {
        if k == 0 || stride == 0 {
            return Err(Error::invalid(format!("max_pool2d needs positive kernel and stride, got k={k}, stride={stride}")));
        }
        let dims @ [n, c, h, w] = self.value(input).dims4()?;
        let (Some(oh), Some(ow)) = (kernels::pool_output_size(h, k, stride), kernels::pool_output_size(w, k, stride))
        else {
            return Err(Error::shape("max_pool2d", format!("window {k} larger than {h}x{w} input")));
        };
        let (out, argmax) = kernels::max_pool_forward(self.value(input).data(), dims, k, stride, (oh, ow));
        let value = Tensor::new(vec![n, c, oh, ow], out)?;
        let rg = self.requires_grad(input);
        Ok(self.push(value, rg, Op::MaxPool { input, argmax }))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let value = self.value(input).map(|v| if v > 0.0 { v } else { 0.0 });
        let rg = self.requires_grad(input);
        self.push(value, rg, Op::Relu { input })
    }

    pub fn add(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        let (a, b) = (self.value(lhs), self.value(rhs));
        if a.shape() != b.shape() {
            return Err(Error::shape("add", format!("{:?} vs {:?}", a.shape(), b.shape())));
        }
        let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(a.shape().to_vec(), data)?;
        let rg = self.any_grad(&[Some(lhs), Some(rhs)]);
        Ok(self.push(value, rg, Op::Add { lhs, rhs }))
    }

    /// Spatial window `[top..top+h, left..left+w]` of a rank-4 tensor.
    pub fn crop(&mut self, input: Var, top: usize, left: usize, h: usize, w: usize) -> Result<Var> {
        let [n, c, ih, iw] = self.value(input).dims4()?;
        if top + h > ih || left + w > iw {
            return Err(Error::shape("crop", format!("window {h}x{w} at ({top},{left}) exceeds {ih}x{iw}")));
        }
        let src = self.value(input).data();
        let mut data = Vec::with_capacity(n * c * h * w);
        for plane in 0..n * c {
            for y in 0..h {
                let row = plane * ih * iw + (top + y) * iw + left;
                data.extend_from_slice(&src[row..row + w]);
            }
        }
        let value = Tensor::new(vec![n, c, h, w], data)?;
        let rg = self.requires_grad(input);
        Ok(self.push(value, rg, Op::Crop { input, top, left }))
    }

    /// Centre crop to `h x w`; when the margin is odd the extra row/column is
    /// dropped from the bottom/right.
    pub fn center_crop(&mut self, input: Var, h: usize, w: usize) -> Result<Var> {
        let [_, _, ih, iw] = self.value(input).dims4()?;
        if h > ih || w > iw {
            return Err(Error::shape("center_crop", format!("cannot crop {ih}x{iw} to {h}x{w}")));
        }
        self.crop(input, (ih - h) / 2, (iw - w) / 2, h, w)
    }

    /// `[N, ...] -> [N, prod(...)]`.
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let t = self.value(input);
        let n = *t.shape().first().ok_or_else(|| Error::shape("flatten", "cannot flatten a scalar"))?;
        let rest = t.len() / n.max(1);
        let value = t.reshape(&[n, rest])?;
        let rg = self.requires_grad(input);
        Ok(self.push(value, rg, Op::Flatten { input }))
    }

    /// Fully connected layer: `[N, D] x [Out, D]^T + [Out]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let x = self.value(input);
        let wt = self.value(weight);
        let (&[n, d], &[out, wd]) = (x.shape(), wt.shape()) else {
            return Err(Error::shape("dense", format!("input {:?} / weight {:?} must both be rank 2", x.shape(), wt.shape())));
        };
        if d != wd {
            return Err(Error::shape("dense", format!("input width {d} but weight expects {wd}")));
        }
        let bvals = match bias {
            Some(b) if self.value(b).shape() != [out] => {
                return Err(Error::shape("dense", format!("bias shape {:?}, expected [{out}]", self.value(b).shape())))
            }
            Some(b) => Some(self.value(b).data()),
            None => None,
        };
        let mut data = vec![0.0; n * out];
        for i in 0..n {
            let row = &x.data()[i * d..][..d];
            for o in 0..out {
                let wrow = &wt.data()[o * d..][..d];
                let acc: f64 = row.iter().zip(wrow).map(|(a, b)| a * b).sum();
                data[i * out + o] = acc + bvals.map_or(0.0, |b| b[o]);
            }
        }
        let value = Tensor::new(vec![n, out], data)?;
        let rg = self.any_grad(&[Some(input), Some(weight), bias]);
        Ok(self.push(value, rg, Op::Dense { input, weight, bias }))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let value = Tensor::scalar(self.value(input).sum());
        let rg = self.requires_grad(input);
        self.push(value, rg, Op::Sum { input })
    }

    /// `sum(input * weights)` for a constant `weights` of the same shape.
    pub fn weighted_sum(&mut self, input: Var, weights: &Tensor) -> Result<Var> {
        let x = self.value(input);
        if x.shape() != weights.shape() {
            return Err(Error::shape("weighted_sum", format!("{:?} vs {:?}", x.shape(), weights.shape())));
        }
        let value = Tensor::scalar(x.dot(weights));
        let rg = self.requires_grad(input);
        Ok(self.push(value, rg, Op::WeightedSum { input, weights: weights.clone() }))
    }

    /// Mean per-pixel cross-entropy of softmax(`logits`) against `labels`.
    ///
    /// `logits` is `[N, K, H, W]` (or `[N, K]`); `labels` holds `N*H*W` class
    /// indices in row-major `(n, y, x)` order.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[u8]) -> Result<Var> {
        let t = self.value(logits);
        let (n, k, plane) = match t.shape() {
            &[n, k, h, w] => (n, k, h * w),
            &[n, k] => (n, k, 1),
            s => return Err(Error::shape("softmax_cross_entropy", format!("logits must be rank 2 or 4, got {s:?}"))),
        };
        let count = n * plane;
        if labels.len() != count {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("{} labels for {count} pixels", labels.len()),
            ));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= k) {
            return Err(Error::invalid(format!("label {bad} out of range for {k} classes")));
        }
        let x = t.data();
        let mut probs = vec![0.0; x.len()];
        let mut total = 0.0;
        for i in 0..n {
            for p in 0..plane {
                let at = |c: usize| (i * k + c) * plane + p;
                let m = (0..k).map(|c| x[at(c)]).fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = (0..k).map(|c| (x[at(c)] - m).exp()).sum();
                let lse = m + z.ln();
                for c in 0..k {
                    probs[at(c)] = (x[at(c)] - lse).exp();
                }
                total += lse - x[at(labels[i * plane + p] as usize)];
            }
        }
        let value = Tensor::scalar(total / count as f64);
        let rg = self.requires_grad(logits);
        Ok(self.push(value, rg, Op::SoftmaxCrossEntropy { logits, labels: labels.to_vec(), probs }))
    }

    /// Reverse sweep from a scalar `loss`. Every variable that requires a
    /// gradient receives one; leaves the loss does not depend on get zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::shape("backward", format!("loss must be a scalar, got shape {:?}", lv.shape())));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(Tensor::new(lv.shape().to_vec(), vec![1.0])?);
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(&self.nodes[idx], &g, &mut grads);
            grads[idx] = Some(g);
        }

        for (node, slot) in self.nodes.iter().zip(grads.iter_mut()) {
            if node.requires_grad && slot.is_none() {
                *slot = Some(Tensor::zeros(node.value.shape()));
            } else if !node.requires_grad {
                *slot = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], var: Var, delta: Vec<f64>) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        match &mut grads[var.0] {
            Some(existing) => {
                for (a, d) in existing.data_mut().iter_mut().zip(&delta) {
                    *a += d;
                }
            }
            slot @ None => {
                let shape = self.nodes[var.0].value.shape().to_vec();
                *slot = Some(Tensor::new(shape, delta).expect("gradient shape matches its variable"));
            }
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, weight, bias, geom } => {
                if self.requires_grad(*input) {
                    let gi = kernels::conv2d_backward_input(gd, self.value(*weight).data(), geom);
                    self.accumulate(grads, *input, gi);
                }
                if self.requires_grad(*weight) {
                    let gw = kernels::conv2d_backward_weight(gd, self.value(*input).data(), geom);
                    self.accumulate(grads, *weight, gw);
                }
                if let Some(b) = bias {
                    if self.requires_grad(*b) {
                        self.accumulate(grads, *b, kernels::conv2d_backward_bias(gd, geom));
                    }
                }
            }
            Op::TransposedConv2d { input, weight, geom } => {
                if self.requires_grad(*input) {
                    let gi = kernels::conv2d_forward(gd, self.value(*weight).data(), None, geom);
                    self.accumulate(grads, *input, gi);
                }
                if self.requires_grad(*weight) {
                    let gw = kernels::conv2d_backward_weight(self.value(*input).data(), gd, geom);
                    self.accumulate(grads, *weight, gw);
                }
            }
            Op::MaxPool { input, argmax } => {
                let mut gi = vec![0.0; self.value(*input).len()];
                for (&src, &gv) in argmax.iter().zip(gd) {
                    gi[src] += gv;
                }
                self.accumulate(grads, *input, gi);
            }
            Op::Relu { input } => {
                let gi = self.value(*input).data().iter().zip(gd).map(|(&x, &gv)| if x > 0.0 { gv } else { 0.0 }).collect();
                self.accumulate(grads, *input, gi);
            }
            Op::Add { lhs, rhs } => {
                self.accumulate(grads, *lhs, gd.to_vec());
                self.accumulate(grads, *rhs, gd.to_vec());
            }
            Op::Crop { input, top, left } => {
                let [n, c, ih, iw] = self.value(*input).dims4().expect("crop input is rank 4");
                let [_, _, h, w] = g.dims4().expect("crop output is rank 4");
                let mut gi = vec![0.0; n * c * ih * iw];
                for plane in 0..n * c {
                    for y in 0..h {
                        let dst = plane * ih * iw + (top + y) * iw + left;
                        gi[dst..dst + w].copy_from_slice(&gd[(plane * h + y) * w..][..w]);
                    }
                }
                self.accumulate(grads, *input, gi);
            }
            Op::Flatten { input } => self.accumulate(grads, *input, gd.to_vec()),
            Op::Dense { input, weight, bias } => {
                let x = self.value(*input);
                let wt = self.value(*weight);
                let (n, d, out) = (x.shape()[0], x.shape()[1], wt.shape()[0]);
                if self.requires_grad(*input) {
                    let mut gi = vec![0.0; n * d];
                    for i in 0..n {
                        for o in 0..out {
                            let gv = gd[i * out + o];
                            for (a, w) in gi[i * d..][..d].iter_mut().zip(&wt.data()[o * d..][..d]) {
                                *a += gv * w;
                            }
                        }
                    }
                    self.accumulate(grads, *input, gi);
                }
                if self.requires_grad(*weight) {
                    let mut gw = vec![0.0; out * d];
                    for o in 0..out {
                        for i in 0..n {
                            let gv = gd[i * out + o];
                            for (a, xv) in gw[o * d..][..d].iter_mut().zip(&x.data()[i * d..][..d]) {
                                *a += gv * xv;
                            }
                        }
                    }
                    self.accumulate(grads, *weight, gw);
                }
                if let Some(b) = bias {
                    let gb = (0..out).map(|o| (0..n).map(|i| gd[i * out + o]).sum()).collect();
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Sum { input } => {
                let gi = vec![gd[0]; self.value(*input).len()];
                self.accumulate(grads, *input, gi);
            }
            Op::WeightedSum { input, weights } => {
                let gi = weights.data().iter().map(|w| w * gd[0]).collect();
                self.accumulate(grads, *input, gi);
            }
            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                let shape = self.value(*logits).shape();
                let (k, plane) = (shape[1], shape[2..].iter().product::<usize>());
                let count = labels.len() as f64;
                let scale = gd[0] / count;
                let mut gi: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (pix, &label) in labels.iter().enumerate() {
                    let (i, p) = (pix / plane, pix % plane);
                    gi[(i * k + label as usize) * plane + p] -= scale;
                }
                self.accumulate(grads, *logits, gi);
            }
        }
    }
}
