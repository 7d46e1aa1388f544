//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its forward
//! value plus whatever it needs for the backward pass. Nodes are appended in
//! evaluation order, so the tape index order is already a topological order
//! and [`Graph::backward`] simply walks it in reverse, visiting each node once.
//!
//! Leaves are either trainable (gradients are collected) or frozen
//! (`requires_grad == false`). Gradients only flow through nodes that depend on
//! a trainable leaf; frozen sub-networks still pass gradients through to their
//! inputs, which is what inverting a fixed generator needs.
//!
//! All image-like tensors are NHWC. Convolution kernels are `[k, k, Cin, Cout]`
//! for [`Graph::conv2d`] and `[k, k, Cout, Cin]` for
//! [`Graph::conv2d_transposed`] so that the two share a kernel as adjoints.

use crate::error::{Error, Result};
use crate::kernels::{col2im, gemm, im2col, rm, tr, ConvGeometry};
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Lower clamp applied to probabilities before taking logarithms.
pub const BCE_EPS: f32 = 1e-7;

/// Variance floor added inside the batch-norm square root.
pub const BN_EPS: f32 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Normalize with the statistics of the current batch.
    Train,
    /// Normalize with stored running statistics.
    Infer,
}

/// Per-channel statistics of a training-mode batch norm, handed back to the
/// caller so it can update its running averages.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    AddChannelBias {
        x: Var,
        b: Var,
    },
    Conv2d {
        x: Var,
        k: Var,
        geom: ConvGeometry,
        cols: Vec<f32>,
    },
    ConvTranspose2d {
        x: Var,
        k: Var,
        /// Geometry of the adjoint convolution, i.e. acting on the output.
        geom: ConvGeometry,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f32>,
        inv_std: Vec<f32>,
        train: bool,
    },
    Relu(Var),
    LeakyRelu(Var, f32),
    Sigmoid(Var),
    Tanh(Var),
    Reshape(Var),
    ConcatChannels(Var, Var),
    TileSpatial(Var),
    Bce {
        pred: Var,
        target: Tensor,
    },
    SquaredError {
        pred: Var,
        target: Tensor,
    },
    Add(Var, Var),
    Scale(Var, f32),
    WeightedSum {
        x: Var,
        weights: Tensor,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    visited: usize,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }

    /// Number of nodes the backward pass propagated through.
    pub fn visited(&self) -> usize {
        self.visited
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable leaf: gradients are collected for it.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// Frozen leaf: no gradient is ever produced for it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false, Op::Leaf)
    }

    /// `x (B×N) · w (N×M) + b (M)`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (
            self.value(x).shape(),
            self.value(w).shape(),
            self.value(b).shape(),
        );
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
            return Err(Error::Shape {
                op: "dense",
                lhs: xs.to_vec(),
                rhs: ws.to_vec(),
            });
        }
        if bs != [ws[1]] {
            return Err(Error::Shape {
                op: "dense bias",
                lhs: ws.to_vec(),
                rhs: bs.to_vec(),
            });
        }
        let (batch, n, m) = (xs[0], xs[1], ws[1]);
        let mut out = Vec::with_capacity(batch * m);
        for _ in 0..batch {
            out.extend_from_slice(self.value(b).data());
        }
        gemm(
            batch,
            n,
            m,
            self.value(x).data(),
            rm(n),
            self.value(w).data(),
            rm(m),
            &mut out,
            true,
        );
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(Tensor::new(vec![batch, m], out)?, rg, Op::Dense { x, w, b }))
    }

    /// Add a per-channel bias along the trailing axis.
    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let c = self.value(x).channels();
        if self.value(b).shape() != [c] {
            return Err(Error::Shape {
                op: "add_channel_bias",
                lhs: self.value(x).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let bias = self.value(b).data().to_vec();
        let mut out = self.value(x).clone();
        for chunk in out.data_mut().chunks_mut(c) {
            for (o, bb) in chunk.iter_mut().zip(&bias) {
                *o += bb;
            }
        }
        let rg = self.rg(&[x, b]);
        Ok(self.push(out, rg, Op::AddChannelBias { x, b }))
    }

    /// Strided cross-correlation with "same" padding:
    /// `(B,H,W,C) ⋆ [k,k,C,F] → (B, ceil(H/s), ceil(W/s), F)`.
    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ks = self.value(k).shape().to_vec();
        if xs.len() != 4 || ks.len() != 4 || ks[0] != ks[1] || ks[2] != xs[3] || stride == 0 {
            return Err(Error::Shape {
                op: "conv2d",
                lhs: xs,
                rhs: ks,
            });
        }
        let geom = ConvGeometry::same(xs[0], xs[1], xs[2], xs[3], ks[0], stride);
        let f = ks[3];
        let cols = im2col(self.value(x).data(), &geom);
        let mut out = vec![0.0f32; geom.patches() * f];
        gemm(
            geom.patches(),
            geom.patch_len(),
            f,
            &cols,
            rm(geom.patch_len()),
            self.value(k).data(),
            rm(f),
            &mut out,
            false,
        );
        let shape = vec![xs[0], geom.rows.output, geom.cols.output, f];
        let rg = self.rg(&[x, k]);
        // The column matrix is only needed for the kernel gradient.
        let cols = if self.nodes[k.0].requires_grad {
            cols
        } else {
            Vec::new()
        };
        Ok(self.push(Tensor::new(shape, out)?, rg, Op::Conv2d { x, k, geom, cols }))
    }

    /// Adjoint of [`Graph::conv2d`]:
    /// `(B,H,W,C)` with kernel `[k,k,F,C]` → `(B, s·H, s·W, F)`.
    pub fn conv2d_transposed(&mut self, x: Var, k: Var, stride: usize) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ks = self.value(k).shape().to_vec();
        if xs.len() != 4 || ks.len() != 4 || ks[0] != ks[1] || ks[3] != xs[3] || stride == 0 {
            return Err(Error::Shape {
                op: "conv2d_transposed",
                lhs: xs,
                rhs: ks,
            });
        }
        let f = ks[2];
        let c = xs[3];
        let geom = ConvGeometry::same(xs[0], xs[1] * stride, xs[2] * stride, f, ks[0], stride);
        debug_assert_eq!(geom.rows.output, xs[1]);
        debug_assert_eq!(geom.cols.output, xs[2]);
        // cols (patches × k·k·F) = x (patches × C) · Kᵀ (C × k·k·F)
        let mut cols = vec![0.0f32; geom.patches() * geom.patch_len()];
        gemm(
            geom.patches(),
            c,
            geom.patch_len(),
            self.value(x).data(),
            rm(c),
            self.value(k).data(),
            tr(c),
            &mut cols,
            false,
        );
        let out = col2im(&cols, &geom);
        let shape = vec![xs[0], xs[1] * stride, xs[2] * stride, f];
        let rg = self.rg(&[x, k]);
        Ok(self.push(Tensor::new(shape, out)?, rg, Op::ConvTranspose2d { x, k, geom }))
    }

    /// Per-channel batch normalization over every axis but the last.
    ///
    /// In [`NormMode::Train`] the batch statistics are used and returned; in
    /// [`NormMode::Infer`] the supplied running statistics are used.
    pub fn batchnorm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: NormMode,
        running: (&[f32], &[f32]),
    ) -> Result<(Var, Option<BatchStats>)> {
        let c = self.value(x).channels();
        for p in [gamma, beta] {
            if self.value(p).shape() != [c] {
                return Err(Error::Shape {
                    op: "batchnorm",
                    lhs: self.value(x).shape().to_vec(),
                    rhs: self.value(p).shape().to_vec(),
                });
            }
        }
        if running.0.len() != c || running.1.len() != c {
            return Err(Error::Shape {
                op: "batchnorm running stats",
                lhs: vec![c],
                rhs: vec![running.0.len(), running.1.len()],
            });
        }
        let xv = self.value(x);
        let rows = xv.len() / c;
        let (mean, var, stats) = match mode {
            NormMode::Train => {
                let mut mean = vec![0.0f64; c];
                let mut sq = vec![0.0f64; c];
                for row in xv.data().chunks(c) {
                    for (j, &v) in row.iter().enumerate() {
                        mean[j] += v as f64;
                    }
                }
                for m in &mut mean {
                    *m /= rows as f64;
                }
                for row in xv.data().chunks(c) {
                    for (j, &v) in row.iter().enumerate() {
                        let d = v as f64 - mean[j];
                        sq[j] += d * d;
                    }
                }
                let mean: Vec<f32> = mean.iter().map(|&m| m as f32).collect();
                let var: Vec<f32> = sq.iter().map(|&s| (s / rows as f64) as f32).collect();
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: var.clone(),
                };
                (mean, var, Some(stats))
            }
            NormMode::Infer => (running.0.to_vec(), running.1.to_vec(), None),
        };
        let inv_std: Vec<f32> = var.iter().map(|&v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = Vec::with_capacity(xv.len());
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.data().chunks(c) {
            for j in 0..c {
                let h = (row[j] - mean[j]) * inv_std[j];
                xhat.push(h);
                out.push(g[j] * h + b[j]);
            }
        }
        let shape = xv.shape().to_vec();
        let rg = self.rg(&[x, gamma, beta]);
        let v = self.push(
            Tensor::new(shape, out)?,
            rg,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train: mode == NormMode::Train,
            },
        );
        Ok((v, stats))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        let rg = self.rg(&[x]);
        self.push(out, rg, Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f32) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        let rg = self.rg(&[x]);
        self.push(out, rg, Op::LeakyRelu(x, slope))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let rg = self.rg(&[x]);
        self.push(out, rg, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f32::tanh);
        let rg = self.rg(&[x]);
        self.push(out, rg, Op::Tanh(x))
    }

    /// Reshape keeping the element order; `shape` includes the batch axis.
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(out, rg, Op::Reshape(x)))
    }

    /// Concatenate two NHWC tensors along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 4 || sb.len() != 4 || sa[..3] != sb[..3] {
            return Err(Error::Shape {
                op: "concat_channels",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (ca, cb) = (sa[3], sb[3]);
        let mut shape = sa.to_vec();
        shape[3] = ca + cb;
        let mut out = Vec::with_capacity(self.value(a).len() + self.value(b).len());
        for (ra, rb) in self
            .value(a)
            .data()
            .chunks(ca)
            .zip(self.value(b).data().chunks(cb))
        {
            out.extend_from_slice(ra);
            out.extend_from_slice(rb);
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape, out)?, rg, Op::ConcatChannels(a, b)))
    }

    /// Broadcast `(B, L)` to `(B, H, W, L)` by repeating over spatial positions.
    pub fn tile_spatial(&mut self, z: Var, height: usize, width: usize) -> Result<Var> {
        let zs = self.value(z).shape();
        if zs.len() != 2 {
            return Err(Error::Shape {
                op: "tile_spatial",
                lhs: zs.to_vec(),
                rhs: vec![height, width],
            });
        }
        let (batch, l) = (zs[0], zs[1]);
        let mut out = Vec::with_capacity(batch * height * width * l);
        for row in self.value(z).data().chunks(l) {
            for _ in 0..height * width {
                out.extend_from_slice(row);
            }
        }
        let rg = self.rg(&[z]);
        Ok(self.push(
            Tensor::new(vec![batch, height, width, l], out)?,
            rg,
            Op::TileSpatial(z),
        ))
    }

    /// Mean binary cross-entropy `−t·ln p − (1−t)·ln(1−p)` with `p` clamped to
    /// `[ε, 1−ε]`. The target is a constant.
    pub fn bce(&mut self, pred: Var, target: Tensor) -> Result<Var> {
        self.value(pred).expect_same_shape(&target, "bce")?;
        validate_probability_target(&target)?;
        let loss = bce_value(target.data(), self.value(pred).data());
        let rg = self.rg(&[pred]);
        Ok(self.push(Tensor::scalar(loss), rg, Op::Bce { pred, target }))
    }

    /// Batch mean of the squared L2 distance between rows: `mean_b ‖p_b − t_b‖²`.
    pub fn squared_error(&mut self, pred: Var, target: Tensor) -> Result<Var> {
        self.value(pred).expect_same_shape(&target, "squared_error")?;
        let p = self.value(pred);
        let batch = p.batch();
        let total: f64 = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(&a, &b)| {
                let d = (a - b) as f64;
                d * d
            })
            .sum();
        let rg = self.rg(&[pred]);
        Ok(self.push(
            Tensor::scalar((total / batch as f64) as f32),
            rg,
            Op::SquaredError { pred, target },
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, rg, Op::Add(a, b)))
    }

    pub fn scale(&mut self, x: Var, factor: f32) -> Var {
        let out = self.value(x).map(|v| v * factor);
        let rg = self.rg(&[x]);
        self.push(out, rg, Op::Scale(x, factor))
    }

    /// `Σ wᵢ·xᵢ` for constant weights; turns any tensor into a scalar probe.
    pub fn weighted_sum(&mut self, x: Var, weights: Tensor) -> Result<Var> {
        let s = self.value(x).dot(&weights)? as f32;
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::scalar(s), rg, Op::WeightedSum { x, weights }))
    }

    /// Backpropagate from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::validation(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut visited = 0;
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            visited += 1;
            self.propagate(node, &gout, &mut grads)?;
            // Interior gradients are not kept.
        }
        Ok(Gradients { grads, visited })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) -> Result<()> {
        if !self.nodes[v.0].requires_grad {
            return Ok(());
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => {
                *slot = Some(g);
                Ok(())
            }
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node, gout: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Dense { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (batch, n, m) = (xv.shape()[0], xv.shape()[1], wv.shape()[1]);
                if self.wants(*x) {
                    let mut dx = vec![0.0; batch * n];
                    gemm(batch, m, n, gout.data(), rm(m), wv.data(), tr(m), &mut dx, false);
                    self.accumulate(grads, *x, Tensor::new(vec![batch, n], dx)?)?;
                }
                if self.wants(*w) {
                    let mut dw = vec![0.0; n * m];
                    gemm(n, batch, m, xv.data(), tr(n), gout.data(), rm(m), &mut dw, false);
                    self.accumulate(grads, *w, Tensor::new(vec![n, m], dw)?)?;
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, sum_rows(gout, m))?;
                }
            }
            Op::AddChannelBias { x, b } => {
                if self.wants(*x) {
                    self.accumulate(grads, *x, gout.clone())?;
                }
                if self.wants(*b) {
                    let c = gout.channels();
                    self.accumulate(grads, *b, sum_rows(gout, c))?;
                }
            }
            Op::Conv2d { x, k, geom, cols } => {
                let kv = self.value(*k);
                let f = kv.shape()[3];
                let (p, plen) = (geom.patches(), geom.patch_len());
                if self.wants(*k) {
                    let mut dk = vec![0.0; plen * f];
                    gemm(plen, p, f, cols, tr(plen), gout.data(), rm(f), &mut dk, false);
                    self.accumulate(grads, *k, Tensor::new(kv.shape().to_vec(), dk)?)?;
                }
                if self.wants(*x) {
                    let mut dcols = vec![0.0; p * plen];
                    gemm(p, f, plen, gout.data(), rm(f), kv.data(), tr(f), &mut dcols, false);
                    let dx = col2im(&dcols, geom);
                    self.accumulate(
                        grads,
                        *x,
                        Tensor::new(self.value(*x).shape().to_vec(), dx)?,
                    )?;
                }
            }
            Op::ConvTranspose2d { x, k, geom } => {
                let kv = self.value(*k);
                let xv = self.value(*x);
                let c = xv.channels();
                let (p, plen) = (geom.patches(), geom.patch_len());
                let dcols = im2col(gout.data(), geom);
                if self.wants(*x) {
                    let mut dx = vec![0.0; p * c];
                    gemm(p, plen, c, &dcols, rm(plen), kv.data(), rm(c), &mut dx, false);
                    self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), dx)?)?;
                }
                if self.wants(*k) {
                    let mut dk = vec![0.0; plen * c];
                    gemm(plen, p, c, &dcols, tr(plen), xv.data(), rm(c), &mut dk, false);
                    self.accumulate(grads, *k, Tensor::new(kv.shape().to_vec(), dk)?)?;
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let c = gout.channels();
                let rows = gout.len() / c;
                let g = self.value(*gamma).data();
                let mut dgamma = vec![0.0f64; c];
                let mut dbeta = vec![0.0f64; c];
                for (grow, hrow) in gout.data().chunks(c).zip(xhat.chunks(c)) {
                    for j in 0..c {
                        dgamma[j] += (grow[j] * hrow[j]) as f64;
                        dbeta[j] += grow[j] as f64;
                    }
                }
                if self.wants(*x) {
                    let mut dx = Vec::with_capacity(gout.len());
                    if *train {
                        // dx = γ/σ · (dy − mean(dy) − x̂·mean(dy·x̂))
                        let n = rows as f64;
                        for (grow, hrow) in gout.data().chunks(c).zip(xhat.chunks(c)) {
                            for j in 0..c {
                                let v = grow[j] as f64
                                    - dbeta[j] / n
                                    - hrow[j] as f64 * dgamma[j] / n;
                                dx.push((g[j] as f64 * inv_std[j] as f64 * v) as f32);
                            }
                        }
                    } else {
                        for grow in gout.data().chunks(c) {
                            for j in 0..c {
                                dx.push(grow[j] * g[j] * inv_std[j]);
                            }
                        }
                    }
                    self.accumulate(grads, *x, Tensor::new(gout.shape().to_vec(), dx)?)?;
                }
                if self.wants(*gamma) {
                    let t = dgamma.iter().map(|&v| v as f32).collect();
                    self.accumulate(grads, *gamma, Tensor::new(vec![c], t)?)?;
                }
                if self.wants(*beta) {
                    let t = dbeta.iter().map(|&v| v as f32).collect();
                    self.accumulate(grads, *beta, Tensor::new(vec![c], t)?)?;
                }
            }
            Op::Relu(x) => {
                let d = gout.zip_map(self.value(*x), |g, v| if v > 0.0 { g } else { 0.0 })?;
                self.accumulate(grads, *x, d)?;
            }
            Op::LeakyRelu(x, slope) => {
                let s = *slope;
                let d = gout.zip_map(self.value(*x), |g, v| if v > 0.0 { g } else { s * g })?;
                self.accumulate(grads, *x, d)?;
            }
            Op::Sigmoid(x) => {
                let d = gout.zip_map(&node.value, |g, y| g * y * (1.0 - y))?;
                self.accumulate(grads, *x, d)?;
            }
            Op::Tanh(x) => {
                let d = gout.zip_map(&node.value, |g, y| g * (1.0 - y * y))?;
                self.accumulate(grads, *x, d)?;
            }
            Op::Reshape(x) => {
                let d = gout.clone().reshape(self.value(*x).shape())?;
                self.accumulate(grads, *x, d)?;
            }
            Op::ConcatChannels(a, b) => {
                let ca = self.value(*a).channels();
                let cb = self.value(*b).channels();
                let mut da = Vec::with_capacity(self.value(*a).len());
                let mut db = Vec::with_capacity(self.value(*b).len());
                for row in gout.data().chunks(ca + cb) {
                    da.extend_from_slice(&row[..ca]);
                    db.extend_from_slice(&row[ca..]);
                }
                self.accumulate(grads, *a, Tensor::new(self.value(*a).shape().to_vec(), da)?)?;
                self.accumulate(grads, *b, Tensor::new(self.value(*b).shape().to_vec(), db)?)?;
            }
            Op::TileSpatial(z) => {
                let zs = self.value(*z).shape();
                let (batch, l) = (zs[0], zs[1]);
                let per = gout.len() / batch;
                let mut dz = vec![0.0f32; batch * l];
                for (bi, block) in gout.data().chunks(per).enumerate() {
                    let acc = &mut dz[bi * l..(bi + 1) * l];
                    for pos in block.chunks(l) {
                        for (a, v) in acc.iter_mut().zip(pos) {
                            *a += v;
                        }
                    }
                }
                self.accumulate(grads, *z, Tensor::new(zs.to_vec(), dz)?)?;
            }
            Op::Bce { pred, target } => {
                let scale = gout.item() / target.len() as f32;
                let d = self.value(*pred).zip_map(target, |p, t| {
                    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                    scale * (p - t) / (p * (1.0 - p))
                })?;
                self.accumulate(grads, *pred, d)?;
            }
            Op::SquaredError { pred, target } => {
                let scale = 2.0 * gout.item() / self.value(*pred).batch() as f32;
                let d = self
                    .value(*pred)
                    .zip_map(target, |p, t| scale * (p - t))?;
                self.accumulate(grads, *pred, d)?;
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gout.clone())?;
                self.accumulate(grads, *b, gout.clone())?;
            }
            Op::Scale(x, factor) => {
                let f = *factor;
                self.accumulate(grads, *x, gout.map(|g| g * f))?;
            }
            Op::WeightedSum { x, weights } => {
                let s = gout.item();
                self.accumulate(grads, *x, weights.map(|w| w * s))?;
            }
        }
        Ok(())
    }
}

fn sum_rows(t: &Tensor, width: usize) -> Tensor {
    let mut acc = vec![0.0f64; width];
    for row in t.data().chunks(width) {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += v as f64;
        }
    }
    Tensor::from_fn(&[width], |i| acc[i] as f32)
}

#[inline]
pub fn sigmoid(v: f32) -> f32 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn validate_probability_target(target: &Tensor) -> Result<()> {
    if let Some(bad) = target
        .data()
        .iter()
        .find(|v| !(0.0..=1.0).contains(*v))
    {
        return Err(Error::validation(format!(
            "binary cross-entropy target must lie in [0, 1], found {bad}"
        )));
    }
    Ok(())
}

/// Mean clamped binary cross-entropy, accumulated in 64 bits.
pub fn bce_value(target: &[f32], pred: &[f32]) -> f32 {
    let total: f64 = target
        .iter()
        .zip(pred)
        .map(|(&t, &p)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS) as f64;
            let t = t as f64;
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    (total / target.len() as f64) as f32
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn dense_identity_and_hand_arithmetic() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 2], &[1.0, 2.0]));
        let w = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b = g.constant(t(&[2], &[0.0, 0.0]));
        let y = g.dense(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0]);

        let x = g.constant(t(&[1, 2], &[1.0, 1.0]));
        let w = g.constant(t(&[2, 2], &[2.0, 3.0, 4.0, 5.0]));
        let b = g.constant(t(&[2], &[1.0, 1.0]));
        let y = g.dense(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[7.0, 9.0]);
    }

    #[test]
    fn dense_shape_mismatch_reports_both_shapes() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 3]));
        let w = g.constant(Tensor::zeros(&[2, 2]));
        let b = g.constant(Tensor::zeros(&[2]));
        match g.dense(x, w, b) {
            Err(Error::Shape { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![1, 3]);
                assert_eq!(rhs, vec![2, 2]);
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn conv_shapes_follow_same_padding() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 64, 64, 3]));
        let k = g.constant(Tensor::zeros(&[5, 5, 3, 7]));
        let y = g.conv2d(x, k, 2).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 32, 32, 7]);
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));

        let x = g.constant(Tensor::zeros(&[1, 4, 4, 8]));
        let k = g.constant(Tensor::ones(&[5, 5, 5, 8]));
        let y = g.conv2d_transposed(x, k, 2).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 8, 8, 5]);
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_channel_mismatch_is_an_error() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 8, 8, 3]));
        let k = g.constant(Tensor::zeros(&[5, 5, 4, 2]));
        assert!(matches!(g.conv2d(x, k, 2), Err(Error::Shape { .. })));
        let k = g.constant(Tensor::zeros(&[5, 5, 2, 4]));
        assert!(matches!(
            g.conv2d_transposed(x, k, 2),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn activations_by_definition() {
        let mut g = Graph::new();
        let x = g.param(t(&[3], &[-1.0, 0.0, 2.0]));
        let r = g.relu(x);
        assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);

        let x = g.param(t(&[1], &[-10.0]));
        let l = g.leaky_relu(x, 0.2);
        assert_eq!(g.value(l).data(), &[-2.0]);

        let x = g.param(t(&[1], &[0.0]));
        let s = g.sigmoid(x);
        assert_eq!(g.value(s).item(), 0.5);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 0.25);
    }

    #[test]
    fn sigmoid_and_tanh_stay_in_range_and_finite() {
        let mut g = Graph::new();
        let x = g.param(t(&[4], &[-200.0, -20.0, 20.0, 200.0]));
        let s = g.sigmoid(x);
        let th = g.tanh(x);
        assert!(g.value(s).data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(g.value(th).data().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(g.value(s).all_finite());
    }

    #[test]
    fn bce_analytic_values() {
        let mut g = Graph::new();
        let p = g.param(Tensor::full(&[2, 3], 0.5));
        let l = g.bce(p, Tensor::full(&[2, 3], 0.5)).unwrap();
        assert!((g.value(l).item() - std::f32::consts::LN_2).abs() < 1e-6);

        let p = g.param(Tensor::full(&[4], 1.0 - BCE_EPS));
        let l = g.bce(p, Tensor::ones(&[4])).unwrap();
        assert!(g.value(l).item() < 1e-6);
    }

    #[test]
    fn bce_rejects_targets_outside_unit_interval() {
        let mut g = Graph::new();
        let p = g.param(Tensor::full(&[2], 0.5));
        assert!(matches!(
            g.bce(p, t(&[2], &[0.5, 1.5])),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn batchnorm_train_mode_normalizes() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_fn(&[4, 3, 3, 2], |i| ((i * 37) % 17) as f32 * 0.3 - 1.0));
        let gamma = g.constant(Tensor::ones(&[2]));
        let beta = g.constant(Tensor::zeros(&[2]));
        let (y, stats) = g
            .batchnorm(x, gamma, beta, NormMode::Train, (&[0.0; 2], &[1.0; 2]))
            .unwrap();
        assert!(stats.is_some());
        let c = 2;
        for j in 0..c {
            let vals: Vec<f64> = g.value(y).data().iter().skip(j).step_by(c).map(|&v| v as f64).collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / vals.len() as f64;
            assert!(m.abs() < 1e-5, "mean {m}");
            assert!((v - 1.0).abs() < 1e-3, "var {v}");
        }
    }

    #[test]
    fn frozen_inputs_get_no_gradient() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 2], &[1.0, 2.0]));
        let w = g.param(t(&[2, 1], &[0.5, -0.5]));
        let b = g.constant(t(&[1], &[0.0]));
        let y = g.dense(x, w, b).unwrap();
        let grads = g.backward(y).unwrap();
        assert!(grads.get(x).is_none());
        assert!(grads.get(b).is_none());
        assert_eq!(grads.get(w).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn backward_visits_each_differentiable_node_once() {
        let mut g = Graph::new();
        let x = g.param(t(&[2], &[0.3, -0.7]));
        let a = g.tanh(x);
        let b = g.sigmoid(x);
        let c = g.add(a, b).unwrap();
        let s = g.weighted_sum(c, Tensor::ones(&[2])).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.visited(), 4);
        let expected: Vec<f32> = [0.3f32, -0.7]
            .iter()
            .map(|&v| (1.0 - v.tanh().powi(2)) + sigmoid(v) * (1.0 - sigmoid(v)))
            .collect();
        for (a, e) in grads.get(x).unwrap().data().iter().zip(expected) {
            assert!((a - e).abs() < 1e-6);
        }
    }
}
