//! Finite-difference verification of every differentiable operation.
//!
//! The analytic side is the production `f32` autodiff path. The numeric side
//! is a separate, deliberately naive `f64` implementation in [`reference`]
//! (plain nested loops, no im2col, no GEMM), differentiated by central
//! differences with step `1e-3`. Each operation is exercised on several
//! random shapes; the error measure is `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂)`.

use crate::autodiff::{Graph, NormMode};
use crate::error::Result;
use crate::models::{
    build_generator, build_inverse_generator, ArchitectureConfig, Layer,
};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;
pub const OP_TOLERANCE: f64 = 1e-4;
pub const NETWORK_TOLERANCE: f64 = 1e-3;
/// Whole-network probes cross ReLU kinks inside the frozen decoder at larger
/// steps; the f64 shadow keeps roundoff negligible at this size.
pub const NETWORK_FD_STEP: f64 = 1e-6;
pub const ADJOINT_TOLERANCE: f64 = 1e-5;
pub const CASES_PER_OP: usize = 5;

/// Naive double-precision forward implementations.
pub mod reference {
    use crate::models::{Activation, Layer, Network, LRELU_SLOPE, STRIDE};

    #[derive(Debug, Clone, PartialEq)]
    pub struct T64 {
        pub shape: Vec<usize>,
        pub data: Vec<f64>,
    }

    impl T64 {
        pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
            assert_eq!(shape.iter().product::<usize>(), data.len());
            T64 { shape, data }
        }

        pub fn from_f32(t: &crate::Tensor) -> Self {
            T64::new(
                t.shape().to_vec(),
                t.data().iter().map(|&v| v as f64).collect(),
            )
        }

        fn at4(&self, b: usize, y: usize, x: usize, c: usize) -> f64 {
            let s = &self.shape;
            self.data[((b * s[1] + y) * s[2] + x) * s[3] + c]
        }

        pub fn map(&self, f: impl Fn(f64) -> f64) -> T64 {
            T64::new(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
        }
    }

    fn same_pad(input: usize, kernel: usize, stride: usize) -> (usize, isize) {
        let out = input.div_ceil(stride);
        let total = ((out - 1) * stride + kernel) as isize - input as isize;
        (out, total.max(0) / 2)
    }

    pub fn dense(x: &T64, w: &T64, b: &T64) -> T64 {
        let (batch, n, m) = (x.shape[0], x.shape[1], w.shape[1]);
        let mut out = vec![0.0; batch * m];
        for i in 0..batch {
            for j in 0..m {
                let mut s = b.data[j];
                for k in 0..n {
                    s += x.data[i * n + k] * w.data[k * m + j];
                }
                out[i * m + j] = s;
            }
        }
        T64::new(vec![batch, m], out)
    }

    /// Cross-correlation, kernel `[k, k, C, F]`, "same" padding.
    pub fn conv2d(x: &T64, k: &T64, stride: usize) -> T64 {
        let (bn, h, w, c) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
        let (ks, f) = (k.shape[0], k.shape[3]);
        let (ho, ph) = same_pad(h, ks, stride);
        let (wo, pw) = same_pad(w, ks, stride);
        let mut out = vec![0.0; bn * ho * wo * f];
        for b in 0..bn {
            for oy in 0..ho {
                for ox in 0..wo {
                    for of in 0..f {
                        let mut s = 0.0;
                        for ky in 0..ks {
                            for kx in 0..ks {
                                let iy = (oy * stride + ky) as isize - ph;
                                let ix = (ox * stride + kx) as isize - pw;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                for ic in 0..c {
                                    s += x.at4(b, iy as usize, ix as usize, ic)
                                        * k.data[((ky * ks + kx) * c + ic) * f + of];
                                }
                            }
                        }
                        out[((b * ho + oy) * wo + ox) * f + of] = s;
                    }
                }
            }
        }
        T64::new(vec![bn, ho, wo, f], out)
    }

    /// Scatter form of the transposed convolution, kernel `[k, k, F, C]`.
    pub fn conv2d_transposed(x: &T64, k: &T64, stride: usize) -> T64 {
        let (bn, h, w, c) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
        let (ks, f) = (k.shape[0], k.shape[2]);
        let (ho, wo) = (h * stride, w * stride);
        let (_, ph) = same_pad(ho, ks, stride);
        let (_, pw) = same_pad(wo, ks, stride);
        let mut out = vec![0.0; bn * ho * wo * f];
        for b in 0..bn {
            for iy in 0..h {
                for ix in 0..w {
                    for ic in 0..c {
                        let v = x.at4(b, iy, ix, ic);
                        for ky in 0..ks {
                            for kx in 0..ks {
                                let oy = (iy * stride + ky) as isize - ph;
                                let ox = (ix * stride + kx) as isize - pw;
                                if oy < 0 || ox < 0 || oy >= ho as isize || ox >= wo as isize {
                                    continue;
                                }
                                for of in 0..f {
                                    out[((b * ho + oy as usize) * wo + ox as usize) * f + of] +=
                                        v * k.data[((ky * ks + kx) * f + of) * c + ic];
                                }
                            }
                        }
                    }
                }
            }
        }
        T64::new(vec![bn, ho, wo, f], out)
    }

    pub fn add_channel_bias(x: &T64, b: &T64) -> T64 {
        let c = *x.shape.last().unwrap();
        let data = x
            .data
            .iter()
            .enumerate()
            .map(|(i, v)| v + b.data[i % c])
            .collect();
        T64::new(x.shape.clone(), data)
    }

    /// Batch norm over every axis but the last. `running` is used when given,
    /// otherwise the (biased) batch statistics.
    pub fn batchnorm(x: &T64, gamma: &T64, beta: &T64, running: Option<(&[f64], &[f64])>) -> T64 {
        let c = *x.shape.last().unwrap();
        let rows = x.data.len() / c;
        let (mean, var): (Vec<f64>, Vec<f64>) = match running {
            Some((m, v)) => (m.to_vec(), v.to_vec()),
            None => (0..c)
                .map(|j| {
                    let vals: Vec<f64> = (0..rows).map(|r| x.data[r * c + j]).collect();
                    let m = vals.iter().sum::<f64>() / rows as f64;
                    let v = vals.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / rows as f64;
                    (m, v)
                })
                .unzip(),
        };
        let eps = crate::autodiff::BN_EPS as f64;
        let data = x
            .data
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let j = i % c;
                gamma.data[j] * (v - mean[j]) / (var[j] + eps).sqrt() + beta.data[j]
            })
            .collect();
        T64::new(x.shape.clone(), data)
    }

    pub fn sigmoid(v: f64) -> f64 {
        1.0 / (1.0 + (-v).exp())
    }

    pub fn bce(target: &T64, pred: &T64) -> f64 {
        let eps = crate::autodiff::BCE_EPS as f64;
        target
            .data
            .iter()
            .zip(&pred.data)
            .map(|(&t, &p)| {
                let p = p.clamp(eps, 1.0 - eps);
                -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
            })
            .sum::<f64>()
            / target.data.len() as f64
    }

    pub fn squared_error(target: &T64, pred: &T64) -> f64 {
        target
            .data
            .iter()
            .zip(&pred.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / pred.shape[0] as f64
    }

    pub fn concat_channels(a: &T64, b: &T64) -> T64 {
        let (ca, cb) = (a.shape[3], b.shape[3]);
        let rows = a.data.len() / ca;
        let mut data = Vec::new();
        for r in 0..rows {
            data.extend_from_slice(&a.data[r * ca..(r + 1) * ca]);
            data.extend_from_slice(&b.data[r * cb..(r + 1) * cb]);
        }
        let mut shape = a.shape.clone();
        shape[3] = ca + cb;
        T64::new(shape, data)
    }

    pub fn tile_spatial(z: &T64, h: usize, w: usize) -> T64 {
        let (bn, l) = (z.shape[0], z.shape[1]);
        let mut data = Vec::new();
        for b in 0..bn {
            for _ in 0..h * w {
                data.extend_from_slice(&z.data[b * l..(b + 1) * l]);
            }
        }
        T64::new(vec![bn, h, w, l], data)
    }

    /// Interpret a [`Network`] with double-precision math. `params` replaces
    /// the network's trainable tensors (same order as `Network::params`);
    /// batch norm uses batch statistics when `train` is set.
    pub fn network(net: &Network, params: &[T64], input: &T64, latent: Option<&T64>, train: bool) -> T64 {
        let mut p = params.iter();
        let mut x = input.clone();
        for layer in &net.layers {
            x = match layer {
                Layer::Dense { .. } => {
                    let (w, b) = (p.next().unwrap(), p.next().unwrap());
                    dense(&x, w, b)
                }
                Layer::Conv { bias, .. } => {
                    let y = conv2d(&x, p.next().unwrap(), STRIDE);
                    match bias {
                        Some(_) => add_channel_bias(&y, p.next().unwrap()),
                        None => y,
                    }
                }
                Layer::Deconv { bias, .. } => {
                    let y = conv2d_transposed(&x, p.next().unwrap(), STRIDE);
                    match bias {
                        Some(_) => add_channel_bias(&y, p.next().unwrap()),
                        None => y,
                    }
                }
                Layer::BatchNorm(bn) => {
                    let (g, b) = (p.next().unwrap(), p.next().unwrap());
                    if train {
                        batchnorm(&x, g, b, None)
                    } else {
                        let m: Vec<f64> = bn.running_mean.data().iter().map(|&v| v as f64).collect();
                        let v: Vec<f64> = bn.running_var.data().iter().map(|&v| v as f64).collect();
                        batchnorm(&x, g, b, Some((&m, &v)))
                    }
                }
                Layer::Reshape { extent, channels } => {
                    T64::new(vec![x.shape[0], *extent, *extent, *channels], x.data)
                }
                Layer::Flatten => {
                    let n = x.data.len() / x.shape[0];
                    T64::new(vec![x.shape[0], n], x.data)
                }
                Layer::Act(a) => match a {
                    Activation::Relu => x.map(|v| v.max(0.0)),
                    Activation::LeakyRelu => {
                        x.map(|v| if v > 0.0 { v } else { LRELU_SLOPE as f64 * v })
                    }
                    Activation::Sigmoid => x.map(sigmoid),
                    Activation::Tanh => x.map(f64::tanh),
                },
                Layer::ConcatLatent => {
                    let z = latent.expect("latent input");
                    let t = tile_spatial(z, x.shape[1], x.shape[2]);
                    concat_channels(&x, &t)
                }
            };
        }
        x
    }
}

use reference::T64;

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub cases: usize,
    pub worst_error: f64,
    pub tolerance: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.worst_error.is_finite() && self.worst_error <= self.tolerance
    }
}

impl std::fmt::Display for CheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "[{}] {:<28} cases={:<2} worst={:.3e} tol={:.0e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.cases,
            self.worst_error,
            self.tolerance
        )
    }
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Central differences of `loss` with respect to `inputs[which]`.
pub fn numeric_gradient(inputs: &[T64], which: usize, loss: &dyn Fn(&[T64]) -> f64) -> Vec<f64> {
    numeric_gradient_with_step(inputs, which, loss, FD_STEP)
}

pub fn numeric_gradient_with_step(
    inputs: &[T64],
    which: usize,
    loss: &dyn Fn(&[T64]) -> f64,
    step: f64,
) -> Vec<f64> {
    let mut work = inputs.to_vec();
    let n = work[which].data.len();
    let mut out = Vec::with_capacity(n);
    for j in 0..n {
        let orig = work[which].data[j];
        work[which].data[j] = orig + step;
        let plus = loss(&work);
        work[which].data[j] = orig - step;
        let minus = loss(&work);
        work[which].data[j] = orig;
        out.push((plus - minus) / (2.0 * step));
    }
    out
}

fn rand_tensor(rng: &mut SeededRng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    Tensor::from_fn(shape, |_| rng.uniform(lo, hi))
}

/// Values bounded away from zero so kinked activations are probed off-kink.
fn rand_off_kink(rng: &mut SeededRng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.uniform(0.05, 1.5);
        if rng.next_u32() & 1 == 0 {
            m
        } else {
            -m
        }
    })
}

fn dim(rng: &mut SeededRng, lo: usize, hi: usize) -> usize {
    lo + rng.below(hi - lo + 1)
}

/// Analytic gradients of `Σ w ⊙ op(inputs)` via the production graph.
type GraphOp = dyn Fn(&mut Graph, &[crate::autodiff::Var]) -> Result<crate::autodiff::Var>;
type RefOp = dyn Fn(&[T64]) -> T64;

/// Probe one op: the scalar is a random weighted sum of its output.
fn probe_op(
    rng: &mut SeededRng,
    inputs: Vec<Tensor>,
    graph_op: &GraphOp,
    ref_op: &RefOp,
) -> Result<f64> {
    let mut g = Graph::new();
    let vars: Vec<_> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = graph_op(&mut g, &vars)?;
    let weights = rand_tensor(rng, g.value(out).shape(), -1.0, 1.0);
    let w64 = T64::from_f32(&weights);
    let loss = g.weighted_sum(out, weights)?;
    let grads = g.backward(loss)?;
    let refs: Vec<T64> = inputs.iter().map(T64::from_f32).collect();
    let scalar = |xs: &[T64]| -> f64 {
        let y = ref_op(xs);
        y.data.iter().zip(&w64.data).map(|(a, b)| a * b).sum()
    };
    let mut worst = 0.0f64;
    for (i, v) in vars.iter().enumerate() {
        let analytic: Vec<f64> = match grads.get(*v) {
            Some(t) => t.data().iter().map(|&x| x as f64).collect(),
            None => vec![0.0; inputs[i].len()],
        };
        let numeric = numeric_gradient(&refs, i, &scalar);
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

/// Probe a scalar-valued op (a loss) directly.
fn probe_loss(
    pred: Tensor,
    graph_loss: &dyn Fn(&mut Graph, crate::autodiff::Var) -> Result<crate::autodiff::Var>,
    ref_loss: &dyn Fn(&T64) -> f64,
) -> Result<f64> {
    let mut g = Graph::new();
    let v = g.param(pred.clone());
    let loss = graph_loss(&mut g, v)?;
    let grads = g.backward(loss)?;
    let analytic: Vec<f64> = grads.get(v).unwrap().data().iter().map(|&x| x as f64).collect();
    let numeric = numeric_gradient(&[T64::from_f32(&pred)], 0, &|xs| ref_loss(&xs[0]));
    Ok(relative_error(&analytic, &numeric))
}

fn report(name: &str, errors: Vec<f64>, tolerance: f64) -> CheckReport {
    CheckReport {
        name: name.to_string(),
        cases: errors.len(),
        worst_error: errors.iter().cloned().fold(0.0, f64::max),
        tolerance,
    }
}

fn cases(n: usize, mut case: impl FnMut(usize) -> Result<f64>) -> Result<Vec<f64>> {
    (0..n).map(&mut case).collect()
}

/// Per-operation finite-difference checks.
pub fn op_suite(seed: u64) -> Result<Vec<CheckReport>> {
    let mut rng = SeededRng::new(seed);
    let rng = &mut rng;
    let mut out = Vec::new();
    let n = CASES_PER_OP;

    let errs = cases(n, |_| {
        let (b, i, o) = (dim(rng, 1, 4), dim(rng, 1, 6), dim(rng, 1, 5));
        let inputs = vec![
            rand_tensor(rng, &[b, i], -1.0, 1.0),
            rand_tensor(rng, &[i, o], -1.0, 1.0),
            rand_tensor(rng, &[o], -1.0, 1.0),
        ];
        probe_op(rng, inputs, &|g, v| g.dense(v[0], v[1], v[2]), &|x| {
            reference::dense(&x[0], &x[1], &x[2])
        })
    })?;
    out.push(report("dense", errs, OP_TOLERANCE));

    let errs = cases(n, |_| {
        let (b, h, w) = (dim(rng, 1, 2), dim(rng, 1, 7), dim(rng, 1, 7));
        let (c, f) = (dim(rng, 1, 3), dim(rng, 1, 3));
        let inputs = vec![
            rand_tensor(rng, &[b, h, w, c], -1.0, 1.0),
            rand_tensor(rng, &[5, 5, c, f], -1.0, 1.0),
        ];
        probe_op(rng, inputs, &|g, v| g.conv2d(v[0], v[1], 2), &|x| {
            reference::conv2d(&x[0], &x[1], 2)
        })
    })?;
    out.push(report("conv2d", errs, OP_TOLERANCE));

    let errs = cases(n, |_| {
        let (b, h, w) = (dim(rng, 1, 2), dim(rng, 1, 4), dim(rng, 1, 4));
        let (c, f) = (dim(rng, 1, 3), dim(rng, 1, 3));
        let inputs = vec![
            rand_tensor(rng, &[b, h, w, c], -1.0, 1.0),
            rand_tensor(rng, &[5, 5, f, c], -1.0, 1.0),
        ];
        probe_op(rng, inputs, &|g, v| g.conv2d_transposed(v[0], v[1], 2), &|x| {
            reference::conv2d_transposed(&x[0], &x[1], 2)
        })
    })?;
    out.push(report("conv2d_transposed", errs, OP_TOLERANCE));

    let errs = cases(n, |_| {
        let (b, h, c) = (dim(rng, 1, 3), dim(rng, 1, 4), dim(rng, 1, 4));
        let inputs = vec![
            rand_tensor(rng, &[b, h, h, c], -1.0, 1.0),
            rand_tensor(rng, &[c], -1.0, 1.0),
        ];
        probe_op(rng, inputs, &|g, v| g.add_channel_bias(v[0], v[1]), &|x| {
            reference::add_channel_bias(&x[0], &x[1])
        })
    })?;
    out.push(report("add_channel_bias", errs, OP_TOLERANCE));

    for train in [true, false] {
        let errs = cases(n, |_| {
            // at least 8 rows per channel: with 2 rows the input gradient of a
            // train-mode norm cancels to ~eps and only roundoff is left to compare
            let (b, h, c) = (dim(rng, 2, 4), dim(rng, 2, 3), dim(rng, 1, 4));
            let mean: Vec<f32> = (0..c).map(|_| rng.uniform(-0.5, 0.5)).collect();
            let var: Vec<f32> = (0..c).map(|_| rng.uniform(0.5, 2.0)).collect();
            let inputs = vec![
                rand_tensor(rng, &[b, h, h, c], -2.0, 2.0),
                rand_tensor(rng, &[c], 0.5, 1.5),
                rand_tensor(rng, &[c], -0.5, 0.5),
            ];
            let mode = if train { NormMode::Train } else { NormMode::Infer };
            let (m2, v2) = (mean.clone(), var.clone());
            let m64: Vec<f64> = mean.iter().map(|&v| v as f64).collect();
            let v64: Vec<f64> = var.iter().map(|&v| v as f64).collect();
            probe_op(
                rng,
                inputs,
                &move |g, v| Ok(g.batchnorm(v[0], v[1], v[2], mode, (&m2, &v2))?.0),
                &move |x| {
                    let running = (!train).then_some((m64.as_slice(), v64.as_slice()));
                    reference::batchnorm(&x[0], &x[1], &x[2], running)
                },
            )
        })?;
        let name = if train { "batchnorm(train)" } else { "batchnorm(infer)" };
        out.push(report(name, errs, OP_TOLERANCE));
    }

    type Act = (&'static str, fn(&mut Graph, crate::autodiff::Var) -> crate::autodiff::Var, fn(f64) -> f64);
    let acts: [Act; 4] = [
        ("relu", |g, v| g.relu(v), |v| v.max(0.0)),
        (
            "lrelu",
            |g, v| g.leaky_relu(v, crate::models::LRELU_SLOPE),
            |v| if v > 0.0 { v } else { crate::models::LRELU_SLOPE as f64 * v },
        ),
        ("sigmoid", |g, v| g.sigmoid(v), reference::sigmoid),
        ("tanh", |g, v| g.tanh(v), f64::tanh),
    ];
    for (name, gop, rop) in acts {
        let errs = cases(n, |_| {
            let shape = [dim(rng, 1, 3), dim(rng, 1, 6)];
            let inputs = vec![rand_off_kink(rng, &shape)];
            probe_op(rng, inputs, &move |g, v| Ok(gop(g, v[0])), &move |x| x[0].map(rop))
        })?;
        out.push(report(name, errs, OP_TOLERANCE));
    }

    let errs = cases(n, |_| {
        let shape = [dim(rng, 1, 3), dim(rng, 1, 5), dim(rng, 1, 5), dim(rng, 1, 3)];
        let target = rand_tensor(rng, &shape, 0.0, 1.0);
        let pred = rand_tensor(rng, &shape, 0.05, 0.95);
        let t64 = T64::from_f32(&target);
        probe_loss(
            pred,
            &|g, v| g.bce(v, target.clone()),
            &|p| reference::bce(&t64, p),
        )
    })?;
    out.push(report("bce", errs, OP_TOLERANCE));

    let errs = cases(n, |_| {
        let shape = [dim(rng, 1, 4), dim(rng, 1, 8)];
        let target = rand_tensor(rng, &shape, -1.0, 1.0);
        let pred = rand_tensor(rng, &shape, -1.0, 1.0);
        let t64 = T64::from_f32(&target);
        probe_loss(
            pred,
            &|g, v| g.squared_error(v, target.clone()),
            &|p| reference::squared_error(&t64, p),
        )
    })?;
    out.push(report("squared_error", errs, OP_TOLERANCE));

    let errs = cases(n, |_| {
        let (b, h, w) = (dim(rng, 1, 2), dim(rng, 1, 3), dim(rng, 1, 3));
        let (ca, cb) = (dim(rng, 1, 3), dim(rng, 1, 3));
        let inputs = vec![
            rand_tensor(rng, &[b, h, w, ca], -1.0, 1.0),
            rand_tensor(rng, &[b, h, w, cb], -1.0, 1.0),
        ];
        probe_op(rng, inputs, &|g, v| g.concat_channels(v[0], v[1]), &|x| {
            reference::concat_channels(&x[0], &x[1])
        })
    })?;
    out.push(report("concat_channels", errs, OP_TOLERANCE));

    let errs = cases(n, |_| {
        let (b, l, h, w) = (dim(rng, 1, 3), dim(rng, 1, 4), dim(rng, 1, 3), dim(rng, 1, 3));
        let inputs = vec![rand_tensor(rng, &[b, l], -1.0, 1.0)];
        probe_op(rng, inputs, &move |g, v| g.tile_spatial(v[0], h, w), &move |x| {
            reference::tile_spatial(&x[0], h, w)
        })
    })?;
    out.push(report("tile_spatial", errs, OP_TOLERANCE));

    let errs = cases(n, |_| {
        let shape = [dim(rng, 1, 3), dim(rng, 1, 4)];
        let factor = rng.uniform(-2.0, 2.0);
        let inputs = vec![
            rand_tensor(rng, &shape, -1.0, 1.0),
            rand_tensor(rng, &shape, -1.0, 1.0),
        ];
        probe_op(
            rng,
            inputs,
            &move |g, v| {
                let s = g.add(v[0], v[1])?;
                Ok(g.scale(s, factor))
            },
            &move |x| {
                let data = x[0]
                    .data
                    .iter()
                    .zip(&x[1].data)
                    .map(|(a, b)| (a + b) * factor as f64)
                    .collect();
                T64::new(x[0].shape.clone(), data)
            },
        )
    })?;
    out.push(report("add/scale", errs, OP_TOLERANCE));

    Ok(out)
}

/// AEGAN reconstruction loss on a micro network: `BCE(x, G(IG(x)))` with
/// `x = G(z)`, G frozen in inference mode, IG in training mode. Returns the
/// relative error of `∂loss/∂θ_ig`.
pub fn aegan_network_check(seed: u64) -> Result<f64> {
    let cfg = ArchitectureConfig::new(4, 8, 3, 2);
    let mut rng = SeededRng::new(seed);
    let mut gen = build_generator(&cfg, &mut rng)?;
    // Larger weights so the micro generator produces non-trivial images.
    for p in gen.params_mut() {
        for v in p.data_mut() {
            *v *= 8.0;
        }
    }
    for layer in &mut gen.layers {
        if let Layer::BatchNorm(bn) = layer {
            bn.tracked = true;
        }
    }
    let mut ig = build_inverse_generator(&cfg, &mut rng)?;
    for p in ig.params_mut() {
        for v in p.data_mut() {
            *v *= 8.0;
        }
    }
    let z = crate::models::sample_prior(&mut rng, 3, cfg.latent_dim);
    let x = gen.infer(&z)?;

    let mut g = Graph::new();
    let ig_bound = ig.bind(&mut g, true);
    let g_bound = gen.bind(&mut g, false);
    let xv = g.constant(x.clone());
    let (zp, _) = ig.forward(&mut g, &ig_bound, xv, None, NormMode::Train)?;
    let (xp, _) = gen.forward(&mut g, &g_bound, zp, None, NormMode::Infer)?;
    let loss = g.bce(xp, x.clone())?;
    let mut grads = g.backward(loss)?;
    let analytic: Vec<f64> = ig
        .collect_gradients(&ig_bound, &mut grads)
        .into_iter()
        .zip(ig.params())
        .flat_map(|(g, p)| match g {
            Some(t) => t.data().iter().map(|&v| v as f64).collect::<Vec<_>>(),
            None => vec![0.0; p.len()],
        })
        .collect();

    let g_params: Vec<T64> = gen.params().into_iter().map(T64::from_f32).collect();
    let ig_params: Vec<T64> = ig.params().into_iter().map(T64::from_f32).collect();
    let x64 = T64::from_f32(&x);
    let loss_of = |ps: &[T64]| -> f64 {
        let zp = reference::network(&ig, ps, &x64, None, true);
        let xp = reference::network(&gen, &g_params, &zp, None, false);
        reference::bce(&x64, &xp)
    };
    let mut numeric = Vec::with_capacity(analytic.len());
    for i in 0..ig_params.len() {
        let nn = numeric_gradient_with_step(&ig_params, i, &loss_of, NETWORK_FD_STEP);
        numeric.extend(nn);
    }
    Ok(relative_error(&analytic, &numeric))
}

/// `⟨conv2d(a, K), b⟩ == ⟨a, conv2d_transposed(b, K)⟩` on random cases. The
/// error is normalized by `‖conv2d(a)‖·‖b‖`.
pub fn adjoint_suite(n: usize, seed: u64) -> Result<CheckReport> {
    let mut rng = SeededRng::new(seed);
    let mut errs = Vec::with_capacity(n);
    for _ in 0..n {
        let (b, h, w) = (dim(&mut rng, 1, 3), dim(&mut rng, 1, 6), dim(&mut rng, 1, 6));
        let (c, f) = (dim(&mut rng, 1, 4), dim(&mut rng, 1, 4));
        let a = rand_tensor(&mut rng, &[b, 2 * h, 2 * w, f], -1.0, 1.0);
        let bt = rand_tensor(&mut rng, &[b, h, w, c], -1.0, 1.0);
        let k = rand_tensor(&mut rng, &[5, 5, f, c], -1.0, 1.0);
        errs.push(adjoint_gap(&a, &bt, &k)?);
    }
    Ok(report("conv adjoint identity", errs, ADJOINT_TOLERANCE))
}

pub fn adjoint_gap(a: &Tensor, b: &Tensor, k: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let (av, bv, kv) = (
        g.constant(a.clone()),
        g.constant(b.clone()),
        g.constant(k.clone()),
    );
    let ca = g.conv2d(av, kv, 2)?;
    let tb = g.conv2d_transposed(bv, kv, 2)?;
    let lhs = g.value(ca).dot(b)?;
    let rhs = a.dot(g.value(tb))?;
    let scale = g.value(ca).dot(g.value(ca))?.sqrt() * b.dot(b)?.sqrt();
    Ok((lhs - rhs).abs() / scale.max(1e-12))
}

/// Everything `gradcheck` runs.
pub fn full_suite(seed: u64) -> Result<Vec<CheckReport>> {
    let mut reports = op_suite(seed)?;
    let net_errs = (0..CASES_PER_OP as u64)
        .map(|i| aegan_network_check(seed.wrapping_add(100 + i)))
        .collect::<Result<Vec<_>>>()?;
    reports.push(report("aegan loss wrt θ_ig (micro)", net_errs, NETWORK_TOLERANCE));
    reports.push(adjoint_suite(20, seed.wrapping_add(7))?);
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv2d_matches_nested_loops_exactly_on_integer_data() {
        let mut rng = SeededRng::new(21);
        let x = Tensor::from_fn(&[1, 6, 6, 1], |_| rng.below(7) as f32 - 3.0);
        let k = Tensor::from_fn(&[5, 5, 1, 2], |_| rng.below(5) as f32 - 2.0);
        let mut g = Graph::new();
        let (xv, kv) = (g.constant(x.clone()), g.constant(k.clone()));
        let y = g.conv2d(xv, kv, 2).unwrap();
        let oracle = reference::conv2d(&T64::from_f32(&x), &T64::from_f32(&k), 2);
        assert_eq!(g.value(y).shape(), oracle.shape.as_slice());
        for (a, b) in g.value(y).data().iter().zip(&oracle.data) {
            assert_eq!(*a as f64, *b);
        }
    }

    #[test]
    fn transposed_conv_matches_scatter_oracle() {
        let mut rng = SeededRng::new(22);
        let x = Tensor::from_fn(&[2, 3, 2, 2], |_| rng.below(7) as f32 - 3.0);
        let k = Tensor::from_fn(&[5, 5, 3, 2], |_| rng.below(5) as f32 - 2.0);
        let mut g = Graph::new();
        let (xv, kv) = (g.constant(x.clone()), g.constant(k.clone()));
        let y = g.conv2d_transposed(xv, kv, 2).unwrap();
        let oracle = reference::conv2d_transposed(&T64::from_f32(&x), &T64::from_f32(&k), 2);
        assert_eq!(g.value(y).shape(), &[2, 6, 4, 3]);
        for (a, b) in g.value(y).data().iter().zip(&oracle.data) {
            assert_eq!(*a as f64, *b);
        }
    }

    #[test]
    fn dense_weight_gradient_matches_finite_differences() {
        // sum(dense(x, W, b)) on a 3×4 weight
        let mut rng = SeededRng::new(23);
        let x = rand_tensor(&mut rng, &[2, 3], -1.0, 1.0);
        let w = rand_tensor(&mut rng, &[3, 4], -1.0, 1.0);
        let b = rand_tensor(&mut rng, &[4], -1.0, 1.0);
        let mut g = Graph::new();
        let (xv, wv, bv) = (g.param(x.clone()), g.param(w.clone()), g.param(b.clone()));
        let y = g.dense(xv, wv, bv).unwrap();
        let s = g.weighted_sum(y, Tensor::ones(&[2, 4])).unwrap();
        let grads = g.backward(s).unwrap();
        let analytic: Vec<f64> = grads.get(wv).unwrap().data().iter().map(|&v| v as f64).collect();
        let refs = [T64::from_f32(&x), T64::from_f32(&w), T64::from_f32(&b)];
        let numeric = numeric_gradient(&refs, 1, &|xs| {
            reference::dense(&xs[0], &xs[1], &xs[2]).data.iter().sum()
        });
        assert!(relative_error(&analytic, &numeric) < 1e-4);
    }

    #[test]
    fn every_op_passes_its_check() {
        for r in op_suite(1).unwrap() {
            assert!(r.passed(), "{r}");
            assert!(r.cases >= CASES_PER_OP);
        }
    }

    #[test]
    fn micro_network_gradient_matches() {
        let err = aegan_network_check(3).unwrap();
        assert!(err < NETWORK_TOLERANCE, "{err}");
    }

    #[test]
    fn adjoint_identity_holds() {
        let r = adjoint_suite(20, 4).unwrap();
        assert!(r.passed(), "{r}");
    }

    #[test]
    fn relative_error_is_scale_free() {
        assert_eq!(relative_error(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        let e1 = relative_error(&[1.0, 2.0], &[1.1, 2.0]);
        let e2 = relative_error(&[10.0, 20.0], &[11.0, 20.0]);
        assert!((e1 - e2).abs() < 1e-12);
    }
}
