//! The four networks: generator, discriminator, inverse generator and the
//! pair discriminator used by the BiGAN baseline.
//!
//! All stages use 5×5 kernels with stride 2 and "same" padding, so every
//! convolution halves and every transposed convolution doubles the spatial
//! extent. For `image_size ≥ 16` there are always four stages and the
//! generator's dense layer feeds a `(image_size/16, image_size/16, 8f)` block.
//! Micro configurations (`image_size` 4 or 8, used for gradient checks) start
//! from a 1×1 block and drop the widest stages.

use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{BatchStats, Gradients, Graph, NormMode, Var};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

pub const KERNEL: usize = 5;
pub const STRIDE: usize = 2;
pub const LRELU_SLOPE: f32 = 0.2;
pub const BN_MOMENTUM: f32 = 0.9;
pub const INIT_STD: f32 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchitectureConfig {
    pub latent_dim: usize,
    pub image_size: usize,
    pub channels: usize,
    pub base_width: usize,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        ArchitectureConfig {
            latent_dim: 100,
            image_size: 64,
            channels: 3,
            base_width: 64,
        }
    }
}

impl ArchitectureConfig {
    pub fn new(latent_dim: usize, image_size: usize, channels: usize, base_width: usize) -> Self {
        ArchitectureConfig {
            latent_dim,
            image_size,
            channels,
            base_width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.channels == 0 || self.base_width == 0 {
            return Err(Error::validation(format!(
                "latent_dim, channels and base_width must be positive: {self:?}"
            )));
        }
        if !self.image_size.is_power_of_two() || self.image_size < 8 {
            return Err(Error::validation(format!(
                "image_size must be a power of two ≥ 8 (≥ 64 for the full four-stage ladder), got {}",
                self.image_size
            )));
        }
        Ok(())
    }

    /// Number of stride-2 stages in G, D and IG.
    pub fn stages(&self) -> usize {
        (self.image_size / self.base_extent()).trailing_zeros() as usize
    }

    /// Spatial extent of the generator's first feature block: `image_size / 16`
    /// from 64 pixels up, otherwise 4 with fewer stages.
    pub fn base_extent(&self) -> usize {
        if self.image_size >= 64 {
            self.image_size / 16
        } else {
            4
        }
    }

    /// Feature widths of the down-sampling ladder, narrowest first.
    pub fn ladder(&self) -> Vec<usize> {
        let f = self.base_width;
        [f, 2 * f, 4 * f, 8 * f][..self.stages()].to_vec()
    }

    /// Units emitted by the generator's dense layer.
    pub fn dense_units(&self) -> usize {
        let s = self.base_extent();
        s * s * self.ladder().last().copied().unwrap_or(self.base_width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetKind {
    Generator,
    Discriminator,
    InverseGenerator,
    BiganDiscriminator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    LeakyRelu,
    Sigmoid,
    Tanh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    /// Set once running statistics have absorbed at least one batch.
    pub tracked: bool,
}

impl BatchNorm {
    fn new(c: usize) -> Self {
        BatchNorm {
            gamma: Tensor::ones(&[c]),
            beta: Tensor::zeros(&[c]),
            running_mean: Tensor::zeros(&[c]),
            running_var: Tensor::ones(&[c]),
            tracked: false,
        }
    }

    fn absorb(&mut self, stats: &BatchStats) {
        let m = BN_MOMENTUM;
        for (r, &b) in self.running_mean.data_mut().iter_mut().zip(&stats.mean) {
            *r = m * *r + (1.0 - m) * b;
        }
        for (r, &b) in self.running_var.data_mut().iter_mut().zip(&stats.var) {
            *r = m * *r + (1.0 - m) * b;
        }
        self.tracked = true;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense { weight: Tensor, bias: Tensor },
    Conv { kernel: Tensor, bias: Option<Tensor> },
    Deconv { kernel: Tensor, bias: Option<Tensor> },
    BatchNorm(BatchNorm),
    /// `(B, s·s·c)` → `(B, s, s, c)`.
    Reshape { extent: usize, channels: usize },
    Flatten,
    Act(Activation),
    /// Tile the conditioning latent over space and append it as channels.
    ConcatLatent,
}

impl Layer {
    fn name(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "dense",
            Layer::Conv { .. } => "conv",
            Layer::Deconv { .. } => "deconv",
            Layer::BatchNorm(_) => "bn",
            Layer::Reshape { .. } => "reshape",
            Layer::Flatten => "flatten",
            Layer::Act(_) => "act",
            Layer::ConcatLatent => "concat",
        }
    }
}

/// Leaf variables for one network's parameters on a particular graph.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
    trainable: bool,
}

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }
}

static UNTRACKED_WARNED: AtomicBool = AtomicBool::new(false);

/// An ordered stack of layers with its parameters and batch-norm buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub kind: NetKind,
    pub config: ArchitectureConfig,
    pub layers: Vec<Layer>,
}

fn normal_tensor(rng: &mut SeededRng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| INIT_STD * rng.normal())
}

pub fn build_generator(cfg: &ArchitectureConfig, rng: &mut SeededRng) -> Result<Network> {
    cfg.validate()?;
    let mut widths = cfg.ladder();
    widths.reverse();
    let extent = cfg.base_extent();
    let mut layers = vec![
        Layer::Dense {
            weight: normal_tensor(rng, &[cfg.latent_dim, cfg.dense_units()]),
            bias: Tensor::zeros(&[cfg.dense_units()]),
        },
        Layer::Reshape {
            extent,
            channels: widths[0],
        },
        Layer::BatchNorm(BatchNorm::new(widths[0])),
        Layer::Act(Activation::Relu),
    ];
    for i in 0..widths.len() {
        let input = widths[i];
        let last = i + 1 == widths.len();
        let output = if last { cfg.channels } else { widths[i + 1] };
        layers.push(Layer::Deconv {
            kernel: normal_tensor(rng, &[KERNEL, KERNEL, output, input]),
            bias: last.then(|| Tensor::zeros(&[output])),
        });
        if last {
            layers.push(Layer::Act(Activation::Sigmoid));
        } else {
            layers.push(Layer::BatchNorm(BatchNorm::new(output)));
            layers.push(Layer::Act(Activation::Relu));
        }
    }
    Ok(Network {
        kind: NetKind::Generator,
        config: *cfg,
        layers,
    })
}

fn conv_ladder(
    cfg: &ArchitectureConfig,
    rng: &mut SeededRng,
    act: Activation,
    head_units: usize,
    head_act: Activation,
    kind: NetKind,
) -> Result<Network> {
    cfg.validate()?;
    let mut layers = Vec::new();
    let mut input = cfg.channels;
    for &w in &cfg.ladder() {
        layers.push(Layer::Conv {
            kernel: normal_tensor(rng, &[KERNEL, KERNEL, input, w]),
            bias: None,
        });
        layers.push(Layer::BatchNorm(BatchNorm::new(w)));
        layers.push(Layer::Act(act));
        input = w;
    }
    let extent = cfg.image_size >> cfg.stages();
    let flat = extent * extent * input;
    layers.push(Layer::Flatten);
    layers.push(Layer::Dense {
        weight: normal_tensor(rng, &[flat, head_units]),
        bias: Tensor::zeros(&[head_units]),
    });
    layers.push(Layer::Act(head_act));
    Ok(Network {
        kind,
        config: *cfg,
        layers,
    })
}

pub fn build_discriminator(cfg: &ArchitectureConfig, rng: &mut SeededRng) -> Result<Network> {
    conv_ladder(
        cfg,
        rng,
        Activation::LeakyRelu,
        1,
        Activation::Sigmoid,
        NetKind::Discriminator,
    )
}

pub fn build_inverse_generator(cfg: &ArchitectureConfig, rng: &mut SeededRng) -> Result<Network> {
    conv_ladder(
        cfg,
        rng,
        Activation::Relu,
        cfg.latent_dim,
        Activation::Tanh,
        NetKind::InverseGenerator,
    )
}

/// Pair discriminator: three conv blocks (f, 2f, 4f), then the latent is
/// tiled and concatenated (4f + latent_dim channels), then three 8f blocks.
pub fn build_bigan_discriminator(
    cfg: &ArchitectureConfig,
    rng: &mut SeededRng,
) -> Result<Network> {
    cfg.validate()?;
    let f = cfg.base_width;
    let mut layers = Vec::new();
    let mut input = cfg.channels;
    let mut extent = cfg.image_size;
    for (i, w) in [f, 2 * f, 4 * f, 8 * f, 8 * f, 8 * f].into_iter().enumerate() {
        if i == 3 {
            layers.push(Layer::ConcatLatent);
            input += cfg.latent_dim;
        }
        layers.push(Layer::Conv {
            kernel: normal_tensor(rng, &[KERNEL, KERNEL, input, w]),
            bias: None,
        });
        layers.push(Layer::BatchNorm(BatchNorm::new(w)));
        layers.push(Layer::Act(Activation::LeakyRelu));
        input = w;
        extent = extent.div_ceil(STRIDE);
    }
    layers.push(Layer::Flatten);
    layers.push(Layer::Dense {
        weight: normal_tensor(rng, &[extent * extent * input, 1]),
        bias: Tensor::zeros(&[1]),
    });
    layers.push(Layer::Act(Activation::Sigmoid));
    Ok(Network {
        kind: NetKind::BiganDiscriminator,
        config: *cfg,
        layers,
    })
}

pub fn build(kind: NetKind, cfg: &ArchitectureConfig, rng: &mut SeededRng) -> Result<Network> {
    match kind {
        NetKind::Generator => build_generator(cfg, rng),
        NetKind::Discriminator => build_discriminator(cfg, rng),
        NetKind::InverseGenerator => build_inverse_generator(cfg, rng),
        NetKind::BiganDiscriminator => build_bigan_discriminator(cfg, rng),
    }
}

/// Latent prior: i.i.d. uniform on (−1, 1).
pub fn sample_prior(rng: &mut SeededRng, batch: usize, latent_dim: usize) -> Tensor {
    Tensor::from_fn(&[batch, latent_dim], |_| rng.symmetric_unit())
}

impl Network {
    pub fn expect_kind(&self, kind: NetKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::validation(format!(
                "expected a {kind:?} network, got {:?}",
                self.kind
            )));
        }
        Ok(())
    }

    /// Trainable parameters in a fixed order.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Dense { weight, bias } => {
                    out.push(weight);
                    out.push(bias);
                }
                Layer::Conv { kernel, bias } | Layer::Deconv { kernel, bias } => {
                    out.push(kernel);
                    if let Some(b) = bias {
                        out.push(b);
                    }
                }
                Layer::BatchNorm(bn) => {
                    out.push(&bn.gamma);
                    out.push(&bn.beta);
                }
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Dense { weight, bias } => {
                    out.push(weight);
                    out.push(bias);
                }
                Layer::Conv { kernel, bias } | Layer::Deconv { kernel, bias } => {
                    out.push(kernel);
                    if let Some(b) = bias {
                        out.push(b);
                    }
                }
                Layer::BatchNorm(bn) => {
                    out.push(&mut bn.gamma);
                    out.push(&mut bn.beta);
                }
                _ => {}
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Every persisted tensor (parameters and batch-norm buffers) with a
    /// stable name.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let p = format!("{i}.{}", layer.name());
            match layer {
                Layer::Dense { weight, bias } => {
                    out.push((format!("{p}.weight"), weight.clone()));
                    out.push((format!("{p}.bias"), bias.clone()));
                }
                Layer::Conv { kernel, bias } | Layer::Deconv { kernel, bias } => {
                    out.push((format!("{p}.kernel"), kernel.clone()));
                    if let Some(b) = bias {
                        out.push((format!("{p}.bias"), b.clone()));
                    }
                }
                Layer::BatchNorm(bn) => {
                    out.push((format!("{p}.gamma"), bn.gamma.clone()));
                    out.push((format!("{p}.beta"), bn.beta.clone()));
                    out.push((format!("{p}.running_mean"), bn.running_mean.clone()));
                    out.push((format!("{p}.running_var"), bn.running_var.clone()));
                    out.push((
                        format!("{p}.tracked"),
                        Tensor::scalar(if bn.tracked { 1.0 } else { 0.0 }),
                    ));
                }
                _ => {}
            }
        }
        out
    }

    /// Overwrite every persisted tensor from `(name, tensor)` pairs produced by
    /// [`Network::named_tensors`] on an identically built network.
    pub fn load_named_tensors(&mut self, tensors: &[(String, Tensor)]) -> Result<()> {
        let expected = self.named_tensors();
        if expected.len() != tensors.len() {
            return Err(Error::validation(format!(
                "{:?} expects {} tensors, got {}",
                self.kind,
                expected.len(),
                tensors.len()
            )));
        }
        for ((en, et), (n, t)) in expected.iter().zip(tensors) {
            if en != n || et.shape() != t.shape() {
                return Err(Error::validation(format!(
                    "tensor mismatch: expected {en} {:?}, found {n} {:?}",
                    et.shape(),
                    t.shape()
                )));
            }
        }
        let mut it = tensors.iter().map(|(_, t)| t.clone());
        for layer in &mut self.layers {
            match layer {
                Layer::Dense { weight, bias } => {
                    *weight = it.next().unwrap();
                    *bias = it.next().unwrap();
                }
                Layer::Conv { kernel, bias } | Layer::Deconv { kernel, bias } => {
                    *kernel = it.next().unwrap();
                    if let Some(b) = bias {
                        *b = it.next().unwrap();
                    }
                }
                Layer::BatchNorm(bn) => {
                    bn.gamma = it.next().unwrap();
                    bn.beta = it.next().unwrap();
                    bn.running_mean = it.next().unwrap();
                    bn.running_var = it.next().unwrap();
                    bn.tracked = it.next().unwrap().item() != 0.0;
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// SHA-256 over the names, shapes and little-endian bytes of every
    /// persisted tensor.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for (name, t) in self.named_tensors() {
            h.update((name.len() as u32).to_le_bytes());
            h.update(name.as_bytes());
            h.update((t.ndim() as u32).to_le_bytes());
            for &d in t.shape() {
                h.update((d as u32).to_le_bytes());
            }
            h.update(t.to_le_bytes());
        }
        h.finalize().into()
    }

    pub fn fingerprint_hex(&self) -> String {
        hex_string(&self.fingerprint())
    }

    /// Count of layers that carry weights (dense, conv, deconv).
    pub fn weight_layer_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, Layer::Dense { .. } | Layer::Conv { .. } | Layer::Deconv { .. }))
            .count()
    }

    /// Put every parameter on `g` as a trainable or frozen leaf.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        let vars = self
            .params()
            .into_iter()
            .map(|p| {
                if trainable {
                    g.param(p.clone())
                } else {
                    g.constant(p.clone())
                }
            })
            .collect();
        Bound { vars, trainable }
    }

    /// Gradient for each parameter, `None` when frozen or disconnected.
    pub fn collect_gradients(&self, bound: &Bound, grads: &mut Gradients) -> Vec<Option<Tensor>> {
        bound.vars.iter().map(|&v| grads.take(v)).collect()
    }

    /// Forward pass on `g`. Train-mode batch statistics are returned, not
    /// absorbed; see [`Network::run`].
    pub fn forward(
        &self,
        g: &mut Graph,
        bound: &Bound,
        input: Var,
        latent: Option<Var>,
        mode: NormMode,
    ) -> Result<(Var, Vec<BatchStats>)> {
        self.check_input(g.value(input).shape())?;
        let mut stats = Vec::new();
        let mut x = input;
        let mut p = bound.vars.iter().copied();
        let mut next = || p.next().expect("bound parameters out of sync with layers");
        for layer in &self.layers {
            x = match layer {
                Layer::Dense { .. } => {
                    let (w, b) = (next(), next());
                    g.dense(x, w, b)?
                }
                Layer::Conv { bias, .. } => {
                    let k = next();
                    let y = g.conv2d(x, k, STRIDE)?;
                    match bias {
                        Some(_) => g.add_channel_bias(y, next())?,
                        None => y,
                    }
                }
                Layer::Deconv { bias, .. } => {
                    let k = next();
                    let y = g.conv2d_transposed(x, k, STRIDE)?;
                    match bias {
                        Some(_) => g.add_channel_bias(y, next())?,
                        None => y,
                    }
                }
                Layer::BatchNorm(bn) => {
                    let (gamma, beta) = (next(), next());
                    if mode == NormMode::Infer
                        && !bn.tracked
                        && !UNTRACKED_WARNED.swap(true, Ordering::Relaxed)
                    {
                        log::warn!(
                            "{:?}: batch norm in inference mode before any training step; \
                             using initial statistics (mean 0, var 1)",
                            self.kind
                        );
                    }
                    let (y, s) = g.batchnorm(
                        x,
                        gamma,
                        beta,
                        mode,
                        (bn.running_mean.data(), bn.running_var.data()),
                    )?;
                    if let Some(s) = s {
                        stats.push(s);
                    }
                    y
                }
                Layer::Reshape { extent, channels } => {
                    let b = g.value(x).batch();
                    g.reshape(x, &[b, *extent, *extent, *channels])?
                }
                Layer::Flatten => {
                    let b = g.value(x).batch();
                    let n = g.value(x).len() / b;
                    g.reshape(x, &[b, n])?
                }
                Layer::Act(a) => match a {
                    Activation::Relu => g.relu(x),
                    Activation::LeakyRelu => g.leaky_relu(x, LRELU_SLOPE),
                    Activation::Sigmoid => g.sigmoid(x),
                    Activation::Tanh => g.tanh(x),
                },
                Layer::ConcatLatent => {
                    let z = latent.ok_or_else(|| {
                        Error::validation("pair discriminator needs a latent input")
                    })?;
                    let s = g.value(x).shape().to_vec();
                    let tiled = g.tile_spatial(z, s[1], s[2])?;
                    g.concat_channels(x, tiled)?
                }
            };
        }
        Ok((x, stats))
    }

    /// Forward pass that absorbs train-mode batch statistics into the running
    /// averages.
    pub fn run(
        &mut self,
        g: &mut Graph,
        bound: &Bound,
        input: Var,
        latent: Option<Var>,
        mode: NormMode,
    ) -> Result<Var> {
        let (y, stats) = self.forward(g, bound, input, latent, mode)?;
        self.absorb(&stats);
        Ok(y)
    }

    pub fn absorb(&mut self, stats: &[BatchStats]) {
        let mut it = stats.iter();
        for layer in &mut self.layers {
            if let Layer::BatchNorm(bn) = layer {
                match it.next() {
                    Some(s) => bn.absorb(s),
                    None => return,
                }
            }
        }
    }

    /// Inference-mode evaluation without building gradients.
    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        self.infer_with(input, None)
    }

    pub fn infer_with(&self, input: &Tensor, latent: Option<&Tensor>) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let x = g.constant(input.clone());
        let z = latent.map(|z| g.constant(z.clone()));
        let (y, _) = self.forward(&mut g, &bound, x, z, NormMode::Infer)?;
        Ok(g.value(y).clone())
    }

    /// Validate the input shape against the network kind and configuration.
    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        let c = &self.config;
        let ok = match self.kind {
            NetKind::Generator => shape.len() == 2 && shape[1] == c.latent_dim,
            _ => {
                shape.len() == 4
                    && shape[1] == c.image_size
                    && shape[2] == c.image_size
                    && shape[3] == c.channels
            }
        };
        if !ok {
            let expected = match self.kind {
                NetKind::Generator => vec![0, c.latent_dim],
                _ => vec![0, c.image_size, c.image_size, c.channels],
            };
            return Err(Error::validation(format!(
                "{:?} input shape {shape:?} does not match expected (B, ..) = {expected:?}",
                self.kind
            )));
        }
        Ok(())
    }
}

pub fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ladder_for_full_and_desk_configs() {
        let full = ArchitectureConfig::default();
        assert_eq!(full.stages(), 4);
        assert_eq!(full.base_extent(), 4);
        assert_eq!(full.dense_units(), 4 * 4 * 64 * 8);
        let desk = ArchitectureConfig::new(16, 32, 3, 16);
        assert_eq!(desk.base_extent(), 4);
        assert_eq!(desk.stages(), 3);
        assert_eq!(desk.dense_units(), 4 * 4 * 4 * 16);
        let small = ArchitectureConfig::new(100, 16, 3, 16);
        assert_eq!(small.ladder(), vec![16, 32]);
        let micro = ArchitectureConfig::new(4, 8, 3, 2);
        assert_eq!(micro.stages(), 1);
        assert_eq!(micro.ladder(), vec![2]);
        let big = ArchitectureConfig::new(100, 128, 3, 8);
        assert_eq!((big.base_extent(), big.stages()), (8, 4));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut rng = SeededRng::new(0);
        for cfg in [
            ArchitectureConfig::new(0, 64, 3, 8),
            ArchitectureConfig::new(8, 48, 3, 8),
            ArchitectureConfig::new(8, 4, 3, 8),
            ArchitectureConfig::new(8, 16, 3, 0),
        ] {
            for kind in [
                NetKind::Generator,
                NetKind::Discriminator,
                NetKind::InverseGenerator,
                NetKind::BiganDiscriminator,
            ] {
                assert!(matches!(build(kind, &cfg, &mut rng), Err(Error::Validation(_))));
            }
        }
    }

    #[test]
    fn generator_and_inverse_are_mirror_images() {
        let cfg = ArchitectureConfig::new(16, 16, 3, 4);
        let mut rng = SeededRng::new(1);
        let g = build_generator(&cfg, &mut rng).unwrap();
        let ig = build_inverse_generator(&cfg, &mut rng).unwrap();
        assert_eq!(g.weight_layer_count(), ig.weight_layer_count());
        let g_widths: Vec<usize> = g
            .layers
            .iter()
            .filter_map(|l| match l {
                Layer::Deconv { kernel, .. } => Some(kernel.shape()[3]),
                _ => None,
            })
            .collect();
        let ig_widths: Vec<usize> = ig
            .layers
            .iter()
            .filter_map(|l| match l {
                Layer::Conv { kernel, .. } => Some(kernel.shape()[3]),
                _ => None,
            })
            .rev()
            .collect();
        assert_eq!(g_widths, ig_widths);
        assert!(matches!(g.layers.last(), Some(Layer::Act(Activation::Sigmoid))));
        assert!(matches!(ig.layers.last(), Some(Layer::Act(Activation::Tanh))));
    }

    #[test]
    fn generator_rejects_wrong_latent_length() {
        let cfg = ArchitectureConfig::new(8, 16, 3, 4);
        let g = build_generator(&cfg, &mut SeededRng::new(0)).unwrap();
        assert!(g.infer(&Tensor::zeros(&[1, 9])).is_err());
    }

    #[test]
    fn named_tensor_round_trip_restores_network() {
        let cfg = ArchitectureConfig::new(8, 16, 3, 4);
        let a = build_generator(&cfg, &mut SeededRng::new(5)).unwrap();
        let mut b = build_generator(&cfg, &mut SeededRng::new(6)).unwrap();
        assert_ne!(a.fingerprint(), b.fingerprint());
        b.load_named_tensors(&a.named_tensors()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn prior_samples_are_open_interval_and_reproducible() {
        let a = sample_prior(&mut SeededRng::new(11), 8, 16);
        let b = sample_prior(&mut SeededRng::new(11), 8, 16);
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| *v > -1.0 && *v < 1.0));
    }
}
