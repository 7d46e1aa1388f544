//! Mapping images back to latent vectors of a pre-trained generator.
//!
//! The main method trains an inverse generator `IG` through the frozen
//! generator: for prior samples `z`, `x = G(z)`, `z′ = IG(x)`, `x′ = G(z′)`
//! and the loss is the mean binary cross-entropy of `x′` against `x`. Only
//! `IG` is updated; `G` runs with its stored batch-norm statistics and is
//! borrowed immutably throughout. Three baselines are provided for
//! comparison: per-image gradient descent on `z`, a direct latent regressor
//! and a jointly trained BiGAN.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{bce_value, Graph, NormMode};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::gan_training::{ensure_finite, streams, BatchSampler, LossHistory, TrainConfig};
use crate::metrics::{dhash, hash_similarity};
use crate::models::{self, sample_prior, NetKind, Network};
use crate::optim::AdamState;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Loss minimized by an encoder trained against a frozen generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderObjective {
    /// BCE between `G(IG(G(z)))` and `G(z)`.
    Reconstruction,
    /// Squared distance between `E(G(z))` and `z`.
    LatentRegression,
}

/// A trained encoder with its optimizer state and per-iteration loss.
#[derive(Debug, Clone)]
pub struct InversionTrainState {
    pub encoder: Network,
    pub optimizer: AdamState,
    pub iteration: usize,
    pub history: LossHistory,
}

fn check_generator(generator: &Network) -> Result<()> {
    generator.expect_kind(NetKind::Generator)?;
    generator.config.validate()
}

/// Trains an encoder against `generator`, which is never modified.
pub fn train_encoder(
    generator: &Network,
    objective: EncoderObjective,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<InversionTrainState> {
    check_generator(generator)?;
    cfg.validate()?;
    let arch = generator.config;
    let encoder = models::build(
        NetKind::InverseGenerator,
        &arch,
        &mut SeededRng::derive(seed, streams::INIT_A),
    )?;
    let mut state = InversionTrainState {
        optimizer: AdamState::new(cfg.optimizer, &encoder.params()),
        encoder,
        iteration: 0,
        history: LossHistory::new(&["loss"]),
    };
    let mut latents = SeededRng::derive(seed, streams::LATENTS);
    let label = match objective {
        EncoderObjective::Reconstruction => "reconstruction",
        EncoderObjective::LatentRegression => "latent regression",
    };
    while state.iteration < cfg.iterations {
        let z = sample_prior(&mut latents, cfg.batch_size, arch.latent_dim);
        let x = generator.infer(&z)?;
        let mut g = Graph::new();
        let gb = generator.bind(&mut g, false);
        let eb = state.encoder.bind(&mut g, true);
        let xv = g.constant(x.clone());
        let (z_hat, stats) = state.encoder.forward(&mut g, &eb, xv, None, NormMode::Train)?;
        let loss = match objective {
            EncoderObjective::Reconstruction => {
                let (x_hat, _) = generator.forward(&mut g, &gb, z_hat, None, NormMode::Infer)?;
                g.bce(x_hat, x)?
            }
            EncoderObjective::LatentRegression => g.squared_error(z_hat, z)?,
        };
        let value = g.value(loss).item();
        ensure_finite(value, label, state.iteration)?;
        let mut grads = g.backward(loss)?;
        let grads = state.encoder.collect_gradients(&eb, &mut grads);
        state.optimizer.step(&mut state.encoder.params_mut(), &grads)?;
        state.encoder.absorb(&stats);
        state.history.push(state.iteration, vec![value]);
        if cfg.log_every > 0 && (state.iteration + 1).is_multiple_of(cfg.log_every) {
            log::info!(
                "{label} iteration {}/{}: loss {value:.5}",
                state.iteration + 1,
                cfg.iterations
            );
        }
        state.iteration += 1;
    }
    Ok(state)
}

/// Trains the inverse generator by autoencoding through the frozen generator.
pub fn train_inverse_generator(generator: &Network, cfg: &TrainConfig, seed: u64) -> Result<InversionTrainState> {
    train_encoder(generator, EncoderObjective::Reconstruction, cfg, seed)
}

/// Trains an encoder to regress the latent of each generated image.
pub fn train_direct_regressor(generator: &Network, cfg: &TrainConfig, seed: u64) -> Result<InversionTrainState> {
    train_encoder(generator, EncoderObjective::LatentRegression, cfg, seed)
}

fn as_batch(images: &Tensor) -> Tensor {
    if images.ndim() == 3 {
        images.clone().unsqueeze_batch()
    } else {
        images.clone()
    }
}

/// `z′ = E(x)` and `x′ = G(z′)` for one image `[H, W, C]` or a batch.
pub fn reconstruct(generator: &Network, encoder: &Network, images: &Tensor) -> Result<(Tensor, Tensor)> {
    generator.expect_kind(NetKind::Generator)?;
    encoder.expect_kind(NetKind::InverseGenerator)?;
    let single = images.ndim() == 3;
    let x = as_batch(images);
    encoder.check_input(x.shape())?;
    if encoder.config.latent_dim != generator.config.latent_dim {
        return Err(Error::validation(format!(
            "encoder latent_dim {} does not match generator latent_dim {}",
            encoder.config.latent_dim, generator.config.latent_dim
        )));
    }
    let z = encoder.infer(&x)?;
    let x_hat = generator.infer(&z)?;
    if single {
        Ok((z.reshape(&[generator.config.latent_dim])?, x_hat.squeeze_batch()))
    } else {
        Ok((z, x_hat))
    }
}

/// Settings of the per-image gradient-descent baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradientInversionConfig {
    pub steps: usize,
    pub step_size: f32,
}

impl Default for GradientInversionConfig {
    fn default() -> Self {
        GradientInversionConfig {
            steps: 500,
            step_size: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientInversionResult {
    /// Lowest-loss latent visited, `[latent_dim]`, inside `[−1, 1]`.
    pub z: Tensor,
    /// Loss before each step, followed by the loss after the last step.
    pub trace: Vec<f32>,
    pub iterations: usize,
    /// Set when a non-finite gradient stopped the descent early.
    pub stopped: Option<String>,
}

impl GradientInversionResult {
    pub fn initial_loss(&self) -> f32 {
        self.trace[0]
    }

    pub fn best_loss(&self) -> f32 {
        self.trace.iter().copied().fold(f32::INFINITY, f32::min)
    }
}

fn bce_and_grad(generator: &Network, x: &Tensor, z: &Tensor) -> Result<(f32, Tensor)> {
    let mut g = Graph::new();
    let gb = generator.bind(&mut g, false);
    let zv = g.param(z.clone());
    let (x_hat, _) = generator.forward(&mut g, &gb, zv, None, NormMode::Infer)?;
    let loss = g.bce(x_hat, x.clone())?;
    let value = g.value(loss).item();
    let mut grads = g.backward(loss)?;
    let grad = grads
        .take(zv)
        .unwrap_or_else(|| Tensor::zeros(z.shape()));
    Ok((value, grad))
}

/// Descends `BCE(G(z), x)` in `z` from `init` with a fixed step, clamping
/// `z` to `[−1, 1]` after every step.
pub fn gradient_descent_invert_from(
    generator: &Network,
    image: &Tensor,
    init: &Tensor,
    cfg: &GradientInversionConfig,
) -> Result<GradientInversionResult> {
    check_generator(generator)?;
    let latent_dim = generator.config.latent_dim;
    let x = as_batch(image);
    let expected = [1, generator.config.image_size, generator.config.image_size, generator.config.channels];
    if x.shape() != expected {
        return Err(Error::validation(format!(
            "image shape {:?} does not match generator output {:?}",
            image.shape(),
            &expected[1..]
        )));
    }
    let mut z = init.clone().reshape(&[1, latent_dim])?;
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    let mut best = (f32::INFINITY, z.clone());
    let mut stopped = None;
    let mut iterations = 0;
    loop {
        let (loss, grad) = bce_and_grad(generator, &x, &z)?;
        trace.push(loss);
        if loss < best.0 {
            best = (loss, z.clone());
        }
        if iterations == cfg.steps {
            break;
        }
        if !grad.all_finite() || !loss.is_finite() {
            stopped = Some(format!("non-finite gradient at step {iterations}"));
            log::warn!("gradient inversion stopped: non-finite gradient at step {iterations}");
            break;
        }
        for (v, g) in z.data_mut().iter_mut().zip(grad.data()) {
            *v = (*v - cfg.step_size * g).clamp(-1.0, 1.0);
        }
        iterations += 1;
    }
    Ok(GradientInversionResult {
        z: best.1.reshape(&[latent_dim])?,
        trace,
        iterations,
        stopped,
    })
}

/// Gradient inversion of each image of a batch in parallel. Image `i`
/// starts from a prior sample drawn from stream `i` under `seed`.
pub fn gradient_descent_invert(
    generator: &Network,
    images: &Tensor,
    cfg: &GradientInversionConfig,
    seed: u64,
) -> Result<Vec<GradientInversionResult>> {
    check_generator(generator)?;
    let x = as_batch(images);
    (0..x.batch())
        .into_par_iter()
        .map(|i| {
            let init = sample_prior(
                &mut SeededRng::derive(seed, i as u64),
                1,
                generator.config.latent_dim,
            );
            gradient_descent_invert_from(generator, &x.batch_item(i), &init, cfg)
        })
        .collect()
}

/// Jointly trained encoder, generator and pair discriminator.
#[derive(Debug, Clone)]
pub struct BiganState {
    pub encoder: Network,
    pub generator: Network,
    pub discriminator: Network,
    pub encoder_opt: AdamState,
    pub generator_opt: AdamState,
    pub discriminator_opt: AdamState,
    pub iteration: usize,
    pub history: LossHistory,
}

impl BiganState {
    pub fn new(dataset_arch: &models::ArchitectureConfig, cfg: &TrainConfig, seed: u64) -> Result<Self> {
        let encoder = models::build(
            NetKind::InverseGenerator,
            dataset_arch,
            &mut SeededRng::derive(seed, streams::INIT_A),
        )?;
        let generator = models::build(
            NetKind::Generator,
            dataset_arch,
            &mut SeededRng::derive(seed, streams::INIT_B),
        )?;
        let discriminator = models::build(
            NetKind::BiganDiscriminator,
            dataset_arch,
            &mut SeededRng::derive(seed, streams::INIT_C),
        )?;
        Ok(BiganState {
            encoder_opt: AdamState::new(cfg.optimizer, &encoder.params()),
            generator_opt: AdamState::new(cfg.optimizer, &generator.params()),
            discriminator_opt: AdamState::new(cfg.optimizer, &discriminator.params()),
            encoder,
            generator,
            discriminator,
            iteration: 0,
            history: LossHistory::new(&["d_loss", "eg_loss"]),
        })
    }

    /// One discriminator update followed by one joint encoder/generator
    /// update. Real pairs `(x, E(x))` are labelled 1 and generated pairs
    /// `(G(z), z)` 0; the encoder and generator minimize the same BCE with
    /// the labels swapped.
    pub fn step(&mut self, real: &Tensor, z: &Tensor) -> Result<(f32, f32)> {
        let d_loss = {
            let mut g = Graph::new();
            let eb = self.encoder.bind(&mut g, false);
            let gb = self.generator.bind(&mut g, false);
            let db = self.discriminator.bind(&mut g, true);
            let (loss, stats) = self.pair_loss(&mut g, &eb, &gb, &db, real, z, false)?;
            let value = g.value(loss).item();
            ensure_finite(value, "pair discriminator loss", self.iteration)?;
            let mut grads = g.backward(loss)?;
            let grads = self.discriminator.collect_gradients(&db, &mut grads);
            self.discriminator_opt
                .step(&mut self.discriminator.params_mut(), &grads)?;
            let half = stats.discriminator.len() / 2;
            self.discriminator.absorb(&stats.discriminator[..half]);
            self.discriminator.absorb(&stats.discriminator[half..]);
            value
        };
        let eg_loss = {
            let mut g = Graph::new();
            let eb = self.encoder.bind(&mut g, true);
            let gb = self.generator.bind(&mut g, true);
            let db = self.discriminator.bind(&mut g, false);
            let (loss, stats) = self.pair_loss(&mut g, &eb, &gb, &db, real, z, true)?;
            let value = g.value(loss).item();
            ensure_finite(value, "encoder/generator loss", self.iteration)?;
            let mut grads = g.backward(loss)?;
            let e_grads = self.encoder.collect_gradients(&eb, &mut grads);
            let g_grads = self.generator.collect_gradients(&gb, &mut grads);
            self.encoder_opt.step(&mut self.encoder.params_mut(), &e_grads)?;
            self.generator_opt
                .step(&mut self.generator.params_mut(), &g_grads)?;
            self.encoder.absorb(&stats.encoder);
            self.generator.absorb(&stats.generator);
            value
        };
        Ok((d_loss, eg_loss))
    }

    #[allow(clippy::too_many_arguments)]
    fn pair_loss(
        &self,
        g: &mut Graph,
        eb: &models::Bound,
        gb: &models::Bound,
        db: &models::Bound,
        real: &Tensor,
        z: &Tensor,
        swap_labels: bool,
    ) -> Result<(crate::autodiff::Var, PairStats)> {
        let xv = g.constant(real.clone());
        let zv = g.constant(z.clone());
        let (z_hat, encoder) = self.encoder.forward(g, eb, xv, None, NormMode::Train)?;
        let (x_fake, generator) = self.generator.forward(g, gb, zv, None, NormMode::Train)?;
        let (d_real, mut discriminator) = self.discriminator.forward(g, db, xv, Some(z_hat), NormMode::Train)?;
        let (d_fake, fake_stats) = self.discriminator.forward(g, db, x_fake, Some(zv), NormMode::Train)?;
        discriminator.extend(fake_stats);
        let (real_label, fake_label) = if swap_labels { (0.0, 1.0) } else { (1.0, 0.0) };
        let lr = g.bce(d_real, Tensor::full(g.value(d_real).shape(), real_label))?;
        let lf = g.bce(d_fake, Tensor::full(g.value(d_fake).shape(), fake_label))?;
        let loss = g.add(lr, lf)?;
        Ok((
            loss,
            PairStats {
                encoder,
                generator,
                discriminator,
            },
        ))
    }
}

struct PairStats {
    encoder: Vec<crate::autodiff::BatchStats>,
    generator: Vec<crate::autodiff::BatchStats>,
    discriminator: Vec<crate::autodiff::BatchStats>,
}

/// Trains a BiGAN from scratch on `dataset`; no pre-trained generator is used.
pub fn train_bigan(
    dataset: &Dataset,
    architecture: &models::ArchitectureConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<BiganState> {
    cfg.validate()?;
    architecture.validate()?;
    if dataset.is_empty() {
        return Err(Error::validation("training dataset is empty"));
    }
    let shape = dataset.images.shape();
    if shape[1..] != [architecture.image_size, architecture.image_size, architecture.channels] {
        return Err(Error::validation(format!(
            "dataset images are {:?} but the architecture expects {}x{}x{}",
            &shape[1..],
            architecture.image_size,
            architecture.image_size,
            architecture.channels
        )));
    }
    let mut state = BiganState::new(architecture, cfg, seed)?;
    let mut sampler = BatchSampler::new(dataset.len(), SeededRng::derive(seed, streams::BATCHES));
    let mut latents = SeededRng::derive(seed, streams::LATENTS);
    while state.iteration < cfg.iterations {
        let real = dataset.gather(&sampler.next_batch(cfg.batch_size));
        let z = sample_prior(&mut latents, cfg.batch_size, architecture.latent_dim);
        let (d, eg) = state.step(&real, &z)?;
        state.history.push(state.iteration, vec![d, eg]);
        if cfg.log_every > 0 && (state.iteration + 1).is_multiple_of(cfg.log_every) {
            log::info!(
                "bigan iteration {}/{}: d_loss {d:.4} eg_loss {eg:.4}",
                state.iteration + 1,
                cfg.iterations
            );
        }
        state.iteration += 1;
    }
    Ok(state)
}

/// How generated images are mapped back to a reconstruction.
#[derive(Debug, Clone, Copy)]
pub enum Inverter<'a> {
    /// `x′ = G(E(x))` for a trained encoder.
    Encoder(&'a Network),
    /// Per-image gradient descent on `z`; the seed selects initializations.
    Gradient(GradientInversionConfig, u64),
    /// `x′ = x`; an upper-bound oracle.
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionReport {
    pub n_samples: usize,
    pub mean_similarity: f64,
    pub similarities: Vec<f64>,
}

const EVAL_CHUNK: usize = 64;

/// Generated originals and reconstructions for `n` prior samples under `seed`.
pub fn reconstruction_pairs(
    generator: &Network,
    inverter: Inverter<'_>,
    n: usize,
    seed: u64,
) -> Result<(Tensor, Tensor)> {
    check_generator(generator)?;
    if n == 0 {
        return Err(Error::validation("n_samples must be at least 1"));
    }
    let z = sample_prior(&mut SeededRng::derive(seed, streams::LATENTS), n, generator.config.latent_dim);
    let x = infer_chunked(generator, &z)?;
    let x_hat = match inverter {
        Inverter::Encoder(e) => {
            reconstruct(generator, e, &x.batch_item(0))?;
            infer_chunked(generator, &infer_chunked(e, &x)?)?
        }
        Inverter::Gradient(cfg, s) => {
            let results = gradient_descent_invert(generator, &x, &cfg, s)?;
            let zs: Vec<Tensor> = results.into_iter().map(|r| r.z.unsqueeze_batch()).collect();
            infer_chunked(generator, &Tensor::stack(&zs)?)?
        }
        Inverter::Identity => x.clone(),
    };
    Ok((x, x_hat))
}

/// Inference over a large batch in fixed-size chunks.
pub fn infer_chunked(network: &Network, input: &Tensor) -> Result<Tensor> {
    let n = input.batch();
    let mut items = Vec::with_capacity(n);
    for start in (0..n).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(n);
        let chunk = Tensor::stack(&(start..end).map(|i| input.batch_item(i)).collect::<Vec<_>>())?;
        let out = network.infer(&chunk)?;
        items.extend((0..out.batch()).map(|i| out.batch_item(i)));
    }
    Tensor::stack(&items)
}

/// Mean dHash similarity between batches of images, pairwise by index.
pub fn mean_dhash_similarity(a: &Tensor, b: &Tensor) -> Result<(f64, Vec<f64>)> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op: "mean_dhash_similarity",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let sims = (0..a.batch())
        .map(|i| Ok(hash_similarity(dhash(&a.batch_item(i))?, dhash(&b.batch_item(i))?)))
        .collect::<Result<Vec<f64>>>()?;
    Ok((sims.iter().sum::<f64>() / sims.len() as f64, sims))
}

/// Mean dHash similarity between `n` generated samples and their reconstructions.
pub fn evaluate_reconstruction(generator: &Network, inverter: Inverter<'_>, n: usize, seed: u64) -> Result<ReconstructionReport> {
    let (x, x_hat) = reconstruction_pairs(generator, inverter, n, seed)?;
    let (mean_similarity, similarities) = mean_dhash_similarity(&x, &x_hat)?;
    Ok(ReconstructionReport {
        n_samples: n,
        mean_similarity,
        similarities,
    })
}

/// Mean BCE of `G(z)` against `x` per image, for reporting gradient inversion.
pub fn reconstruction_bce(generator: &Network, images: &Tensor, z: &Tensor) -> Result<Vec<f32>> {
    let x_hat = generator.infer(z)?;
    images.expect_same_shape(&x_hat, "reconstruction_bce")?;
    Ok((0..images.batch())
        .map(|i| bce_value(images.batch_item(i).data(), x_hat.batch_item(i).data()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gan_training::smoothed;
    use crate::models::{build_generator, ArchitectureConfig};

    fn micro_generator(seed: u64) -> Network {
        let cfg = ArchitectureConfig::new(8, 16, 3, 4);
        let mut g = build_generator(&cfg, &mut SeededRng::new(seed)).unwrap();
        for layer in &mut g.layers {
            match layer {
                models::Layer::Dense { weight, .. } => *weight = weight.map(|v| v * 40.0),
                models::Layer::Deconv { kernel, .. } => *kernel = kernel.map(|v| v * 40.0),
                models::Layer::BatchNorm(bn) => bn.tracked = true,
                _ => {}
            }
        }
        g
    }

    fn quick(iterations: usize) -> TrainConfig {
        TrainConfig {
            batch_size: 16,
            iterations,
            log_every: 0,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn encoder_training_leaves_generator_untouched() {
        let g = micro_generator(1);
        let before = g.fingerprint();
        for obj in [EncoderObjective::Reconstruction, EncoderObjective::LatentRegression] {
            let state = train_encoder(&g, obj, &quick(30), 2).unwrap();
            assert_eq!(state.history.rows.len(), 30);
            assert!(state.history.rows.iter().all(|(_, v)| v[0].is_finite() && v[0] >= 0.0));
        }
        assert_eq!(g.fingerprint(), before);
    }

    #[test]
    fn reconstruction_loss_decreases() {
        let g = micro_generator(3);
        let state = train_inverse_generator(&g, &quick(300), 4).unwrap();
        let loss = smoothed(&state.history.column("loss").unwrap(), 30);
        assert!(loss[299] < loss[29], "{} vs {}", loss[299], loss[29]);
        let state = train_direct_regressor(&g, &quick(300), 4).unwrap();
        let loss = smoothed(&state.history.column("loss").unwrap(), 30);
        assert!(loss[299] < loss[29], "{} vs {}", loss[299], loss[29]);
    }

    #[test]
    fn reconstruct_shapes_and_ranges() {
        let g = micro_generator(1);
        let e = models::build_inverse_generator(&g.config, &mut SeededRng::new(2)).unwrap();
        let x = g.infer(&sample_prior(&mut SeededRng::new(0), 1, 8)).unwrap().squeeze_batch();
        let (z, x_hat) = reconstruct(&g, &e, &x).unwrap();
        assert_eq!(z.shape(), &[8]);
        assert_eq!(x_hat.shape(), &[16, 16, 3]);
        assert!(z.data().iter().all(|v| *v > -1.0 && *v < 1.0));
        assert!(x_hat.data().iter().all(|v| *v > 0.0 && *v < 1.0));
        assert_eq!(reconstruct(&g, &e, &x).unwrap(), (z, x_hat));
        assert!(reconstruct(&g, &e, &Tensor::zeros(&[8, 8, 3])).is_err());
    }

    #[test]
    fn gradient_inversion_edge_cases() {
        let g = micro_generator(5);
        let z0 = sample_prior(&mut SeededRng::new(9), 1, 8);
        let x = g.infer(&z0).unwrap();
        let none = GradientInversionConfig {
            steps: 0,
            step_size: 0.1,
        };
        let r = gradient_descent_invert_from(&g, &x, &z0, &none).unwrap();
        assert_eq!(r.z.data(), z0.data());
        assert_eq!(r.trace.len(), 1);

        let frozen = GradientInversionConfig {
            steps: 5,
            step_size: 0.0,
        };
        let start = sample_prior(&mut SeededRng::new(1), 1, 8);
        let r = gradient_descent_invert_from(&g, &x, &start, &frozen).unwrap();
        assert_eq!(r.z.data(), start.data());

        let r = gradient_descent_invert_from(&g, &x, &z0, &GradientInversionConfig { steps: 3, step_size: 0.1 }).unwrap();
        assert!((r.best_loss() - r.initial_loss()).abs() <= 1e-6);
    }

    #[test]
    fn gradient_inversion_is_clamped_and_improves() {
        let g = micro_generator(6);
        let x = g.infer(&sample_prior(&mut SeededRng::new(3), 4, 8)).unwrap();
        let cfg = GradientInversionConfig {
            steps: 100,
            step_size: 5.0,
        };
        let results = gradient_descent_invert(&g, &x, &cfg, 11).unwrap();
        for r in &results {
            assert!(r.z.data().iter().all(|v| (-1.0..=1.0).contains(v)));
            assert!(r.best_loss() <= r.initial_loss());
            assert_eq!(r.trace.len(), 101);
        }
        let pool = rayon::ThreadPoolBuilder::new().num_threads(2).build().unwrap();
        let again = pool.install(|| gradient_descent_invert(&g, &x, &cfg, 11).unwrap());
        assert_eq!(results, again);
    }

    #[test]
    fn bigan_smoke_and_evaluation() {
        let arch = ArchitectureConfig::new(8, 16, 3, 4);
        let data = crate::dataset::generate_dataset(32, 16, 0, &Default::default()).unwrap();
        let state = train_bigan(&data, &arch, &quick(20), 1).unwrap();
        assert!(state.history.rows.iter().all(|(_, v)| v.iter().all(|x| x.is_finite())));
        let z = state.encoder.infer(&data.images).unwrap();
        assert!(z.data().iter().all(|v| *v > -1.0 && *v < 1.0));

        let oracle = evaluate_reconstruction(&state.generator, Inverter::Identity, 10, 0).unwrap();
        assert_eq!(oracle.mean_similarity, 1.0);
        let a = evaluate_reconstruction(&state.generator, Inverter::Encoder(&state.encoder), 10, 3).unwrap();
        let b = evaluate_reconstruction(&state.generator, Inverter::Encoder(&state.encoder), 10, 3).unwrap();
        assert_eq!(a, b);
        assert!((0.0..=1.0).contains(&a.mean_similarity));
        assert!(evaluate_reconstruction(&state.generator, Inverter::Identity, 0, 0).is_err());
    }

    #[test]
    fn bigan_half_discriminator_gives_two_ln_two() {
        let half = Tensor::full(&[5, 1], 0.5);
        let v = bce_value(&[1.0; 5], half.data()) + bce_value(&[0.0; 5], half.data());
        assert!((v - 2.0 * std::f32::consts::LN_2).abs() < 1e-6);
    }
}
