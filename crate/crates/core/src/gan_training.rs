//! DCGAN training of the generator that is later inverted.
//!
//! Each iteration performs one discriminator update followed by one generator
//! update. The discriminator minimizes `−mean ln D(x) − mean ln(1 − D(G(z)))`
//! and the generator minimizes the non-saturating `−mean ln D(G(z))`. During
//! either update the other network is bound as constants, so its parameters
//! and batch-norm buffers stay bit-identical.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{bce_value, Graph, NormMode, Var};
use crate::checkpoint::save_checkpoint;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::models::{self, sample_prior, ArchitectureConfig, NetKind, Network};
use crate::optim::{AdamState, OptimizerConfig};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Random stream ids under a run seed.
pub mod streams {
    pub const INIT_A: u64 = 1;
    pub const INIT_B: u64 = 2;
    pub const INIT_C: u64 = 3;
    pub const BATCHES: u64 = 10;
    pub const LATENTS: u64 = 11;
}

/// Settings shared by every training loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iterations: usize,
    pub optimizer: OptimizerConfig,
    /// Progress is logged every this many iterations (0 disables).
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            iterations: 1000,
            optimizer: OptimizerConfig::default(),
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size must be at least 1"));
        }
        if !(self.optimizer.learning_rate.is_finite() && self.optimizer.learning_rate >= 0.0) {
            return Err(Error::validation(format!(
                "learning rate must be finite and non-negative, got {}",
                self.optimizer.learning_rate
            )));
        }
        Ok(())
    }
}

/// Per-iteration loss values with named columns.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossHistory {
    pub columns: Vec<String>,
    pub rows: Vec<(usize, Vec<f32>)>,
}

impl LossHistory {
    pub fn new(columns: &[&str]) -> Self {
        LossHistory {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, iteration: usize, values: Vec<f32>) {
        debug_assert_eq!(values.len(), self.columns.len());
        self.rows.push((iteration, values));
    }

    pub fn column(&self, name: &str) -> Option<Vec<f32>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|(_, v)| v[i]).collect())
    }

    /// `iteration,<columns>` with shortest round-trip float formatting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration");
        for c in &self.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (it, values) in &self.rows {
            write!(out, "{it}").unwrap();
            for v in values {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Trailing moving average: entry `i` averages `values[i+1-window ..= i]`
/// (fewer at the start).
pub fn smoothed(values: &[f32], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0f64;
    for (i, &v) in values.iter().enumerate() {
        acc += v as f64;
        if i >= window {
            acc -= values[i - window] as f64;
        }
        out.push(acc / (i + 1).min(window) as f64);
    }
    out
}

/// Seeded sampling of minibatch indices without replacement within an epoch.
pub struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    rng: SeededRng,
}

impl BatchSampler {
    pub fn new(n: usize, rng: SeededRng) -> Self {
        let mut s = BatchSampler {
            order: (0..n).collect(),
            pos: n,
            rng,
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.rng.shuffle(&mut self.order);
        self.pos = 0;
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.reshuffle();
            }
            let take = (size - out.len()).min(self.order.len() - self.pos);
            out.extend_from_slice(&self.order[self.pos..self.pos + take]);
            self.pos += take;
        }
        out
    }
}

/// `−mean ln D(x) − mean ln(1 − D(G(z)))` on the graph.
pub fn discriminator_loss(g: &mut Graph, d_real: Var, d_fake: Var) -> Result<Var> {
    let real = g.bce(d_real, Tensor::ones(g.value(d_real).shape()))?;
    let fake = g.bce(d_fake, Tensor::zeros(g.value(d_fake).shape()))?;
    g.add(real, fake)
}

/// Non-saturating generator loss `−mean ln D(G(z))` on the graph.
pub fn generator_loss(g: &mut Graph, d_fake: Var) -> Result<Var> {
    g.bce(d_fake, Tensor::ones(g.value(d_fake).shape()))
}

/// Value of [`discriminator_loss`] for given discriminator outputs.
pub fn discriminator_loss_value(d_real: &Tensor, d_fake: &Tensor) -> Result<f32> {
    if d_real.shape() != d_fake.shape() {
        return Err(Error::Shape {
            op: "discriminator_loss",
            lhs: d_real.shape().to_vec(),
            rhs: d_fake.shape().to_vec(),
        });
    }
    let ones = vec![1.0; d_real.len()];
    let zeros = vec![0.0; d_fake.len()];
    Ok(bce_value(&ones, d_real.data()) + bce_value(&zeros, d_fake.data()))
}

pub fn generator_loss_value(d_fake: &Tensor) -> f32 {
    bce_value(&vec![1.0; d_fake.len()], d_fake.data())
}

pub(crate) fn ensure_finite(value: f32, what: &str, iteration: usize) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::numerical(format!(
            "{what} became {value} at iteration {iteration}"
        )))
    }
}

/// Generator and discriminator with their optimizer states and loss history.
#[derive(Debug, Clone)]
pub struct GanTrainState {
    pub generator: Network,
    pub discriminator: Network,
    pub generator_opt: AdamState,
    pub discriminator_opt: AdamState,
    pub iteration: usize,
    pub history: LossHistory,
}

impl GanTrainState {
    pub fn new(architecture: &ArchitectureConfig, optimizer: OptimizerConfig, seed: u64) -> Result<Self> {
        let generator = models::build(
            NetKind::Generator,
            architecture,
            &mut SeededRng::derive(seed, streams::INIT_A),
        )?;
        let discriminator = models::build(
            NetKind::Discriminator,
            architecture,
            &mut SeededRng::derive(seed, streams::INIT_B),
        )?;
        Ok(GanTrainState {
            generator_opt: AdamState::new(optimizer, &generator.params()),
            discriminator_opt: AdamState::new(optimizer, &discriminator.params()),
            generator,
            discriminator,
            iteration: 0,
            history: LossHistory::new(&["d_loss", "g_loss"]),
        })
    }

    /// One discriminator update on a real batch and fakes from latents `z`.
    pub fn discriminator_step(&mut self, real: &Tensor, z: &Tensor) -> Result<f32> {
        let mut g = Graph::new();
        let gb = self.generator.bind(&mut g, false);
        let db = self.discriminator.bind(&mut g, true);
        let zv = g.constant(z.clone());
        let (fake, _) = self.generator.forward(&mut g, &gb, zv, None, NormMode::Train)?;
        let xv = g.constant(real.clone());
        let (d_real, mut stats) = self.discriminator.forward(&mut g, &db, xv, None, NormMode::Train)?;
        let (d_fake, fake_stats) = self.discriminator.forward(&mut g, &db, fake, None, NormMode::Train)?;
        let loss = discriminator_loss(&mut g, d_real, d_fake)?;
        let value = g.value(loss).item();
        ensure_finite(value, "discriminator loss", self.iteration)?;
        let mut grads = g.backward(loss)?;
        let grads = self.discriminator.collect_gradients(&db, &mut grads);
        self.discriminator_opt
            .step(&mut self.discriminator.params_mut(), &grads)?;
        stats.extend(fake_stats);
        self.discriminator.absorb(&stats[..stats.len() / 2]);
        self.discriminator.absorb(&stats[stats.len() / 2..]);
        Ok(value)
    }

    /// One generator update through the (frozen) discriminator.
    pub fn generator_step(&mut self, z: &Tensor) -> Result<f32> {
        let mut g = Graph::new();
        let gb = self.generator.bind(&mut g, true);
        let db = self.discriminator.bind(&mut g, false);
        let zv = g.constant(z.clone());
        let (fake, stats) = self.generator.forward(&mut g, &gb, zv, None, NormMode::Train)?;
        let (d_fake, _) = self.discriminator.forward(&mut g, &db, fake, None, NormMode::Train)?;
        let loss = generator_loss(&mut g, d_fake)?;
        let value = g.value(loss).item();
        ensure_finite(value, "generator loss", self.iteration)?;
        let mut grads = g.backward(loss)?;
        let grads = self.generator.collect_gradients(&gb, &mut grads);
        self.generator_opt.step(&mut self.generator.params_mut(), &grads)?;
        self.generator.absorb(&stats);
        Ok(value)
    }

    /// Saves `generator.ckpt` and `discriminator.ckpt` (with optimizer state) into `dir`.
    pub fn save(&self, dir: &Path, prefix: &str) -> Result<()> {
        save_checkpoint(
            dir.join(format!("{prefix}generator.ckpt")),
            &self.generator,
            Some(&self.generator_opt),
        )?;
        save_checkpoint(
            dir.join(format!("{prefix}discriminator.ckpt")),
            &self.discriminator,
            Some(&self.discriminator_opt),
        )
    }
}

/// Trains a DCGAN on `dataset`. On a non-finite loss the current state is
/// written to `diagnostics_dir` (when given) with a `diagnostic_` prefix and
/// a numerical error is returned.
pub fn train_dcgan(
    dataset: &Dataset,
    architecture: &ArchitectureConfig,
    cfg: &TrainConfig,
    seed: u64,
    diagnostics_dir: Option<&Path>,
) -> Result<GanTrainState> {
    cfg.validate()?;
    architecture.validate()?;
    if dataset.is_empty() {
        return Err(Error::validation("training dataset is empty"));
    }
    let shape = dataset.images.shape();
    if shape[1] != architecture.image_size || shape[2] != architecture.image_size || shape[3] != architecture.channels {
        return Err(Error::validation(format!(
            "dataset images are {:?} but the architecture expects {}x{}x{}",
            &shape[1..],
            architecture.image_size,
            architecture.image_size,
            architecture.channels
        )));
    }
    if dataset.images.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::validation("dataset pixel values must lie in [0, 1]"));
    }
    let mut state = GanTrainState::new(architecture, cfg.optimizer, seed)?;
    let mut sampler = BatchSampler::new(dataset.len(), SeededRng::derive(seed, streams::BATCHES));
    let mut latents = SeededRng::derive(seed, streams::LATENTS);
    let latent_dim = architecture.latent_dim;
    while state.iteration < cfg.iterations {
        let real = dataset.gather(&sampler.next_batch(cfg.batch_size));
        let z_d = sample_prior(&mut latents, cfg.batch_size, latent_dim);
        let z_g = sample_prior(&mut latents, cfg.batch_size, latent_dim);
        let step = state
            .discriminator_step(&real, &z_d)
            .and_then(|d| Ok((d, state.generator_step(&z_g)?)));
        let (d_loss, g_loss) = match step {
            Ok(v) => v,
            Err(e) => {
                if let (true, Some(dir)) = (e.is_numerical(), diagnostics_dir) {
                    state.save(dir, "diagnostic_")?;
                    log::error!("wrote diagnostic checkpoints to {}", dir.display());
                }
                return Err(e);
            }
        };
        state.history.push(state.iteration, vec![d_loss, g_loss]);
        if cfg.log_every > 0 && (state.iteration + 1) % cfg.log_every == 0 {
            log::info!(
                "gan iteration {}/{}: d_loss {d_loss:.4} g_loss {g_loss:.4}",
                state.iteration + 1,
                cfg.iterations
            );
        }
        state.iteration += 1;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_dataset, AttributeDistribution};

    #[test]
    fn loss_values_match_analytic_cases() {
        let half = Tensor::full(&[4, 1], 0.5);
        let d = discriminator_loss_value(&half, &half).unwrap();
        assert!((d - 2.0 * std::f32::consts::LN_2).abs() < 1e-6);
        assert!((generator_loss_value(&half) - std::f32::consts::LN_2).abs() < 1e-6);
        let perfect = discriminator_loss_value(&Tensor::ones(&[4, 1]), &Tensor::zeros(&[4, 1])).unwrap();
        assert!(perfect < 1e-6);
        assert!(generator_loss_value(&Tensor::full(&[3, 1], 1.0 - 1e-7)) < 1e-6);

        let real = Tensor::new(vec![4, 1], vec![0.9, 0.6, 0.3, 0.75]).unwrap();
        let fake = Tensor::new(vec![4, 1], vec![0.2, 0.5, 0.05, 0.4]).unwrap();
        let mut oracle = 0.0f64;
        for i in 0..4 {
            oracle -= (real.data()[i] as f64).ln() / 4.0;
            oracle -= (1.0 - fake.data()[i] as f64).ln() / 4.0;
        }
        let got = discriminator_loss_value(&real, &fake).unwrap() as f64;
        assert!((got - oracle).abs() < 1e-6, "{got} vs {oracle}");

        let mut g = Graph::new();
        let r = g.constant(real.clone());
        let f = g.constant(fake.clone());
        let l = discriminator_loss(&mut g, r, f).unwrap();
        assert!((g.value(l).item() as f64 - oracle).abs() < 1e-6);
    }

    #[test]
    fn generator_loss_only_reaches_generator() {
        let arch = ArchitectureConfig::new(8, 16, 3, 4);
        let state = GanTrainState::new(&arch, OptimizerConfig::default(), 0).unwrap();
        let mut g = Graph::new();
        let gb = state.generator.bind(&mut g, true);
        let db = state.discriminator.bind(&mut g, false);
        let z = g.constant(sample_prior(&mut SeededRng::new(1), 4, 8));
        let (fake, _) = state.generator.forward(&mut g, &gb, z, None, NormMode::Train).unwrap();
        let (d, _) = state.discriminator.forward(&mut g, &db, fake, None, NormMode::Train).unwrap();
        let loss = generator_loss(&mut g, d).unwrap();
        let mut grads = g.backward(loss).unwrap();
        assert!(db.vars().iter().all(|&v| grads.get(v).is_none()));
        let gg = state.generator.collect_gradients(&gb, &mut grads);
        assert!(gg.iter().all(|g| g.is_some()));
        assert!(gg.iter().any(|g| g.as_ref().unwrap().max_abs() > 0.0));
    }

    #[test]
    fn alternation_leaves_the_other_network_untouched() {
        let arch = ArchitectureConfig::new(8, 16, 3, 4);
        let mut state = GanTrainState::new(&arch, OptimizerConfig::default(), 3).unwrap();
        let data = generate_dataset(8, 16, 1, &AttributeDistribution::default()).unwrap();
        let mut rng = SeededRng::new(4);
        let g_before = state.generator.fingerprint();
        state.discriminator_step(&data.images, &sample_prior(&mut rng, 8, 8)).unwrap();
        assert_eq!(state.generator.fingerprint(), g_before);
        let d_before = state.discriminator.fingerprint();
        state.generator_step(&sample_prior(&mut rng, 8, 8)).unwrap();
        assert_eq!(state.discriminator.fingerprint(), d_before);
        assert_ne!(state.generator.fingerprint(), g_before);
    }

    #[test]
    fn smoke_run_is_finite_and_deterministic() {
        let arch = ArchitectureConfig::new(16, 16, 3, 8);
        let data = generate_dataset(100, 16, 2, &AttributeDistribution::default()).unwrap();
        let cfg = TrainConfig {
            batch_size: 16,
            iterations: 50,
            log_every: 0,
            ..TrainConfig::default()
        };
        let a = train_dcgan(&data, &arch, &cfg, 7, None).unwrap();
        let b = train_dcgan(&data, &arch, &cfg, 7, None).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.history.rows.len(), 50);
        assert!(a.history.rows.iter().all(|(_, v)| v.iter().all(|x| x.is_finite())));
        assert_eq!(a.generator.fingerprint(), b.generator.fingerprint());
    }

    #[test]
    fn rejects_bad_inputs() {
        let arch = ArchitectureConfig::new(8, 16, 3, 4);
        let data = generate_dataset(4, 8, 2, &AttributeDistribution::default()).unwrap();
        assert!(train_dcgan(&data, &arch, &TrainConfig::default(), 0, None).is_err());
        let cfg = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        let data = generate_dataset(4, 16, 2, &AttributeDistribution::default()).unwrap();
        assert!(train_dcgan(&data, &arch, &cfg, 0, None).is_err());
    }

    #[test]
    fn helpers() {
        assert_eq!(smoothed(&[1.0, 3.0, 5.0, 7.0], 2), vec![1.0, 2.0, 4.0, 6.0]);
        let mut s = BatchSampler::new(5, SeededRng::new(0));
        let mut first: Vec<usize> = s.next_batch(5);
        first.sort();
        assert_eq!(first, vec![0, 1, 2, 3, 4]);
        assert_eq!(s.next_batch(7).len(), 7);
        let mut h = LossHistory::new(&["a"]);
        h.push(0, vec![0.5]);
        assert_eq!(h.to_csv(), "iteration,a\n0,0.5\n");
    }
}
