use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use aegan::checkpoint::{load_network, save_checkpoint};
use aegan::config::RunConfig;
use aegan::dataset::{generate_dataset, Attributes, Dataset};
use aegan::gan_training::{streams, train_dcgan};
use aegan::image_io::{compose_grid, list_images, load_image, save_image, unbatch};
use aegan::inversion::{
    gradient_descent_invert, infer_chunked, mean_dhash_similarity, reconstruction_bce, reconstruction_pairs,
    train_bigan, train_direct_regressor, train_inverse_generator, Inverter,
};
use aegan::metrics::{dhash, hash_similarity};
use aegan::models::{self, sample_prior, NetKind, Network};
use aegan::rng::SeededRng;
use aegan::search::{
    fit_to_resolution, gaussian_blur, image_id, label_similarity, perturb, BaselineCorpus, BaselineMethod,
    LatentIndex, Perturbation, QueryResult,
};
use aegan::{gradcheck, Error, Result, Tensor};
use clap::ValueEnum;

use crate::args::*;
use crate::manifest::{digest, RunManifest};

/// Stream used for the sample grid written after GAN training.
const SAMPLE_STREAM: u64 = 12;
/// Images per row in result grids.
const GRID_COLUMNS: usize = 8;
const GRID_GAP: usize = 1;

/// Files and facts a command produced.
#[derive(Default)]
struct Outcome {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    notes: BTreeMap<String, String>,
}

impl Outcome {
    fn write(&mut self, path: PathBuf, contents: &str) -> Result<()> {
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.outputs.push(path);
        Ok(())
    }

    fn image(&mut self, path: PathBuf, image: &Tensor) -> Result<()> {
        save_image(&path, image)?;
        self.outputs.push(path);
        Ok(())
    }

    fn checkpoint(&mut self, path: PathBuf, net: &Network, opt: Option<&aegan::optim::AdamState>) -> Result<()> {
        save_checkpoint(&path, net, opt)?;
        self.outputs.push(path);
        Ok(())
    }
}

/// Runs a parsed command. `preset` replaces config loading during replay.
pub fn execute(command: Command, preset: Option<RunConfig>) -> Result<()> {
    match command {
        Command::Replay(r) => replay(&r),
        Command::Gradcheck(g) => run_gradcheck(&g),
        other => run_pipeline(other, preset),
    }
}

fn resolve_threads(flag: Option<usize>, cfg: Option<&RunConfig>) -> Result<usize> {
    let env = match std::env::var("AEGAN_THREADS") {
        Ok(v) if !v.trim().is_empty() => Some(
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::validation(format!("AEGAN_THREADS must be a positive integer, got {v:?}")))?,
        ),
        _ => None,
    };
    let n = flag
        .or(env)
        .or(cfg.and_then(|c| c.threads))
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if n == 0 {
        return Err(Error::validation("thread count must be at least 1"));
    }
    if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
        log::debug!("thread pool already initialized");
    }
    Ok(n)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn started_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn write_manifest(
    command: &Command,
    config: Option<RunConfig>,
    seed: u64,
    threads: usize,
    outcome: Outcome,
    out: &Path,
    started: (u64, Instant),
) -> Result<()> {
    let inputs = outcome.inputs.iter().map(|p| digest(p)).collect::<Result<Vec<_>>>()?;
    let outputs = outcome.outputs.iter().map(|p| digest(p)).collect::<Result<Vec<_>>>()?;
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.name().to_string(),
        invocation: command.clone(),
        config,
        seed,
        threads,
        working_dir: std::env::current_dir().map_err(|e| Error::io(".", e))?,
        inputs,
        outputs,
        notes: outcome.notes,
        started_unix_seconds: started.0,
        wall_clock_seconds: started.1.elapsed().as_secs_f64(),
    };
    let path = manifest.save(out)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn run_pipeline(command: Command, preset: Option<RunConfig>) -> Result<()> {
    let started = (started_unix(), Instant::now());
    let common = command.common().expect("pipeline commands carry common options").clone();
    let mut cfg = match preset {
        Some(c) => c,
        None => RunConfig::load_or_default(common.config.as_deref())?,
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if common.threads.is_some() {
        cfg.threads = common.threads;
    }
    let threads = resolve_threads(common.threads, Some(&cfg))?;
    let out = command.out().expect("pipeline commands have --out").clone();
    create_dir(&out)?;
    let mut outcome = Outcome::default();
    if let Some(path) = &common.config {
        outcome.inputs.push(path.clone());
    }
    match &command {
        Command::GenData(a) => gen_data(a, &mut cfg, &mut outcome)?,
        Command::TrainGan(a) => train_gan(a, &mut cfg, &mut outcome)?,
        Command::TrainIg(a) => train_ig(a, &mut cfg, &mut outcome)?,
        Command::TrainBaseline(a) => train_baseline(a, &mut cfg, &mut outcome)?,
        Command::Invert(a) => invert(a, &mut cfg, &mut outcome)?,
        Command::EvalRecon(a) => eval_recon(a, &mut cfg, &mut outcome)?,
        Command::Search(a) => search(a, &mut cfg, &mut outcome)?,
        Command::Superres(a) => superres(a, &mut cfg, &mut outcome)?,
        Command::Gradcheck(_) | Command::Replay(_) => unreachable!("handled in execute"),
    }
    let seed = cfg.seed;
    write_manifest(&command, Some(cfg), seed, threads, outcome, &out, started)
}

fn replay(args: &Replay) -> Result<()> {
    let manifest = RunManifest::load(&args.manifest)?;
    log::info!("replaying {} from {}", manifest.command, args.manifest.display());
    let mut command = manifest.invocation;
    if let Some(out) = &args.out {
        let cwd = std::env::current_dir().map_err(|e| Error::io(".", e))?;
        command.set_out(cwd.join(out));
    }
    if manifest.working_dir.is_dir() {
        std::env::set_current_dir(&manifest.working_dir).map_err(|e| Error::io(&manifest.working_dir, e))?;
    }
    if let Command::Replay(_) = command {
        return Err(Error::validation("a replay manifest cannot be replayed"));
    }
    execute(command, manifest.config)
}

// ---------------------------------------------------------------- helpers

/// Accepts a checkpoint file or a directory holding `generator.ckpt`.
fn generator_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("generator.ckpt")
    } else {
        path.to_path_buf()
    }
}

fn load_generator(path: &Path, outcome: &mut Outcome) -> Result<Network> {
    let path = generator_path(path);
    let g = load_network(&path, NetKind::Generator, None)?;
    outcome.inputs.push(path);
    Ok(g)
}

fn load_encoder(path: &Path, generator: &Network, outcome: &mut Outcome) -> Result<Network> {
    let e = load_network(path, NetKind::InverseGenerator, Some(&generator.config))?;
    outcome.inputs.push(path.to_path_buf());
    Ok(e)
}

fn require<'a, T>(value: &'a Option<T>, flag: &str, context: &str) -> Result<&'a T> {
    value
        .as_ref()
        .ok_or_else(|| Error::validation(format!("{flag} is required {context}")))
}

/// Loads an image file or every image of a directory, resampled to `size`.
fn load_inputs(path: &Path, size: Option<usize>, outcome: &mut Outcome) -> Result<(Vec<String>, Vec<Tensor>)> {
    let paths = if path.is_dir() {
        let paths = list_images(path)?;
        if paths.is_empty() {
            return Err(Error::validation(format!("{}: no .png or .ppm images found", path.display())));
        }
        paths
    } else {
        vec![path.to_path_buf()]
    };
    let mut ids = Vec::with_capacity(paths.len());
    let mut images = Vec::with_capacity(paths.len());
    let mut resized = 0;
    for p in &paths {
        let img = load_image(p)?;
        let img = match size {
            Some(s) if img.shape()[..2] != [s, s] => {
                resized += 1;
                fit_to_resolution(&img, s)?
            }
            _ => img,
        };
        ids.push(image_id(p));
        images.push(img);
    }
    if resized > 0 {
        log::info!("resampled {resized} of {} images to the model resolution", paths.len());
    }
    outcome.inputs.push(path.to_path_buf());
    Ok((ids, images))
}

/// Rows of at most [`GRID_COLUMNS`] images.
fn grid_rows(images: &[Tensor]) -> Vec<Vec<Tensor>> {
    images.chunks(GRID_COLUMNS).map(<[Tensor]>::to_vec).collect()
}

/// Alternating original and reconstruction rows.
fn pair_grid(originals: &[Tensor], reconstructions: &[Tensor]) -> Result<Tensor> {
    let mut rows = Vec::new();
    for (a, b) in grid_rows(originals).into_iter().zip(grid_rows(reconstructions)) {
        rows.push(a);
        rows.push(b);
    }
    compose_grid(&rows, GRID_GAP)
}

fn adopt_image_size(cfg: &mut RunConfig, dataset: &Dataset) {
    let size = dataset.image_size();
    if cfg.architecture.image_size != size {
        log::info!(
            "using the dataset's image size {size} instead of the configured {}",
            cfg.architecture.image_size
        );
        cfg.architecture.image_size = size;
    }
}

fn load_dataset(path: &Path, outcome: &mut Outcome) -> Result<Dataset> {
    let data = Dataset::load(path)?;
    log::info!("loaded {} images of {}px from {}", data.len(), data.image_size(), path.display());
    outcome.inputs.push(path.to_path_buf());
    Ok(data)
}

// ---------------------------------------------------------------- commands

fn gen_data(a: &GenData, cfg: &mut RunConfig, outcome: &mut Outcome) -> Result<()> {
    if let Some(n) = a.n {
        cfg.dataset.n = n;
    }
    if let Some(size) = a.size {
        cfg.architecture.image_size = size;
    }
    cfg.validate()?;
    log::info!(
        "rendering {} images of {}px with seed {}",
        cfg.dataset.n,
        cfg.architecture.image_size,
        cfg.seed
    );
    let data = generate_dataset(cfg.dataset.n, cfg.architecture.image_size, cfg.seed, &cfg.dataset.distribution)?;
    data.save(&a.out)?;
    outcome.outputs.extend(list_images(&a.out)?);
    outcome.outputs.push(a.out.join("attributes.csv"));
    Ok(())
}

fn train_gan(a: &TrainGan, cfg: &mut RunConfig, outcome: &mut Outcome) -> Result<()> {
    let data = load_dataset(&a.data, outcome)?;
    adopt_image_size(cfg, &data);
    if let Some(epochs) = a.epochs {
        if !(epochs > 0.0 && epochs.is_finite()) {
            return Err(Error::validation(format!("--epochs must be positive, got {epochs}")));
        }
        cfg.gan.iterations = ((epochs * data.len() as f64) / cfg.gan.batch_size as f64).ceil() as usize;
        log::info!("{epochs} epochs = {} iterations of batch {}", cfg.gan.iterations, cfg.gan.batch_size);
    }
    if let Some(iters) = a.iters {
        cfg.gan.iterations = iters;
    }
    cfg.validate()?;
    let state = train_dcgan(&data, &cfg.architecture, &cfg.gan, cfg.seed, Some(&a.out))?;
    outcome.checkpoint(a.out.join("generator.ckpt"), &state.generator, Some(&state.generator_opt))?;
    outcome.checkpoint(
        a.out.join("discriminator.ckpt"),
        &state.discriminator,
        Some(&state.discriminator_opt),
    )?;
    outcome.write(a.out.join("gan_losses.csv"), &state.history.to_csv())?;
    let z = sample_prior(
        &mut SeededRng::derive(cfg.seed, SAMPLE_STREAM),
        GRID_COLUMNS * GRID_COLUMNS,
        cfg.architecture.latent_dim,
    );
    let samples = unbatch(&infer_chunked(&state.generator, &z)?);
    outcome.image(a.out.join("samples.png"), &compose_grid(&grid_rows(&samples), GRID_GAP)?)?;
    outcome
        .notes
        .insert("generator_fingerprint".into(), state.generator.fingerprint_hex());
    Ok(())
}

/// Trains an encoder against a frozen generator and records that the
/// generator file and network are unchanged.
fn train_frozen_encoder(
    gan: &Path,
    iters: Option<usize>,
    cfg: &mut RunConfig,
    outcome: &mut Outcome,
    direct: bool,
    out: &Path,
) -> Result<()> {
    let g_path = generator_path(gan);
    let file_before = digest(&g_path)?.sha256;
    let g = load_generator(gan, outcome)?;
    let before = g.fingerprint_hex();
    cfg.architecture = g.config;
    if let Some(iters) = iters {
        cfg.encoder.iterations = iters;
    }
    cfg.validate()?;
    let state = if direct {
        train_direct_regressor(&g, &cfg.encoder, cfg.seed)?
    } else {
        train_inverse_generator(&g, &cfg.encoder, cfg.seed)?
    };
    let after = g.fingerprint_hex();
    let file_after = digest(&g_path)?.sha256;
    if before != after || file_before != file_after {
        return Err(Error::numerical("frozen generator changed during encoder training"));
    }
    let stem = if direct { "direct" } else { "ig" };
    let name = if direct { "direct_encoder.ckpt" } else { "inverse_generator.ckpt" };
    outcome.checkpoint(out.join(name), &state.encoder, Some(&state.optimizer))?;
    outcome.write(out.join(format!("{stem}_losses.csv")), &state.history.to_csv())?;
    outcome.notes.insert("generator_fingerprint_before".into(), before);
    outcome.notes.insert("generator_fingerprint_after".into(), after);
    outcome.notes.insert("encoder_fingerprint".into(), state.encoder.fingerprint_hex());
    Ok(())
}

fn train_ig(a: &TrainIg, cfg: &mut RunConfig, outcome: &mut Outcome) -> Result<()> {
    train_frozen_encoder(&a.gan, a.iters, cfg, outcome, false, &a.out)
}

fn train_baseline(a: &TrainBaseline, cfg: &mut RunConfig, outcome: &mut Outcome) -> Result<()> {
    match a.method {
        BaselineKind::Direct => {
            let gan = require(&a.gan, "--gan", "for --method direct")?;
            train_frozen_encoder(gan, a.iters, cfg, outcome, true, &a.out)
        }
        BaselineKind::Bigan => {
            let data_dir = require(&a.data, "--data", "for --method bigan")?;
            let data = load_dataset(data_dir, outcome)?;
            adopt_image_size(cfg, &data);
            if let Some(iters) = a.iters {
                cfg.bigan.iterations = iters;
            }
            cfg.validate()?;
            let state = train_bigan(&data, &cfg.architecture, &cfg.bigan, cfg.seed)?;
            outcome.checkpoint(a.out.join("bigan_encoder.ckpt"), &state.encoder, Some(&state.encoder_opt))?;
            outcome.checkpoint(
                a.out.join("bigan_generator.ckpt"),
                &state.generator,
                Some(&state.generator_opt),
            )?;
            outcome.checkpoint(
                a.out.join("bigan_discriminator.ckpt"),
                &state.discriminator,
                Some(&state.discriminator_opt),
            )?;
            outcome.write(a.out.join("bigan_losses.csv"), &state.history.to_csv())?;
            Ok(())
        }
    }
}

fn invert(a: &Invert, cfg: &mut RunConfig, outcome: &mut Outcome) -> Result<()> {
    let g = load_generator(&a.gan, outcome)?;
    cfg.architecture = g.config;
    if let Some(steps) = a.steps {
        cfg.gradient.steps = steps;
    }
    if let Some(step) = a.step_size {
        cfg.gradient.step_size = step;
    }
    cfg.validate()?;
    let (ids, images) = load_inputs(&a.images, Some(g.config.image_size), outcome)?;
    let x = Tensor::stack(&images)?;
    let z = match a.method {
        InvertMethod::Grad => {
            log::info!(
                "gradient inversion of {} images: {} steps of size {}",
                ids.len(),
                cfg.gradient.steps,
                cfg.gradient.step_size
            );
            let results = gradient_descent_invert(&g, &x, &cfg.gradient, cfg.seed)?;
            let mut trace = String::from("id,initial_bce,final_bce,steps,stopped\n");
            for (id, r) in ids.iter().zip(&results) {
                writeln!(
                    trace,
                    "{id},{},{},{},{}",
                    r.initial_loss(),
                    r.best_loss(),
                    r.iterations,
                    r.stopped.is_some()
                )
                .unwrap();
            }
            outcome.write(a.out.join("gradient_trace.csv"), &trace)?;
            Tensor::stack(&results.into_iter().map(|r| r.z.unsqueeze_batch()).collect::<Vec<_>>())?
        }
        _ => {
            let enc_path = require(&a.enc, "--enc", "for encoder-based inversion")?;
            let e = load_encoder(enc_path, &g, outcome)?;
            infer_chunked(&e, &x)?
        }
    };
    let x_hat = infer_chunked(&g, &z)?;
    let dim = g.config.latent_dim;
    let mut latents = String::from("id");
    for j in 0..dim {
        write!(latents, ",z_{j}").unwrap();
    }
    latents.push('\n');
    for (i, id) in ids.iter().enumerate() {
        latents.push_str(id);
        for v in &z.data()[i * dim..(i + 1) * dim] {
            write!(latents, ",{v}").unwrap();
        }
        latents.push('\n');
    }
    outcome.write(a.out.join("latents.csv"), &latents)?;
    let (mean, sims) = mean_dhash_similarity(&x, &x_hat)?;
    let bce = reconstruction_bce(&g, &x, &z)?;
    let mut report = String::from("id,dhash_similarity,bce\n");
    for ((id, s), b) in ids.iter().zip(&sims).zip(&bce) {
        writeln!(report, "{id},{s},{b}").unwrap();
    }
    outcome.write(a.out.join("reconstruction.csv"), &report)?;
    outcome.image(a.out.join("reconstructions.png"), &pair_grid(&images, &unbatch(&x_hat))?)?;
    log::info!("mean dHash similarity over {} images: {mean:.4}", ids.len());
    Ok(())
}

fn eval_recon(a: &EvalRecon, cfg: &mut RunConfig, outcome: &mut Outcome) -> Result<()> {
    let g = load_generator(&a.gan, outcome)?;
    cfg.architecture = g.config;
    if let Some(n) = a.n {
        cfg.eval.n_samples = n;
    }
    cfg.validate()?;
    if a.encoders.is_empty() && !a.grad {
        return Err(Error::validation("nothing to evaluate: pass --enc METHOD=PATH or --grad"));
    }
    let n = cfg.eval.n_samples;
    let mut entries: Vec<(String, Network, Network)> = Vec::new();
    for spec in &a.encoders {
        let (method, path) = match spec.split_once('=') {
            Some((m, p)) => (m.trim().to_string(), Some(PathBuf::from(p.trim()))),
            None => (spec.trim().to_string(), None),
        };
        if entries.iter().any(|(m, _, _)| *m == method) {
            return Err(Error::validation(format!("method {method:?} given twice")));
        }
        let (decoder, encoder) = match (method.as_str(), path) {
            ("random", None) => {
                let e = models::build(
                    NetKind::InverseGenerator,
                    &g.config,
                    &mut SeededRng::derive(cfg.seed, streams::INIT_A),
                )?;
                (g.clone(), e)
            }
            ("aegan" | "direct", Some(p)) => {
                let e = load_encoder(&p, &g, outcome)?;
                (g.clone(), e)
            }
            ("bigan", Some(p)) => {
                let gb_path = require(&a.bigan_gen, "--bigan-gen", "with --enc bigan=...")?;
                let gb = load_network(gb_path, NetKind::Generator, Some(&g.config))?;
                outcome.inputs.push(gb_path.clone());
                let e = load_encoder(&p, &gb, outcome)?;
                (gb, e)
            }
            _ => {
                return Err(Error::validation(format!(
                    "--enc {spec:?}: expected aegan=PATH, direct=PATH, bigan=PATH or random"
                )))
            }
        };
        entries.push((method, decoder, encoder));
    }

    let mut report = String::from("method,n_samples,mean_similarity\n");
    let mut samples = String::from("method,index,similarity\n");
    let mut evaluate = |name: &str, decoder: &Network, inverter: Inverter<'_>, outcome: &mut Outcome| -> Result<()> {
        log::info!("evaluating {name} on {n} samples");
        let (x, x_hat) = reconstruction_pairs(decoder, inverter, n, cfg.seed)?;
        let (mean, sims) = mean_dhash_similarity(&x, &x_hat)?;
        writeln!(report, "{name},{n},{mean}").unwrap();
        for (i, s) in sims.iter().enumerate() {
            writeln!(samples, "{name},{i},{s}").unwrap();
        }
        let shown = n.min(GRID_COLUMNS);
        let (xs, xh) = (unbatch(&x), unbatch(&x_hat));
        outcome.image(
            a.out.join(format!("recon_{name}.png")),
            &pair_grid(&xs[..shown], &xh[..shown])?,
        )?;
        log::info!("{name}: mean dHash similarity {mean:.4}");
        Ok(())
    };
    for (name, decoder, encoder) in &entries {
        evaluate(name, decoder, Inverter::Encoder(encoder), outcome)?;
    }
    if a.grad {
        evaluate("grad", &g, Inverter::Gradient(cfg.gradient, cfg.seed), outcome)?;
    }
    outcome.write(a.out.join("recon_report.csv"), &report)?;
    outcome.write(a.out.join("recon_samples.csv"), &samples)?;
    Ok(())
}

fn parse_numbers<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(|v| {
            v.trim()
                .parse::<T>()
                .map_err(|_| Error::validation(format!("--perturb {what}: cannot parse {v:?}")))
        })
        .collect()
}

/// `brightness:D`, `swap:A,B,C` or `occlude:TOP,LEFT,H,W[,VALUE]`.
pub fn parse_perturbation(text: &str) -> Result<Perturbation> {
    let (kind, rest) = text
        .split_once(':')
        .ok_or_else(|| Error::validation(format!("--perturb {text:?}: expected KIND:VALUES")))?;
    match kind {
        "brightness" => {
            let v = parse_numbers::<f32>(rest, kind)?;
            match v.as_slice() {
                [d] => Ok(Perturbation::Brightness(*d)),
                _ => Err(Error::validation("--perturb brightness takes one value")),
            }
        }
        "swap" => {
            let v = parse_numbers::<usize>(rest, kind)?;
            match v.as_slice() {
                [a, b, c] => Ok(Perturbation::ChannelSwap([*a, *b, *c])),
                _ => Err(Error::validation("--perturb swap takes three channel indices")),
            }
        }
        "occlude" => {
            let v = parse_numbers::<f32>(rest, kind)?;
            if !(v.len() == 4 || v.len() == 5) || v[..4].iter().any(|x| *x < 0.0 || x.fract() != 0.0) {
                return Err(Error::validation(
                    "--perturb occlude takes TOP,LEFT,HEIGHT,WIDTH as non-negative integers and an optional VALUE",
                ));
            }
            Ok(Perturbation::Occlusion {
                top: v[0] as usize,
                left: v[1] as usize,
                height: v[2] as usize,
                width: v[3] as usize,
                value: v.get(4).copied().unwrap_or(0.5),
            })
        }
        _ => Err(Error::validation(format!(
            "--perturb {kind:?}: expected brightness, swap or occlude"
        ))),
    }
}

/// Attributes of a directory's images keyed by file name, when labelled.
fn attributes_by_id(dir: &Path) -> Result<Option<BTreeMap<String, Attributes>>> {
    if !dir.is_dir() || !dir.join("attributes.csv").exists() {
        return Ok(None);
    }
    let data = Dataset::load(dir)?;
    let ids = list_images(dir)?.iter().map(|p| image_id(p)).collect::<Vec<_>>();
    Ok(data.attributes.map(|attrs| ids.into_iter().zip(attrs).collect()))
}

fn search(a: &Search, cfg: &mut RunConfig, outcome: &mut Outcome) -> Result<()> {
    if let Some(k) = a.k {
        cfg.search.k = k;
    }
    cfg.validate()?;
    let k = cfg.search.k;
    let corpus_dir = a.corpus.as_ref().or(a.build_index.as_ref());
    let perturbation = a.perturb.as_deref().map(parse_perturbation).transpose()?;
    let (query_ids, mut queries) = load_inputs(&a.query, None, outcome)?;
    if let Some(p) = perturbation {
        queries = queries.iter().map(|q| perturb(q, p)).collect::<Result<_>>()?;
        log::info!("applied {p:?} to {} queries", queries.len());
    }

    let (results, tile): (Vec<QueryResult>, usize) = match a.method {
        SearchMethod::Aegan => {
            let enc_path = require(&a.enc, "--enc", "for --method aegan")?;
            let e = load_network(enc_path, NetKind::InverseGenerator, None)?;
            outcome.inputs.push(enc_path.clone());
            let index = if let Some(path) = &a.index {
                let index = LatentIndex::load(path)?;
                index.check_model(&e)?;
                outcome.inputs.push(path.clone());
                index
            } else if let Some(dir) = &a.build_index {
                let (index, skipped) = LatentIndex::build_from_files(&e, &list_images(dir)?)?;
                outcome.inputs.push(dir.clone());
                outcome.notes.insert("index_skipped_files".into(), skipped.to_string());
                let path = a.out.join("index.aegidx");
                index.save(&path)?;
                outcome.outputs.push(path);
                log::info!("indexed {} images", index.len());
                index
            } else {
                return Err(Error::validation("--method aegan needs --index FILE or --build-index DIR"));
            };
            let results = queries.iter().map(|q| index.search(&e, q, k)).collect::<Result<_>>()?;
            (results, e.config.image_size)
        }
        method => {
            let dir = corpus_dir.ok_or_else(|| {
                Error::validation("baseline search needs the corpus images: pass --corpus DIR or --build-index DIR")
            })?;
            let (ids, images) = load_inputs(dir, None, outcome)?;
            let method = match method {
                SearchMethod::Dhash => BaselineMethod::Dhash,
                SearchMethod::Phash => BaselineMethod::Phash,
                _ => BaselineMethod::Histogram,
            };
            let corpus = BaselineCorpus::build(&ids, &images)?;
            let results = queries.iter().map(|q| corpus.search(q, k, method)).collect::<Result<_>>()?;
            (results, images[0].shape()[0])
        }
    };

    let mut csv = String::new();
    for (qi, (qid, r)) in query_ids.iter().zip(&results).enumerate() {
        let body = r.to_csv();
        let mut lines = body.lines();
        let header = lines.next().unwrap_or_default();
        if qi == 0 {
            writeln!(csv, "query,{header}").unwrap();
        }
        for line in lines {
            writeln!(csv, "{qid},{line}").unwrap();
        }
    }
    outcome.write(a.out.join("results.csv"), &csv)?;

    if let Some(dir) = corpus_dir {
        let mut rows = Vec::with_capacity(queries.len());
        for (q, r) in queries.iter().zip(&results) {
            let mut row = vec![fit_to_resolution(q, tile)?];
            for hit in &r.hits {
                row.push(fit_to_resolution(&load_image(dir.join(&hit.id))?, tile)?);
            }
            rows.push(row);
        }
        outcome.image(a.out.join("results.png"), &compose_grid(&rows, GRID_GAP)?)?;
    } else {
        log::info!("no corpus directory given; skipping the result grid");
    }

    if let (Some(dir), true) = (corpus_dir, a.query.is_dir()) {
        if let (Some(corpus_attrs), Some(query_attrs)) = (attributes_by_id(dir)?, attributes_by_id(&a.query)?) {
            let pairs = query_ids
                .iter()
                .zip(&results)
                .map(|(id, r)| {
                    query_attrs
                        .get(id)
                        .map(|attrs| (*attrs, r))
                        .ok_or_else(|| Error::validation(format!("no attributes for query {id:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            let score = label_similarity(&pairs, |id| corpus_attrs.get(id))?;
            let name = a.method.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default();
            outcome.write(
                a.out.join("search_summary.csv"),
                &format!("method,k,n_queries,label_similarity\n{name},{k},{},{score}\n", pairs.len()),
            )?;
            log::info!("label similarity of top-{k} results: {score:.4}");
        }
    }
    Ok(())
}

fn superres(a: &Superres, cfg: &mut RunConfig, outcome: &mut Outcome) -> Result<()> {
    let g = load_generator(&a.gan, outcome)?;
    cfg.architecture = g.config;
    if let Some(n) = a.n {
        cfg.superres.n_samples = n;
    }
    if let Some(sigma) = a.sigma {
        cfg.superres.sigma = sigma;
    }
    cfg.validate()?;
    let e = load_encoder(&a.ig, &g, outcome)?;
    let (ids, originals) = match &a.images {
        Some(path) => {
            let (ids, images) = load_inputs(path, Some(g.config.image_size), outcome)?;
            (ids, Tensor::stack(&images)?)
        }
        None => {
            let n = cfg.superres.n_samples;
            let z = sample_prior(&mut SeededRng::derive(cfg.seed, streams::LATENTS), n, g.config.latent_dim);
            ((0..n).map(|i| format!("sample_{i:05}")).collect(), infer_chunked(&g, &z)?)
        }
    };
    let blurred = gaussian_blur(&originals, cfg.superres.sigma)?;
    let restored = infer_chunked(&g, &infer_chunked(&e, &blurred)?)?;
    let mut csv = String::from("id,blurred_similarity,restored_similarity\n");
    let (mut sum_b, mut sum_r) = (0.0, 0.0);
    for (i, id) in ids.iter().enumerate() {
        let h0 = dhash(&originals.batch_item(i))?;
        let sb = hash_similarity(h0, dhash(&blurred.batch_item(i))?);
        let sr = hash_similarity(h0, dhash(&restored.batch_item(i))?);
        sum_b += sb;
        sum_r += sr;
        writeln!(csv, "{id},{sb},{sr}").unwrap();
    }
    let n = ids.len() as f64;
    outcome.write(a.out.join("superres.csv"), &csv)?;
    outcome.write(
        a.out.join("superres_summary.csv"),
        &format!(
            "n,sigma,mean_blurred_similarity,mean_restored_similarity\n{},{},{},{}\n",
            ids.len(),
            cfg.superres.sigma,
            sum_b / n,
            sum_r / n
        ),
    )?;
    // three blocks, originals / blurred / restored, separated by a blank row
    let mut rows = Vec::new();
    for (b, block) in [&originals, &blurred, &restored].into_iter().enumerate() {
        if b > 0 {
            rows.push(Vec::new());
        }
        rows.extend(grid_rows(&unbatch(block)));
    }
    outcome.image(a.out.join("superres.png"), &compose_grid(&rows, GRID_GAP)?)?;
    log::info!(
        "dHash similarity to originals: blurred {:.4}, restored {:.4}",
        sum_b / n,
        sum_r / n
    );
    Ok(())
}

fn run_gradcheck(a: &Gradcheck) -> Result<()> {
    let started = (started_unix(), Instant::now());
    let threads = resolve_threads(a.threads, None)?;
    let reports = gradcheck::full_suite(a.seed)?;
    let mut csv = String::from("check,cases,worst_relative_error,tolerance,passed\n");
    for r in &reports {
        eprintln!("{r}");
        writeln!(csv, "{},{},{:e},{:e},{}", r.name, r.cases, r.worst_error, r.tolerance, r.passed()).unwrap();
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.name.as_str()).collect();
    eprintln!(
        "{} of {} checks passed in {:.1}s",
        reports.len() - failed.len(),
        reports.len(),
        started.1.elapsed().as_secs_f64()
    );
    if let Some(out) = &a.out {
        create_dir(out)?;
        let mut outcome = Outcome::default();
        outcome.write(out.join("gradcheck.csv"), &csv)?;
        write_manifest(&Command::Gradcheck(a.clone()), None, a.seed, threads, outcome, out, started)?;
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::numerical(format!("gradient check failed: {}", failed.join(", "))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perturbation_specs_parse() {
        assert_eq!(parse_perturbation("brightness:0.2").unwrap(), Perturbation::Brightness(0.2));
        assert_eq!(parse_perturbation("swap:2,1,0").unwrap(), Perturbation::ChannelSwap([2, 1, 0]));
        assert_eq!(
            parse_perturbation("occlude:1,2,3,4").unwrap(),
            Perturbation::Occlusion {
                top: 1,
                left: 2,
                height: 3,
                width: 4,
                value: 0.5
            }
        );
        for bad in ["brightness", "blur:1", "swap:1,2", "occlude:1,2,3", "occlude:-1,0,1,1"] {
            assert!(parse_perturbation(bad).is_err(), "{bad}");
        }
    }
}
