use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

/// GAN inversion toolkit: train a generator, invert it, search and restore images.
///
/// Progress goes to standard error; results are written under `--out`
/// together with a `manifest.json` that `replay` can re-run.
#[derive(Debug, Parser)]
#[command(name = "aegan", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by every pipeline command.
#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run seed [default: config `seed`, else 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads [default: AEGAN_THREADS, then config `threads`, then all cores].
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "command")]
pub enum Command {
    /// Render a synthetic shapes dataset with attribute labels.
    GenData(GenData),
    /// Train the DCGAN generator and discriminator.
    TrainGan(TrainGan),
    /// Train the inverse generator against a frozen generator.
    TrainIg(TrainIg),
    /// Train a baseline encoder (direct latent regression or BiGAN).
    TrainBaseline(TrainBaseline),
    /// Map images to latent vectors and reconstruct them.
    Invert(Invert),
    /// Compare reconstruction similarity across inversion methods.
    EvalRecon(EvalRecon),
    /// Retrieve similar images by latent distance or a perceptual baseline.
    Search(Search),
    /// Blur images and restore them through the inverse generator.
    Superres(Superres),
    /// Run the finite-difference gradient suite.
    Gradcheck(Gradcheck),
    /// Re-run a command from its manifest.
    Replay(Replay),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GenData {
    #[command(flatten)]
    pub common: Common,
    /// Number of images [default: config `dataset.n`, else 2000].
    #[arg(long)]
    pub n: Option<usize>,
    /// Image side in pixels [default: config `architecture.image_size`, else 16].
    #[arg(long)]
    pub size: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainGan {
    #[command(flatten)]
    pub common: Common,
    /// Dataset directory (images plus optional attributes.csv).
    #[arg(long)]
    pub data: PathBuf,
    /// Passes over the dataset; converted to iterations of `gan.batch_size`.
    #[arg(long, conflicts_with = "iters")]
    pub epochs: Option<f64>,
    /// Training iterations [default: config `gan.iterations`, else 3000].
    #[arg(long)]
    pub iters: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainIg {
    #[command(flatten)]
    pub common: Common,
    /// Generator checkpoint, or a directory holding `generator.ckpt`.
    #[arg(long)]
    pub gan: PathBuf,
    /// Training iterations [default: config `encoder.iterations`, else 2000].
    #[arg(long)]
    pub iters: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    /// Encoder regressing z from G(z) against the frozen generator.
    Direct,
    /// Encoder, generator and pair discriminator trained jointly on data.
    Bigan,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainBaseline {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub method: BaselineKind,
    /// Generator checkpoint or directory (required for `direct`).
    #[arg(long)]
    pub gan: Option<PathBuf>,
    /// Dataset directory (required for `bigan`).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Training iterations [default: config `encoder.iterations` for direct,
    /// `bigan.iterations` for bigan].
    #[arg(long)]
    pub iters: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InvertMethod {
    /// Trained inverse generator.
    Aegan,
    /// Per-image gradient descent on z.
    Grad,
    /// Direct latent regressor.
    Direct,
    /// BiGAN encoder (pass the BiGAN generator as `--gan`).
    Bigan,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct Invert {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub method: InvertMethod,
    /// Generator checkpoint or directory.
    #[arg(long)]
    pub gan: PathBuf,
    /// Encoder checkpoint (all methods except `grad`).
    #[arg(long)]
    pub enc: Option<PathBuf>,
    /// Image file or directory of images.
    #[arg(long)]
    pub images: PathBuf,
    /// Descent steps for `grad` [default: config `gradient.steps`, else 500].
    #[arg(long)]
    pub steps: Option<usize>,
    /// Step size for `grad` [default: config `gradient.step_size`, else 0.1].
    #[arg(long)]
    pub step_size: Option<f32>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvalRecon {
    #[command(flatten)]
    pub common: Common,
    /// Generator checkpoint or directory (decoder for aegan, direct, random and grad).
    #[arg(long)]
    pub gan: PathBuf,
    /// Encoder to evaluate as `METHOD=PATH` with METHOD one of aegan, direct,
    /// bigan; or `random` for an untrained inverse generator. Repeatable.
    #[arg(long = "enc")]
    pub encoders: Vec<String>,
    /// BiGAN generator checkpoint, required with `--enc bigan=...`.
    #[arg(long)]
    pub bigan_gen: Option<PathBuf>,
    /// Also evaluate per-image gradient descent (config `gradient`).
    #[arg(long)]
    pub grad: bool,
    /// Generated samples per method [default: config `eval.n_samples`, else 256].
    #[arg(long)]
    pub n: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchMethod {
    /// Euclidean distance between inverse-generator latents.
    Aegan,
    Dhash,
    Phash,
    /// Color histogram intersection.
    Hist,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct Search {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value = "aegan")]
    pub method: SearchMethod,
    /// Existing latent index file.
    #[arg(long, conflicts_with = "build_index")]
    pub index: Option<PathBuf>,
    /// Corpus directory to index (saved as `index.aegidx` under `--out`);
    /// also serves as the corpus for baseline methods.
    #[arg(long)]
    pub build_index: Option<PathBuf>,
    /// Corpus directory for baseline methods and result grids.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Inverse generator checkpoint (required for `aegan`).
    #[arg(long)]
    pub enc: Option<PathBuf>,
    /// Query image file or directory.
    #[arg(long)]
    pub query: PathBuf,
    /// Results per query [default: config `search.k`, else 5].
    #[arg(long)]
    pub k: Option<usize>,
    /// Query perturbation: `brightness:D`, `swap:A,B,C` or `occlude:TOP,LEFT,H,W[,VALUE]`.
    #[arg(long)]
    pub perturb: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct Superres {
    #[command(flatten)]
    pub common: Common,
    /// Generator checkpoint or directory.
    #[arg(long)]
    pub gan: PathBuf,
    /// Inverse generator checkpoint.
    #[arg(long)]
    pub ig: PathBuf,
    /// Image file or directory; generated samples are used when omitted.
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// Generated samples when `--images` is omitted [default: config `superres.n_samples`, else 64].
    #[arg(long)]
    pub n: Option<usize>,
    /// Blur standard deviation in pixels [default: config `superres.sigma`, else 1.0].
    #[arg(long)]
    pub sigma: Option<f32>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct Gradcheck {
    /// Seed for the random test shapes.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Directory for `gradcheck.csv` and a manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct Replay {
    /// Manifest written by an earlier command.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output directory [default: the original one].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::TrainGan(_) => "train-gan",
            Command::TrainIg(_) => "train-ig",
            Command::TrainBaseline(_) => "train-baseline",
            Command::Invert(_) => "invert",
            Command::EvalRecon(_) => "eval-recon",
            Command::Search(_) => "search",
            Command::Superres(_) => "superres",
            Command::Gradcheck(_) => "gradcheck",
            Command::Replay(_) => "replay",
        }
    }

    pub fn common(&self) -> Option<&Common> {
        match self {
            Command::GenData(a) => Some(&a.common),
            Command::TrainGan(a) => Some(&a.common),
            Command::TrainIg(a) => Some(&a.common),
            Command::TrainBaseline(a) => Some(&a.common),
            Command::Invert(a) => Some(&a.common),
            Command::EvalRecon(a) => Some(&a.common),
            Command::Search(a) => Some(&a.common),
            Command::Superres(a) => Some(&a.common),
            Command::Gradcheck(_) | Command::Replay(_) => None,
        }
    }

    /// Output directory, if the command has one.
    pub fn out(&self) -> Option<&PathBuf> {
        match self {
            Command::GenData(a) => Some(&a.out),
            Command::TrainGan(a) => Some(&a.out),
            Command::TrainIg(a) => Some(&a.out),
            Command::TrainBaseline(a) => Some(&a.out),
            Command::Invert(a) => Some(&a.out),
            Command::EvalRecon(a) => Some(&a.out),
            Command::Search(a) => Some(&a.out),
            Command::Superres(a) => Some(&a.out),
            Command::Gradcheck(a) => a.out.as_ref(),
            Command::Replay(a) => a.out.as_ref(),
        }
    }

    pub fn set_out(&mut self, out: PathBuf) {
        match self {
            Command::GenData(a) => a.out = out,
            Command::TrainGan(a) => a.out = out,
            Command::TrainIg(a) => a.out = out,
            Command::TrainBaseline(a) => a.out = out,
            Command::Invert(a) => a.out = out,
            Command::EvalRecon(a) => a.out = out,
            Command::Search(a) => a.out = out,
            Command::Superres(a) => a.out = out,
            Command::Gradcheck(a) => a.out = Some(out),
            Command::Replay(a) => a.out = Some(out),
        }
    }
}
