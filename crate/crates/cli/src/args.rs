//! Command-line grammar.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "gsanim", version, about = "Animatable Gaussian avatars from posed scans")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long, global = true, env = "GSANIM_THREADS")]
    pub threads: Option<usize>,
    /// Seed for every randomized step [default: 0, or the config's seed].
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run manifest path; defaults to `<first output>.manifest.json`.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Move a posed scan to the model's canonical pose.
    Canonicalize(CanonicalizeArgs),
    /// Build the canonical Gaussian template of a UV-mapped canonical mesh.
    Template(TemplateArgs),
    /// Re-pose a bound template, optionally refining the result.
    Animate(AnimateArgs),
    /// Render a Gaussian set from one camera.
    Render(RenderArgs),
    /// Train the refinement networks on synthetic displaced-limb data.
    TrainRefiner(TrainArgs),
    /// Geometry and image metrics of a prediction against ground truth.
    Evaluate(EvaluateArgs),
    /// Time a pipeline stage on a synthetic scene.
    Bench(BenchArgs),
    /// Write a complete synthetic input set to a directory.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct CanonicalizeArgs {
    /// Posed scan, OBJ or PLY.
    #[arg(long)]
    pub scan: PathBuf,
    /// Body model JSON.
    #[arg(long)]
    pub model: PathBuf,
    /// Pose of the scan.
    #[arg(long)]
    pub pose: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TemplateArgs {
    /// Canonical mesh with UVs.
    #[arg(long)]
    pub canon: PathBuf,
    /// Texture image, PNG or raw f32.
    #[arg(long)]
    pub texture: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Network checkpoint.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Output splat PLY.
    #[arg(long)]
    pub out: PathBuf,
    /// UV raster size; one Gaussian per covered texel.
    #[arg(long, default_value_t = 64)]
    pub uv_resolution: usize,
    /// Bound on the predicted center offset, meters.
    #[arg(long, default_value_t = 0.02)]
    pub max_offset: f64,
}

#[derive(Debug, Args)]
pub struct AnimateArgs {
    /// Canonical splat PLY; bound to the model if it carries no skinning.
    #[arg(long)]
    pub template: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Target pose.
    #[arg(long)]
    pub pose: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Run the learned refinement after skinning.
    #[arg(long, requires = "ckpt")]
    pub refine: bool,
    /// Checkpoint for `--refine`.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Rig resolution used by refinement.
    #[arg(long, default_value_t = 64)]
    pub resolution: usize,
    /// Also rotate each Gaussian's frame by its blended transform.
    #[arg(long)]
    pub rotate_frames: bool,
    /// Refinement center-correction bound, meters.
    #[arg(long, default_value_t = 0.02)]
    pub max_offset: f64,
    /// Refinement prune threshold on opacity.
    #[arg(long, default_value_t = gsanim_core::gaussian::DEFAULT_OPACITY_THRESHOLD)]
    pub opacity_threshold: f64,
    /// Number of Gaussians split after refinement.
    #[arg(long, default_value_t = 0)]
    pub top_k: usize,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Splat PLY.
    #[arg(long)]
    pub gaussians: PathBuf,
    /// Camera JSON.
    #[arg(long)]
    pub camera: PathBuf,
    /// Color image, PNG or raw f32.
    #[arg(long)]
    pub out: PathBuf,
    /// Accumulated opacity image.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Background color as `r,g,b` in [0, 1].
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.0, 0.0, 0.0])]
    pub background: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training config JSON; flags below override it.
    #[arg(long)]
    pub config: PathBuf,
    /// Output checkpoint.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss curve CSV.
    #[arg(long)]
    pub curve: PathBuf,
    /// Start from this checkpoint instead of fresh weights.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub resolution: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Predicted splat PLY, or a mesh.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground truth: a mesh (OBJ/PLY) or a splat PLY.
    #[arg(long)]
    pub truth: PathBuf,
    /// Camera rig JSON for the image metrics.
    #[arg(long)]
    pub views: PathBuf,
    /// Report JSON.
    #[arg(long)]
    pub report: PathBuf,
    /// Flat one-row CSV of the same report.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Surface samples drawn from a mesh.
    #[arg(long, default_value_t = 20_000)]
    pub samples: usize,
    /// F-score threshold, centimeters.
    #[arg(long, default_value_t = gsanim_core::metrics::DEFAULT_TAU_CM)]
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Stage {
    /// Linear blend skinning of Gaussian centers.
    Skin,
    /// Skinning with frame rotation.
    Animate,
    /// Four-view render.
    Render,
    /// Animate followed by the four-view render.
    Pipeline,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum)]
    pub stage: Stage,
    /// Number of synthetic Gaussians.
    #[arg(long)]
    pub gaussians: usize,
    /// Timed iterations.
    #[arg(long)]
    pub iters: usize,
    #[arg(long, default_value_t = 3)]
    pub warmup: usize,
    /// Render resolution.
    #[arg(long, default_value_t = 256)]
    pub resolution: usize,
    /// Timing report JSON; printed to stdout as well.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// UV raster size written into the training config.
    #[arg(long, default_value_t = 32)]
    pub uv_resolution: usize,
}
