//! `lpi` — learn a part-blended signed distance field from a point
//! cloud, then reconstruct, partition, abstract and evaluate it.
//!
//! Exit codes: 0 success, 2 input error, 3 numerical abort, 4 metric
//! precondition failure.

mod commands;
mod config;
mod gt;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{load_file, resolve, Overrides};
use lpi_core::affinity::AffinityMode;
use lpi_core::error::Error;
use lpi_core::extract::MaskMode;
use lpi_core::train::LossMode;

#[derive(Parser)]
#[command(name = "lpi", version, about = "Part-blended neural signed distance fields")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Flags shared by every subcommand that reads settings. Each one has a
/// config-file key of the same name.
#[derive(Args, Clone, Default)]
struct Tuning {
    /// TOML config file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Settings bundle: full (defaults) or desk (small/fast)
    #[arg(long)]
    profile: Option<String>,
    /// Worker threads for grids and geodesic tables (env LPI_THREADS)
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Tuning {
    fn overrides(&self) -> Result<Overrides, Error> {
        Ok(Overrides {
            profile: self.profile.as_deref().map(str::parse).transpose()?,
            threads: self.threads,
            seed: self.seed,
            ..Overrides::default()
        })
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Input point cloud (.xyz or binary .ply)
    input: PathBuf,
    /// Checkpoint output path
    #[arg(long, default_value = "model.lpic")]
    out: PathBuf,
    #[command(flatten)]
    tuning: Tuning,
    /// Region center count I
    #[arg(long)]
    regions: Option<usize>,
    /// euclidean | intrinsic | semantic | average | nearest
    #[arg(long)]
    affinity: Option<String>,
    /// Affinity decay
    #[arg(long)]
    sigma: Option<f64>,
    /// Own-segment weight for semantic affinity
    #[arg(long)]
    own_weight: Option<f64>,
    /// Latent code width T
    #[arg(long)]
    latent_dim: Option<usize>,
    /// pulling | mse
    #[arg(long)]
    loss: Option<String>,
    /// Analytic distance source for MSE, e.g. sphere:0.3 or torus:0.25:0.1
    #[arg(long)]
    gt: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Queries sampled around each surface point
    #[arg(long)]
    per_point: Option<usize>,
    /// Neighbor rank that sets the query noise scale
    #[arg(long)]
    noise_knn: Option<usize>,
    /// kNN graph degree for geodesic tables
    #[arg(long)]
    knn: Option<usize>,
}

#[derive(Args)]
struct ExtractArgs {
    /// Trained checkpoint
    checkpoint: PathBuf,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[command(flatten)]
    tuning: Tuning,
    /// Grid nodes per axis
    #[arg(long)]
    resolution: Option<usize>,
    /// unseen | clamp: how masked cells evaluate during part extraction
    #[arg(long)]
    mask_mode: Option<String>,
}

#[derive(Args)]
struct RelevelArgs {
    #[command(flatten)]
    extract: ExtractArgs,
    /// Comma-separated part counts, e.g. 2,4,8
    #[arg(long, required = true)]
    levels: String,
}

#[derive(Args)]
struct AbstractArgs {
    #[command(flatten)]
    extract: ExtractArgs,
    /// Part count before hulling (default: all stored centers)
    #[arg(long)]
    level: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// Reconstructed mesh (.obj)
    mesh: PathBuf,
    /// Reference mesh (.obj)
    reference: PathBuf,
    #[command(flatten)]
    tuning: Tuning,
    /// F-score threshold
    #[arg(long)]
    mu: Option<f64>,
    /// Surface samples per mesh
    #[arg(long)]
    samples: Option<usize>,
    /// Also compute volumetric IoU (meshes must be watertight)
    #[arg(long)]
    iou: bool,
    /// Voxel resolution for IoU
    #[arg(long)]
    resolution: Option<usize>,
    /// Also write the JSON report here
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    checkpoint: PathBuf,
    /// Machine-readable output
    #[arg(long)]
    json: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit a signed distance field to a point cloud
    Train(TrainArgs),
    /// Extract the global surface from a checkpoint
    Reconstruct(ExtractArgs),
    /// Extract one mesh per region center
    Parts(ExtractArgs),
    /// Re-partition into fewer parts without retraining
    Relevel(RelevelArgs),
    /// Replace each part with its convex hull
    Abstract(AbstractArgs),
    /// Compare two meshes: Chamfer, normal consistency, F-score, IoU
    Eval(EvalArgs),
    /// Summarize a checkpoint
    Inspect(InspectArgs),
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.cmd {
        Cmd::Train(a) => {
            let file = a.tuning.config.as_deref().map(load_file).transpose()?;
            let mut o = a.tuning.overrides()?;
            o.regions = a.regions;
            o.affinity = a.affinity.as_deref().map(str::parse::<AffinityMode>).transpose()?;
            o.sigma = a.sigma;
            o.own_weight = a.own_weight;
            o.latent_dim = a.latent_dim;
            o.loss = a.loss.as_deref().map(str::parse::<LossMode>).transpose()?;
            o.gt = a.gt.clone();
            o.steps = a.steps;
            o.batch = a.batch;
            o.lr = a.lr;
            o.per_point = a.per_point;
            o.noise_knn = a.noise_knn;
            o.knn = a.knn;
            let settings = resolve(file.as_ref(), &o)?;
            commands::run_train(&a.input, &a.out, &settings)
        }
        Cmd::Reconstruct(a) => {
            let settings = extract_settings(&a)?;
            commands::run_reconstruct(&a.checkpoint, &a.out, &settings)
        }
        Cmd::Parts(a) => {
            let settings = extract_settings(&a)?;
            commands::run_parts(&a.checkpoint, &a.out, &settings)
        }
        Cmd::Relevel(a) => {
            let settings = extract_settings(&a.extract)?;
            let levels = parse_levels(&a.levels)?;
            commands::run_relevel(&a.extract.checkpoint, &a.extract.out, &levels, &settings)
        }
        Cmd::Abstract(a) => {
            let settings = extract_settings(&a.extract)?;
            commands::run_abstract(&a.extract.checkpoint, &a.extract.out, a.level, &settings)
        }
        Cmd::Eval(a) => {
            let file = a.tuning.config.as_deref().map(load_file).transpose()?;
            let mut o = a.tuning.overrides()?;
            o.mu = a.mu;
            o.samples = a.samples;
            o.resolution = a.resolution;
            let settings = resolve(file.as_ref(), &o)?;
            commands::run_eval(&a.mesh, &a.reference, a.iou, a.out.as_deref(), &settings)
        }
        Cmd::Inspect(a) => commands::run_inspect(&a.checkpoint, a.json),
    }
}

fn extract_settings(a: &ExtractArgs) -> Result<config::Settings, Error> {
    let file = a.tuning.config.as_deref().map(load_file).transpose()?;
    let mut o = a.tuning.overrides()?;
    o.resolution = a.resolution;
    o.mask_mode = a.mask_mode.as_deref().map(str::parse::<MaskMode>).transpose()?;
    resolve(file.as_ref(), &o)
}

fn parse_levels(spec: &str) -> Result<Vec<usize>, Error> {
    let levels: Result<Vec<usize>, Error> = spec
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidArgument(format!("bad level '{t}' in --levels")))
        })
        .collect();
    let levels = levels?;
    if levels.is_empty() {
        return Err(Error::InvalidArgument("--levels needs at least one count".into()));
    }
    Ok(levels)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NumericalError(_) | Error::EmptyBatch | Error::EmptyMesh => 3,
        Error::NonWatertight(_) => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    // keep clap's usage failures on the input-error code
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(2),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
