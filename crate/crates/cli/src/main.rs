//! `panogeo` command-line front end.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::report::ReportMode;

/// Panoramic depth and normal geometry toolkit.
#[derive(Debug, Parser)]
#[command(name = "panogeo", version, about)]
struct Cli {
    /// Config file with `key = value` lines; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads [default: all cores; PANOGEO_THREADS overrides the
    /// config file]
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Report format [default: kv]
    #[arg(long, global = true, value_enum)]
    report: Option<ReportMode>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Resample a euclidean ERP depth map into a six-face cubemap stack.
    Erp2cube(Erp2cubeArgs),
    /// Assemble a cubemap depth stack into a euclidean ERP depth map.
    Cube2erp(Cube2erpArgs),
    /// Estimate world-frame surface normals from a cubemap depth stack.
    Normals(NormalsArgs),
    /// Lift depth (cubemap stack or ERP file) to a PLY point cloud.
    Pcl(PclArgs),
    /// Estimate a log shift, a median metric scale or an affine alignment.
    Align(AlignArgs),
    /// Depth (and optionally normal) metrics of a prediction.
    Eval(EvalArgs),
    /// Seam consistency of a cubemap depth stack.
    Seams(SeamsArgs),
    /// Render an analytic scene to depth and normal files.
    Synth(SynthArgs),
    /// Evaluate the training losses on given rasters.
    Losses(LossesArgs),
}

#[derive(Debug, Args)]
struct Erp2cubeArgs {
    /// ERP depth map (PFM)
    #[arg(long)]
    input: PathBuf,
    /// Output directory for the face stack
    #[arg(long)]
    output: PathBuf,
    /// Face side in pixels [default: 512]
    #[arg(long)]
    side: Option<usize>,
}

#[derive(Debug, Args)]
struct Cube2erpArgs {
    /// Cubemap depth stack directory
    #[arg(long)]
    input: PathBuf,
    /// Output ERP depth map (PFM)
    #[arg(long)]
    output: PathBuf,
    /// ERP width in pixels [default: 1024]
    #[arg(long)]
    width: Option<usize>,
}

#[derive(Debug, Args)]
struct SkyArgs {
    /// Sky probability stack directory (or PFM file for ERP input)
    #[arg(long)]
    sky: Option<PathBuf>,
    /// Probability above which a pixel is sky [default: 0.5]
    #[arg(long, allow_negative_numbers = true)]
    sky_threshold: Option<f64>,
}

#[derive(Debug, Args)]
struct NormalsArgs {
    /// Cubemap depth stack directory
    #[arg(long)]
    input: PathBuf,
    /// Output directory for the normal stack
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    sky: SkyArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PlyFormat {
    Ascii,
    Binary,
}

#[derive(Debug, Args)]
struct PclArgs {
    /// Cubemap depth stack directory or euclidean ERP depth map
    #[arg(long)]
    input: PathBuf,
    /// Output PLY file
    #[arg(long)]
    output: PathBuf,
    /// PLY encoding
    #[arg(long, value_enum, default_value = "binary")]
    encoding: PlyFormat,
    #[command(flatten)]
    sky: SkyArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AlignMode {
    /// Closed-form log shift between prediction and ground truth
    Beta,
    /// Median of coarse metric minus pooled prediction over the anchor grid
    Metric,
    /// Least-squares scale and shift in linear depth
    Lstsq,
}

#[derive(Debug, Args)]
struct AlignArgs {
    #[arg(long, value_enum)]
    mode: AlignMode,
    /// Prediction (scale-invariant depth) PFM
    #[arg(long)]
    pred: PathBuf,
    /// Reference PFM: ground truth, or the coarse metric map in metric mode
    #[arg(long = "reference", visible_aliases = ["gt", "coarse"])]
    reference: PathBuf,
    /// Anchor downsampling factor [default: 4]
    #[arg(long = "F", value_name = "F")]
    anchor_factor: Option<usize>,
    /// Write the aligned prediction here
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EvalAlign {
    None,
    Lstsq,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Predicted depth PFM, or a directory of them
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth depth PFM, or a directory with the same file names
    #[arg(long)]
    gt: PathBuf,
    /// Alignment applied to the prediction before scoring
    #[arg(long, value_enum, default_value = "none")]
    align: EvalAlign,
    /// Ground-truth depth range in meters [default: 0 75]
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true)]
    range: Option<Vec<f64>>,
    /// Predicted normals (3-channel PFM)
    #[arg(long, requires = "gt_normals")]
    pred_normals: Option<PathBuf>,
    /// Ground-truth normals (3-channel PFM)
    #[arg(long, requires = "pred_normals")]
    gt_normals: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SeamsArgs {
    /// Cubemap depth stack directory (or a synth output directory)
    #[arg(long)]
    input: PathBuf,
    /// Log-depth jump that makes a pixel pair a defect [default: 0.05]
    #[arg(long, allow_negative_numbers = true)]
    tau: Option<f64>,
    /// Mean log-depth jump that makes an edge severe [default: 0.1]
    #[arg(long, allow_negative_numbers = true)]
    gamma: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SceneKind {
    Sphere,
    Box,
    Plane,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, value_enum)]
    scene: SceneKind,
    /// Sphere radius in meters
    #[arg(long, default_value_t = 2.0, allow_negative_numbers = true)]
    radius: f64,
    /// Box half extents a,b,c in meters
    #[arg(long, default_value = "1,1,1")]
    half_extents: String,
    /// Camera position x,y,z inside the box
    #[arg(long, default_value = "0,0,0", allow_hyphen_values = true)]
    camera: String,
    /// Unit plane normal x,y,z
    #[arg(long, default_value = "0,0,1", allow_hyphen_values = true)]
    normal: String,
    /// Plane offset along the normal, > 0
    #[arg(long, default_value_t = 3.0, allow_negative_numbers = true)]
    offset: f64,
    /// Face side in pixels [default: 512]
    #[arg(long)]
    side: Option<usize>,
    /// Also render ERP depth and normals at this width
    #[arg(long)]
    width: Option<usize>,
    /// Output directory
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct LossesArgs {
    /// Predicted depth PFM (log depth, or linear depth converted to log)
    #[arg(long, requires = "gt")]
    pred: Option<PathBuf>,
    /// Ground-truth depth PFM
    #[arg(long, requires = "pred")]
    gt: Option<PathBuf>,
    /// Confidence PFM [default: all ones]
    #[arg(long)]
    conf: Option<PathBuf>,
    /// Ground-truth normals (3-channel PFM) for the consistency term
    #[arg(long)]
    gt_normals: Option<PathBuf>,
    /// Face the depth maps belong to, when no sidecar says so
    #[arg(long)]
    face: Option<String>,
    /// Sky probability PFM
    #[arg(long, requires = "target")]
    prob: Option<PathBuf>,
    /// Sky target PFM with values 0 or 1
    #[arg(long, requires = "prob")]
    target: Option<PathBuf>,
}

fn build_config(cli: &Cli) -> panogeo::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Ok(v) = std::env::var("PANOGEO_THREADS") {
        let n = v
            .trim()
            .parse()
            .map_err(|_| panogeo::Error::Domain(format!("PANOGEO_THREADS={v:?} is not a thread count")))?;
        cfg.threads = Some(n);
    }
    if let Some(n) = cli.threads {
        cfg.threads = Some(n);
    }
    if let Some(r) = cli.report {
        cfg.report = r;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> panogeo::Result<String> {
    let cfg = build_config(&cli)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| panogeo::Error::Domain(format!("cannot start {:?} worker threads: {e}", cfg.threads)))?;
    pool.install(|| commands::dispatch(cli.command, cfg))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("panogeo: {msg}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
