use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{ArgGroup, Args, Parser, Subcommand};

mod commands;
mod config;

use config::{RunConfig, Size};

const FORMATS: &str = "\
FILE FORMATS:
  clip directory   frame_000000.png, frame_000001.png, ... plus clip.json:
                   {\"fps\": f, \"width\": n, \"height\": n, \"frame_count\": n,
                    \"label\": \"ArmFlapping\"|\"HeadBanging\"|\"Spinning\"}
  dataset root     <root>/<ClassName>/<clip_id>/  (one clip directory each)
  manifest         JSON {\"schema_version\": 1, \"entries\": [...]}; entry paths are
                   relative to the manifest's directory
  segments         text lines `clip_id start_frame end_frame` (end exclusive)
  detections       <dir>/<clip_id>.jsonl, one JSON object per frame:
                   {\"frame_index\": i, \"detections\": [{\"x1\":n,\"y1\":n,\"x2\":n,\"y2\":n,
                    \"conf\":f,\"cls\":n}, ...]}; missing frames have no detections
  predictions      CSV with header: clip_id,true_label,pred_label,p0,p1,p2
  config           key=value lines; keys mirror flag names (alpha, theta, beta,
                   target-size, on-no-detection, ratios, seed, rho, jobs)
";

/// Preprocessing, augmentation, dataset and evaluation tools for
/// gesture-video datasets.
#[derive(Debug, Parser)]
#[command(name = "stimprep", version, after_help = FORMATS)]
struct Cli {
    /// key=value configuration file; command-line flags take precedence
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Worker threads (default: number of CPUs)
    #[arg(long, short = 'j', global = true, value_name = "N")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Catalog <root>/<Class>/<clip_id>/ clip directories into a manifest
    #[command(after_help = FORMATS)]
    Scan {
        root: PathBuf,
        /// Output manifest (default: <root>/manifest.json)
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Cut clips into the frame ranges listed in a segments file
    #[command(after_help = FORMATS)]
    Trim {
        manifest: PathBuf,
        /// Segments file: `clip_id start end` per line
        #[arg(long)]
        segments: PathBuf,
        /// Output dataset directory; clips not listed are copied unchanged
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Keep the largest detection in each frame, black out the rest and resize
    #[command(after_help = FORMATS)]
    Mask {
        manifest: PathBuf,
        /// Directory of <clip_id>.jsonl detection files
        #[arg(long)]
        detections: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        /// Output frame size WIDTHxHEIGHT [default: 224x224]
        #[arg(long, value_name = "WxH")]
        target_size: Option<Size>,
        /// passthrough | blackout | skip_frame [default: passthrough]
        #[arg(long, value_name = "POLICY")]
        on_no_detection: Option<String>,
    },
    /// Write augmented copies of every clip (original + transforms)
    #[command(after_help = FORMATS)]
    Augment(AugmentArgs),
    /// Stratified train/val/test assignment
    #[command(after_help = FORMATS)]
    Split {
        manifest: PathBuf,
        /// train:val:test weights [default: 70:15:15]
        #[arg(long)]
        ratios: Option<String>,
        /// Shuffle seed [default: 0]
        #[arg(long)]
        seed: Option<u64>,
        /// Output manifest (default: <manifest stem>.split.json next to the input)
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Reassign entries that already have a split
        #[arg(long)]
        force: bool,
    },
    /// Per-class frame count, frame size and duration statistics
    #[command(after_help = FORMATS)]
    Stats {
        manifest: PathBuf,
        /// JSON output (default: stats.json next to the manifest)
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Accuracy, precision/recall/F1, confusion matrix and cross-entropy
    #[command(after_help = FORMATS)]
    Eval {
        predictions: PathBuf,
        /// JSON report (default: <predictions stem>.report.json)
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Token grid and tube mask for a clip geometry, as JSON
    Tubemask {
        /// Clip length in frames
        #[arg(long)]
        frames: usize,
        /// Frame size HEIGHTxWIDTH
        #[arg(long, value_name = "HxW")]
        size: Size,
        /// Fraction of spatial positions to mask, in [0, 1)
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 2)]
        temporal_patch: usize,
        /// Spatial patch edge in pixels
        #[arg(long, default_value_t = 16)]
        patch: usize,
        /// Also write the JSON here
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("which").required(true).args(["all", "transform"])))]
pub struct AugmentArgs {
    pub manifest: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
    /// Apply all six transforms
    #[arg(long, conflicts_with = "transform")]
    pub all: bool,
    /// Transform to apply (repeatable): hflip, vflip, upsample, rotate,
    /// invert, downsample
    #[arg(long, short)]
    pub transform: Vec<String>,
    /// Leave the untransformed original out of the output
    #[arg(long)]
    pub no_original: bool,
    /// Upsample factor, > 1 [default: 1.5]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Rotation angle in degrees (the "random rotate" transform uses this
    /// fixed angle) [default: 25]
    #[arg(long, allow_hyphen_values = true)]
    pub theta: Option<f64>,
    /// Temporal downsample factor [default: 2]
    #[arg(long)]
    pub beta: Option<usize>,
}

/// Missing or inconsistent arguments detected after parsing.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn default_sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    path.with_file_name(format!("{stem}{suffix}"))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let jobs = cfg.resolve_opt(cli.jobs, "jobs")?;
    if let Some(n) = jobs.filter(|&n| n > 0) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker pool")?;
    }

    match cli.command {
        Command::Scan { root, out } => {
            let out = out.unwrap_or_else(|| root.join("manifest.json"));
            commands::scan(&root, &out)
        }
        Command::Trim {
            manifest,
            segments,
            out,
        } => commands::trim(&manifest, &segments, &out),
        Command::Mask {
            manifest,
            detections,
            out,
            target_size,
            on_no_detection,
        } => {
            let size = cfg.resolve(target_size, "target-size", Size(224, 224))?;
            let policy = cfg.resolve(on_no_detection, "on-no-detection", "passthrough".into())?;
            let config = stimprep_core::masking::MaskingConfig::new((size.0, size.1), policy.parse()?)?;
            commands::mask(&manifest, &detections, &out, &config)
        }
        Command::Augment(args) => {
            let params = stimprep_core::augment::AugmentParams::new(
                cfg.resolve(args.alpha, "alpha", 1.5)?,
                cfg.resolve(args.theta, "theta", 25.0)?,
                cfg.resolve(args.beta, "beta", 2)?,
            )?;
            let kinds = if args.all {
                stimprep_core::augment::TransformKind::ALL.to_vec()
            } else {
                args.transform
                    .iter()
                    .map(|t| t.parse())
                    .collect::<stimprep_core::Result<Vec<_>>>()?
            };
            commands::augment(&args.manifest, &args.out, &params, &kinds, !args.no_original)
        }
        Command::Split {
            manifest,
            ratios,
            seed,
            out,
            force,
        } => {
            let seed = cfg.resolve(seed, "seed", 0)?;
            let ratios = cfg.resolve(ratios, "ratios", "70:15:15".into())?;
            let ratios = stimprep_core::dataset::SplitRatios::parse(&ratios, seed)?;
            let out = out.unwrap_or_else(|| default_sibling(&manifest, ".split.json"));
            commands::split(&manifest, &out, &ratios, force)
        }
        Command::Stats { manifest, out } => {
            let out = out.unwrap_or_else(|| {
                stimprep_core::dataset::manifest_base(&manifest).join("stats.json")
            });
            commands::stats(&manifest, &out)
        }
        Command::Eval { predictions, out } => {
            let out = out.unwrap_or_else(|| default_sibling(&predictions, ".report.json"));
            commands::eval(&predictions, &out)
        }
        Command::Tubemask {
            frames,
            size,
            rho,
            seed,
            temporal_patch,
            patch,
            out,
        } => {
            let rho = cfg
                .resolve_opt(rho, "rho")?
                .ok_or_else(|| UsageError("tubemask: --rho is required".into()))?;
            let seed = cfg.resolve(seed, "seed", 0)?;
            let spec = stimprep_core::tubemask::PatchSpec::new(temporal_patch, (patch, patch), 768)?;
            commands::tubemask((frames, size.0, size.1), &spec, rho, seed, out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
