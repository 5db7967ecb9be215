//! `pccse`: pose-constrained dense correspondence from the command line.
//!
//! Every failure exits with status 1 and prints one JSON object on stderr:
//! `{"error": {"kind": ..., "message": ..., "flag": ...}}`.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::{ContextKind, ContextValue, ErrorKind};
use clap::{Args, Parser, Subcommand, ValueEnum};
use pccse_core::config::ConfigLayer;
use pccse_core::pipeline::Mode;
use pccse_core::SkeletonKind;

#[derive(Debug, Parser)]
#[command(name = "pccse", version, about = "Pose-constrained pixel-to-vertex assignment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Assign mesh vertices to the foreground pixels of one instance or a directory of them.
    Assign(AssignArgs),
    /// Rasterize the proximal-region label map of an instance.
    Regions(RegionsArgs),
    /// GPS per instance and AP over an instance set.
    Evaluate(EvaluateArgs),
    /// Audit ground-truth annotations and write a removal list.
    Check(CheckArgs),
    /// Color-code a UV map as a PNG.
    Render(RenderArgs),
    /// AP of constrained assignment over a list of bone-width factors.
    AblateDelta(AblateArgs),
    /// Per-frame apparent height from a skeleton sequence.
    HeightTrack(HeightArgs),
    /// Write the synthetic mannequin corpus.
    Fixtures(FixturesArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Baseline,
    Constrained,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Baseline => Mode::Baseline,
            ModeArg::Constrained => Mode::Constrained,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SkeletonArg {
    Coco17,
    Wholebody133,
}

impl From<SkeletonArg> for SkeletonKind {
    fn from(s: SkeletonArg) -> SkeletonKind {
        match s {
            SkeletonArg::Coco17 => SkeletonKind::Coco17,
            SkeletonArg::Wholebody133 => SkeletonKind::WholeBody133,
        }
    }
}

/// Engine settings shared by every subcommand.
#[derive(Debug, Args)]
struct EngineArgs {
    /// JSON config file; overrides `PCCSE_CONFIG`, overridden by flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Bone-width factor (model units).
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    presence_threshold: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    canonical_height: Option<f64>,
    #[arg(long)]
    hand_foot_radius_factor: Option<f64>,
}

impl EngineArgs {
    fn layer(&self) -> ConfigLayer {
        ConfigLayer {
            delta: self.delta,
            presence_threshold: self.presence_threshold,
            kappa: self.kappa,
            canonical_height: self.canonical_height,
            hand_foot_radius_factor: self.hand_foot_radius_factor,
            audit: None,
        }
    }
}

#[derive(Debug, Args)]
struct AssignArgs {
    /// Instance JSON, or a directory of them.
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    mesh: PathBuf,
    /// Vertex embeddings (PCT1 f32 [N, D]).
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long, value_enum)]
    skeleton: Option<SkeletonArg>,
    #[arg(long, value_enum, default_value = "constrained")]
    mode: ModeArg,
    /// Precomputed label map (PCT1 u16) instead of building regions.
    #[arg(long, conflicts_with = "all_labels")]
    labels: Option<PathBuf>,
    /// Allow every partition at every pixel.
    #[arg(long)]
    all_labels: bool,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Debug, Args)]
struct RegionsArgs {
    /// Instance JSON, or a directory of them.
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    mesh: PathBuf,
    #[arg(long, value_enum)]
    skeleton: Option<SkeletonArg>,
    /// Output label map file, or directory when `--instance` is a directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Instance-set JSON.
    #[arg(long)]
    set: PathBuf,
    #[arg(long)]
    mesh: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long, value_enum, default_value = "constrained")]
    mode: ModeArg,
    #[arg(long, value_enum)]
    skeleton: Option<SkeletonArg>,
    /// Removal list written by `check`; removed points are not evaluated.
    #[arg(long)]
    ignore_flagged: Option<PathBuf>,
    /// Output JSON.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Debug, Args)]
struct CheckArgs {
    #[arg(long)]
    set: PathBuf,
    #[arg(long)]
    mesh: PathBuf,
    /// Consistency report JSON.
    #[arg(long)]
    report: PathBuf,
    /// Removal list JSON.
    #[arg(long)]
    removal: PathBuf,
    #[arg(long)]
    bone_distance_max: Option<f64>,
    #[arg(long)]
    mask_in_bbox_min: Option<f64>,
    #[arg(long)]
    points_in_mask_min: Option<f64>,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Debug, Args)]
struct RenderArgs {
    /// Directory written by `assign`.
    #[arg(long)]
    uvmap: PathBuf,
    #[arg(long)]
    mesh: PathBuf,
    /// Output PNG.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[arg(long)]
    set: PathBuf,
    #[arg(long)]
    mesh: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    /// Comma-separated factors; `diag` sets the radius to the image diagonal.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    deltas: Vec<String>,
    #[arg(long, value_enum)]
    skeleton: Option<SkeletonArg>,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Debug, Args)]
struct HeightArgs {
    /// Frames JSON: `{"kind": ..., "frames": [[x, y, c, ...], ...]}`.
    #[arg(long)]
    frames: PathBuf,
    #[arg(long)]
    mesh: PathBuf,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Debug, Args)]
struct FixturesArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

fn error_json(kind: &str, message: &str, flag: Option<String>) -> String {
    let mut err = serde_json::json!({ "kind": kind, "message": message });
    if let Some(f) = flag {
        err["flag"] = serde_json::Value::String(f);
    }
    serde_json::json!({ "error": err }).to_string()
}

fn usage_flag(err: &clap::Error) -> Option<String> {
    match err.get(ContextKind::InvalidArg) {
        Some(ContextValue::String(s)) => Some(s.clone()),
        Some(ContextValue::Strings(v)) => Some(v.join(", ")),
        _ => None,
    }
    .map(|s| s.split_whitespace().next().unwrap_or_default().to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.render().to_string();
            let message = rendered
                .lines()
                .take_while(|l| !l.starts_with("Usage:"))
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .collect::<Vec<_>>()
                .join(" ");
            let message = message.trim_start_matches("error: ");
            eprintln!("{}", error_json("usage", message, usage_flag(&e)));
            return ExitCode::FAILURE;
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Context layers are only visible through anyhow's own downcast;
            // plain error sources only through the chain.
            let kind = e
                .downcast_ref::<pccse_core::Error>()
                .or_else(|| e.chain().find_map(|c| c.downcast_ref()))
                .map_or("error", pccse_core::Error::kind);
            let flag = e
                .downcast_ref::<commands::FlagError>()
                .or_else(|| e.chain().find_map(|c| c.downcast_ref()))
                .map(|f| f.flag.to_string());
            eprintln!("{}", error_json(kind, &format!("{e:#}"), flag));
            ExitCode::FAILURE
        }
    }
}
