use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Clone, Parser)]
#[command(name = "gridpop", version, about = "Tile, label and map population from settlement imagery")]
pub struct Cli {
    /// TOML config file (key = value; a [split] table maps site ids to train/val).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Work directory shared by all stages.
    #[arg(long, global = true, default_value = "work")]
    pub work: PathBuf,

    /// Worker threads for per-tile stages (default: available cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    #[command(flatten)]
    pub overrides: ConfigFlags,

    #[command(subcommand)]
    pub command: Command,
}

/// Flags that override config-file values.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigFlags {
    #[arg(long, global = true)]
    pub tile_size_m: Option<f64>,
    #[arg(long, global = true)]
    pub target_px: Option<usize>,
    #[arg(long, global = true)]
    pub cloud_white_level: Option<u8>,
    #[arg(long, global = true)]
    pub cloud_max_ratio: Option<f64>,
    #[arg(long, global = true)]
    pub residential_threshold: Option<f64>,
    #[arg(long, global = true)]
    pub supersample: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub learning_rate: Option<f64>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    /// Site id exempt from the cloud filter (repeatable).
    #[arg(long = "cloud-exempt", global = true)]
    pub cloud_exempt: Vec<String>,
    /// Split assignment `SITE=train|val` (repeatable).
    #[arg(long = "split", global = true, value_name = "SITE=SPLIT")]
    pub split: Vec<String>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Build the tile grid and write resampled tiles for each site.
    Tile(TileArgs),
    /// Label every tile and write the manifest.
    Label(LabelArgs),
    /// Train the tile classifier on the train split.
    Train(TrainArgs),
    /// Evaluate a model on one split of the manifest.
    Eval(EvalArgs),
    /// Allocate site population totals over the grid.
    Popmap(PopmapArgs),
    /// Generate a synthetic settlement with exact truth.
    Synth(SynthArgs),
    /// Summarize the work directory.
    Report,
}

#[derive(Debug, Clone, Args)]
pub struct TileArgs {
    /// Site id (repeatable; pairs with --raster and --footprints in order).
    #[arg(long = "site", required = true)]
    pub sites: Vec<String>,
    /// PNG raster with a .pgw world file and .crs.json sidecar.
    #[arg(long = "raster", required = true)]
    pub rasters: Vec<PathBuf>,
    /// GeoJSON footprints with a .crs.json sidecar.
    #[arg(long = "footprints", required = true)]
    pub footprints: Vec<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct LabelArgs {
    /// Also write coverage masks as grayscale PNGs.
    #[arg(long)]
    pub masks: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Manifest path (default: <work>/manifest.jsonl).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Model file (default: <work>/model.txt).
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Split to evaluate: train or val.
    #[arg(long = "on", default_value = "val", value_name = "SPLIT")]
    pub on: String,
}

#[derive(Debug, Clone, Args)]
pub struct PopmapArgs {
    /// Population total per site as `SITE=PERSONS` (repeatable).
    #[arg(long = "total", required = true, value_name = "SITE=PERSONS")]
    pub totals: Vec<String>,
    /// Tile weights: occupancy, binary or probability.
    #[arg(long, default_value = "occupancy")]
    pub mode: String,
    /// Model for probability weights (default: <work>/model.txt).
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Aggregate factor x factor blocks of tiles.
    #[arg(long, default_value_t = 1)]
    pub factor: usize,
    /// Also write cell polygons as GeoJSON.
    #[arg(long)]
    pub geojson: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Scene parameters (TOML or JSON); omitted keys take their defaults.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long, default_value = "synth")]
    pub site: String,
    /// Output directory (default: <work>/synth).
    #[arg(long)]
    pub out: Option<PathBuf>,
}
