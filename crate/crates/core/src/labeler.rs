//! Cloud filtering, occupancy thresholding, site splits and the manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::geodata::Rect;
use crate::tiler::{Cell, TileImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            other => Err(Error::InvalidParameter(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledTile {
    pub site_id: String,
    pub cell: Cell,
    pub world_box: Rect,
    pub cloud_ratio: f64,
    pub occupancy: f64,
    pub label: u8,
    pub split: Split,
    pub image_path: String,
}

/// Fraction of pixels whose channels are all at least `white_level`.
pub fn cloud_ratio(tile: &TileImage, white_level: u8) -> f64 {
    let white = tile
        .pixels
        .chunks_exact(3)
        .filter(|px| px.iter().all(|&v| v >= white_level))
        .count();
    white as f64 / tile.pixel_count() as f64
}

/// Inclusive boundary: a ratio equal to `max_ratio` passes.
pub fn passes_cloud_filter(ratio: f64, max_ratio: f64) -> bool {
    ratio <= max_ratio
}

/// Keep tiles whose cloud ratio is at most `max_ratio`, preserving order.
pub fn filter_clouds(tiles: Vec<LabeledTile>, max_ratio: f64) -> Vec<LabeledTile> {
    tiles
        .into_iter()
        .filter(|t| passes_cloud_filter(t.cloud_ratio, max_ratio))
        .collect()
}

/// 1 when `occupancy >= threshold`, else 0.
pub fn assign_label(occupancy: f64, threshold: f64) -> u8 {
    u8::from(occupancy >= threshold)
}

/// Split by site; every tile of a site lands in the same split.
pub fn assign_split(site_id: &str, split_map: &BTreeMap<String, Split>) -> Result<Split> {
    split_map
        .get(site_id)
        .copied()
        .ok_or_else(|| Error::UnmappedSite(site_id.to_owned()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassBalance {
    pub residential: usize,
    pub non_residential: usize,
    pub fraction_residential: f64,
    pub fraction_non_residential: f64,
}

pub fn class_balance(tiles: &[LabeledTile]) -> Result<ClassBalance> {
    if tiles.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let residential = tiles.iter().filter(|t| t.label == 1).count();
    let non_residential = tiles.len() - residential;
    let n = tiles.len() as f64;
    Ok(ClassBalance {
        residential,
        non_residential,
        fraction_residential: residential as f64 / n,
        fraction_non_residential: non_residential as f64 / n,
    })
}

/// Round to the six decimals the manifest stores, so labels computed from
/// the stored value agree with labels computed before writing.
pub fn quantize6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

/// Manifest text: one `# config: {...}` header line, then one JSON object per
/// tile with a fixed field order.
pub fn write_manifest(config: &PipelineConfig, tiles: &[LabeledTile]) -> String {
    let mut out = String::new();
    let header = serde_json::to_string(config).expect("config serializes");
    writeln!(out, "# config: {header}").unwrap();
    for t in tiles {
        writeln!(
            out,
            "{{\"site_id\":{},\"row\":{},\"col\":{},\"x_min\":{},\"y_min\":{},\"x_max\":{},\"y_max\":{},\"cloud_ratio\":{:.6},\"occupancy\":{:.6},\"label\":{},\"split\":\"{}\",\"image_path\":{}}}",
            json_str(&t.site_id),
            t.cell.row,
            t.cell.col,
            fmt_f64(t.world_box.x_min),
            fmt_f64(t.world_box.y_min),
            fmt_f64(t.world_box.x_max),
            fmt_f64(t.world_box.y_max),
            t.cloud_ratio,
            t.occupancy,
            t.label,
            t.split.as_str(),
            json_str(&t.image_path),
        )
        .unwrap();
    }
    out
}

// JSON has no integer/float distinction, but keep a decimal point so
// readers that care see a float.
fn fmt_f64(v: f64) -> String {
    let s = v.to_string();
    if s.contains(['.', 'e', 'E']) {
        s
    } else {
        format!("{s}.0")
    }
}

#[derive(Deserialize)]
struct ManifestRecord {
    site_id: String,
    row: usize,
    col: usize,
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
    cloud_ratio: f64,
    occupancy: f64,
    label: u8,
    split: Split,
    image_path: String,
}

pub struct Manifest {
    pub config: Option<PipelineConfig>,
    pub tiles: Vec<LabeledTile>,
}

pub fn parse_manifest(text: &str) -> Result<Manifest> {
    let mut config = None;
    let mut tiles = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(json) = rest.trim().strip_prefix("config:") {
                config = Some(
                    serde_json::from_str(json.trim())
                        .map_err(|e| Error::Manifest(format!("line {}: config header: {e}", n + 1)))?,
                );
            }
            continue;
        }
        let r: ManifestRecord =
            serde_json::from_str(line).map_err(|e| Error::Manifest(format!("line {}: {e}", n + 1)))?;
        if r.label > 1 {
            return Err(Error::Manifest(format!("line {}: label {} is not 0 or 1", n + 1, r.label)));
        }
        tiles.push(LabeledTile {
            site_id: r.site_id,
            cell: Cell::new(r.row, r.col),
            world_box: Rect {
                x_min: r.x_min,
                y_min: r.y_min,
                x_max: r.x_max,
                y_max: r.y_max,
            },
            cloud_ratio: r.cloud_ratio,
            occupancy: r.occupancy,
            label: r.label,
            split: r.split,
            image_path: r.image_path,
        });
    }
    Ok(Manifest { config, tiles })
}
