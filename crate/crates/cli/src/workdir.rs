//! Layout of the work directory and the per-site record `tile` leaves for
//! the later stages.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use gridpop::geodata::{decode_png, load_footprints, FootprintSet, TagMap};
use gridpop::tiler::{Cell, TileGrid, TileImage};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const TILE_DIR: &str = "tiles";
pub const SITE_DIR: &str = "sites";

/// Property carrying the class in the normalized footprint files.
const NORMALIZED_TAG_KEY: &str = "class";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteRecord {
    pub site_id: String,
    pub crs_id: String,
    pub raster: String,
    pub raster_sha256: String,
    pub footprints: String,
    pub footprints_sha256: String,
    pub grid: TileGrid,
    pub footprints_kept: usize,
    pub footprints_rejected: usize,
}

pub fn site_record_path(work: &Path, site: &str) -> PathBuf {
    work.join(SITE_DIR).join(format!("{site}.json"))
}

pub fn site_footprints_path(work: &Path, site: &str) -> PathBuf {
    work.join(SITE_DIR).join(format!("{site}.geojson"))
}

pub fn ingest_log_path(work: &Path, site: &str) -> PathBuf {
    work.join(SITE_DIR).join(format!("{site}.ingest.log"))
}

pub fn manifest_path(work: &Path) -> PathBuf {
    work.join("manifest.jsonl")
}

pub fn model_path(work: &Path) -> PathBuf {
    work.join("model.txt")
}

/// Tag map that reads back what [`write_normalized_footprints`] wrote.
pub fn normalized_tag_map() -> TagMap {
    TagMap {
        key: NORMALIZED_TAG_KEY.into(),
        residential: BTreeSet::from(["residential".to_owned()]),
        non_residential: BTreeSet::from(["commercial".to_owned()]),
    }
}

pub fn normalized_footprints_geojson(set: &FootprintSet) -> String {
    gridpop::geodata::footprints_to_geojson_with(set, NORMALIZED_TAG_KEY, |_, _| Default::default())
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn read_site(work: &Path, site: &str) -> Result<SiteRecord, CliError> {
    let path = site_record_path(work, site);
    if !path.exists() {
        return Err(CliError::new(
            "unknown_site",
            format!("no site {site:?} in {} (run `gridpop tile` first)", work.display()),
        ));
    }
    Ok(serde_json::from_str(&read_text(&path)?)?)
}

/// All site records, sorted by site id.
pub fn read_sites(work: &Path) -> Result<Vec<SiteRecord>, CliError> {
    let dir = work.join(SITE_DIR);
    let entries = match fs::read_dir(&dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(CliError::new("empty_dataset", format!("{} has no sites (run `gridpop tile` first)", work.display())))
        }
        Err(e) => return Err(CliError::io(&dir, e)),
    };
    let mut names = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(&dir, e))?.path();
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if let Some(site) = name.strip_suffix(".json") {
            if !site.ends_with(".crs") {
                names.push(site.to_owned());
            }
        }
    }
    names.sort();
    names.iter().map(|s| read_site(work, s)).collect()
}

pub fn load_site_footprints(work: &Path, site: &str) -> Result<FootprintSet, CliError> {
    Ok(load_footprints(&site_footprints_path(work, site), &normalized_tag_map())?.set)
}

pub fn read_tile_image(path: &Path, cell: Cell) -> Result<TileImage, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let (w, h, c, samples) = decode_png(&bytes)?;
    if w != h {
        return Err(CliError::new("png", format!("{}: tile is {w}x{h}, expected square", path.display())));
    }
    let rgb = match c {
        3 => samples,
        _ => samples.iter().flat_map(|&v| [v, v, v]).collect(),
    };
    Ok(TileImage::from_rgb(cell, w, rgb)?)
}
