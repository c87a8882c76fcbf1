//! In-memory composition of the stages for one site: tile, measure,
//! label, filter.

use crate::classifier::{extract_features, FeatureVector};
use crate::config::PipelineConfig;
use crate::error::Result;
use crate::geodata::{FootprintSet, Raster};
use crate::labeler::{assign_label, assign_split, cloud_ratio, passes_cloud_filter, quantize6, LabeledTile};
use crate::rasterizer::{occupancy_fraction, rasterize_coverage, CoverageMask};
use crate::tiler::{build_grid, extract_tile, resample_area, tile_file_name, Cell, TileGrid, TileImage};

/// Everything computed for one grid cell.
#[derive(Debug, Clone)]
pub struct CellRecord {
    /// Label record, built whether or not the tile survives the cloud filter.
    pub tile: LabeledTile,
    pub features: FeatureVector,
    pub retained: bool,
    pub image: Option<TileImage>,
}

#[derive(Debug, Clone)]
pub struct SiteRun {
    pub site_id: String,
    pub grid: TileGrid,
    /// Row-major over the grid.
    pub records: Vec<CellRecord>,
}

impl SiteRun {
    pub fn retained(&self) -> impl Iterator<Item = &CellRecord> {
        self.records.iter().filter(|r| r.retained)
    }

    pub fn cloud_filtered(&self) -> usize {
        self.records.iter().filter(|r| !r.retained).count()
    }
}

/// `dir/<site>_<row>_<col>.png`, or the bare file name for an empty `dir`.
pub fn image_path(image_dir: &str, site_id: &str, cell: Cell) -> String {
    let name = tile_file_name(site_id, cell);
    if image_dir.is_empty() {
        name
    } else {
        format!("{}/{name}", image_dir.trim_end_matches('/'))
    }
}

/// Supersampled residential coverage of one cell at the tile resolution.
pub fn cell_mask(footprints: &FootprintSet, grid: &TileGrid, cell: Cell, config: &PipelineConfig) -> Result<CoverageMask> {
    rasterize_coverage(footprints, &grid.cell_box(cell), config.target_px, config.supersample)
}

/// Occupancy stored in the manifest: the mask mean at six decimals.
pub fn cell_occupancy(footprints: &FootprintSet, grid: &TileGrid, cell: Cell, config: &PipelineConfig) -> Result<f64> {
    Ok(quantize6(occupancy_fraction(&cell_mask(footprints, grid, cell, config)?)))
}

/// Label one cell from its resampled image and the footprints. Occupancy
/// comes from the footprints only, so clouds never change a label.
pub fn label_cell(
    site_id: &str,
    grid: &TileGrid,
    image: &TileImage,
    footprints: &FootprintSet,
    config: &PipelineConfig,
    image_dir: &str,
) -> Result<(LabeledTile, bool)> {
    let split = assign_split(site_id, &config.split)?;
    let occupancy = cell_occupancy(footprints, grid, image.cell, config)?;
    let cloud = quantize6(cloud_ratio(image, config.cloud_white_level));
    let retained = !config.cloud_filter_applies(site_id) || passes_cloud_filter(cloud, config.cloud_max_ratio);
    let tile = LabeledTile {
        site_id: site_id.to_owned(),
        cell: image.cell,
        world_box: grid.cell_box(image.cell),
        cloud_ratio: cloud,
        occupancy,
        label: assign_label(occupancy, config.residential_threshold),
        split,
        image_path: image_path(image_dir, site_id, image.cell),
    };
    Ok((tile, retained))
}

/// Tile, label and filter a whole site. Images are dropped after use unless
/// `keep_images` is set.
pub fn run_site(
    site_id: &str,
    raster: &Raster,
    footprints: &FootprintSet,
    config: &PipelineConfig,
    image_dir: &str,
    keep_images: bool,
) -> Result<SiteRun> {
    config.validate()?;
    assign_split(site_id, &config.split)?;
    let grid = build_grid(raster, config.tile_size_m)?;
    let cells: Vec<Cell> = grid.cells().collect();
    let records = crate::par::map(&cells, |&cell| -> Result<CellRecord> {
        let image = resample_area(&extract_tile(raster, &grid, cell)?, config.target_px)?;
        let (tile, retained) = label_cell(site_id, &grid, &image, footprints, config, image_dir)?;
        Ok(CellRecord {
            tile,
            features: extract_features(&image),
            retained,
            image: keep_images.then_some(image),
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(SiteRun {
        site_id: site_id.to_owned(),
        grid,
        records,
    })
}

/// Manifest order: (site_id, row, col).
pub fn sort_manifest(tiles: &mut [LabeledTile]) {
    tiles.sort_by(|a, b| (&a.site_id, a.cell).cmp(&(&b.site_id, b.cell)));
}
