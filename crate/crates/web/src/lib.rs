//! Browser demo: a small synthetic settlement with three live controls.
//! Coverage masks at a chosen supersampling factor against the exact
//! clipped area, tile labels at a chosen occupancy threshold, and a
//! population grid at a chosen aggregation factor.
//!
//! Build with `wasm-pack build crates/web --target web --out-dir www/pkg`.

use gridpop::geodata::FootprintSet;
use gridpop::labeler::{assign_label, LabeledTile, Split};
use gridpop::popgrid::{aggregate, disaggregate, weights_from_tiles, WeightSource};
use gridpop::rasterizer::{exact_occupancy, occupancy_fraction, rasterize_coverage};
use gridpop::synth::{generate_settlement, SynthParams};
use gridpop::tiler::{build_grid, Cell, TileGrid};
use wasm_bindgen::prelude::*;

const TILE_M: f64 = 36.0;
/// Mask side used for the per-tile occupancies behind labels and population.
const LABEL_PX: usize = 56;

fn js_err(e: gridpop::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

#[wasm_bindgen]
pub struct Scene {
    width: usize,
    height: usize,
    rgba: Vec<u8>,
    footprints: FootprintSet,
    grid: TileGrid,
    occupancy: Vec<f64>,
}

#[wasm_bindgen]
impl Scene {
    /// A 216 m x 216 m scene (6 x 6 tiles) at 0.5 m pixels.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, residential_fraction: f64) -> Result<Scene, JsValue> {
        let params = SynthParams {
            extent_m: [216.0, 216.0],
            pixel_size_m: 0.5,
            building_count: 9 * 36,
            residential_fraction,
            parcel_size_m: Some(TILE_M),
            noise_std: 4.0,
            seed: seed.into(),
            ..Default::default()
        };
        let scene = generate_settlement(&params).map_err(js_err)?;
        let grid = build_grid(&scene.raster, TILE_M).map_err(js_err)?;
        let rgba = scene
            .raster
            .samples()
            .chunks_exact(3)
            .flat_map(|p| [p[0], p[1], p[2], 255])
            .collect();
        let occupancy = grid
            .cells()
            .map(|c| rasterize_coverage(&scene.footprints, &grid.cell_box(c), LABEL_PX, 4).map(|m| occupancy_fraction(&m)))
            .collect::<Result<_, _>>()
            .map_err(js_err)?;
        Ok(Scene {
            width: scene.raster.width(),
            height: scene.raster.height(),
            rgba,
            footprints: scene.footprints,
            grid,
            occupancy,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn rows(&self) -> usize {
        self.grid.n_rows
    }

    pub fn cols(&self) -> usize {
        self.grid.n_cols
    }

    /// Scene pixels as RGBA for an `ImageData`.
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }

    /// Residential coverage mask of one tile as RGBA, white = covered.
    pub fn coverage_mask(&self, row: usize, col: usize, side_px: usize, supersample: usize) -> Result<Vec<u8>, JsValue> {
        let mask = rasterize_coverage(&self.footprints, &self.tile_box(row, col)?, side_px, supersample).map_err(js_err)?;
        Ok(mask.to_gray().into_iter().flat_map(|v| [v, v, v, 255]).collect())
    }

    /// `[rasterized, exact]` occupancy of one tile.
    pub fn coverage_compare(&self, row: usize, col: usize, side_px: usize, supersample: usize) -> Result<Vec<f64>, JsValue> {
        let rect = self.tile_box(row, col)?;
        let mask = rasterize_coverage(&self.footprints, &rect, side_px, supersample).map_err(js_err)?;
        Ok(vec![occupancy_fraction(&mask), exact_occupancy(&self.footprints, &rect)])
    }

    /// Per-tile occupancy, row-major.
    pub fn occupancies(&self) -> Vec<f64> {
        self.occupancy.clone()
    }

    /// Per-tile labels at `threshold`, row-major.
    pub fn labels(&self, threshold: f64) -> Vec<u8> {
        self.occupancy.iter().map(|&o| assign_label(o, threshold)).collect()
    }

    /// Occupancy-weighted population, aggregated by `factor`. Returns
    /// `[rows, cols, counts...]`.
    pub fn population(&self, total: f64, factor: usize) -> Result<Vec<f64>, JsValue> {
        let tiles: Vec<LabeledTile> = self
            .grid
            .cells()
            .zip(&self.occupancy)
            .map(|(cell, &occupancy)| LabeledTile {
                site_id: "demo".into(),
                cell,
                world_box: self.grid.cell_box(cell),
                cloud_ratio: 0.0,
                occupancy,
                label: 0,
                split: Split::Train,
                image_path: String::new(),
            })
            .collect();
        let weights = weights_from_tiles(&self.grid, &tiles, WeightSource::Occupancy).map_err(js_err)?;
        let fine = disaggregate(total, &weights).map_err(js_err)?;
        let g = aggregate(&fine, factor.max(1)).map_err(js_err)?;
        let mut out = vec![g.n_rows() as f64, g.n_cols() as f64];
        out.extend(&g.counts);
        Ok(out)
    }
}

impl Scene {
    fn tile_box(&self, row: usize, col: usize) -> Result<gridpop::geodata::Rect, JsValue> {
        let cell = Cell::new(row, col);
        if !self.grid.contains(cell) {
            return Err(JsValue::from_str(&format!("no tile at row {row}, col {col}")));
        }
        Ok(self.grid.cell_box(cell))
    }
}
