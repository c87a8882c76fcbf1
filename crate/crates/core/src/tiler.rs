//! Metric tile grid over a raster, per-cell crops and area resampling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodata::{Raster, Rect};

/// Grid of square cells anchored at the raster's top-left corner.
///
/// Only full tiles are kept; the strips dropped on the right and bottom
/// edges are recorded in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileGrid {
    pub origin_x: f64,
    pub origin_y: f64,
    pub tile_size_m: f64,
    pub n_cols: usize,
    pub n_rows: usize,
    pub dropped_right_m: f64,
    pub dropped_bottom_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

impl TileGrid {
    pub fn new(origin_x: f64, origin_y: f64, tile_size_m: f64, n_cols: usize, n_rows: usize) -> Result<Self> {
        if !(tile_size_m > 0.0 && tile_size_m.is_finite()) || n_cols == 0 || n_rows == 0 {
            return Err(Error::InvalidParameter(format!(
                "grid needs a positive tile size and at least one cell (got {tile_size_m} m, {n_cols} x {n_rows})"
            )));
        }
        Ok(Self {
            origin_x,
            origin_y,
            tile_size_m,
            n_cols,
            n_rows,
            dropped_right_m: 0.0,
            dropped_bottom_m: 0.0,
        })
    }

    pub fn len(&self) -> usize {
        self.n_rows * self.n_cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, cell: Cell) -> bool {
        cell.row < self.n_rows && cell.col < self.n_cols
    }

    /// Row-major cell order.
    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.n_rows).flat_map(move |row| (0..self.n_cols).map(move |col| Cell { row, col }))
    }

    pub fn index(&self, cell: Cell) -> usize {
        cell.row * self.n_cols + cell.col
    }

    /// World box of a cell: x grows with `col`, y shrinks with `row`.
    pub fn cell_box(&self, cell: Cell) -> Rect {
        let s = self.tile_size_m;
        let x_min = self.origin_x + cell.col as f64 * s;
        let y_max = self.origin_y - cell.row as f64 * s;
        Rect {
            x_min,
            y_min: y_max - s,
            x_max: x_min + s,
            y_max,
        }
    }

    pub fn extent(&self) -> Rect {
        let s = self.tile_size_m;
        Rect {
            x_min: self.origin_x,
            y_min: self.origin_y - self.n_rows as f64 * s,
            x_max: self.origin_x + self.n_cols as f64 * s,
            y_max: self.origin_y,
        }
    }
}

fn full_tiles(extent: f64, tile: f64) -> usize {
    // Tolerate pixel sizes like 0.02 that are not exact in binary.
    (extent / tile + 1e-9).floor() as usize
}

/// Lay a grid of `tile_size_m` cells over the raster, dropping partial
/// strips on the right and bottom edges.
pub fn build_grid(raster: &Raster, tile_size_m: f64) -> Result<TileGrid> {
    if !(tile_size_m > 0.0 && tile_size_m.is_finite()) {
        return Err(Error::InvalidParameter(format!("tile size {tile_size_m} must be positive")));
    }
    let (ex, ey) = raster.extent();
    let n_cols = full_tiles(ex, tile_size_m);
    let n_rows = full_tiles(ey, tile_size_m);
    if n_cols == 0 || n_rows == 0 {
        return Err(Error::ExtentTooSmall {
            extent_x: ex,
            extent_y: ey,
            tile_size: tile_size_m,
        });
    }
    let t = raster.transform();
    Ok(TileGrid {
        origin_x: t.origin_x,
        origin_y: t.origin_y,
        tile_size_m,
        n_cols,
        n_rows,
        dropped_right_m: (ex - n_cols as f64 * tile_size_m).max(0.0),
        dropped_bottom_m: (ey - n_rows as f64 * tile_size_m).max(0.0),
    })
}

/// Source pixel window for one cell, converted to RGB.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelBlock {
    pub cell: Cell,
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, row-major.
    pub pixels: Vec<u8>,
}

/// A resampled tile ready for feature extraction or export.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileImage {
    pub cell: Cell,
    pub side_px: usize,
    /// Source window side before resampling.
    pub source_px: usize,
    /// Interleaved RGB, row-major, `side_px * side_px * 3` bytes.
    pub pixels: Vec<u8>,
}

impl TileImage {
    pub fn from_rgb(cell: Cell, side_px: usize, pixels: Vec<u8>) -> Result<Self> {
        if side_px == 0 || pixels.len() != side_px * side_px * 3 {
            return Err(Error::InvalidParameter(format!(
                "tile of side {side_px} needs {} RGB bytes, got {}",
                side_px * side_px * 3,
                pixels.len()
            )));
        }
        Ok(Self {
            cell,
            side_px,
            source_px: side_px,
            pixels,
        })
    }

    pub fn rgb(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.side_px + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn pixel_count(&self) -> usize {
        self.side_px * self.side_px
    }
}

/// Window start and length along one axis, kept inside the raster.
fn window(index: usize, tile_size_m: f64, pixel: f64, limit: usize) -> (usize, usize) {
    let side = ((tile_size_m / pixel).round() as usize).clamp(1, limit);
    let start = ((index as f64 * tile_size_m) / pixel).round() as usize;
    (start.min(limit - side), side)
}

/// Crop the pixel window covering `cell`. Side length in pixels is
/// `round(tile_size_m / pixel size)`.
pub fn extract_tile(raster: &Raster, grid: &TileGrid, cell: Cell) -> Result<PixelBlock> {
    if !grid.contains(cell) {
        return Err(Error::CellOutOfRange {
            row: cell.row,
            col: cell.col,
            n_rows: grid.n_rows,
            n_cols: grid.n_cols,
        });
    }
    let t = raster.transform();
    // Offsets relative to the raster origin; zero for grids built on it.
    let dx = ((grid.origin_x - t.origin_x) / t.pixel_w).round() as usize;
    let dy = ((t.origin_y - grid.origin_y) / t.pixel_h).round() as usize;
    let (x0, w) = window(cell.col, grid.tile_size_m, t.pixel_w, raster.width());
    let (y0, h) = window(cell.row, grid.tile_size_m, t.pixel_h, raster.height());
    let (x0, y0) = ((x0 + dx).min(raster.width() - w), (y0 + dy).min(raster.height() - h));

    let mut pixels = Vec::with_capacity(w * h * 3);
    let c = raster.channels();
    let samples = raster.samples();
    for row in y0..y0 + h {
        let start = (row * raster.width() + x0) * c;
        let line = &samples[start..start + w * c];
        if c == 3 {
            pixels.extend_from_slice(line);
        } else {
            pixels.extend(line.iter().flat_map(|&v| [v, v, v]));
        }
    }
    Ok(PixelBlock {
        cell,
        width: w,
        height: h,
        pixels,
    })
}

/// Integer overlap weights between `target` output bins and `source` input
/// bins over a common length of `source * target` units. Each output's
/// weights sum to `source`.
fn axis_weights(source: usize, target: usize) -> Vec<Vec<(usize, u64)>> {
    let (s, t) = (source as u64, target as u64);
    (0..t)
        .map(|i| {
            let (lo, hi) = (i * s, (i + 1) * s);
            let first = (lo / t) as usize;
            let last = (hi.div_ceil(t) as usize).min(source);
            (first..last)
                .filter_map(|j| {
                    let (a, b) = (j as u64 * t, (j as u64 + 1) * t);
                    let w = hi.min(b).saturating_sub(lo.max(a));
                    (w > 0).then_some((j, w))
                })
                .collect()
        })
        .collect()
}

/// Area-average resample to `target_px` x `target_px`.
///
/// Each output pixel is the exact area-weighted mean of the source pixels it
/// covers, computed in integer arithmetic and rounded half-up.
pub fn resample_area(block: &PixelBlock, target_px: usize) -> Result<TileImage> {
    if target_px == 0 {
        return Err(Error::InvalidParameter("target_px must be at least 1".into()));
    }
    let (sw, sh) = (block.width, block.height);
    let wx = axis_weights(sw, target_px);
    let wy = axis_weights(sh, target_px);

    // Horizontal pass: per source row, per output column, weighted sums.
    let mut horiz = vec![0u64; sh * target_px * 3];
    for y in 0..sh {
        let src = &block.pixels[y * sw * 3..(y + 1) * sw * 3];
        let dst = &mut horiz[y * target_px * 3..(y + 1) * target_px * 3];
        for (ox, weights) in wx.iter().enumerate() {
            let mut acc = [0u64; 3];
            for &(x, w) in weights {
                for c in 0..3 {
                    acc[c] += w * src[x * 3 + c] as u64;
                }
            }
            dst[ox * 3..ox * 3 + 3].copy_from_slice(&acc);
        }
    }

    let den = (sw * sh) as u64;
    let mut pixels = vec![0u8; target_px * target_px * 3];
    for (oy, weights) in wy.iter().enumerate() {
        for ox in 0..target_px {
            let mut acc = [0u64; 3];
            for &(y, w) in weights {
                let i = (y * target_px + ox) * 3;
                for c in 0..3 {
                    acc[c] += w * horiz[i + c];
                }
            }
            for c in 0..3 {
                let v = (2 * acc[c] + den) / (2 * den);
                pixels[(oy * target_px + ox) * 3 + c] = v.min(255) as u8;
            }
        }
    }
    Ok(TileImage {
        cell: block.cell,
        side_px: target_px,
        source_px: sw.max(sh),
        pixels,
    })
}

/// Extract and resample every cell of the grid in row-major order.
pub fn extract_all(raster: &Raster, grid: &TileGrid, target_px: usize) -> Result<Vec<TileImage>> {
    let cells: Vec<Cell> = grid.cells().collect();
    crate::par::map(&cells, |&cell| resample_area(&extract_tile(raster, grid, cell)?, target_px))
        .into_iter()
        .collect()
}

/// `<site>_<row>_<col>.png`
pub fn tile_file_name(site_id: &str, cell: Cell) -> String {
    format!("{site_id}_{}_{}.png", cell.row, cell.col)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodata::GeoTransform;

    fn raster(w: usize, h: usize, pixel: f64) -> Raster {
        let t = GeoTransform::new(1000.0, 2000.0, pixel, pixel, "EPSG:32631").unwrap();
        let samples = (0..w * h * 3).map(|i| (i % 251) as u8).collect();
        Raster::new(w, h, 3, samples, t).unwrap()
    }

    fn block(w: usize, h: usize, pixels: Vec<u8>) -> PixelBlock {
        PixelBlock {
            cell: Cell::new(0, 0),
            width: w,
            height: h,
            pixels,
        }
    }

    #[test]
    fn grid_exact_division() {
        let g = build_grid(&raster(108, 72, 1.0), 36.0).unwrap();
        assert_eq!((g.n_cols, g.n_rows), (3, 2));
        assert_eq!(g.dropped_right_m, 0.0);
    }

    #[test]
    fn grid_drops_partial_strips() {
        let g = build_grid(&raster(100, 100, 1.0), 36.0).unwrap();
        assert_eq!((g.n_cols, g.n_rows), (2, 2));
        assert_eq!(g.dropped_right_m, 28.0);
    }

    #[test]
    fn grid_too_small() {
        assert!(matches!(
            build_grid(&raster(30, 30, 1.0), 36.0),
            Err(Error::ExtentTooSmall { .. })
        ));
    }

    #[test]
    fn grid_with_inexact_pixel_size() {
        // 1800 * 0.02 is not exactly 36.0 in binary
        let g = build_grid(&raster(1800, 1800, 0.02), 36.0).unwrap();
        assert_eq!((g.n_cols, g.n_rows), (1, 1));
    }

    #[test]
    fn cell_boxes_tile_the_extent() {
        let g = build_grid(&raster(108, 72, 1.0), 36.0).unwrap();
        let b = g.cell_box(Cell::new(1, 2));
        assert_eq!((b.x_min, b.x_max, b.y_min, b.y_max), (1072.0, 1108.0, 1928.0, 1964.0));
        let total: f64 = g.cells().map(|c| g.cell_box(c).area()).sum();
        assert_eq!(total, g.extent().area());
    }

    #[test]
    fn window_sizes_follow_resolution() {
        let r = raster(1800, 1800, 0.02);
        let g = build_grid(&r, 36.0).unwrap();
        let b = extract_tile(&r, &g, Cell::new(0, 0)).unwrap();
        assert_eq!((b.width, b.height), (1800, 1800));
        assert_eq!(&b.pixels[..6], &r.samples()[..6]);

        let r = raster(1600, 1600, 0.0225);
        let g = build_grid(&r, 36.0).unwrap();
        let b = extract_tile(&r, &g, Cell::new(0, 0)).unwrap();
        assert_eq!((b.width, b.height), (1600, 1600));
    }

    #[test]
    fn extract_out_of_range() {
        let r = raster(72, 72, 1.0);
        let g = build_grid(&r, 36.0).unwrap();
        assert!(extract_tile(&r, &g, Cell::new(2, 0)).is_err());
        let b = extract_tile(&r, &g, Cell::new(1, 1)).unwrap();
        let i = (36 * 72 + 36) * 3;
        assert_eq!(&b.pixels[..3], &r.samples()[i..i + 3]);
    }

    #[test]
    fn constant_block_stays_constant() {
        let b = block(7, 7, vec![93; 7 * 7 * 3]);
        let t = resample_area(&b, 3).unwrap();
        assert!(t.pixels.iter().all(|&v| v == 93));
    }

    #[test]
    fn half_rounds_up() {
        let mut px = vec![0u8; 12];
        px[6..].fill(255);
        let t = resample_area(&block(2, 2, px), 1).unwrap();
        assert_eq!(t.pixels, vec![128, 128, 128]);
    }

    #[test]
    fn identity_at_source_size() {
        let px: Vec<u8> = (0..5 * 5 * 3).map(|i| (i * 13 % 256) as u8).collect();
        let t = resample_area(&block(5, 5, px.clone()), 5).unwrap();
        assert_eq!(t.pixels, px);
    }

    #[test]
    fn axis_weights_sum_to_source() {
        for (s, t) in [(1600, 224), (1800, 224), (7, 3), (3, 7), (224, 224)] {
            for ws in axis_weights(s, t) {
                assert_eq!(ws.iter().map(|w| w.1).sum::<u64>(), s as u64);
            }
        }
    }

    #[test]
    fn single_channel_rasters_expand_to_rgb() {
        let t = GeoTransform::new(0.0, 4.0, 1.0, 1.0, "x").unwrap();
        let r = Raster::new(4, 4, 1, (0..16).collect(), t).unwrap();
        let g = TileGrid::new(0.0, 4.0, 2.0, 2, 2).unwrap();
        let b = extract_tile(&r, &g, Cell::new(0, 1)).unwrap();
        assert_eq!(b.pixels, vec![2, 2, 2, 3, 3, 3, 6, 6, 6, 7, 7, 7]);
    }
}
