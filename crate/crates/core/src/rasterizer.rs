//! Residential coverage of a tile.
//!
//! [`rasterize_coverage`] samples `supersample x supersample` points per mask
//! pixel and tests them against the union of residential footprints with an
//! even-odd scanline fill. Sample points are shifted by [`EDGE_EPSILON`] in
//! both axes so points that land exactly on a shared footprint edge resolve
//! to a single side. [`exact_occupancy`] is the clipped-area reference.

use crate::error::{Error, Result};
use crate::geodata::{clip_polygon_to_box, edge_crossing, polygon_area, polygons_overlap, Footprint, FootprintSet, Rect};

/// Tie-break shift applied to every sample point, in meters.
pub const EDGE_EPSILON: f64 = 1e-9;

/// Supersampling used when the exact oracle is unavailable.
pub const FALLBACK_SUPERSAMPLE: usize = 16;
pub const FALLBACK_SIDE_PX: usize = 224;

/// Per-pixel residential coverage fractions for one tile, row 0 at the top.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageMask {
    pub side_px: usize,
    pub supersample: usize,
    pub coverage: Vec<f64>,
}

impl CoverageMask {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.coverage[row * self.side_px + col]
    }

    /// Grayscale bytes, coverage x 255 rounded half-up.
    pub fn to_gray(&self) -> Vec<u8> {
        self.coverage
            .iter()
            .map(|c| (c * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8)
            .collect()
    }
}

/// Mean of the mask entries.
pub fn occupancy_fraction(mask: &CoverageMask) -> f64 {
    if mask.coverage.is_empty() {
        return 0.0;
    }
    mask.coverage.iter().sum::<f64>() / mask.coverage.len() as f64
}

/// World coordinates of the sample grid; shared with tests that check the
/// scanline against direct point queries.
#[derive(Debug, Clone, Copy)]
pub struct SampleGrid {
    pub tile: Rect,
    pub n: usize,
}

impl SampleGrid {
    pub fn new(tile: Rect, side_px: usize, supersample: usize) -> Self {
        Self {
            tile,
            n: side_px * supersample,
        }
    }

    #[inline]
    pub fn x(&self, j: usize) -> f64 {
        self.tile.x_min + (j as f64 + 0.5) * (self.tile.width() / self.n as f64) + EDGE_EPSILON
    }

    /// Sample row `i` counts down from the top edge.
    #[inline]
    pub fn y(&self, i: usize) -> f64 {
        self.tile.y_max - (i as f64 + 0.5) * (self.tile.height() / self.n as f64) + EDGE_EPSILON
    }

    /// First sample column with `x(j) >= a`.
    fn first_at_or_after(&self, a: f64) -> usize {
        let dx = self.tile.width() / self.n as f64;
        let guess = ((a - self.tile.x_min - EDGE_EPSILON) / dx - 0.5).ceil();
        let mut j = guess.clamp(0.0, self.n as f64) as usize;
        while j > 0 && self.x(j - 1) >= a {
            j -= 1;
        }
        while j < self.n && self.x(j) < a {
            j += 1;
        }
        j
    }
}

fn residential_in_box<'a>(footprints: &'a FootprintSet, tile: &Rect) -> Vec<(&'a Footprint, Rect)> {
    footprints
        .residential()
        .filter_map(|f| {
            let bb = f.polygon.bbox();
            // Closed-box test so polygons touching the tile edge are kept.
            let touches = bb.x_min <= tile.x_max + EDGE_EPSILON
                && bb.x_max >= tile.x_min
                && bb.y_min <= tile.y_max + EDGE_EPSILON
                && bb.y_max >= tile.y_min;
            touches.then_some((f, bb))
        })
        .collect()
}

/// Supersampled union coverage of residential footprints over `tile`.
///
/// Non-residential and unknown footprints contribute nothing. Overlapping
/// residential footprints are counted once.
pub fn rasterize_coverage(
    footprints: &FootprintSet,
    tile: &Rect,
    side_px: usize,
    supersample: usize,
) -> Result<CoverageMask> {
    if side_px == 0 || supersample == 0 {
        return Err(Error::InvalidParameter(format!(
            "side_px and supersample must be at least 1 (got {side_px}, {supersample})"
        )));
    }
    let grid = SampleGrid::new(*tile, side_px, supersample);
    let polys = residential_in_box(footprints, tile);
    let mut counts = vec![0u32; side_px * side_px];
    if !polys.is_empty() {
        let mut inside = vec![false; grid.n];
        let mut xs: Vec<f64> = Vec::new();
        for i in 0..grid.n {
            let y = grid.y(i);
            inside.fill(false);
            let mut any = false;
            for (f, bb) in &polys {
                if y < bb.y_min || y > bb.y_max {
                    continue;
                }
                xs.clear();
                for ring in f.polygon.rings() {
                    let m = ring.len();
                    let mut prev = m - 1;
                    for k in 0..m {
                        if let Some(x) = edge_crossing(ring[k], ring[prev], y) {
                            xs.push(x);
                        }
                        prev = k;
                    }
                }
                xs.sort_by(f64::total_cmp);
                // A sample is inside when an odd number of crossings lie
                // strictly to its right: spans [xs[2k], xs[2k+1]).
                for span in xs.chunks_exact(2) {
                    let lo = grid.first_at_or_after(span[0]);
                    let hi = grid.first_at_or_after(span[1]);
                    if lo < hi {
                        inside[lo..hi].fill(true);
                        any = true;
                    }
                }
            }
            if any {
                let row = &mut counts[(i / supersample) * side_px..(i / supersample + 1) * side_px];
                for (j, _) in inside.iter().enumerate().filter(|(_, &v)| v) {
                    row[j / supersample] += 1;
                }
            }
        }
    }
    let per_pixel = (supersample * supersample) as f64;
    Ok(CoverageMask {
        side_px,
        supersample,
        coverage: counts.into_iter().map(|c| c as f64 / per_pixel).collect(),
    })
}

/// Whether residential footprints touching `tile` are pairwise interior-
/// disjoint, as far as the convex overlap test can establish.
pub fn residential_overlap_free(footprints: &FootprintSet, tile: &Rect) -> bool {
    let polys = residential_in_box(footprints, tile);
    let tol = 1e-9 * tile.area();
    for (i, (a, _)) in polys.iter().enumerate() {
        for (b, _) in &polys[i + 1..] {
            match polygons_overlap(&a.polygon, &b.polygon, tol) {
                Some(false) => {}
                _ => return false,
            }
        }
    }
    true
}

/// Residential area fraction of `tile` from clipped polygon areas.
///
/// Valid when residential footprints do not overlap; otherwise falls back to
/// a 16x supersampled rasterization at 224 px.
pub fn exact_occupancy(footprints: &FootprintSet, tile: &Rect) -> f64 {
    if !residential_overlap_free(footprints, tile) {
        let mask = rasterize_coverage(footprints, tile, FALLBACK_SIDE_PX, FALLBACK_SUPERSAMPLE)
            .expect("fallback parameters are positive");
        return occupancy_fraction(&mask);
    }
    let area: f64 = residential_in_box(footprints, tile)
        .iter()
        .flat_map(|(f, _)| clip_polygon_to_box(&f.polygon, tile))
        .map(|p| polygon_area(&p))
        .sum();
    (area / tile.area()).clamp(0.0, 1.0)
}
