//! Dasymetric population grids: spread a population total over tiles in
//! proportion to residential weights, then sum to coarser grids.

use std::fmt::Write as _;

use geojson::{Feature, FeatureCollection, GeoJson, Geometry, JsonObject, Value};
use serde::{Deserialize, Serialize};

use crate::classifier::{predict_proba, FeatureVector, Model};
use crate::error::{Error, Result};
use crate::geodata::Rect;
use crate::labeler::LabeledTile;
use crate::tiler::TileGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    Occupancy,
    Probability,
    Binary,
}

impl std::str::FromStr for WeightMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "occupancy" => Ok(Self::Occupancy),
            "probability" => Ok(Self::Probability),
            "binary" => Ok(Self::Binary),
            other => Err(Error::InvalidParameter(format!("unknown weight mode {other:?}"))),
        }
    }
}

/// Where tile weights come from. Probability weights need a model and one
/// feature vector per tile.
#[derive(Debug, Clone, Copy)]
pub enum WeightSource<'a> {
    Occupancy,
    Binary,
    Probability { model: &'a Model, features: &'a [FeatureVector] },
}

impl WeightSource<'_> {
    pub fn mode(&self) -> WeightMode {
        match self {
            WeightSource::Occupancy => WeightMode::Occupancy,
            WeightSource::Binary => WeightMode::Binary,
            WeightSource::Probability { .. } => WeightMode::Probability,
        }
    }
}

/// One weight per grid cell, row-major. Cells with no tile (cloud-filtered)
/// have weight 0 and `missing` set.
#[derive(Debug, Clone, PartialEq)]
pub struct CellWeights {
    pub grid: TileGrid,
    pub mode: WeightMode,
    pub weights: Vec<f64>,
    pub missing: Vec<bool>,
}

pub fn weights_from_tiles(grid: &TileGrid, tiles: &[LabeledTile], source: WeightSource<'_>) -> Result<CellWeights> {
    if let WeightSource::Probability { features, .. } = source {
        if features.len() != tiles.len() {
            return Err(Error::InvalidParameter(format!(
                "{} feature vectors for {} tiles",
                features.len(),
                tiles.len()
            )));
        }
    }
    let mut weights = vec![0.0; grid.len()];
    let mut missing = vec![true; grid.len()];
    for (i, t) in tiles.iter().enumerate() {
        if !grid.contains(t.cell) {
            return Err(Error::CellOutOfRange {
                row: t.cell.row,
                col: t.cell.col,
                n_rows: grid.n_rows,
                n_cols: grid.n_cols,
            });
        }
        let k = grid.index(t.cell);
        if !missing[k] {
            return Err(Error::InvalidParameter(format!(
                "cell ({}, {}) appears twice",
                t.cell.row, t.cell.col
            )));
        }
        missing[k] = false;
        weights[k] = match source {
            WeightSource::Occupancy => t.occupancy,
            WeightSource::Binary => t.label as f64,
            WeightSource::Probability { model, features } => predict_proba(model, features[i].as_slice())?,
        };
    }
    Ok(CellWeights {
        grid: grid.clone(),
        mode: source.mode(),
        weights,
        missing,
    })
}

/// Spacing of the f64 grid at `total`: every multiple of it up to `total`
/// is exactly representable.
fn unit(total: f64) -> f64 {
    let exp = (total.to_bits() >> 52) & 0x7ff;
    if exp > 52 {
        f64::from_bits((exp - 52) << 52)
    } else if exp == 0 {
        f64::from_bits(1)
    } else {
        f64::from_bits(1u64 << (exp - 1))
    }
}

/// Split `total` over `weights` proportionally.
///
/// Counts are whole multiples of the spacing `u` of floats near `total`:
/// cell `i` gets `floor(N * w_i / W)` units with `N = total / u`, and the
/// leftover units go to the last cell with positive weight. Since every
/// count and every partial sum is a multiple of `u` no larger than `total`,
/// they are all exact, so any regrouping of the counts sums to `total`
/// bit for bit.
pub fn allocate(total: f64, weights: &[f64]) -> Result<Vec<f64>> {
    if !(total >= 0.0 && total.is_finite()) {
        return Err(Error::InvalidParameter(format!("population total {total} must be finite and >= 0")));
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0 && w.is_finite())) {
        return Err(Error::InvalidParameter(format!("weight {w} must be finite and >= 0")));
    }
    if total == 0.0 {
        return Ok(vec![0.0; weights.len()]);
    }
    let sum: f64 = weights.iter().sum();
    let Some(last) = weights.iter().rposition(|&w| w > 0.0) else {
        return Err(Error::ZeroWeights);
    };
    let u = unit(total);
    let n = (total / u) as u64;
    let nf = n as f64;
    let mut units: Vec<u64> = weights
        .iter()
        .map(|&w| ((nf * (w / sum)).floor() as u64).min(n))
        .collect();
    let assigned: u64 = units.iter().sum();
    if assigned <= n {
        units[last] += n - assigned;
    } else {
        // Rounding pushed the floors past N; take units back from the end.
        let mut excess = assigned - n;
        for k in (0..units.len()).rev() {
            let take = excess.min(units[k]);
            units[k] -= take;
            excess -= take;
            if excess == 0 {
                break;
            }
        }
    }
    Ok(units.into_iter().map(|k| k as f64 * u).collect())
}

/// Population counts over a (possibly coarsened) grid. Cell edges are kept
/// explicitly because coarsening merges trailing partial blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationGrid {
    /// Column edges, west to east, `n_cols + 1` values.
    pub x_edges: Vec<f64>,
    /// Row edges, north to south, `n_rows + 1` values.
    pub y_edges: Vec<f64>,
    pub counts: Vec<f64>,
    pub missing: Vec<bool>,
    pub total: f64,
    pub weight_mode: WeightMode,
}

impl PopulationGrid {
    pub fn n_rows(&self) -> usize {
        self.y_edges.len() - 1
    }

    pub fn n_cols(&self) -> usize {
        self.x_edges.len() - 1
    }

    pub fn count(&self, row: usize, col: usize) -> f64 {
        self.counts[row * self.n_cols() + col]
    }

    pub fn cell_box(&self, row: usize, col: usize) -> Rect {
        Rect {
            x_min: self.x_edges[col],
            y_min: self.y_edges[row + 1],
            x_max: self.x_edges[col + 1],
            y_max: self.y_edges[row],
        }
    }

    pub fn sum(&self) -> f64 {
        self.counts.iter().sum()
    }
}

fn edges(origin: f64, step: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|k| origin + step * k as f64).collect()
}

/// Allocate `total` over the cells of `weights`.
pub fn disaggregate(total: f64, weights: &CellWeights) -> Result<PopulationGrid> {
    let g = &weights.grid;
    Ok(PopulationGrid {
        x_edges: edges(g.origin_x, g.tile_size_m, g.n_cols),
        y_edges: edges(g.origin_y, -g.tile_size_m, g.n_rows),
        counts: allocate(total, &weights.weights)?,
        missing: weights.missing.clone(),
        total,
        weight_mode: weights.mode,
    })
}

fn block_of(i: usize, factor: usize, n_coarse: usize) -> usize {
    (i / factor).min(n_coarse - 1)
}

fn coarse_edges(fine: &[f64], factor: usize) -> Vec<f64> {
    let n = fine.len() - 1;
    let n_coarse = (n / factor).max(1);
    let mut out: Vec<f64> = (0..n_coarse).map(|k| fine[k * factor]).collect();
    out.push(fine[n]);
    out
}

/// Sum `factor x factor` blocks of cells.
///
/// When `factor` does not divide a dimension, the trailing partial block is
/// merged into the last full block (a dimension smaller than `factor`
/// becomes a single block). A coarse cell is flagged missing only when all
/// of its fine cells are.
pub fn aggregate(grid: &PopulationGrid, factor: usize) -> Result<PopulationGrid> {
    if factor < 1 {
        return Err(Error::InvalidParameter("aggregation factor must be at least 1".into()));
    }
    let (nr, nc) = (grid.n_rows(), grid.n_cols());
    let x_edges = coarse_edges(&grid.x_edges, factor);
    let y_edges = coarse_edges(&grid.y_edges, factor);
    let (cr, cc) = (y_edges.len() - 1, x_edges.len() - 1);
    let mut counts = vec![0.0; cr * cc];
    let mut missing = vec![true; cr * cc];
    for r in 0..nr {
        for c in 0..nc {
            let k = block_of(r, factor, cr) * cc + block_of(c, factor, cc);
            counts[k] += grid.counts[r * nc + c];
            missing[k] &= grid.missing[r * nc + c];
        }
    }
    Ok(PopulationGrid {
        x_edges,
        y_edges,
        counts,
        missing,
        total: grid.total,
        weight_mode: grid.weight_mode,
    })
}

pub fn population_csv(grid: &PopulationGrid) -> String {
    let mut out = String::from("row,col,x_min,y_min,x_max,y_max,population\n");
    for r in 0..grid.n_rows() {
        for c in 0..grid.n_cols() {
            let b = grid.cell_box(r, c);
            writeln!(
                out,
                "{r},{c},{},{},{},{},{:.3}",
                b.x_min,
                b.y_min,
                b.x_max,
                b.y_max,
                grid.count(r, c)
            )
            .unwrap();
        }
    }
    out
}

/// Cell polygons with `row`, `col`, `population` and `missing` properties.
pub fn population_geojson(grid: &PopulationGrid) -> String {
    let mut features = Vec::with_capacity(grid.counts.len());
    for r in 0..grid.n_rows() {
        for c in 0..grid.n_cols() {
            let b = grid.cell_box(r, c);
            let ring: Vec<Vec<f64>> = b
                .ring()
                .iter()
                .chain(b.ring().first())
                .map(|p| vec![p.x, p.y])
                .collect();
            let mut props = JsonObject::new();
            props.insert("row".into(), r.into());
            props.insert("col".into(), c.into());
            props.insert("population".into(), grid.count(r, c).into());
            props.insert("missing".into(), grid.missing[r * grid.n_cols() + c].into());
            features.push(Feature {
                bbox: None,
                geometry: Some(Geometry::new(Value::Polygon(vec![ring]))),
                id: None,
                properties: Some(props),
                foreign_members: None,
            });
        }
    }
    GeoJson::FeatureCollection(FeatureCollection {
        bbox: None,
        features,
        foreign_members: None,
    })
    .to_string()
}
