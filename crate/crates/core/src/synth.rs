//! Seeded synthetic settlements: an RGB raster, rectangular footprints and
//! per-building populations, plus exact per-tile truth.
//!
//! Random numbers come from `ChaCha8Rng::seed_from_u64(seed)` and are drawn
//! in a fixed order (parcel classes, buildings, clouds, pixel noise), so a
//! seed reproduces a scene exactly.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodata::{
    clip_polygon_to_box, footprints_to_geojson_with, polygon_area, save_raster, write_crs_sidecar, ClassTag,
    CrsSidecar, Footprint, FootprintSet, GeoTransform, Point, Polygon, Raster, Rect, TagMap,
};
use crate::rasterizer::exact_occupancy;
use crate::tiler::{Cell, TileGrid};

/// Recorded in scene metadata so scenes can be regenerated exactly.
pub const RNG_ID: &str = "rand_chacha-0.9/ChaCha8Rng/seed_from_u64";
pub const MAX_ATTEMPTS: usize = 10_000;

pub const SOIL_RGB: [f64; 3] = [150.0, 128.0, 98.0];
pub const RESIDENTIAL_RGB: [f64; 3] = [176.0, 78.0, 52.0];
pub const NON_RESIDENTIAL_RGB: [f64; 3] = [92.0, 120.0, 158.0];
pub const CLOUD_LEVEL: u8 = 250;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rotation {
    AxisAligned,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    /// World coordinates of the top-left corner.
    pub origin_m: [f64; 2],
    pub extent_m: [f64; 2],
    pub pixel_size_m: f64,
    pub building_count: usize,
    pub residential_fraction: f64,
    /// Min and max building side.
    pub size_range_m: [f64; 2],
    pub rotation: Rotation,
    pub persons_per_m2: f64,
    pub cloud_blob_count: usize,
    /// Cloud ellipse semi-axes are drawn from this range.
    pub cloud_radius_m: [f64; 2],
    pub noise_std: f64,
    pub seed: u64,
    /// Land-use parcels: square blocks of this side, each wholly residential
    /// or wholly non-residential, with buildings spread evenly over them.
    /// `None` places buildings anywhere and draws each class independently.
    pub parcel_size_m: Option<f64>,
    /// Minimum clearance between buildings.
    pub min_gap_m: f64,
    pub crs_id: String,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            origin_m: [500_000.0, 830_000.0],
            extent_m: [360.0, 360.0],
            pixel_size_m: 0.25,
            building_count: 900,
            residential_fraction: 1.0 / 3.0,
            size_range_m: [6.0, 10.0],
            rotation: Rotation::AxisAligned,
            persons_per_m2: 0.05,
            cloud_blob_count: 0,
            cloud_radius_m: [4.0, 12.0],
            noise_std: 6.0,
            seed: 0,
            parcel_size_m: Some(36.0),
            min_gap_m: 0.5,
            crs_id: "EPSG:32631".into(),
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !self.extent_m.iter().all(|&v| v > 0.0 && v.is_finite()) {
            return bad(format!("extent {:?} must be positive", self.extent_m));
        }
        if !(self.pixel_size_m > 0.0 && self.pixel_size_m.is_finite()) {
            return bad(format!("pixel size {} must be positive", self.pixel_size_m));
        }
        if !(0.0..=1.0).contains(&self.residential_fraction) {
            return bad(format!("residential_fraction {} is not in [0, 1]", self.residential_fraction));
        }
        let [lo, hi] = self.size_range_m;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("size range {:?} needs 0 < min <= max", self.size_range_m));
        }
        let [rlo, rhi] = self.cloud_radius_m;
        if !(rlo > 0.0 && rlo <= rhi && rhi.is_finite()) {
            return bad(format!("cloud radius {:?} needs 0 < min <= max", self.cloud_radius_m));
        }
        if !(self.persons_per_m2 >= 0.0 && self.persons_per_m2.is_finite()) {
            return bad(format!("persons_per_m2 {} must be >= 0", self.persons_per_m2));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) || !(self.min_gap_m >= 0.0) {
            return bad("noise_std and min_gap_m must be >= 0".into());
        }
        if let Some(p) = self.parcel_size_m {
            if !(p > 0.0 && p <= self.extent_m[0] && p <= self.extent_m[1]) {
                return bad(format!("parcel size {p} must be positive and fit the extent"));
            }
        }
        Ok(())
    }

    pub fn bounds(&self) -> Rect {
        let [x0, y1] = self.origin_m;
        Rect {
            x_min: x0,
            y_min: y1 - self.extent_m[1],
            x_max: x0 + self.extent_m[0],
            y_max: y1,
        }
    }

    pub fn raster_size(&self) -> (usize, usize) {
        let px = |e: f64| ((e / self.pixel_size_m) + 1e-9).floor().max(1.0) as usize;
        (px(self.extent_m[0]), px(self.extent_m[1]))
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub params: SynthParams,
    pub raster: Raster,
    pub footprints: FootprintSet,
    /// Persons per footprint, in footprint order.
    pub persons: Vec<f64>,
}

impl SyntheticScene {
    pub fn total_persons(&self) -> f64 {
        self.persons.iter().sum()
    }
}

/// Rectangle with its corner ring, used for placement.
#[derive(Debug, Clone)]
struct Placed {
    corners: [Point; 4],
    axes: [(f64, f64); 2],
}

impl Placed {
    fn new(cx: f64, cy: f64, w: f64, h: f64, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let (hw, hh) = (w / 2.0, h / 2.0);
        let corner = |dx: f64, dy: f64| Point::new(cx + dx * c - dy * s, cy + dx * s + dy * c);
        Placed {
            corners: [corner(-hw, -hh), corner(hw, -hh), corner(hw, hh), corner(-hw, hh)],
            axes: [(c, s), (-s, c)],
        }
    }

    fn project(&self, axis: (f64, f64)) -> (f64, f64) {
        self.corners.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            let d = p.x * axis.0 + p.y * axis.1;
            (lo.min(d), hi.max(d))
        })
    }

    /// Separating-axis test: true when some edge normal separates the two
    /// rectangles by at least `gap`.
    fn separated(&self, other: &Placed, gap: f64) -> bool {
        self.axes.iter().chain(&other.axes).any(|&axis| {
            let (a0, a1) = self.project(axis);
            let (b0, b1) = other.project(axis);
            a1 + gap <= b0 || b1 + gap <= a0
        })
    }

    fn bbox(&self) -> Rect {
        let xs = self.corners.map(|p| p.x);
        let ys = self.corners.map(|p| p.y);
        Rect {
            x_min: xs.iter().copied().fold(f64::INFINITY, f64::min),
            y_min: ys.iter().copied().fold(f64::INFINITY, f64::min),
            x_max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            y_max: ys.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Bucketed index of placed rectangles for neighbor lookup.
struct Buckets {
    size: f64,
    map: HashMap<(i64, i64), Vec<usize>>,
}

impl Buckets {
    fn key(&self, x: f64, y: f64) -> (i64, i64) {
        ((x / self.size).floor() as i64, (y / self.size).floor() as i64)
    }

    fn keys(&self, r: &Rect) -> impl Iterator<Item = (i64, i64)> {
        let (x0, y0) = self.key(r.x_min, r.y_min);
        let (x1, y1) = self.key(r.x_max, r.y_max);
        (x0..=x1).flat_map(move |x| (y0..=y1).map(move |y| (x, y)))
    }
}

/// Region a building must stay inside, with its class when parcels decide it.
struct Slot {
    region: Rect,
    class: Option<ClassTag>,
}

fn slots(params: &SynthParams, rng: &mut ChaCha8Rng) -> Vec<Slot> {
    let bounds = params.bounds();
    let Some(ps) = params.parcel_size_m else {
        return (0..params.building_count)
            .map(|_| Slot {
                region: bounds,
                class: None,
            })
            .collect();
    };
    let nx = ((params.extent_m[0] / ps) + 1e-9).floor() as usize;
    let ny = ((params.extent_m[1] / ps) + 1e-9).floor() as usize;
    let n_parcels = nx * ny;
    let n_res = (params.residential_fraction * n_parcels as f64).round() as usize;
    let mut classes: Vec<ClassTag> = (0..n_parcels)
        .map(|i| if i < n_res { ClassTag::Residential } else { ClassTag::NonResidential })
        .collect();
    classes.shuffle(rng);

    // Buildings go round-robin over parcels; each parcel is cut into a
    // k x k lattice of lots so that dense parcels cannot jam.
    let per_parcel = params.building_count.div_ceil(n_parcels.max(1));
    let k = (per_parcel as f64).sqrt().ceil().max(1.0) as usize;
    let lot = ps / k as f64;
    (0..params.building_count)
        .map(|i| {
            let p = i % n_parcels;
            let l = i / n_parcels;
            let (pr, pc) = (p / nx, p % nx);
            let (lr, lc) = (l / k, l % k);
            let x_min = bounds.x_min + pc as f64 * ps + lc as f64 * lot;
            let y_max = bounds.y_max - pr as f64 * ps - lr as f64 * lot;
            Slot {
                region: Rect {
                    x_min,
                    y_min: y_max - lot,
                    x_max: x_min + lot,
                    y_max,
                },
                class: Some(classes[p]),
            }
        })
        .collect()
}

fn place_buildings(params: &SynthParams, rng: &mut ChaCha8Rng) -> Result<Vec<Footprint>> {
    let slots = slots(params, rng);
    let [lo, hi] = params.size_range_m;
    let gap = params.min_gap_m;
    let mut buckets = Buckets {
        size: hi * std::f64::consts::SQRT_2 + gap,
        map: HashMap::new(),
    };
    let mut placed: Vec<Placed> = Vec::with_capacity(slots.len());
    let mut out = Vec::with_capacity(slots.len());
    for (b, slot) in slots.iter().enumerate() {
        let class = match slot.class {
            Some(c) => c,
            None if rng.random::<f64>() < params.residential_fraction => ClassTag::Residential,
            None => ClassTag::NonResidential,
        };
        let mut accepted = None;
        for _ in 0..MAX_ATTEMPTS {
            let w = rng.random_range(lo..=hi);
            let h = rng.random_range(lo..=hi);
            let angle = match params.rotation {
                Rotation::AxisAligned => 0.0,
                Rotation::Uniform => rng.random_range(0.0..PI),
            };
            let (s, c) = angle.sin_cos();
            let half_x = (w * c.abs() + h * s.abs()) / 2.0 + gap / 2.0;
            let half_y = (w * s.abs() + h * c.abs()) / 2.0 + gap / 2.0;
            let r = &slot.region;
            if 2.0 * half_x > r.width() || 2.0 * half_y > r.height() {
                continue;
            }
            let cx = r.x_min + half_x + rng.random::<f64>() * (r.width() - 2.0 * half_x);
            let cy = r.y_min + half_y + rng.random::<f64>() * (r.height() - 2.0 * half_y);
            let cand = Placed::new(cx, cy, w, h, angle);
            let bb = cand.bbox();
            let bb = Rect {
                x_min: bb.x_min - gap,
                y_min: bb.y_min - gap,
                x_max: bb.x_max + gap,
                y_max: bb.y_max + gap,
            };
            let clear = buckets
                .keys(&bb)
                .filter_map(|k| buckets.map.get(&k))
                .flatten()
                .all(|&j| cand.separated(&placed[j], gap));
            if clear {
                accepted = Some(cand);
                break;
            }
        }
        let Some(cand) = accepted else {
            return Err(Error::PlacementFailed {
                building: b,
                attempts: MAX_ATTEMPTS,
            });
        };
        let polygon = Polygon::new(cand.corners.to_vec(), Vec::new())?;
        let keys: Vec<_> = buckets.keys(&cand.bbox()).collect();
        for k in keys {
            buckets.map.entry(k).or_default().push(placed.len());
        }
        placed.push(cand);
        out.push(Footprint {
            id: format!("b{b}"),
            polygon,
            class_tag: class,
        });
    }
    Ok(out)
}

struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }

    fn bbox(&self) -> Rect {
        let r = self.a.max(self.b);
        Rect {
            x_min: self.cx - r,
            y_min: self.cy - r,
            x_max: self.cx + r,
            y_max: self.cy + r,
        }
    }
}

/// Pixel index range whose centers can fall inside `r`.
fn pixel_span(t: &GeoTransform, r: &Rect, width: usize, height: usize) -> (usize, usize, usize, usize) {
    let c0 = ((r.x_min - t.origin_x) / t.pixel_w - 0.5).floor().max(0.0) as usize;
    let c1 = (((r.x_max - t.origin_x) / t.pixel_w + 0.5).ceil().max(0.0) as usize).min(width);
    let r0 = ((t.origin_y - r.y_max) / t.pixel_h - 0.5).floor().max(0.0) as usize;
    let r1 = (((t.origin_y - r.y_min) / t.pixel_h + 0.5).ceil().max(0.0) as usize).min(height);
    (c0, c1, r0, r1)
}

fn render(
    params: &SynthParams,
    footprints: &[Footprint],
    rng: &mut ChaCha8Rng,
) -> Result<Raster> {
    let (width, height) = params.raster_size();
    let [x0, y1] = params.origin_m;
    let t = GeoTransform::new(x0, y1, params.pixel_size_m, params.pixel_size_m, params.crs_id.clone())?;

    // 0 soil, 1 residential roof, 2 other roof
    let mut class = vec![0u8; width * height];
    for f in footprints {
        let code = if f.class_tag == ClassTag::Residential { 1 } else { 2 };
        let (c0, c1, r0, r1) = pixel_span(&t, &f.polygon.bbox(), width, height);
        for row in r0..r1 {
            for col in c0..c1 {
                let (x, y) = t.pixel_center(col as f64, row as f64);
                if f.polygon.contains(Point::new(x, y)) {
                    class[row * width + col] = code;
                }
            }
        }
    }

    let [rlo, rhi] = params.cloud_radius_m;
    let bounds = params.bounds();
    let clouds: Vec<Ellipse> = (0..params.cloud_blob_count)
        .map(|_| {
            let angle: f64 = rng.random_range(0.0..PI);
            Ellipse {
                cx: rng.random_range(bounds.x_min..bounds.x_max),
                cy: rng.random_range(bounds.y_min..bounds.y_max),
                a: rng.random_range(rlo..=rhi),
                b: rng.random_range(rlo..=rhi),
                cos: angle.cos(),
                sin: angle.sin(),
            }
        })
        .collect();

    let noise = Normal::new(0.0, params.noise_std).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut samples = Vec::with_capacity(width * height * 3);
    for &c in &class {
        let base = match c {
            0 => SOIL_RGB,
            1 => RESIDENTIAL_RGB,
            _ => NON_RESIDENTIAL_RGB,
        };
        for v in base {
            let n = if params.noise_std > 0.0 { noise.sample(rng) } else { 0.0 };
            samples.push((v + n).round().clamp(0.0, 255.0) as u8);
        }
    }

    for e in &clouds {
        let (c0, c1, r0, r1) = pixel_span(&t, &e.bbox(), width, height);
        for row in r0..r1 {
            for col in c0..c1 {
                let (x, y) = t.pixel_center(col as f64, row as f64);
                if e.contains(x, y) {
                    let v = CLOUD_LEVEL + ((row * 7 + col * 13) % 6) as u8;
                    samples[(row * width + col) * 3..][..3].fill(v);
                }
            }
        }
    }
    Raster::new(width, height, 3, samples, t)
}

/// Generate a scene. Residential buildings hold `persons_per_m2 * area`
/// persons; other buildings hold none.
pub fn generate_settlement(params: &SynthParams) -> Result<SyntheticScene> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let footprints = place_buildings(params, &mut rng)?;
    let raster = render(params, &footprints, &mut rng)?;
    let persons = footprints
        .iter()
        .map(|f| {
            if f.class_tag == ClassTag::Residential {
                params.persons_per_m2 * polygon_area(&f.polygon)
            } else {
                0.0
            }
        })
        .collect();
    Ok(SyntheticScene {
        params: params.clone(),
        raster,
        footprints: FootprintSet::new(footprints, params.crs_id.clone())?,
        persons,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileTruth {
    pub row: usize,
    pub col: usize,
    pub occupancy: f64,
    /// Building populations split by clipped-area share.
    pub population: f64,
    /// Building populations assigned whole to the tile holding the centroid.
    pub population_centroid: f64,
}

/// Exact occupancy and population for every grid cell, row-major.
pub fn oracle_tile_truth(footprints: &FootprintSet, persons: &[f64], grid: &TileGrid) -> Vec<TileTruth> {
    let mut truth: Vec<TileTruth> = grid
        .cells()
        .map(|cell| TileTruth {
            row: cell.row,
            col: cell.col,
            occupancy: exact_occupancy(footprints, &grid.cell_box(cell)),
            population: 0.0,
            population_centroid: 0.0,
        })
        .collect();
    let s = grid.tile_size_m;
    let cell_range = |lo: f64, hi: f64, n: usize| {
        let a = (lo / s).floor().max(0.0) as usize;
        let b = ((hi / s).floor().max(0.0) as usize).min(n.saturating_sub(1));
        a..=b
    };
    for (f, &p) in footprints.footprints().iter().zip(persons) {
        if p == 0.0 {
            continue;
        }
        let area = polygon_area(&f.polygon);
        let bb = f.polygon.bbox();
        let cols = cell_range(bb.x_min - grid.origin_x, bb.x_max - grid.origin_x, grid.n_cols);
        let rows = cell_range(grid.origin_y - bb.y_max, grid.origin_y - bb.y_min, grid.n_rows);
        for row in rows {
            for col in cols.clone() {
                let cell = Cell::new(row, col);
                let share: f64 = clip_polygon_to_box(&f.polygon, &grid.cell_box(cell))
                    .iter()
                    .map(polygon_area)
                    .sum();
                truth[grid.index(cell)].population += p * share / area;
            }
        }
        let c = f.polygon.centroid();
        let col = ((c.x - grid.origin_x) / s).floor();
        let row = ((grid.origin_y - c.y) / s).floor();
        if col >= 0.0 && row >= 0.0 && (col as usize) < grid.n_cols && (row as usize) < grid.n_rows {
            truth[grid.index(Cell::new(row as usize, col as usize))].population_centroid += p;
        }
    }
    truth
}

pub fn truth_jsonl(site_id: &str, truth: &[TileTruth]) -> String {
    let mut out = String::new();
    for t in truth {
        writeln!(
            out,
            "{{\"site_id\":{},\"row\":{},\"col\":{},\"occupancy\":{:?},\"population\":{:?},\"population_centroid\":{:?}}}",
            serde_json::to_string(site_id).expect("string"),
            t.row,
            t.col,
            t.occupancy,
            t.population,
            t.population_centroid
        )
        .unwrap();
    }
    out
}

pub fn parse_truth_jsonl(text: &str) -> Result<Vec<TileTruth>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[derive(Debug, Serialize)]
struct SceneMeta<'a> {
    generator: &'static str,
    rng: &'static str,
    seed: u64,
    building_count: usize,
    residential_buildings: usize,
    total_persons: f64,
    params: &'a SynthParams,
}

/// Paths written by [`write_scene`].
#[derive(Debug, Clone)]
pub struct SceneFiles {
    pub raster: std::path::PathBuf,
    pub footprints: std::path::PathBuf,
    pub truth: std::path::PathBuf,
    pub meta: std::path::PathBuf,
}

/// Write `<site>.png` (+ `.pgw`, `.crs.json`), `<site>.geojson` with a
/// `persons` property, `<site>.truth.jsonl` and `<site>.synth.json`.
pub fn write_scene(dir: &Path, site_id: &str, scene: &SyntheticScene, truth: &[TileTruth]) -> Result<SceneFiles> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = SceneFiles {
        raster: dir.join(format!("{site_id}.png")),
        footprints: dir.join(format!("{site_id}.geojson")),
        truth: dir.join(format!("{site_id}.truth.jsonl")),
        meta: dir.join(format!("{site_id}.synth.json")),
    };
    save_raster(&files.raster, &scene.raster)?;
    let tag_key = TagMap::default().key;
    let geojson = footprints_to_geojson_with(&scene.footprints, &tag_key, |i, _| {
        let mut m = geojson::JsonObject::new();
        m.insert("persons".into(), scene.persons[i].into());
        m
    });
    fs::write(&files.footprints, geojson).map_err(|e| Error::io(&files.footprints, e))?;
    write_crs_sidecar(&files.footprints, &CrsSidecar::meters(scene.params.crs_id.clone()))?;
    fs::write(&files.truth, truth_jsonl(site_id, truth)).map_err(|e| Error::io(&files.truth, e))?;
    let meta = SceneMeta {
        generator: concat!("gridpop-synth ", env!("CARGO_PKG_VERSION")),
        rng: RNG_ID,
        seed: scene.params.seed,
        building_count: scene.footprints.len(),
        residential_buildings: scene.footprints.count(ClassTag::Residential),
        total_persons: scene.total_persons(),
        params: &scene.params,
    };
    fs::write(&files.meta, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&files.meta, e))?;
    Ok(files)
}
