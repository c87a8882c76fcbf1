//! Acceptance run. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Oracles here are written independently of the
//! library code they check.

use std::collections::BTreeMap;
use std::fs;
use std::panic;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use gridpop::classifier::{evaluate, loss_and_gradient, train_logistic, FeatureVector, FEATURE_COUNT, L2_PENALTY};
use gridpop::config::PipelineConfig;
use gridpop::geodata::{parse_footprints, parse_world_file, ClassTag, Footprint, FootprintSet, Point, Polygon, Rect, TagMap};
use gridpop::labeler::{assign_label, passes_cloud_filter, Split};
use gridpop::pipeline::{label_cell, run_site, SiteRun};
use gridpop::popgrid::{aggregate, disaggregate, weights_from_tiles, CellWeights, WeightMode, WeightSource};
use gridpop::rasterizer::{occupancy_fraction, rasterize_coverage};
use gridpop::synth::{generate_settlement, oracle_tile_truth, SynthParams};
use gridpop::tiler::{resample_area, Cell, PixelBlock, TileGrid, TileImage};
use gridpop::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() -> ExitCode {
    let checks: [(&str, fn() -> Outcome); 10] = [
        ("rasterized occupancy matches exact clipped area", raster_oracle),
        ("label and cloud thresholds", thresholds),
        ("population conservation through aggregation", conservation),
        ("classifier gradient check", gradient_check),
        ("classifier accuracy on synthetic tiles", classifier_sanity),
        ("class balance of a 1/3 residential scene", class_balance_share),
        ("occupancy population map against oracle", population_oracle),
        ("resampling preserves the mean", resampling),
        ("pipeline determinism across runs and --jobs", determinism),
        ("malformed input corpus", parser_robustness),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let start = Instant::now();
        let outcome = panic::catch_unwind(check).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", checks.len() - failed, checks.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

// ---- 1 ----

/// Area of `poly` inside the box, by clipping against each box edge in turn.
fn clipped_area(poly: &[(f64, f64)], b: &Rect) -> f64 {
    let mut pts: Vec<(f64, f64)> = poly.to_vec();
    // (axis, bound, keep-above)
    for (axis, bound, above) in [(0, b.x_min, true), (0, b.x_max, false), (1, b.y_min, true), (1, b.y_max, false)] {
        let inside = |p: &(f64, f64)| {
            let v = if axis == 0 { p.0 } else { p.1 };
            if above {
                v >= bound
            } else {
                v <= bound
            }
        };
        let cross = |p: (f64, f64), q: (f64, f64)| {
            let (pv, qv) = if axis == 0 { (p.0, q.0) } else { (p.1, q.1) };
            let t = (bound - pv) / (qv - pv);
            (p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1))
        };
        let mut out = Vec::new();
        for i in 0..pts.len() {
            let (p, q) = (pts[i], pts[(i + 1) % pts.len()]);
            match (inside(&p), inside(&q)) {
                (true, true) => out.push(q),
                (true, false) => out.push(cross(p, q)),
                (false, true) => {
                    out.push(cross(p, q));
                    out.push(q);
                }
                (false, false) => {}
            }
        }
        pts = out;
        if pts.is_empty() {
            return 0.0;
        }
    }
    let twice: f64 = (0..pts.len())
        .map(|i| {
            let (p, q) = (pts[i], pts[(i + 1) % pts.len()]);
            p.0 * q.1 - q.0 * p.1
        })
        .sum();
    twice.abs() / 2.0
}

/// Star-shaped polygon around (cx, cy): sorted angles, varying radii.
fn star(rng: &mut ChaCha8Rng, cx: f64, cy: f64, r: f64) -> Vec<(f64, f64)> {
    let n = rng.random_range(3..10);
    let mut angles: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    angles.sort_by(f64::total_cmp);
    angles
        .into_iter()
        .map(|a| {
            let rr = r * rng.random_range(0.4..1.0);
            (cx + rr * a.cos(), cy + rr * a.sin())
        })
        .collect()
}

fn bbox_of(p: &[(f64, f64)]) -> Rect {
    let f = |g: fn(&(f64, f64)) -> f64, init: f64, m: fn(f64, f64) -> f64| p.iter().map(g).fold(init, m);
    Rect {
        x_min: f(|q| q.0, f64::INFINITY, f64::min),
        y_min: f(|q| q.1, f64::INFINITY, f64::min),
        x_max: f(|q| q.0, f64::NEG_INFINITY, f64::max),
        y_max: f(|q| q.1, f64::NEG_INFINITY, f64::max),
    }
}

fn raster_oracle() -> Outcome {
    let start = Instant::now();
    let (x0, y0) = (500_000.0, 830_000.0);
    let tile = Rect {
        x_min: x0,
        y_min: y0,
        x_max: x0 + 36.0,
        y_max: y0 + 36.0,
    };
    let mut worst: f64 = 0.0;
    let mut shapes = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut polys: Vec<(Vec<(f64, f64)>, ClassTag)> = Vec::new();
        let mut boxes: Vec<Rect> = Vec::new();
        let target = rng.random_range(1..25);
        for _ in 0..400 {
            if polys.len() == target {
                break;
            }
            let r = rng.random_range(1.0..8.0);
            let (cx, cy) = (x0 + rng.random_range(-6.0..42.0), y0 + rng.random_range(-6.0..42.0));
            let p = star(&mut rng, cx, cy, r);
            let b = bbox_of(&p);
            // Disjoint boxes keep the scene overlap-free.
            if boxes.iter().any(|o| b.x_min <= o.x_max && o.x_min <= b.x_max && b.y_min <= o.y_max && o.y_min <= b.y_max) {
                continue;
            }
            let tag = if rng.random::<f64>() < 0.8 { ClassTag::Residential } else { ClassTag::NonResidential };
            boxes.push(b);
            polys.push((p, tag));
        }
        let footprints: Vec<Footprint> = polys
            .iter()
            .enumerate()
            .filter_map(|(i, (p, tag))| {
                let ring = p.iter().map(|&(x, y)| Point::new(x, y)).collect();
                // Random vertices can land collinear; such shapes are rejected on construction.
                Polygon::new(ring, Vec::new()).ok().map(|polygon| Footprint {
                    id: format!("p{i}"),
                    polygon,
                    class_tag: *tag,
                })
            })
            .collect();
        // The oracle sums exactly the polygons the library accepted.
        let kept: Vec<&str> = footprints.iter().map(|f| f.id.as_str()).collect();
        let exact = polys
            .iter()
            .enumerate()
            .filter(|(i, (_, tag))| *tag == ClassTag::Residential && kept.contains(&format!("p{i}").as_str()))
            .map(|(_, (p, _))| clipped_area(p, &tile))
            .sum::<f64>()
            / tile.area();
        shapes += footprints.len();
        let set = FootprintSet::new(footprints, "EPSG:32631").map_err(|e| e.to_string())?;
        let mask = rasterize_coverage(&set, &tile, 224, 4).map_err(|e| e.to_string())?;
        let err = (occupancy_fraction(&mask) - exact).abs();
        worst = worst.max(err);
        ensure!(err <= 0.01, "scene {seed}: error {err:.5} (exact {exact:.5})");
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 60.0, "took {secs:.1}s");
    Ok(format!("100 scenes, {shapes} polygons, max error {worst:.2e} (limit 0.01), {secs:.1}s (limit 60s)"))
}

// ---- 2 ----

fn thresholds() -> Outcome {
    let c = PipelineConfig::default();
    ensure!(assign_label(0.30, c.residential_threshold) == 1, "0.30 not residential");
    ensure!(assign_label(0.299999, c.residential_threshold) == 0, "0.299999 residential");
    ensure!(passes_cloud_filter(0.05, c.cloud_max_ratio), "ratio 0.05 dropped");
    ensure!(!passes_cloud_filter(0.0501, c.cloud_max_ratio), "ratio 0.0501 kept");

    // The same boundaries through a real tile: 20 of 400 white pixels is
    // exactly 5%, 21 is over.
    let grid = TileGrid::new(0.0, 36.0, 36.0, 1, 1).map_err(|e| e.to_string())?;
    let cfg = PipelineConfig {
        target_px: 20,
        split: BTreeMap::from([("s".to_owned(), Split::Train)]),
        ..Default::default()
    };
    let retained = |white: usize| -> Result<bool, String> {
        let mut px = vec![100u8; 20 * 20 * 3];
        px[..white * 3].fill(255);
        let image = TileImage::from_rgb(Cell::new(0, 0), 20, px).map_err(|e| e.to_string())?;
        let (_, kept) =
            label_cell("s", &grid, &image, &FootprintSet::empty("EPSG:32631"), &cfg, "").map_err(|e| e.to_string())?;
        Ok(kept)
    };
    ensure!(retained(20)?, "tile with 5% white pixels dropped");
    ensure!(!retained(21)?, "tile with 5.25% white pixels kept");

    // A 36 m tile whose residential footprint covers exactly 30%.
    let building = |w: f64| -> Result<FootprintSet, String> {
        let poly = Polygon::from_rect(&Rect::new(0.0, 0.0, w, 36.0).map_err(|e| e.to_string())?);
        FootprintSet::new(
            vec![Footprint {
                id: "b".into(),
                polygon: poly,
                class_tag: ClassTag::Residential,
            }],
            "EPSG:32631",
        )
        .map_err(|e| e.to_string())
    };
    let image = TileImage::from_rgb(Cell::new(0, 0), 20, vec![100; 1200]).map_err(|e| e.to_string())?;
    let label = |w: f64| -> Result<(u8, f64), String> {
        let (t, _) = label_cell("s", &grid, &image, &building(w)?, &cfg, "").map_err(|e| e.to_string())?;
        Ok((t.label, t.occupancy))
    };
    // 20 px x 4 samples puts sample centers every 0.45 m: a 10.8 m wide
    // footprint covers 24 of 80 columns (30%), a 10.5 m one 23 (28.75%).
    let (l, occ) = label(10.8)?;
    ensure!(l == 1 && occ == 0.3, "30% footprint gave label {l}, occupancy {occ}");
    let (l, occ) = label(10.5)?;
    ensure!(l == 0 && occ == 0.2875, "28.75% footprint gave label {l}, occupancy {occ}");
    Ok("label(0.30)=1, label(0.299999)=0, cloud 0.05 kept, 0.0501 dropped; same through tiles".into())
}

// ---- 3 ----

fn conservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut chains = 0;
    let mut zero_weight_errors = 0;
    for case in 0..1000 {
        let (rows, cols) = (rng.random_range(1..15), rng.random_range(1..15));
        let grid = TileGrid::new(500_000.0, 830_000.0, 36.0, cols, rows).map_err(|e| e.to_string())?;
        let n = rows * cols;
        let scale = 10f64.powi(rng.random_range(-6..6));
        let mut missing = vec![false; n];
        let weights: Vec<f64> = (0..n)
            .map(|i| match rng.random_range(0..6) {
                0 => 0.0,
                1 => {
                    missing[i] = true;
                    0.0
                }
                2 => 1.0,
                _ => rng.random::<f64>() * scale,
            })
            .collect();
        let total = match rng.random_range(0..4) {
            0 => 0.0,
            1 => rng.random_range(0..1_000_000u32) as f64,
            2 => rng.random::<f64>() * 10f64.powi(rng.random_range(-3..10)),
            _ => 0.1 + rng.random_range(0..100u32) as f64 * 0.7,
        };
        let cw = CellWeights {
            grid,
            mode: WeightMode::Occupancy,
            weights: weights.clone(),
            missing,
        };
        let fine = match disaggregate(total, &cw) {
            Ok(g) => g,
            Err(Error::ZeroWeights) if total > 0.0 && weights.iter().all(|&w| w == 0.0) => {
                zero_weight_errors += 1;
                continue;
            }
            Err(e) => return Err(format!("case {case}: {e}")),
        };
        let sum: f64 = fine.counts.iter().sum();
        ensure!(sum.to_bits() == total.to_bits(), "case {case}: allocated {sum:e} of {total:e}");
        let mut g = fine;
        let links = rng.random_range(1..4);
        for _ in 0..links {
            g = aggregate(&g, rng.random_range(1..5)).map_err(|e| e.to_string())?;
            let s: f64 = g.counts.iter().sum();
            ensure!(s.to_bits() == total.to_bits(), "case {case}: aggregated sum {s:e} of {total:e}");
            chains += 1;
        }
    }
    Ok(format!(
        "1000 weight vectors, {chains} aggregation steps, all sums bit-equal to the total ({zero_weight_errors} all-zero cases rejected as documented)"
    ))
}

// ---- 4 ----

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for draw in 0..20 {
        let n = rng.random_range(5..60);
        let xs: Vec<[f64; FEATURE_COUNT]> =
            (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-2.0..2.0))).collect();
        let ys: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let w: Vec<f64> = (0..FEATURE_COUNT).map(|_| rng.random_range(-1.5..1.5)).collect();
        let b = rng.random_range(-1.0..1.0);
        let (_, gw, gb) = loss_and_gradient(&w, b, &xs, &ys, L2_PENALTY);
        let loss = |w: &[f64], b: f64| loss_and_gradient(w, b, &xs, &ys, L2_PENALTY).0;
        let mut numeric = Vec::with_capacity(FEATURE_COUNT + 1);
        for k in 0..FEATURE_COUNT {
            let (mut up, mut down) = (w.clone(), w.clone());
            up[k] += h;
            down[k] -= h;
            numeric.push((loss(&up, b) - loss(&down, b)) / (2.0 * h));
        }
        numeric.push((loss(&w, b + h) - loss(&w, b - h)) / (2.0 * h));
        let analytic: Vec<f64> = gw.iter().copied().chain([gb]).collect();
        let diff = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let rel = diff / norm(&analytic).max(norm(&numeric)).max(1e-12);
        worst = worst.max(rel);
        ensure!(rel <= 1e-5, "draw {draw}: relative error {rel:.2e}");
    }
    Ok(format!("20 draws, max relative error {worst:.2e} (limit 1e-5)"))
}

// ---- 5 and 6 ----

/// Scene of `n x n` 36 m parcels with nine buildings each, 0.5 m pixels.
fn parcel_scene(n: usize, seed: u64, clouds: usize) -> SynthParams {
    let side = 36.0 * n as f64;
    SynthParams {
        extent_m: [side, side],
        pixel_size_m: 0.5,
        building_count: 9 * n * n,
        residential_fraction: 1.0 / 3.0,
        cloud_blob_count: clouds,
        seed,
        ..Default::default()
    }
}

fn site_run(site: &str, params: &SynthParams, config: &PipelineConfig) -> Result<SiteRun, String> {
    let scene = generate_settlement(params).map_err(|e| e.to_string())?;
    run_site(site, &scene.raster, &scene.footprints, config, "tiles", false).map_err(|e| e.to_string())
}

fn classifier_sanity() -> Outcome {
    let config = PipelineConfig {
        split: BTreeMap::from([("train-site".to_owned(), Split::Train), ("val-site".to_owned(), Split::Val)]),
        ..Default::default()
    };
    let train_run = site_run("train-site", &parcel_scene(24, 51, 6), &config)?;
    let val_run = site_run("val-site", &parcel_scene(24, 52, 6), &config)?;
    let set = |run: &SiteRun| -> Vec<(FeatureVector, u8)> { run.retained().map(|r| (r.features, r.tile.label)).collect() };
    let (train, val) = (set(&train_run), set(&val_run));
    let tiles = train.len() + val.len();
    ensure!(tiles >= 1000, "only {tiles} tiles");
    let start = Instant::now();
    let model = train_logistic(&train, config.learning_rate, config.epochs, config.seed).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let m = evaluate(&model, &val).map_err(|e| e.to_string())?;
    ensure!(secs < 60.0, "training took {secs:.1}s");
    ensure!(m.accuracy >= 0.90, "validation accuracy {:.4}", m.accuracy);
    Ok(format!(
        "{tiles} tiles ({} train, {} val), validation accuracy {:.4} (limit 0.90), training {secs:.2}s (limit 60s)",
        train.len(),
        val.len(),
        m.accuracy
    ))
}

fn class_balance_share() -> Outcome {
    let config = PipelineConfig {
        split: BTreeMap::from([("balance".to_owned(), Split::Train)]),
        ..Default::default()
    };
    let run = site_run("balance", &parcel_scene(40, 61, 8), &config)?;
    let labels: Vec<u8> = run.retained().map(|r| r.tile.label).collect();
    let n = labels.len();
    let share = labels.iter().filter(|&&l| l == 1).count() as f64 / n as f64;
    ensure!(n >= 1500, "only {n} labeled tiles");
    let dev = (share - 1.0 / 3.0).abs() * 100.0;
    ensure!(dev <= 5.0, "residential share {share:.4} is {dev:.2} pp from 1/3");
    Ok(format!(
        "{n} labeled tiles ({} cloud-filtered), residential share {share:.4}, {dev:.2} pp from 1/3 (limit 5)",
        run.cloud_filtered()
    ))
}

// ---- 7 ----

fn population_oracle() -> Outcome {
    // 30 m parcels against 36 m tiles, so buildings straddle tile edges.
    let params = SynthParams {
        parcel_size_m: Some(30.0),
        size_range_m: [5.0, 9.0],
        building_count: 864,
        seed: 71,
        ..Default::default()
    };
    let config = PipelineConfig {
        split: BTreeMap::from([("pop".to_owned(), Split::Train)]),
        ..Default::default()
    };
    let scene = generate_settlement(&params).map_err(|e| e.to_string())?;
    let run = run_site("pop", &scene.raster, &scene.footprints, &config, "", false).map_err(|e| e.to_string())?;
    ensure!(run.cloud_filtered() == 0, "cloud-free scene lost {} tiles", run.cloud_filtered());
    let tiles: Vec<_> = run.retained().map(|r| r.tile.clone()).collect();
    let weights = weights_from_tiles(&run.grid, &tiles, WeightSource::Occupancy).map_err(|e| e.to_string())?;
    let total = scene.total_persons();
    let map = disaggregate(total, &weights).map_err(|e| e.to_string())?;
    let sum: f64 = map.counts.iter().sum();
    ensure!(sum == total, "map holds {sum} of {total} persons");

    let truth = oracle_tile_truth(&scene.footprints, &scene.persons, &run.grid);
    let ratio = |pick: fn(&gridpop::synth::TileTruth) -> f64| {
        let max = truth.iter().map(pick).fold(0.0, f64::max);
        let err = truth.iter().zip(&map.counts).map(|(t, c)| (pick(t) - c).abs()).fold(0.0, f64::max);
        err / max
    };
    let area = ratio(|t| t.population);
    let centroid = ratio(|t| t.population_centroid);
    ensure!(area <= 0.25, "max tile error {:.1}% of the largest tile", area * 100.0);
    Ok(format!(
        "max tile error {:.2}% of the largest oracle tile (limit 25%), total error 0; whole-building-at-centroid truth: {:.1}%",
        area * 100.0,
        centroid * 100.0
    ))
}

// ---- 8 ----

fn mean(px: &[u8]) -> f64 {
    px.iter().map(|&v| v as f64).sum::<f64>() / px.len() as f64
}

fn resampling() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let side = rng.random_range(8..400);
        let target = rng.random_range(8..300);
        let pixels: Vec<u8> = (0..side * side * 3).map(|_| rng.random()).collect();
        let block = PixelBlock {
            cell: Cell::new(0, 0),
            width: side,
            height: side,
            pixels,
        };
        let out = resample_area(&block, target).map_err(|e| e.to_string())?;
        let d = (mean(&out.pixels) - mean(&block.pixels)).abs();
        worst = worst.max(d);
        ensure!(d <= 0.5, "block {i} ({side} -> {target}): mean moved {d:.3}");
        let same = resample_area(&block, side).map_err(|e| e.to_string())?;
        ensure!(same.pixels == block.pixels, "block {i}: resampling to {side} px is not the identity");
    }
    Ok(format!("100 blocks, max mean shift {worst:.3} (limit 0.5), identity at equal size"))
}

// ---- 9 ----

fn gridpop(dir: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_gridpop"))
        .current_dir(dir)
        .env_remove("GRIDPOP_SEED")
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!("gridpop {args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    fs::write(dir.join("p.toml"), "extent_m = [216.0, 216.0]\npixel_size_m = 0.5\nbuilding_count = 324\ncloud_blob_count = 3\n")
        .map_err(|e| e.to_string())?;
    let run = |work: &str, jobs: &str| -> Result<(), String> {
        let c = ["--work", work, "--jobs", jobs, "--split", "north=train", "--split", "south=val"];
        let with = |rest: &[&str]| -> Vec<String> { c.iter().chain(rest).map(|s| s.to_string()).collect() };
        let call = |rest: &[&str]| -> Result<String, String> {
            let v = with(rest);
            gridpop(dir, &v.iter().map(String::as_str).collect::<Vec<_>>())
        };
        call(&["--seed", "5", "synth", "--params", "p.toml", "--site", "north", "--out", &format!("{work}-in")])?;
        call(&["--seed", "6", "synth", "--params", "p.toml", "--site", "south", "--out", &format!("{work}-in")])?;
        let img = |s: &str, ext: &str| format!("{work}-in/{s}.{ext}");
        call(&[
            "tile",
            "--site",
            "north",
            "--raster",
            &img("north", "png"),
            "--footprints",
            &img("north", "geojson"),
            "--site",
            "south",
            "--raster",
            &img("south", "png"),
            "--footprints",
            &img("south", "geojson"),
        ])?;
        call(&["label"])?;
        call(&["train"])?;
        call(&["popmap", "--total", "north=12000", "--total", "south=7500", "--factor", "2"])?;
        call(&["popmap", "--total", "north=12000", "--mode", "probability"])?;
        Ok(())
    };
    run("a", "1")?;
    run("b", "4")?;
    run("c", "4")?;
    let files = ["manifest.jsonl", "model.txt", "population/north_x2.csv", "population/south_x2.csv", "population/north.csv"];
    for f in files {
        let a = fs::read(dir.join("a").join(f)).map_err(|e| format!("{f}: {e}"))?;
        for other in ["b", "c"] {
            let b = fs::read(dir.join(other).join(f)).map_err(|e| format!("{f}: {e}"))?;
            ensure!(a == b, "{f} differs between --jobs 1 and run {other}");
        }
    }
    for scene_file in ["north.png", "north.geojson", "south.truth.jsonl"] {
        let a = fs::read(dir.join("a-in").join(scene_file)).map_err(|e| e.to_string())?;
        let b = fs::read(dir.join("b-in").join(scene_file)).map_err(|e| e.to_string())?;
        ensure!(a == b, "synthetic {scene_file} differs between runs");
    }
    Ok("manifest, model and population CSVs byte-identical over 3 runs with --jobs 1 and 4".into())
}

// ---- 10 ----

fn parser_robustness() -> Outcome {
    let tag_map = TagMap::default();
    let crs = "EPSG:32631";
    let square = |x: f64| format!("[[[{x},0],[{},0],[{},10],[{x},10],[{x},0]]]", x + 10.0, x + 10.0);
    let feature = |id: &str, coords: &str| {
        format!(r#"{{"type":"Feature","id":"{id}","properties":{{"building":"house"}},"geometry":{{"type":"Polygon","coordinates":{coords}}}}}"#)
    };
    let features = [
        feature("valid-1", &square(0.0)),
        feature("bowtie", "[[[20,0],[30,10],[30,0],[20,10],[20,0]]]"),
        feature("valid-2", &square(40.0)),
        feature("open", "[[[60,0],[70,0],[70,10],[60,10]]]"),
        feature("valid-3", &square(80.0)),
    ];
    let doc = format!(r#"{{"type":"FeatureCollection","features":[{}]}}"#, features.join(","));
    let parsed = parse_footprints(&doc, &tag_map, crs).map_err(|e| e.to_string())?;
    let kept: Vec<&str> = parsed.set.footprints().iter().map(|f| f.id.as_str()).collect();
    ensure!(kept == ["valid-1", "valid-2", "valid-3"], "kept {kept:?}");
    let reason = |id: &str| {
        parsed
            .diagnostics
            .iter()
            .find(|d| d.id.as_deref() == Some(id))
            .map(|d| d.reason.clone())
            .unwrap_or_default()
    };
    ensure!(parsed.diagnostics.len() == 2, "{} diagnostics", parsed.diagnostics.len());
    ensure!(reason("bowtie").contains("self-intersect"), "bowtie: {:?}", reason("bowtie"));
    ensure!(reason("open").contains("not closed"), "open ring: {:?}", reason("open"));

    let mixed = format!(
        r#"{{"type":"FeatureCollection","crs":{{"type":"name","properties":{{"name":"EPSG:4326"}}}},"features":[{}]}}"#,
        features[0]
    );
    ensure!(
        matches!(parse_footprints(&mixed, &tag_map, crs), Err(Error::MixedCrs { .. })),
        "mixed CRS document accepted"
    );
    ensure!(
        matches!(parse_world_file("0.5\n0.02\n0.0\n-0.5\n500000.25\n829999.75\n"), Err(Error::RotatedTransform { .. })),
        "rotated world file accepted"
    );

    // Same corpus through the command line.
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let w = |name: &str, text: &str| fs::write(dir.join(name), text).map_err(|e| e.to_string());
    w("p.toml", "extent_m = [108.0, 108.0]\npixel_size_m = 0.5\nbuilding_count = 20\n")?;
    gridpop(dir, &["synth", "--params", "p.toml", "--site", "s", "--out", "."])?;
    // Move the corpus into the scene's extent.
    let shifted: Vec<String> = features
        .iter()
        .map(|f| {
            let mut out = f.replace(",0]", ",829900]").replace(",10]", ",829910]");
            for x in [0, 10, 20, 30, 40, 50, 60, 70, 80, 90] {
                out = out.replace(&format!("[{x},"), &format!("[{},", 500_000 + x));
            }
            out
        })
        .collect();
    w("corpus.geojson", &format!(r#"{{"type":"FeatureCollection","features":[{}]}}"#, shifted.join(",")))?;
    w("corpus.crs.json", &format!(r#"{{"crs_id":"{crs}","units":"m"}}"#))?;
    gridpop(dir, &["--work", "ok", "tile", "--site", "s", "--raster", "s.png", "--footprints", "corpus.geojson"])?;
    let log = fs::read_to_string(dir.join("ok/sites/s.ingest.log")).map_err(|e| e.to_string())?;
    ensure!(log.lines().count() == 2 && log.contains("id=bowtie") && log.contains("id=open"), "ingest log: {log:?}");
    let site: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("ok/sites/s.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    ensure!(site["footprints_kept"] == 3, "site record: {site}");

    w("mixed.geojson", &format!(r#"{{"type":"FeatureCollection","features":[{}]}}"#, shifted[0]))?;
    w("mixed.crs.json", r#"{"crs_id":"EPSG:32632","units":"m"}"#)?;
    let err = gridpop(dir, &["--work", "bad", "tile", "--site", "s", "--raster", "s.png", "--footprints", "mixed.geojson"])
        .err()
        .unwrap_or_default();
    ensure!(err.contains("error: kind=mixed_crs"), "mixed CRS through the CLI: {err:?}");
    fs::copy(dir.join("s.png"), dir.join("r.png")).map_err(|e| e.to_string())?;
    fs::copy(dir.join("s.crs.json"), dir.join("r.crs.json")).map_err(|e| e.to_string())?;
    w("r.pgw", "0.5\n0.02\n0.0\n-0.5\n500000.25\n829999.75\n")?;
    let err = gridpop(dir, &["--work", "bad", "tile", "--site", "r", "--raster", "r.png", "--footprints", "corpus.geojson"])
        .err()
        .unwrap_or_default();
    ensure!(err.contains("error: kind=rotated_transform"), "rotated world file through the CLI: {err:?}");
    ensure!(!dir.join("bad/sites").exists(), "failed runs left outputs behind");
    Ok("bowtie and open ring rejected with reasons, 3 valid features kept; mixed CRS and rotated world file are fatal errors".into())
}
