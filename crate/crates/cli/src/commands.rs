use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use gridpop::classifier::{evaluate, extract_features, parse_model, train_logistic, write_model, FeatureVector, Model};
use gridpop::config::PipelineConfig;
use gridpop::geodata::{encode_png, format_ingest_log, load_footprints, load_raster, Raster};
use gridpop::labeler::{class_balance, parse_manifest, write_manifest, LabeledTile, Manifest, Split};
use gridpop::pipeline::{cell_mask, image_path, label_cell, sort_manifest};
use gridpop::popgrid::{
    aggregate, disaggregate, population_csv, population_geojson, weights_from_tiles, WeightMode, WeightSource,
};
use gridpop::synth::{generate_settlement, oracle_tile_truth, write_scene, SynthParams};
use gridpop::tiler::{build_grid, extract_all, tile_file_name};
use rayon::prelude::*;
use serde_json::json;

use crate::args::{Cli, Command, EvalArgs, LabelArgs, PopmapArgs, SynthArgs, TileArgs, TrainArgs};
use crate::error::CliError;
use crate::record::{sha256_file, RunRecord};
use crate::settings;
use crate::staging::Staging;
use crate::workdir::*;

struct Ctx<'a> {
    work: &'a Path,
    config: PipelineConfig,
    seed_source: &'static str,
}

pub fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let env_seed = settings::env_seed()?;
    let config = settings::load_config(cli.config.as_deref(), &cli.overrides, env_seed)?;
    let ctx = Ctx {
        work: &cli.work,
        config,
        seed_source: settings::seed_source(&cli.overrides, env_seed, cli.config.as_deref()),
    };
    fs::create_dir_all(ctx.work).map_err(|e| CliError::io(ctx.work, e))?;
    match &cli.command {
        Command::Tile(a) => tile(&ctx, a),
        Command::Label(a) => label(&ctx, a),
        Command::Train(a) => train(&ctx, a),
        Command::Eval(a) => eval(&ctx, a),
        Command::Popmap(a) => popmap(&ctx, a),
        Command::Synth(a) => synth(&ctx, a),
        Command::Report => report(&ctx),
    }
}

fn json_pretty<T: serde::Serialize>(v: &T) -> Result<String, CliError> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

/// Stage the run record and move everything into place.
fn finish(mut staging: Staging, mut rec: RunRecord, work: &Path) -> Result<(), CliError> {
    let path = RunRecord::path(work, &rec.command);
    rec.output(&path);
    let text = rec.to_json()?;
    staging.write(&path, text)?;
    staging.commit()?;
    Ok(())
}

fn check_site_id(site: &str) -> Result<(), CliError> {
    let ok = !site.is_empty()
        && site.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        && !site.starts_with('.');
    if ok {
        Ok(())
    } else {
        Err(CliError::usage(format!("site id {site:?} must be non-empty ASCII letters, digits, '-', '_' or '.'")))
    }
}

fn tile(ctx: &Ctx, args: &TileArgs) -> Result<(), CliError> {
    let n = args.sites.len();
    if args.rasters.len() != n || args.footprints.len() != n {
        return Err(CliError::usage(format!(
            "got {n} --site, {} --raster and {} --footprints; they pair up in order",
            args.rasters.len(),
            args.footprints.len()
        )));
    }
    let mut seen = std::collections::BTreeSet::new();
    for site in &args.sites {
        check_site_id(site)?;
        if !seen.insert(site) {
            return Err(CliError::usage(format!("site {site:?} given twice")));
        }
    }
    let config = &ctx.config;
    let mut rec = RunRecord::new("tile", config, ctx.seed_source);
    let mut staging = Staging::new(ctx.work, "tile")?;
    let mut grids = BTreeMap::new();

    for ((site, raster_path), fp_path) in args.sites.iter().zip(&args.rasters).zip(&args.footprints) {
        rec.stage("ingest");
        let raster: Raster = load_raster(raster_path)?;
        let raster_sha = sha256_file(raster_path)?;
        rec.input_digest(raster_path, raster_sha.clone());
        rec.input(&raster_path.with_extension("pgw"))?;
        let parsed = load_footprints(fp_path, &config.tag_map())?;
        let fp_sha = sha256_file(fp_path)?;
        rec.input_digest(fp_path, fp_sha.clone());
        let crs = raster.transform().crs_id.clone();
        if parsed.set.crs_id() != crs {
            return Err(gridpop::Error::MixedCrs {
                expected: crs,
                found: parsed.set.crs_id().to_owned(),
            }
            .into());
        }
        for d in &parsed.diagnostics {
            rec.diagnostics.push(format!("site={site} {d}"));
        }

        rec.stage("tile");
        let grid = build_grid(&raster, config.tile_size_m)?;
        let images = extract_all(&raster, &grid, config.target_px)?;
        let encoded: Vec<Vec<u8>> = images
            .par_iter()
            .map(|im| encode_png(im.side_px, im.side_px, 3, &im.pixels))
            .collect::<Result<_, _>>()?;
        rec.stage("write");
        for (im, bytes) in images.iter().zip(encoded) {
            let target = ctx.work.join(TILE_DIR).join(tile_file_name(site, im.cell));
            staging.write(&target, bytes)?;
        }
        let fp_out = site_footprints_path(ctx.work, site);
        staging.write(&fp_out, normalized_footprints_geojson(&parsed.set))?;
        staging.write(
            &gridpop::geodata::crs_sidecar_path(&fp_out),
            serde_json::to_string(&gridpop::geodata::CrsSidecar::meters(crs.clone()))? + "\n",
        )?;
        staging.write(&ingest_log_path(ctx.work, site), format_ingest_log(&parsed.diagnostics))?;
        let record = SiteRecord {
            site_id: site.clone(),
            crs_id: crs,
            raster: raster_path.display().to_string(),
            raster_sha256: raster_sha,
            footprints: fp_path.display().to_string(),
            footprints_sha256: fp_sha,
            grid: grid.clone(),
            footprints_kept: parsed.set.len(),
            footprints_rejected: parsed.diagnostics.len(),
        };
        staging.write(&site_record_path(ctx.work, site), json_pretty(&record)?)?;
        grids.insert(site.clone(), grid.clone());
        rec.output(&site_record_path(ctx.work, site));
        rec.count("tiles_built", images.len());
        rec.count("footprints_kept", parsed.set.len());
        rec.count("footprints_rejected", parsed.diagnostics.len());
        println!(
            "tile: site={site} grid={}x{} tiles={} footprints={} rejected={}",
            grid.n_rows,
            grid.n_cols,
            images.len(),
            parsed.set.len(),
            parsed.diagnostics.len()
        );
    }
    // Grids of every site tiled so far, this run's taking precedence.
    if let Ok(existing) = read_sites(ctx.work) {
        for s in existing {
            grids.entry(s.site_id).or_insert(s.grid);
        }
    }
    let grid_path = ctx.work.join("grid.json");
    staging.write(&grid_path, json_pretty(&grids)?)?;
    rec.output(&grid_path);
    rec.output(&ctx.work.join(TILE_DIR));
    finish(staging, rec, ctx.work)
}

fn label(ctx: &Ctx, args: &LabelArgs) -> Result<(), CliError> {
    let config = &ctx.config;
    let sites = read_sites(ctx.work)?;
    let mut rec = RunRecord::new("label", config, ctx.seed_source);
    let mut staging = Staging::new(ctx.work, "label")?;
    let mut kept = Vec::new();
    for site in &sites {
        rec.stage("label");
        let footprints = load_site_footprints(ctx.work, &site.site_id)?;
        rec.input(&site_record_path(ctx.work, &site.site_id))?;
        rec.input(&site_footprints_path(ctx.work, &site.site_id))?;
        let cells: Vec<_> = site.grid.cells().collect();
        let results: Vec<(LabeledTile, bool, String)> = cells
            .par_iter()
            .map(|&cell| {
                let path = ctx.work.join(image_path(TILE_DIR, &site.site_id, cell));
                let image = read_tile_image(&path, cell)?;
                let digest = sha256_file(&path)?;
                let (tile, retained) = label_cell(&site.site_id, &site.grid, &image, &footprints, config, TILE_DIR)?;
                Ok((tile, retained, digest))
            })
            .collect::<Result<_, CliError>>()?;
        // One digest for the whole tile set keeps the record readable.
        let combined: String = results.iter().map(|r| r.2.as_str()).collect::<Vec<_>>().join("\n");
        rec.input_digest(
            &ctx.work.join(TILE_DIR).join(format!("{}_*.png", site.site_id)),
            hex::encode(<sha2::Sha256 as sha2::Digest>::digest(combined.as_bytes())),
        );
        let built = results.len();
        let mut filtered = 0;
        for (tile, retained, _) in results {
            if retained {
                kept.push(tile);
            } else {
                filtered += 1;
            }
        }
        rec.count("tiles_built", built);
        rec.count("cloud_filtered", filtered);
        println!("label: site={} built={built} cloud_filtered={filtered}", site.site_id);

        if args.masks {
            rec.stage("masks");
            let masks: Vec<(PathBuf, Vec<u8>)> = cells
                .par_iter()
                .map(|&cell| {
                    let mask = cell_mask(&footprints, &site.grid, cell, config)?;
                    let bytes = encode_png(config.target_px, config.target_px, 1, &mask.to_gray())?;
                    Ok((ctx.work.join("masks").join(tile_file_name(&site.site_id, cell)), bytes))
                })
                .collect::<Result<_, CliError>>()?;
            for (path, bytes) in masks {
                staging.write(&path, bytes)?;
            }
        }
    }
    rec.stage("write");
    sort_manifest(&mut kept);
    let balance = class_balance(&kept)?;
    let mut by_split = BTreeMap::new();
    for split in [Split::Train, Split::Val] {
        let part: Vec<LabeledTile> = kept.iter().filter(|t| t.split == split).cloned().collect();
        if !part.is_empty() {
            by_split.insert(split.as_str(), class_balance(&part)?);
        }
    }
    let mut by_site = BTreeMap::new();
    for site in &sites {
        let part: Vec<LabeledTile> = kept.iter().filter(|t| t.site_id == site.site_id).cloned().collect();
        if !part.is_empty() {
            by_site.insert(site.site_id.clone(), class_balance(&part)?);
        }
    }
    let manifest = manifest_path(ctx.work);
    staging.write(&manifest, write_manifest(config, &kept))?;
    let balance_path = ctx.work.join("class_balance.json");
    staging.write(&balance_path, json_pretty(&json!({ "overall": balance, "split": by_split, "site": by_site }))?)?;
    rec.output(&manifest);
    rec.output(&balance_path);
    rec.count("labeled", kept.len());
    rec.count("labeled_residential", balance.residential);
    rec.count("labeled_non_residential", balance.non_residential);
    println!(
        "label: labeled={} residential={} non_residential={} fraction_residential={:.4}",
        kept.len(),
        balance.residential,
        balance.non_residential,
        balance.fraction_residential
    );
    finish(staging, rec, ctx.work)
}

fn read_manifest(path: &Path, rec: &mut RunRecord) -> Result<Manifest, CliError> {
    if !path.exists() {
        return Err(CliError::new("manifest", format!("{} not found (run `gridpop label` first)", path.display())));
    }
    rec.input(path)?;
    Ok(parse_manifest(&read_text(path)?)?)
}

/// Features for each tile, in order, from the tile images.
fn tile_features(work: &Path, tiles: &[LabeledTile]) -> Result<Vec<FeatureVector>, CliError> {
    tiles
        .par_iter()
        .map(|t| Ok(extract_features(&read_tile_image(&work.join(&t.image_path), t.cell)?)))
        .collect()
}

fn dataset(work: &Path, tiles: &[LabeledTile]) -> Result<Vec<(FeatureVector, u8)>, CliError> {
    Ok(tile_features(work, tiles)?.into_iter().zip(tiles.iter().map(|t| t.label)).collect())
}

fn split_tiles(manifest: &Manifest, split: Split) -> Vec<LabeledTile> {
    manifest.tiles.iter().filter(|t| t.split == split).cloned().collect()
}

fn train(ctx: &Ctx, args: &TrainArgs) -> Result<(), CliError> {
    let config = &ctx.config;
    let mut rec = RunRecord::new("train", config, ctx.seed_source);
    let path = args.manifest.clone().unwrap_or_else(|| manifest_path(ctx.work));
    let manifest = read_manifest(&path, &mut rec)?;
    let mut staging = Staging::new(ctx.work, "train")?;

    rec.stage("features");
    let train_set = dataset(ctx.work, &split_tiles(&manifest, Split::Train))?;
    let val_set = dataset(ctx.work, &split_tiles(&manifest, Split::Val))?;
    if train_set.is_empty() {
        return Err(gridpop::Error::EmptyDataset.into());
    }
    rec.stage("train");
    let model = train_logistic(&train_set, config.learning_rate, config.epochs, config.seed)?;
    rec.stage("evaluate");
    let train_metrics = evaluate(&model, &train_set)?;
    let val_metrics = if val_set.is_empty() { None } else { Some(evaluate(&model, &val_set)?) };

    let model_out = model_path(ctx.work);
    staging.write(&model_out, write_model(&model))?;
    let metrics_out = ctx.work.join("metrics.json");
    let metrics = json!({
        "feature_spec_id": model.feature_spec_id,
        "final_loss": model.training_meta.final_loss,
        "train": train_metrics,
        "val": val_metrics,
    });
    staging.write(&metrics_out, json_pretty(&metrics)?)?;
    rec.output(&model_out);
    rec.output(&metrics_out);
    rec.count("train_tiles", train_set.len());
    rec.count("val_tiles", val_set.len());
    println!(
        "train: train_tiles={} val_tiles={} train_accuracy={:.4} val_accuracy={}",
        train_set.len(),
        val_set.len(),
        train_metrics.accuracy,
        val_metrics.map_or("-".to_owned(), |m| format!("{:.4}", m.accuracy))
    );
    finish(staging, rec, ctx.work)
}

fn read_model(path: &Path, rec: &mut RunRecord) -> Result<Model, CliError> {
    if !path.exists() {
        return Err(CliError::new("model_file", format!("{} not found (run `gridpop train` first)", path.display())));
    }
    rec.input(path)?;
    Ok(parse_model(&read_text(path)?)?)
}

fn eval(ctx: &Ctx, args: &EvalArgs) -> Result<(), CliError> {
    let split: Split = args.on.parse()?;
    let mut rec = RunRecord::new("eval", &ctx.config, ctx.seed_source);
    let model = read_model(&args.model.clone().unwrap_or_else(|| model_path(ctx.work)), &mut rec)?;
    let manifest = read_manifest(&args.manifest.clone().unwrap_or_else(|| manifest_path(ctx.work)), &mut rec)?;
    let mut staging = Staging::new(ctx.work, "eval")?;
    rec.stage("evaluate");
    let set = dataset(ctx.work, &split_tiles(&manifest, split))?;
    if set.is_empty() {
        return Err(CliError::new("empty_dataset", format!("manifest has no {} tiles", split.as_str())));
    }
    let metrics = evaluate(&model, &set)?;
    let text = json_pretty(&json!({ "split": split.as_str(), "metrics": metrics }))?;
    print!("{text}");
    let out = ctx.work.join(format!("eval-{}.json", split.as_str()));
    staging.write(&out, text)?;
    rec.output(&out);
    rec.count("tiles", set.len());
    finish(staging, rec, ctx.work)
}

fn parse_total(s: &str) -> Result<(String, f64), CliError> {
    let (site, n) = s
        .split_once('=')
        .ok_or_else(|| CliError::usage(format!("--total expects SITE=PERSONS, got {s:?}")))?;
    let n: f64 = n
        .trim()
        .parse()
        .map_err(|_| CliError::usage(format!("--total {s:?}: {n:?} is not a number")))?;
    if !(n >= 0.0 && n.is_finite()) {
        return Err(CliError::usage(format!("--total {s:?}: population must be finite and non-negative")));
    }
    Ok((site.to_owned(), n))
}

fn popmap(ctx: &Ctx, args: &PopmapArgs) -> Result<(), CliError> {
    let mode: WeightMode = args.mode.parse()?;
    if args.factor == 0 {
        return Err(CliError::usage("--factor must be at least 1"));
    }
    let totals = args.totals.iter().map(|s| parse_total(s)).collect::<Result<Vec<_>, _>>()?;
    let mut rec = RunRecord::new("popmap", &ctx.config, ctx.seed_source);
    let manifest = read_manifest(&args.manifest.clone().unwrap_or_else(|| manifest_path(ctx.work)), &mut rec)?;
    let model = match mode {
        WeightMode::Probability => Some(read_model(&args.model.clone().unwrap_or_else(|| model_path(ctx.work)), &mut rec)?),
        _ => None,
    };
    let mut staging = Staging::new(ctx.work, "popmap")?;
    for (site_id, total) in &totals {
        rec.stage("allocate");
        let site = read_site(ctx.work, site_id)?;
        let tiles: Vec<LabeledTile> = manifest.tiles.iter().filter(|t| &t.site_id == site_id).cloned().collect();
        let features;
        let source = match &model {
            Some(model) => {
                features = tile_features(ctx.work, &tiles)?;
                WeightSource::Probability { model, features: &features }
            }
            None if mode == WeightMode::Binary => WeightSource::Binary,
            None => WeightSource::Occupancy,
        };
        let weights = weights_from_tiles(&site.grid, &tiles, source)?;
        let mut grid = disaggregate(*total, &weights)?;
        if args.factor > 1 {
            grid = aggregate(&grid, args.factor)?;
        }
        let stem = if args.factor > 1 { format!("{site_id}_x{}", args.factor) } else { site_id.clone() };
        let csv = ctx.work.join("population").join(format!("{stem}.csv"));
        staging.write(&csv, population_csv(&grid))?;
        rec.output(&csv);
        if args.geojson {
            let gj = ctx.work.join("population").join(format!("{stem}.geojson"));
            staging.write(&gj, population_geojson(&grid))?;
            rec.output(&gj);
        }
        let missing = grid.missing.iter().filter(|&&m| m).count();
        rec.count("cells", grid.counts.len());
        rec.count("cells_missing", missing);
        println!(
            "popmap: site={site_id} mode={} cells={} missing={missing} total={} allocated={}",
            args.mode,
            grid.counts.len(),
            total,
            grid.sum()
        );
    }
    finish(staging, rec, ctx.work)
}

fn read_synth_params(path: &Path) -> Result<SynthParams, CliError> {
    let text = read_text(path)?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let parsed = if is_json {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| CliError::new("config", format!("{}: {e}", path.display())))
}

fn synth(ctx: &Ctx, args: &SynthArgs) -> Result<(), CliError> {
    check_site_id(&args.site)?;
    let mut rec = RunRecord::new("synth", &ctx.config, ctx.seed_source);
    let mut params = match &args.params {
        Some(p) => {
            rec.input(p)?;
            read_synth_params(p)?
        }
        None => SynthParams::default(),
    };
    // An explicit seed (flag or environment) wins over the parameter file.
    if matches!(ctx.seed_source, "flag" | "env") {
        params.seed = ctx.config.seed;
    }
    let out = args.out.clone().unwrap_or_else(|| ctx.work.join("synth"));
    let mut staging = Staging::new(ctx.work, "synth")?;
    rec.stage("generate");
    let scene = generate_settlement(&params)?;
    let grid = build_grid(&scene.raster, ctx.config.tile_size_m)?;
    rec.stage("truth");
    let truth = oracle_tile_truth(&scene.footprints, &scene.persons, &grid);
    rec.stage("write");
    let scratch = staging.scratch_dir("scene")?;
    let files = write_scene(&scratch, &args.site, &scene, &truth)?;
    staging.adopt_dir(&scratch, &out)?;
    for p in [&files.raster, &files.footprints, &files.truth, &files.meta] {
        rec.output(&out.join(p.file_name().unwrap_or_default()));
    }
    rec.count("buildings", scene.footprints.len());
    rec.count("tiles", truth.len());
    println!(
        "synth: site={} seed={} buildings={} persons={} out={}",
        args.site,
        params.seed,
        scene.footprints.len(),
        scene.total_persons(),
        out.display()
    );
    finish(staging, rec, ctx.work)
}

fn report(ctx: &Ctx) -> Result<(), CliError> {
    let mut rec = RunRecord::new("report", &ctx.config, ctx.seed_source);
    let mut staging = Staging::new(ctx.work, "report")?;
    let mut summary = serde_json::Map::new();
    let sites = read_sites(ctx.work).unwrap_or_default();
    summary.insert(
        "sites".into(),
        json!(sites
            .iter()
            .map(|s| json!({
                "site_id": s.site_id,
                "grid_rows": s.grid.n_rows,
                "grid_cols": s.grid.n_cols,
                "footprints_kept": s.footprints_kept,
                "footprints_rejected": s.footprints_rejected,
            }))
            .collect::<Vec<_>>()),
    );
    let manifest = manifest_path(ctx.work);
    if manifest.exists() {
        let m = read_manifest(&manifest, &mut rec)?;
        let mut per_split = BTreeMap::new();
        for split in [Split::Train, Split::Val] {
            let part = split_tiles(&m, split);
            if !part.is_empty() {
                per_split.insert(split.as_str(), class_balance(&part)?);
            }
        }
        summary.insert("tiles".into(), json!(m.tiles.len()));
        summary.insert("class_balance".into(), json!(per_split));
    }
    for name in ["metrics.json", "eval-val.json", "eval-train.json"] {
        let p = ctx.work.join(name);
        if p.exists() {
            rec.input(&p)?;
            let v: serde_json::Value = serde_json::from_str(&read_text(&p)?)?;
            summary.insert(name.trim_end_matches(".json").replace('-', "_"), v);
        }
    }
    let runs_dir = ctx.work.join("runs");
    let mut runs = BTreeMap::new();
    if let Ok(entries) = fs::read_dir(&runs_dir) {
        let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
        paths.sort();
        for p in paths {
            let v: serde_json::Value = serde_json::from_str(&read_text(&p)?)?;
            let name = v["command"].as_str().unwrap_or_default().to_owned();
            if name != "report" {
                runs.insert(name, json!({ "counts": v["counts"], "diagnostics": v["diagnostics"].as_array().map_or(0, |a| a.len()) }));
            }
        }
    }
    summary.insert("runs".into(), json!(runs));
    let text = json_pretty(&serde_json::Value::Object(summary))?;
    print!("{text}");
    let out = ctx.work.join("report.json");
    staging.write(&out, text)?;
    rec.output(&out);
    finish(staging, rec, ctx.work)
}
