//! Config precedence: built-in defaults < config file < GRIDPOP_SEED < flags.

use std::fs;
use std::path::Path;

use gridpop::config::PipelineConfig;
use gridpop::labeler::Split;

use crate::args::ConfigFlags;
use crate::error::CliError;

pub const SEED_ENV: &str = "GRIDPOP_SEED";

/// Where the effective seed came from, for the run record.
pub fn seed_source(flags: &ConfigFlags, env_seed: Option<u64>, file: Option<&Path>) -> &'static str {
    if flags.seed.is_some() {
        "flag"
    } else if env_seed.is_some() {
        "env"
    } else if file.is_some() {
        "file_or_default"
    } else {
        "default"
    }
}

pub fn read_config_file(path: &Path) -> Result<PipelineConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    toml::from_str(&text).map_err(|e| CliError::new("config", format!("{}: {e}", path.display())))
}

pub fn env_seed() -> Result<Option<u64>, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::new("config", format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

pub fn apply_flags(config: &mut PipelineConfig, flags: &ConfigFlags) -> Result<(), CliError> {
    macro_rules! set {
        ($($field:ident),*) => {
            $(if let Some(v) = flags.$field.clone() {
                config.$field = v;
            })*
        };
    }
    set!(tile_size_m, target_px, cloud_white_level, cloud_max_ratio, residential_threshold, supersample, seed, learning_rate, epochs);
    for site in &flags.cloud_exempt {
        if !config.cloud_exempt_sites.contains(site) {
            config.cloud_exempt_sites.push(site.clone());
        }
    }
    for pair in &flags.split {
        let (site, split) = pair
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("--split expects SITE=train|val, got {pair:?}")))?;
        let split: Split = split.parse()?;
        config.split.insert(site.to_owned(), split);
    }
    Ok(())
}

/// Effective config for a run.
pub fn load_config(file: Option<&Path>, flags: &ConfigFlags, env_seed: Option<u64>) -> Result<PipelineConfig, CliError> {
    let mut config = match file {
        Some(p) => read_config_file(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = env_seed {
        config.seed = seed;
    }
    apply_flags(&mut config, flags)?;
    config.validate()?;
    Ok(config)
}
