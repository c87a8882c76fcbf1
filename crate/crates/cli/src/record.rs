use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use gridpop::config::PipelineConfig;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Written beside a command's outputs as `runs/<command>.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub command: String,
    pub tool_version: String,
    pub config: PipelineConfig,
    pub seed_source: String,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
    pub counts: BTreeMap<String, u64>,
    /// Rejected input features and similar issues that did not stop the run.
    pub diagnostics: Vec<String>,
    pub timings_ms: BTreeMap<String, f64>,
    #[serde(skip)]
    stage_start: Option<(String, Instant)>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunRecord {
    pub fn new(command: &str, config: &PipelineConfig, seed_source: &str) -> Self {
        Self {
            command: command.to_owned(),
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            config: config.clone(),
            seed_source: seed_source.to_owned(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            counts: BTreeMap::new(),
            diagnostics: Vec::new(),
            timings_ms: BTreeMap::new(),
            stage_start: None,
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        let digest = sha256_file(path)?;
        self.input_digest(path, digest);
        Ok(())
    }

    pub fn input_digest(&mut self, path: &Path, sha256: String) {
        let path = path.display().to_string();
        if !self.inputs.iter().any(|d| d.path == path) {
            self.inputs.push(InputDigest { path, sha256 });
        }
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn count(&mut self, key: &str, n: usize) {
        *self.counts.entry(key.to_owned()).or_default() += n as u64;
    }

    pub fn stage(&mut self, name: &str) {
        self.end_stage();
        self.stage_start = Some((name.to_owned(), Instant::now()));
    }

    pub fn end_stage(&mut self) {
        if let Some((name, t)) = self.stage_start.take() {
            *self.timings_ms.entry(name).or_default() += t.elapsed().as_secs_f64() * 1e3;
        }
    }

    pub fn to_json(&mut self) -> Result<String, CliError> {
        self.end_stage();
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn path(work: &Path, command: &str) -> PathBuf {
        work.join("runs").join(format!("{command}.json"))
    }
}
