//! Outputs are written to a staging directory and moved into place only
//! when the whole command succeeds; a failed command leaves no partial files.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::CliError;

pub struct Staging {
    dir: PathBuf,
    moves: Vec<(PathBuf, PathBuf)>,
    committed: bool,
}

impl Staging {
    /// Staging lives under `root` so the final renames stay on one filesystem.
    pub fn new(root: &Path, label: &str) -> Result<Self, CliError> {
        let dir = root.join(format!(".staging-{label}-{}", std::process::id()));
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        }
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        Ok(Self {
            dir,
            moves: Vec::new(),
            committed: false,
        })
    }

    /// Temporary path that will be moved to `target` on commit.
    pub fn path_for(&mut self, target: &Path) -> PathBuf {
        let name = target.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let tmp = self.dir.join(format!("{}-{name}", self.moves.len()));
        self.moves.push((tmp.clone(), target.to_path_buf()));
        tmp
    }

    pub fn write(&mut self, target: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
        let tmp = self.path_for(target);
        fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))
    }

    /// Stage every file of `dir` (non-recursive) for `target_dir`.
    pub fn adopt_dir(&mut self, dir: &Path, target_dir: &Path) -> Result<(), CliError> {
        let mut entries: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| CliError::io(dir, e))?
            .map(|e| e.map(|e| e.path()).map_err(|e| CliError::io(dir, e)))
            .collect::<Result<_, _>>()?;
        entries.sort();
        for path in entries {
            if let Some(name) = path.file_name() {
                self.moves.push((path.clone(), target_dir.join(name)));
            }
        }
        Ok(())
    }

    /// A scratch directory inside the staging area.
    pub fn scratch_dir(&self, name: &str) -> Result<PathBuf, CliError> {
        let d = self.dir.join(format!("scratch-{name}"));
        fs::create_dir_all(&d).map_err(|e| CliError::io(&d, e))?;
        Ok(d)
    }

    pub fn commit(mut self) -> Result<Vec<PathBuf>, CliError> {
        let mut done = Vec::with_capacity(self.moves.len());
        for (tmp, target) in &self.moves {
            if let Some(parent) = target.parent() {
                fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
            }
            fs::rename(tmp, target).map_err(|e| CliError::io(target, e))?;
            done.push(target.clone());
        }
        self.committed = true;
        let _ = fs::remove_dir_all(&self.dir);
        Ok(done)
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.dir);
        }
    }
}
