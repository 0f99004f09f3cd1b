//! `manifest.json`: which stages have produced which files, with content hashes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::hex;
use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    /// Relative to the output directory, with `/` separators.
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub outputs: Vec<OutputFile>,
    pub wall_clock_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub stages: Vec<StageRecord>,
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn relative(out_dir: &Path, file: &Path) -> String {
    let rel = file.strip_prefix(out_dir).unwrap_or(file);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

impl RunManifest {
    pub fn new(config_hash: &str) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash.to_string(),
            seeds: BTreeMap::new(),
            stages: Vec::new(),
        }
    }

    /// Loads the manifest in `out_dir`, or starts a new one when it is absent
    /// or was written for a different configuration.
    pub fn open(out_dir: &Path, config_hash: &str) -> CliResult<Self> {
        let path = out_dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Self::new(config_hash));
        }
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
        let m: RunManifest = serde_json::from_str(&text)
            .map_err(|e| CliError::Precondition(format!("corrupt {}: {e}", path.display())))?;
        if m.config_hash != config_hash {
            return Ok(Self::new(config_hash));
        }
        Ok(m)
    }

    pub fn save(&self, out_dir: &Path) -> CliResult<()> {
        std::fs::create_dir_all(out_dir)
            .map_err(|e| CliError::io(format!("creating {}", out_dir.display()), e))?;
        let path = out_dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(format!("writing {}", path.display()), e))
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }

    /// Replaces any earlier record of `name`, hashing every file in `outputs`.
    pub fn record(&mut self, out_dir: &Path, name: &str, outputs: &[PathBuf], wall_clock_s: f64) -> CliResult<()> {
        let mut files = Vec::with_capacity(outputs.len());
        for f in outputs {
            files.push(OutputFile {
                path: relative(out_dir, f),
                sha256: sha256_file(f)?,
            });
        }
        files.sort_by(|a, b| a.path.cmp(&b.path));
        let rec = StageRecord {
            name: name.to_string(),
            outputs: files,
            wall_clock_s,
        };
        match self.stages.iter_mut().find(|s| s.name == name) {
            Some(s) => *s = rec,
            None => self.stages.push(rec),
        }
        Ok(())
    }

    /// Drops the record of a stage, e.g. when its inputs were regenerated.
    pub fn invalidate(&mut self, name: &str) {
        self.stages.retain(|s| s.name != name);
    }

    /// True when `name` was recorded and every listed file still matches its hash.
    pub fn is_complete(&self, out_dir: &Path, name: &str) -> bool {
        let Some(rec) = self.stage(name) else {
            return false;
        };
        rec.outputs.iter().all(|o| {
            let p = out_dir.join(&o.path);
            sha256_file(&p).map(|h| h == o.sha256).unwrap_or(false)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_and_verify() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("sub").join("a.csv");
        std::fs::create_dir_all(f.parent().unwrap()).unwrap();
        std::fs::write(&f, "x\n1\n").unwrap();
        let mut m = RunManifest::new("h");
        m.record(dir.path(), "eval", std::slice::from_ref(&f), 1.5).unwrap();
        assert_eq!(m.stage("eval").unwrap().outputs[0].path, "sub/a.csv");
        assert!(m.is_complete(dir.path(), "eval"));
        m.save(dir.path()).unwrap();
        let back = RunManifest::open(dir.path(), "h").unwrap();
        assert_eq!(back, m);
        std::fs::write(&f, "x\n2\n").unwrap();
        assert!(!back.is_complete(dir.path(), "eval"));
        assert!(RunManifest::open(dir.path(), "other").unwrap().stages.is_empty());
    }
}
