use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::io::json_error;

pub const MANIFEST: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.json";

/// `<out>/<config hash>`, the root of one experiment's artifacts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArtifactDir {
    root: PathBuf,
    hash: String,
}

/// Content hashes of every artifact, keyed by `/`-separated relative path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub config_hash: String,
    pub files: BTreeMap<String, String>,
}

impl ArtifactDir {
    pub fn new(out: &Path, config: &ExperimentConfig) -> Self {
        let hash = config.hash();
        ArtifactDir {
            root: out.join(&hash),
            hash,
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn write(&self, rel: &str, contents: &[u8]) -> Result<()> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))
    }

    /// Reads an artifact produced by an earlier subcommand.
    pub fn read(&self, rel: &str) -> Result<String> {
        let path = self.path(rel);
        if !path.is_file() {
            return Err(Error::MissingArtifact { path });
        }
        fs::read_to_string(&path).map_err(|e| Error::io(&path, e))
    }

    /// Rehashes every file under the root and rewrites the manifest.
    pub fn write_manifest(&self) -> Result<Manifest> {
        let mut files = BTreeMap::new();
        collect(&self.root, &self.root, &mut files)?;
        files.remove(MANIFEST);
        let manifest = Manifest {
            config_hash: self.hash.clone(),
            files,
        };
        let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| json_error("manifest", e))?;
        text.push('\n');
        self.write(MANIFEST, text.as_bytes())?;
        Ok(manifest)
    }

    pub fn read_manifest(&self) -> Result<Manifest> {
        serde_json::from_str(&self.read(MANIFEST)?).map_err(|e| json_error("manifest", e))
    }
}

fn collect(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect(root, &path, out)?;
        } else {
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let rel = path
                .strip_prefix(root)
                .expect("walk stays under root")
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            out.insert(rel, hex::encode(Sha256::digest(&bytes)));
        }
    }
    Ok(())
}

pub fn trajectory_file(run: usize) -> String {
    format!("trajectories/run_{run:04}.csv")
}

pub fn trace_file(filter: &str, run: usize) -> String {
    format!("traces/{filter}/run_{run:04}.csv")
}

pub const RUN_METRICS: &str = "metrics/runs.csv";
pub const ERROR_CURVES: &str = "metrics/curves.csv";
pub const DIAGNOSTICS: &str = "metrics/diagnostics.csv";
pub const BOUND_TRACE: &str = "report/bound.csv";
pub const TUNE_REPORT: &str = "report/tune.json";
pub const TABLE_MD: &str = "report/table.md";
pub const TABLE_CSV: &str = "report/table.csv";
pub const NMSE_CURVES: &str = "report/nmse_curves.csv";
