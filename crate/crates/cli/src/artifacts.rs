//! Run directories and their manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const MANIFEST_SCHEMA: &str = "causelab.manifest/v1";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub command: String,
    pub artifacts: Vec<ArtifactEntry>,
}

impl Manifest {
    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        let manifest: Self =
            serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        if manifest.schema != MANIFEST_SCHEMA {
            return Err(CliError::Input(format!(
                "{}: unsupported manifest schema {:?}",
                path.display(),
                manifest.schema
            )));
        }
        Ok(manifest)
    }

    /// Re-hashes every listed file and fails on the first difference.
    pub fn verify(&self, run_dir: &Path) -> Result<()> {
        for entry in &self.artifacts {
            let path = run_dir.join(&entry.path);
            let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
            if sha256_hex(&bytes) != entry.sha256 {
                return Err(CliError::Input(format!("{} does not match its manifest hash", path.display())));
            }
        }
        Ok(())
    }

    pub fn hashes(&self) -> BTreeMap<&str, &str> {
        self.artifacts.iter().map(|a| (a.path.as_str(), a.sha256.as_str())).collect()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// A fresh output directory. Files are written through it so the manifest
/// can list them.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    entries: BTreeMap<String, ArtifactEntry>,
}

impl RunDir {
    /// Creates `root`, refusing to reuse a directory that already has content.
    pub fn create(root: &Path) -> Result<Self> {
        if root.exists() {
            let occupied = fs::read_dir(root)
                .map_err(|e| CliError::io(root, e))?
                .next()
                .is_some();
            if occupied {
                return Err(CliError::Config(format!(
                    "output directory {} already exists and is not empty",
                    root.display()
                )));
            }
        }
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            entries: BTreeMap::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let rel_path = Path::new(rel);
        if rel == MANIFEST_FILE || rel_path.components().any(|c| !matches!(c, Component::Normal(_))) {
            return Err(CliError::Input(format!("invalid artifact path {rel:?}")));
        }
        let path = self.root.join(rel_path);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.entries.insert(
            rel.to_string(),
            ArtifactEntry {
                path: rel.to_string(),
                sha256: sha256_hex(bytes),
                bytes: bytes.len() as u64,
            },
        );
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Input(e.to_string()))?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    /// Writes `manifest.json` listing every artifact in path order.
    pub fn finish(self, command: &str) -> Result<Manifest> {
        let manifest = Manifest {
            schema: MANIFEST_SCHEMA.to_string(),
            command: command.to_string(),
            artifacts: self.entries.into_values().collect(),
        };
        let path = self.root.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Input(e.to_string()))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        Ok(manifest)
    }
}
