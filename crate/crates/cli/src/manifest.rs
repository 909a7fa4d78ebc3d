use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

use crate::CliError;

/// One hashed file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

/// Record written next to every command's outputs as `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config_path: Option<String>,
    /// Fully resolved configuration, defaults included.
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<Artifact>,
    /// Paths relative to the output directory.
    pub outputs: Vec<Artifact>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// `SOURCE_DATE_EPOCH` when set, so that reruns are byte-identical;
/// the wall clock otherwise.
pub fn timestamp() -> Result<u64, CliError> {
    match std::env::var("SOURCE_DATE_EPOCH") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("SOURCE_DATE_EPOCH is not an integer: {v:?}"))),
        Err(_) => Ok(SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)),
    }
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::from_io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Hashes a file, or every file below a directory in name order.
/// Paths are reported as `root` joined with the relative path.
pub fn hash_tree(root: &Path) -> Result<Vec<Artifact>, CliError> {
    let mut out = Vec::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let path = e.path().map_or_else(|| root.to_path_buf(), Path::to_path_buf);
            CliError::from_io(&path, e.into())
        })?;
        if entry.file_type().is_file() {
            out.push(Artifact {
                path: entry.path().display().to_string(),
                sha256: sha256_file(entry.path())?,
            });
        }
    }
    Ok(out)
}

/// Hashes every file below `out` except the manifest, with paths relative
/// to `out`.
pub fn hash_outputs(out: &Path) -> Result<Vec<Artifact>, CliError> {
    let mut list = hash_tree(out)?;
    let prefix = out.display().to_string();
    for a in &mut list {
        let rel = PathBuf::from(&a.path);
        a.path = rel
            .strip_prefix(&prefix)
            .map(|p| p.to_string_lossy().replace('\\', "/"))
            .unwrap_or_else(|_| a.path.clone());
    }
    list.retain(|a| a.path != MANIFEST_FILE);
    Ok(list)
}

impl RunManifest {
    pub fn write(&self, out: &Path) -> Result<(), CliError> {
        let path = out.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Other(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| CliError::from_io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_abc() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x");
        fs::write(&p, "abc").unwrap();
        assert_eq!(
            sha256_file(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn outputs_are_relative_sorted_and_skip_manifest() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("sub")).unwrap();
        fs::write(dir.path().join("sub/b"), "1").unwrap();
        fs::write(dir.path().join("a"), "2").unwrap();
        fs::write(dir.path().join(MANIFEST_FILE), "{}").unwrap();
        let names: Vec<String> = hash_outputs(dir.path()).unwrap().into_iter().map(|a| a.path).collect();
        assert_eq!(names, vec!["a", "sub/b"]);
    }
}
