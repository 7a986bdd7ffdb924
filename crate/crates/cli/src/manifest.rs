//! Run manifests: enough to reproduce any command's output.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;

pub const RUN_MANIFEST: &str = "run_manifest.json";

#[derive(Debug, Serialize)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: &'static str,
    pub seed: Option<u64>,
    /// SHA-256 of `config` serialized compactly.
    pub config_hash: String,
    pub config: Value,
    pub inputs: Vec<InputHash>,
}

impl RunManifest {
    pub fn new(command: &str, config: Value, seed: Option<u64>, inputs: &[&Path]) -> Result<Self> {
        let config_hash = scirec::sha256_hex(serde_json::to_string(&config)?.as_bytes());
        let inputs = inputs
            .iter()
            .map(|p| {
                Ok(InputHash {
                    path: p.display().to_string(),
                    sha256: hash_path(p)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION"),
            seed,
            config_hash,
            config,
            inputs,
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(RUN_MANIFEST);
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

/// Hash of a file, or of a directory's files (names and contents, sorted by
/// name, skipping run manifests so that recording a run never changes the
/// hash of its own output).
pub fn hash_path(path: &Path) -> Result<String> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = Vec::new();
        collect_files(path, &mut files)?;
        files.sort();
        let mut listing = String::new();
        for f in files {
            let rel = f.strip_prefix(path).expect("under root");
            listing.push_str(&format!("{}\t{}\n", rel.display(), hash_path(&f)?));
        }
        Ok(scirec::sha256_hex(listing.as_bytes()))
    } else {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(scirec::sha256_hex(&bytes))
    }
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else if path.file_name().is_some_and(|n| n != RUN_MANIFEST) {
            out.push(path);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn directory_hash_ignores_run_manifests_and_tracks_content() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.txt"), "x").unwrap();
        let h1 = hash_path(dir.path()).unwrap();
        fs::write(dir.path().join(RUN_MANIFEST), "{}").unwrap();
        assert_eq!(hash_path(dir.path()).unwrap(), h1);
        fs::write(dir.path().join("a.txt"), "y").unwrap();
        assert_ne!(hash_path(dir.path()).unwrap(), h1);
    }
}
