use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::util::atomic_write;

pub const MANIFEST_NAME: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Seconds since the epoch; `SOURCE_DATE_EPOCH` pins it for reproducible
/// manifests.
pub fn timestamp() -> u64 {
    if let Some(v) = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse().ok())
    {
        return v;
    }
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub exit_code: i32,
    pub artifacts: Vec<Artifact>,
}

/// Output directory that records every file it writes.
#[derive(Debug)]
pub struct OutputDir {
    dir: PathBuf,
    artifacts: Vec<Artifact>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            artifacts: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    /// Atomic write (temp file + rename); a second write to the same name
    /// replaces the recorded entry.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        atomic_write(&self.dir.join(name), bytes)?;
        let entry = Artifact {
            file: name.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len(),
        };
        match self.artifacts.iter_mut().find(|a| a.file == name) {
            Some(a) => *a = entry,
            None => self.artifacts.push(entry),
        }
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| crate::Error::Io(e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn artifacts(&self) -> &[Artifact] {
        &self.artifacts
    }

    /// Writes the manifest (artifacts sorted by name) and returns it.
    pub fn finish(mut self, mut manifest: RunManifest) -> Result<RunManifest> {
        self.artifacts.sort_by(|a, b| a.file.cmp(&b.file));
        manifest.artifacts = self.artifacts.clone();
        self.write_json(MANIFEST_NAME, &manifest)?;
        Ok(manifest)
    }
}

/// Reads a manifest back and checks every listed hash against the files.
pub fn verify_manifest(dir: &Path) -> Result<RunManifest> {
    let text = std::fs::read_to_string(dir.join(MANIFEST_NAME))?;
    let m: RunManifest =
        serde_json::from_str(&text).map_err(|e| crate::Error::Io(e.to_string()))?;
    for a in &m.artifacts {
        let bytes = std::fs::read(dir.join(&a.file))?;
        if sha256_hex(&bytes) != a.sha256 {
            return Err(crate::Error::Io(format!("hash mismatch for {}", a.file)));
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_lists_every_file() {
        let tmp = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(tmp.path()).unwrap();
        out.write("b.csv", b"h,norm\n").unwrap();
        out.write("a.json", b"{}").unwrap();
        out.write("b.csv", b"h,norm\n1,2\n").unwrap();
        let m = out
            .finish(RunManifest {
                tool: "microprop".into(),
                version: "0".into(),
                command: "test".into(),
                config_sha256: sha256_hex(b""),
                seed: 0,
                started_unix: 0,
                finished_unix: 0,
                exit_code: 0,
                artifacts: vec![],
            })
            .unwrap();
        let names: Vec<_> = m.artifacts.iter().map(|a| a.file.as_str()).collect();
        assert_eq!(names, ["a.json", "b.csv"]);
        assert_eq!(verify_manifest(tmp.path()).unwrap(), m);
        std::fs::write(tmp.path().join("a.json"), b"[]").unwrap();
        assert!(verify_manifest(tmp.path()).is_err());
        let leftovers = std::fs::read_dir(tmp.path())
            .unwrap()
            .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().contains(".tmp"))
            .count();
        assert_eq!(leftovers, 0);
    }
}
