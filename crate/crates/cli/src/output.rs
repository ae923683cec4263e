//! Output directory bookkeeping and the run manifest.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputFile {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

pub fn sha256_hex(data: &[u8]) -> String {
    hex::encode(Sha256::digest(data))
}

/// Writes files under one root and remembers their digests.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    files: Vec<OutputFile>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn files(&self) -> &[OutputFile] {
        &self.files
    }

    pub fn write(&mut self, rel: &str, data: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, data)?;
        self.files.retain(|f| f.path != rel);
        self.files.push(OutputFile {
            path: rel.to_string(),
            sha256: sha256_hex(data),
            bytes: data.len() as u64,
        });
        Ok(path)
    }

    /// Buffers whatever `fill` writes, then stores it at `rel`.
    pub fn write_with<E>(
        &mut self,
        rel: &str,
        fill: impl FnOnce(&mut Vec<u8>) -> Result<(), E>,
    ) -> Result<PathBuf, CliError>
    where
        CliError: From<E>,
    {
        let mut buf = Vec::new();
        fill(&mut buf)?;
        self.write(rel, &buf)
    }

    pub fn write_json(&mut self, rel: &str, value: &impl Serialize) -> Result<PathBuf, CliError> {
        let mut buf = serde_json::to_vec_pretty(value)?;
        buf.push(b'\n');
        self.write(rel, &buf)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: BTreeMap<String, BTreeMap<String, String>>,
    /// Root seed and the derived seed of every named stream the command
    /// draws from.
    pub seeds: BTreeMap<String, u64>,
    pub started_unix: u64,
    pub wall_clock_seconds: f64,
    pub exit_code: i32,
    pub error: Option<String>,
    /// Definitions that the outputs depend on, such as metric aggregation.
    pub notes: BTreeMap<String, String>,
    pub outputs: Vec<OutputFile>,
}

/// Recomputes every digest listed in `dir/manifest.json`; returns the
/// paths that are missing or differ.
pub fn verify_manifest(dir: &Path) -> Result<Vec<String>, CliError> {
    let text = std::fs::read_to_string(dir.join(MANIFEST_NAME))?;
    let manifest: RunManifest = serde_json::from_str(&text)?;
    let mut bad = Vec::new();
    for f in &manifest.outputs {
        match std::fs::read(dir.join(&f.path)) {
            Ok(data) if sha256_hex(&data) == f.sha256 && data.len() as u64 == f.bytes => {}
            _ => bad.push(f.path.clone()),
        }
    }
    Ok(bad)
}

pub fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<(), CliError> {
    let mut file = std::fs::File::create(dir.join(MANIFEST_NAME))?;
    serde_json::to_writer_pretty(&mut file, manifest)?;
    writeln!(file)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_known_input() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_round_trip_detects_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(dir.path()).unwrap();
        out.write("a.csv", b"x,y\n1,2\n").unwrap();
        out.write("sub/b.json", b"{}\n").unwrap();
        let manifest = RunManifest {
            command: "train".into(),
            version: "0".into(),
            config: BTreeMap::new(),
            seeds: BTreeMap::new(),
            started_unix: 0,
            wall_clock_seconds: 0.0,
            exit_code: 0,
            error: None,
            notes: BTreeMap::new(),
            outputs: out.files().to_vec(),
        };
        write_manifest(dir.path(), &manifest).unwrap();
        assert!(verify_manifest(dir.path()).unwrap().is_empty());
        std::fs::write(dir.path().join("a.csv"), b"tampered").unwrap();
        assert_eq!(
            verify_manifest(dir.path()).unwrap(),
            vec!["a.csv".to_string()]
        );
    }
}
