//! Atomic artifact output and the run manifest.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::content_hash;

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub experiment: String,
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    pub code_version: String,
    pub started: String,
    pub finished: String,
    /// File name to content digest.
    pub outputs: BTreeMap<String, String>,
}

/// Writes each artifact through a temporary file in the target directory
/// and a rename, recording its digest.
pub struct ArtifactWriter {
    dir: PathBuf,
    outputs: BTreeMap<String, String>,
}

impl ArtifactWriter {
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), outputs: BTreeMap::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn outputs(&self) -> &BTreeMap<String, String> {
        &self.outputs
    }

    fn put(&self, name: &str, bytes: &[u8]) -> Result<String> {
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_all()?;
        tmp.persist(self.dir.join(name)).map_err(|e| Error::Io(e.error))?;
        Ok(content_hash(bytes))
    }

    pub fn bytes(&mut self, name: &str, bytes: &[u8]) -> Result<String> {
        let digest = self.put(name, bytes)?;
        self.outputs.insert(name.to_string(), digest.clone());
        Ok(digest)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<String> {
        let mut text = serde_json::to_vec_pretty(value)?;
        text.push(b'\n');
        self.bytes(name, &text)
    }

    pub fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(&r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        self.bytes(name, &bytes)
    }

    /// Remove everything written so far.
    pub fn abort(self) {
        for name in self.outputs.keys() {
            let _ = std::fs::remove_file(self.dir.join(name));
        }
    }

    /// Write the manifest last.
    pub fn finish(self, mut manifest: RunManifest) -> Result<RunManifest> {
        manifest.outputs = self.outputs.clone();
        let mut text = serde_json::to_vec_pretty(&manifest)?;
        text.push(b'\n');
        self.put(MANIFEST, &text)?;
        Ok(manifest)
    }
}

/// Shortest round-trip formatting for CSV cells.
pub fn num(x: f64) -> String {
    format!("{x}")
}
