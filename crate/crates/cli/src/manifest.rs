// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use attriprobe::store::{sidecar_path, write_dataset};
use attriprobe::Dataset;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliResult;

pub const MANIFEST_NAME: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Record of one run. Output digests cover every file the command wrote
/// except the manifest itself.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub toolkit_version: String,
    pub config: Value,
    pub seed: Option<u64>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub threads: usize,
    pub wall_time_secs: f64,
}

/// Output directory that remembers what was written to it.
pub struct OutDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path) -> CliResult<Self> {
        fs::create_dir_all(root)?;
        Ok(Self { root: root.to_path_buf(), written: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        fs::write(self.path(name), bytes)?;
        self.written.push(name.to_owned());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    /// Writes the binary file and its JSON-lines sidecar.
    pub fn write_dataset(&mut self, name: &str, dataset: &Dataset) -> CliResult<()> {
        let path = self.path(name);
        write_dataset(dataset, &path)?;
        self.written.push(name.to_owned());
        let side = sidecar_path(&path);
        let side_name = side.file_name().expect("sidecar has a file name").to_string_lossy().into_owned();
        self.written.push(side_name);
        Ok(())
    }

    pub fn digests(&self) -> CliResult<BTreeMap<String, String>> {
        self.written
            .iter()
            .map(|n| Ok((n.clone(), sha256_file(&self.path(n))?)))
            .collect()
    }

    pub fn finish(self, mut manifest: RunManifest) -> CliResult<()> {
        manifest.outputs = self.digests()?;
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(self.path(MANIFEST_NAME), text)?;
        Ok(())
    }
}
