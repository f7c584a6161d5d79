//! Run manifests: one `<artifact>.manifest.json` beside every output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Result;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sinn_core::checkpoint::{sha256_file, write_atomic};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Full argument vector, so the run can be repeated verbatim.
    pub argv: Vec<String>,
    pub config: Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub checkpoint_hashes: BTreeMap<String, String>,
    pub duration_secs: f64,
}

pub fn manifest_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    artifact.with_file_name(name)
}

/// Collects provenance while a command runs.
pub struct ManifestBuilder {
    command: String,
    argv: Vec<String>,
    started: Instant,
    config: serde_json::Map<String, Value>,
    seeds: BTreeMap<String, u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    checkpoints: Vec<PathBuf>,
}

impl ManifestBuilder {
    pub fn new(command: &str, argv: Vec<String>) -> Self {
        ManifestBuilder {
            command: command.to_string(),
            argv,
            started: Instant::now(),
            config: serde_json::Map::new(),
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            checkpoints: Vec::new(),
        }
    }

    pub fn config(&mut self, key: &str, value: impl Serialize) -> &mut Self {
        self.config
            .insert(key.to_string(), serde_json::to_value(value).expect("config values serialize"));
        self
    }

    pub fn seed(&mut self, key: &str, seed: u64) -> &mut Self {
        self.seeds.insert(key.to_string(), seed);
        self
    }

    pub fn input(&mut self, path: &Path) -> &mut Self {
        self.inputs.push(path.to_path_buf());
        self
    }

    pub fn output(&mut self, path: &Path) -> &mut Self {
        self.outputs.push(path.to_path_buf());
        self
    }

    /// Marks an input or output as a checkpoint whose hash is recorded.
    pub fn checkpoint(&mut self, path: &Path) -> &mut Self {
        self.checkpoints.push(path.to_path_buf());
        self
    }

    fn records(paths: &[PathBuf]) -> Result<Vec<FileRecord>> {
        paths
            .iter()
            .map(|p| {
                Ok(FileRecord {
                    path: p.clone(),
                    sha256: sha256_file(p)?,
                })
            })
            .collect()
    }

    /// Writes one manifest per output, all with the same content.
    pub fn finish(self) -> Result<RunManifest> {
        let checkpoint_hashes = self
            .checkpoints
            .iter()
            .map(|p| Ok((p.display().to_string(), sha256_file(p)?)))
            .collect::<Result<_>>()?;
        let manifest = RunManifest {
            command: self.command,
            argv: self.argv,
            config: Value::Object(self.config),
            seeds: self.seeds,
            inputs: Self::records(&self.inputs)?,
            outputs: Self::records(&self.outputs)?,
            checkpoint_hashes,
            duration_secs: self.started.elapsed().as_secs_f64(),
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        for out in &self.outputs {
            write_atomic(manifest_path(out), text.as_bytes())?;
        }
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_sits_next_to_artifact() {
        assert_eq!(manifest_path(Path::new("out/model.sinn")), Path::new("out/model.sinn.manifest.json"));
    }

    #[test]
    fn finish_records_hashes() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.txt");
        std::fs::write(&a, "abc").unwrap();
        let mut b = ManifestBuilder::new("test", vec!["sinn".into()]);
        b.seed("seed", 3).output(&a).checkpoint(&a).config("k", 1);
        let m = b.finish().unwrap();
        let abc = "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad";
        assert_eq!(m.outputs[0].sha256, abc);
        assert_eq!(m.checkpoint_hashes.values().next().unwrap(), abc);
        let back: RunManifest = serde_json::from_str(&std::fs::read_to_string(manifest_path(&a)).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
