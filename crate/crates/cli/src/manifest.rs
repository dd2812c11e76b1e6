//! Run manifests: resolved configuration, seed, schema versions and content
//! hashes of every input and output file.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

use intformer::checkpoint::FORMAT_VERSION;
use intformer::dataset::ANNOTATION_SCHEMA_VERSION;

use crate::config::ExperimentConfig;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemaVersions {
    pub manifest: u32,
    pub annotation: u32,
    pub checkpoint_format: u32,
}

impl Default for SchemaVersions {
    fn default() -> Self {
        SchemaVersions {
            manifest: MANIFEST_SCHEMA_VERSION,
            annotation: ANNOTATION_SCHEMA_VERSION,
            checkpoint_format: FORMAT_VERSION,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    pub schema: SchemaVersions,
    pub config: ExperimentConfig,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl Manifest {
    pub fn new(command: &str, config: &ExperimentConfig) -> Self {
        Manifest {
            command: command.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            seed: config.seed,
            schema: SchemaVersions::default(),
            config: config.clone(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, role: &str, path: &Path) -> Result<()> {
        self.inputs.push(digest(role, path)?);
        Ok(())
    }

    pub fn output(&mut self, role: &str, path: &Path) -> Result<()> {
        self.outputs.push(digest(role, path)?);
        Ok(())
    }

    pub fn file_name(command: &str) -> String {
        format!("manifest_{command}.json")
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(Self::file_name(&self.command));
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

fn digest(role: &str, path: &Path) -> Result<FileDigest> {
    Ok(FileDigest {
        role: role.into(),
        path: path.to_path_buf(),
        sha256: hash_path(path)?,
    })
}

/// SHA-256 of `"blob <len>\0" ++ content`, as git hashes blobs.
pub fn blob_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    hex::encode(h.finalize())
}

fn file_hash(path: &Path) -> Result<String> {
    let mut f = fs::File::open(path).with_context(|| format!("hashing {}", path.display()))?;
    let len = f.metadata()?.len();
    let mut h = Sha256::new();
    h.update(format!("blob {len}\0").as_bytes());
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Blob hash of a file; for a directory, the hash of its sorted
/// `path\0blob-hash\n` listing over all files below it.
pub fn hash_path(path: &Path) -> Result<String> {
    if !path.is_dir() {
        return file_hash(path);
    }
    let mut h = Sha256::new();
    h.update(b"tree\0");
    for entry in WalkDir::new(path).sort_by_file_name() {
        let entry = entry.with_context(|| format!("walking {}", path.display()))?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry.path().strip_prefix(path).expect("below root");
        let rel = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        h.update(rel.as_bytes());
        h.update(b"\0");
        h.update(file_hash(entry.path())?.as_bytes());
        h.update(b"\n");
    }
    Ok(hex::encode(h.finalize()))
}
