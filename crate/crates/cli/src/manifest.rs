//! Stage manifests: JSON files listing every artifact a stage wrote.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
pub struct Artifact {
    /// Path relative to the output directory.
    pub path: PathBuf,
    pub sha256: String,
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frame: Option<usize>,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
pub struct Manifest {
    pub stage: String,
    pub tool_version: String,
    pub config_digest: String,
    /// The upstream manifest this stage consumed, with its hash.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub consumed: Option<(String, String)>,
    pub artifacts: Vec<Artifact>,
    #[serde(default)]
    pub summary: serde_json::Value,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn manifest_path(out_dir: &Path, stage: &str) -> PathBuf {
    out_dir.join(format!("{stage}.json"))
}

/// Collects artifacts for one stage and writes them under `out_dir`.
pub struct StageWriter {
    out_dir: PathBuf,
    manifest: Manifest,
}

impl StageWriter {
    pub fn new(out_dir: &Path, stage: &str, digest: &str) -> Result<Self> {
        std::fs::create_dir_all(out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;
        Ok(Self {
            out_dir: out_dir.to_path_buf(),
            manifest: Manifest {
                stage: stage.into(),
                tool_version: env!("CARGO_PKG_VERSION").into(),
                config_digest: digest.into(),
                consumed: None,
                artifacts: Vec::new(),
                summary: serde_json::Value::Null,
            },
        })
    }

    pub fn consumed(&mut self, upstream: &Loaded) {
        self.manifest.consumed = Some((upstream.manifest.stage.clone(), upstream.hash.clone()));
    }

    pub fn summary(&mut self, value: serde_json::Value) {
        self.manifest.summary = value;
    }

    /// Writes `bytes` to `rel` and records it.
    pub fn write(&mut self, rel: impl Into<PathBuf>, kind: &str, bytes: &[u8]) -> Result<&mut Artifact> {
        let rel = rel.into();
        let full = self.out_dir.join(&rel);
        if let Some(parent) = full.parent() {
            std::fs::create_dir_all(parent).with_context(|| format!("cannot create {}", parent.display()))?;
        }
        std::fs::write(&full, bytes).with_context(|| format!("cannot write {}", full.display()))?;
        self.manifest.artifacts.push(Artifact {
            path: rel,
            sha256: sha256_hex(bytes),
            kind: kind.into(),
            sigma: None,
            seed: None,
            frame: None,
        });
        Ok(self.manifest.artifacts.last_mut().expect("just pushed"))
    }

    pub fn finish(self) -> Result<Manifest> {
        let path = manifest_path(&self.out_dir, &self.manifest.stage);
        let text = serde_json::to_string_pretty(&self.manifest)? + "\n";
        std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(self.manifest)
    }
}

/// A manifest read back from disk, checked against the current config.
pub struct Loaded {
    pub manifest: Manifest,
    pub hash: String,
    pub out_dir: PathBuf,
}

impl Loaded {
    pub fn read(out_dir: &Path, stage: &str, digest: &str) -> Result<Self> {
        let path = manifest_path(out_dir, stage);
        let bytes = std::fs::read(&path)
            .with_context(|| format!("cannot read {}; run the `{stage}` stage first", path.display()))?;
        let manifest: Manifest =
            serde_json::from_slice(&bytes).with_context(|| format!("malformed manifest {}", path.display()))?;
        if manifest.config_digest != digest {
            bail!(
                "{} was produced with a different config (digest {}, current {}); rerun `{stage}`",
                path.display(),
                manifest.config_digest,
                digest
            );
        }
        Ok(Self {
            manifest,
            hash: sha256_hex(&bytes),
            out_dir: out_dir.to_path_buf(),
        })
    }

    /// Reads an artifact and verifies its recorded hash.
    pub fn artifact_bytes(&self, a: &Artifact) -> Result<Vec<u8>> {
        let full = self.out_dir.join(&a.path);
        let bytes = std::fs::read(&full).with_context(|| format!("cannot read {}", full.display()))?;
        if sha256_hex(&bytes) != a.sha256 {
            bail!("{} changed since the `{}` stage wrote it", full.display(), self.manifest.stage);
        }
        Ok(bytes)
    }

    pub fn of_kind<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = &'a Artifact> + 'a {
        self.manifest.artifacts.iter().filter(move |a| a.kind == kind)
    }
}
