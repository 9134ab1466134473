use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_NAME: &str = "run_manifest.json";

#[derive(Serialize)]
pub struct InputFingerprint {
    pub path: String,
    pub sha256: String,
}

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<InputFingerprint>,
    pub outputs: Vec<String>,
    pub toolkit_version: String,
    pub duration_secs: f64,
}

/// Collects a manifest while a command runs.
pub struct Recorder {
    command: &'static str,
    started: Instant,
    inputs: Vec<InputFingerprint>,
    outputs: Vec<String>,
}

impl Recorder {
    pub fn start(command: &'static str) -> Self {
        Self {
            command,
            started: Instant::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(InputFingerprint {
            path: path.display().to_string(),
            sha256: fingerprint(path)?,
        });
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn finish(self, config: serde_json::Value, seed: Option<u64>, dest: &Path) -> Result<()> {
        let manifest = RunManifest {
            command: self.command.to_string(),
            config,
            seed,
            inputs: self.inputs,
            outputs: self.outputs,
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            duration_secs: self.started.elapsed().as_secs_f64(),
        };
        fs::write(dest, serde_json::to_vec_pretty(&manifest)?)
            .with_context(|| format!("writing {}", dest.display()))
    }
}

fn files_under(root: &Path, rel: PathBuf, out: &mut Vec<PathBuf>) -> Result<()> {
    let dir = root.join(&rel);
    let mut entries = fs::read_dir(&dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .collect::<std::io::Result<Vec<_>>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let r = rel.join(e.file_name());
        if e.file_type()?.is_dir() {
            files_under(root, r, out)?;
        } else {
            out.push(r);
        }
    }
    Ok(())
}

/// Relative paths of all files below `root`, sorted.
pub fn walk(root: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    files_under(root, PathBuf::new(), &mut out)?;
    Ok(out)
}

/// SHA-256 of a file, or of every relative path and file body below a
/// directory in sorted order.
pub fn fingerprint(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    if path.is_dir() {
        for rel in walk(path)? {
            let bytes = fs::read(path.join(&rel))?;
            h.update(rel.to_string_lossy().as_bytes());
            h.update([0]);
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(&bytes);
        }
    } else {
        h.update(fs::read(path).with_context(|| format!("reading {}", path.display()))?);
    }
    Ok(hex::encode(h.finalize()))
}

/// Creates an empty output directory, replacing an old one only when forced.
pub fn fresh_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        if !force {
            bail!("{} already exists; pass --force to replace it", dir.display());
        }
        if dir.is_dir() {
            fs::remove_dir_all(dir)?;
        } else {
            fs::remove_file(dir)?;
        }
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Checks that an output file may be written.
pub fn fresh_file(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        bail!("{} already exists; pass --force to replace it", path.display());
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(())
}
