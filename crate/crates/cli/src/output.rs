use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::Value;

/// Output directory that records every file written through it.
pub struct OutDir {
    root: PathBuf,
    written: Mutex<BTreeSet<String>>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).with_context(|| format!("creating output directory {}", root.display()))?;
        let probe = root.join(".mogge-write-probe");
        std::fs::write(&probe, b"").with_context(|| format!("output directory {} is not writable", root.display()))?;
        std::fs::remove_file(&probe)?;
        Ok(Self { root: root.to_path_buf(), written: Mutex::new(BTreeSet::new()) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&self, relative: &Path, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(relative);
        mogge_core::io::write_atomic(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.written.lock().unwrap().insert(relative.to_string_lossy().replace('\\', "/"));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&self, relative: &Path, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(relative, text.as_bytes())
    }

    pub fn files(&self) -> Vec<String> {
        self.written.lock().unwrap().iter().cloned().collect()
    }
}

/// Reproducibility record written next to every command's outputs.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: &'static str,
    pub version: &'static str,
    pub seed: u64,
    pub config: Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<String>,
}

pub fn write_manifest(out: &OutDir, mut manifest: Manifest) -> Result<()> {
    manifest.outputs = out.files();
    out.write_json(Path::new("manifest.json"), &manifest)
}

pub fn require_files(paths: &[PathBuf], what: &str) -> Result<()> {
    if paths.is_empty() {
        bail!("no {what} given");
    }
    for p in paths {
        if !p.is_file() {
            bail!("{what} {} does not exist", p.display());
        }
    }
    Ok(())
}

/// Per-input output prefix: none for a single input, the file stem otherwise.
pub fn replicate_dirs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    if inputs.len() == 1 {
        return Ok(vec![PathBuf::new()]);
    }
    let mut seen = BTreeSet::new();
    inputs
        .iter()
        .map(|p| {
            let stem = p
                .file_stem()
                .with_context(|| format!("{} has no file name", p.display()))?
                .to_string_lossy()
                .into_owned();
            if !seen.insert(stem.clone()) {
                bail!("two inputs share the file name {stem:?}");
            }
            Ok(PathBuf::from(stem))
        })
        .collect()
}

pub fn display(paths: &[PathBuf]) -> Vec<String> {
    paths.iter().map(|p| p.display().to_string()).collect()
}
