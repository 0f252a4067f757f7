use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

/// Written next to each output as `<output>.manifest.json`. Holds every
/// effective setting; no timestamps, so reruns are byte-identical.
#[derive(Debug, Serialize)]
pub struct RunManifest<C: Serialize, S: Serialize> {
    pub command: &'static str,
    pub version: &'static str,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub config: C,
    pub summary: S,
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}

pub fn display(paths: &[&Path]) -> Vec<String> {
    paths.iter().map(|p| p.display().to_string()).collect()
}

pub fn write<C: Serialize, S: Serialize>(output: &Path, manifest: &RunManifest<C, S>) -> anyhow::Result<()> {
    let path = manifest_path(output);
    let mut body = serde_json::to_string_pretty(manifest)?;
    body.push('\n');
    std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))
}
