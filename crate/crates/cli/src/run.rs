//! Run directories and manifests.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

pub const DEFAULT_ROOT: &str = "runs";
pub const ENV_ROOT: &str = "MONOSEM_OUT";

/// One file produced by a command.
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    pub fn text(name: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            bytes: text.into().into_bytes(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub tool: &'a str,
    pub version: &'a str,
    pub command: &'a str,
    pub config_file: &'a str,
    pub config_sha256: String,
    pub seeds: &'a [u64],
    pub parallelism: usize,
    pub rerun: String,
    pub outputs: Vec<&'a str>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn run_dir(root: Option<&Path>, explicit: Option<&Path>, command: &str, config_hash: &str) -> PathBuf {
    if let Some(dir) = explicit {
        return dir.to_path_buf();
    }
    let root = root.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(DEFAULT_ROOT));
    root.join(format!("{command}-{}", &config_hash[..12]))
}

/// Write the resolved config, every artifact and the manifest.
pub fn write_run(
    dir: &Path,
    command: &str,
    config_toml: &str,
    seeds: &[u64],
    parallelism: usize,
    artifacts: &[Artifact],
) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.toml"), config_toml)?;
    for a in artifacts {
        std::fs::write(dir.join(&a.name), &a.bytes)?;
    }
    let manifest = Manifest {
        tool: "monosem",
        version: env!("CARGO_PKG_VERSION"),
        command,
        config_file: "config.toml",
        config_sha256: sha256_hex(config_toml.as_bytes()),
        seeds,
        parallelism,
        rerun: format!("monosem --config {}/config.toml --run-dir {} {command}", dir.display(), dir.display()),
        outputs: artifacts.iter().map(|a| a.name.as_str()).collect(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(std::io::Error::other)?;
    std::fs::write(dir.join("manifest.json"), json + "\n")
}
