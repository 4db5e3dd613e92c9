use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Provenance record written beside every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    /// Full argument vector, program name first.
    pub argv: Vec<String>,
    /// Working directory the arguments are relative to.
    pub cwd: PathBuf,
    pub seed: u64,
    /// Every setting with defaults filled in.
    pub config: Value,
    /// SHA-256 of each input file, keyed by the path as given.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
}

static ARGV: OnceLock<Vec<String>> = OnceLock::new();

/// Records the command line being executed; a replay records the original
/// one so the rewritten manifest matches the first.
pub fn set_argv(argv: Vec<String>) {
    let _ = ARGV.set(argv);
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn new(subcommand: &str, seed: u64, config: Value) -> Result<Self> {
        Ok(Self {
            tool: env!("CARGO_BIN_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            subcommand: subcommand.to_string(),
            argv: ARGV.get().cloned().unwrap_or_else(|| std::env::args().collect()),
            cwd: std::env::current_dir().context("resolving the working directory")?,
            seed,
            config,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        })
    }

    pub fn with_inputs<'a>(mut self, paths: impl IntoIterator<Item = &'a PathBuf>) -> Result<Self> {
        for p in paths {
            self.inputs.insert(p.display().to_string(), sha256_file(p)?);
        }
        Ok(self)
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }

    /// Fails if any recorded input has changed since the run (paths resolved
    /// against the recorded working directory).
    pub fn verify_inputs(&self) -> Result<()> {
        for (p, digest) in &self.inputs {
            let resolved = self.cwd.join(p);
            let now = sha256_file(&resolved)?;
            if &now != digest {
                bail!("input {} changed since the recorded run", resolved.display());
            }
        }
        Ok(())
    }
}

/// `<artifact>.manifest.json`, next to a file artifact.
pub fn beside(artifact: &Path) -> PathBuf {
    let mut name = artifact.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}
