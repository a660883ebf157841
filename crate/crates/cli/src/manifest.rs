//! Output bookkeeping and run manifests.
//!
//! Every command writes its files through [`Outputs`], which records a
//! SHA-256 per file, and finishes with a manifest JSON naming the tool
//! version, seed, config hash, the effective config, input digests and
//! output digests. Manifests carry no timestamps, host names or thread
//! counts, so identical runs produce identical manifests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{sha256_hex, Loaded, RunConfig};
use crate::error::{CliError, CliResult};

pub const TOOL: &str = "scuba";
pub const MANIFEST_SCHEMA: u32 = 1;

#[derive(Debug, Serialize)]
pub struct InputDigest {
    /// The path as written in the config.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub schema: u32,
    pub tool: &'static str,
    pub tool_version: &'static str,
    pub bscb_version: u16,
    pub command: &'static str,
    pub seed: u64,
    pub config_hash: String,
    pub config: &'a RunConfig,
    pub inputs: BTreeMap<String, InputDigest>,
    pub outputs: BTreeMap<String, String>,
}

fn file_digest(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

/// Files written under one root, with their digests.
pub struct Outputs {
    root: PathBuf,
    files: BTreeMap<String, String>,
    inputs: BTreeMap<String, InputDigest>,
}

impl Outputs {
    pub fn new(root: PathBuf) -> CliResult<Self> {
        std::fs::create_dir_all(&root)
            .map_err(|e| CliError::config(format!("cannot create {}: {e}", root.display())))?;
        Ok(Self {
            root,
            files: BTreeMap::new(),
            inputs: BTreeMap::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> CliResult<PathBuf> {
        let p = self.root.join(rel);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::config(format!("cannot create {}: {e}", parent.display())))?;
        }
        Ok(p)
    }

    /// Records a file that has already been written at `rel`.
    pub fn record(&mut self, rel: &str) -> CliResult<()> {
        let digest = file_digest(&self.root.join(rel))?;
        self.files.insert(rel.to_string(), digest);
        Ok(())
    }

    pub fn write_text(&mut self, rel: &str, text: &str) -> CliResult<()> {
        let p = self.path(rel)?;
        std::fs::write(&p, text).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?;
        self.record(rel)
    }

    /// Writes via `save`, which receives the absolute path, then records it.
    pub fn write_with<E: Into<CliError>>(
        &mut self,
        rel: &str,
        save: impl FnOnce(&Path) -> Result<(), E>,
    ) -> CliResult<()> {
        let p = self.path(rel)?;
        save(&p).map_err(Into::into)?;
        self.record(rel)
    }

    /// Records the digest of an input file under `key`.
    pub fn input(&mut self, key: &str, configured: &Path, resolved: &Path) -> CliResult<()> {
        self.inputs.insert(
            key.to_string(),
            InputDigest {
                path: configured.to_string_lossy().into_owned(),
                sha256: file_digest(resolved)?,
            },
        );
        Ok(())
    }

    /// Writes `<name>` manifest JSON into the root.
    pub fn finish(self, name: &str, command: &'static str, loaded: &Loaded) -> CliResult<()> {
        let manifest = Manifest {
            schema: MANIFEST_SCHEMA,
            tool: TOOL,
            tool_version: env!("CARGO_PKG_VERSION"),
            bscb_version: scuba_core::tensor_io::VERSION,
            command,
            seed: loaded.config.seed,
            config_hash: loaded.hash(),
            config: &loaded.config,
            inputs: self.inputs,
            outputs: self.files,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        let p = self.root.join(name);
        std::fs::write(&p, text).map_err(|e| CliError::config(format!("{}: {e}", p.display())))
    }
}
