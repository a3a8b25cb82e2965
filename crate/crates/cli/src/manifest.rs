use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Provenance record written next to every subcommand's outputs. Holds no
/// timestamps, so identical runs produce identical manifests.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub subcommand: String,
    pub config_sha256: String,
    pub seed: u64,
    pub versions: BTreeMap<&'static str, &'static str>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

pub fn file_sha256(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

impl Manifest {
    pub fn new(subcommand: &str, config_sha256: String, seed: u64) -> Self {
        let versions = BTreeMap::from([("saia", env!("CARGO_PKG_VERSION")), ("model_format", "saia-gbdt 1")]);
        Manifest {
            subcommand: subcommand.to_string(),
            config_sha256,
            seed,
            versions,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    fn key(out_dir: &Path, path: &Path) -> String {
        path.strip_prefix(out_dir).unwrap_or(path).display().to_string()
    }

    pub fn input(&mut self, out_dir: &Path, path: &Path) -> CliResult<()> {
        self.inputs.insert(Self::key(out_dir, path), file_sha256(path)?);
        Ok(())
    }

    pub fn output(&mut self, out_dir: &Path, path: &Path) -> CliResult<()> {
        self.outputs.insert(Self::key(out_dir, path), file_sha256(path)?);
        Ok(())
    }

    pub fn write(&self, out_dir: &Path) -> CliResult<PathBuf> {
        let dir = out_dir.join("manifests");
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        let path = dir.join(format!("{}.json", self.subcommand));
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Config(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}
