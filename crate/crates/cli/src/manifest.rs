use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use lifecycle_core::ModelConfig;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

#[derive(Clone, Debug, Serialize)]
pub struct GridInfo {
    pub dt: f64,
    pub n_t: usize,
    pub n_z: usize,
}

/// Everything needed to rerun a subcommand. The resolved configuration is
/// embedded so the manifest stands on its own even if the file changes.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub subcommand: String,
    pub config_path: String,
    pub config_sha256: String,
    pub config: ModelConfig,
    pub seed: u64,
    pub threads: Option<usize>,
    pub args: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridInfo>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(
        subcommand: &str,
        config_path: &Path,
        config_bytes: &[u8],
        config: &ModelConfig,
        seed: u64,
        threads: Option<usize>,
        args: serde_json::Value,
    ) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            subcommand: subcommand.to_string(),
            config_path: config_path.display().to_string(),
            config_sha256: sha256_hex(config_bytes),
            config: config.clone(),
            seed,
            threads,
            args,
            grid: None,
            outputs: Vec::new(),
        }
    }

    /// Hash of the manifest with the output list, which is fixed before
    /// any file is written.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("manifest serialises"))
    }

    /// `#` header lines for every output file.
    pub fn header(&self) -> Vec<String> {
        vec![
            format!("manifest sha256 {}", self.hash()),
            format!(
                "{} {} config {} sha256 {} seed {}",
                env!("CARGO_BIN_NAME"),
                self.subcommand,
                self.config_path,
                self.config_sha256,
                self.seed
            ),
        ]
    }
}

/// Output directory with the manifest's file list.
pub struct OutDir {
    pub root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root)
            .map_err(|e| CliError::config(format!("cannot create {}: {e}", root.display())))?;
        Ok(OutDir {
            root: root.to_path_buf(),
        })
    }

    pub fn file(&self, name: &str) -> Result<BufWriter<File>, CliError> {
        let path = self.root.join(name);
        File::create(&path)
            .map(BufWriter::new)
            .map_err(|e| CliError::config(format!("cannot write {}: {e}", path.display())))
    }

    pub fn write_manifest(&self, m: &RunManifest) -> Result<(), CliError> {
        let mut f = self.file("manifest.json")?;
        let mut value = serde_json::to_value(m).expect("manifest serialises");
        value["manifest_sha256"] = serde_json::Value::String(m.hash());
        serde_json::to_writer_pretty(&mut f, &value).map_err(|e| CliError::config(e.to_string()))?;
        writeln!(f).and_then(|_| f.flush()).map_err(|e| CliError::config(e.to_string()))
    }
}
