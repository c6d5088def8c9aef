use std::fs;
use std::path::{Path, PathBuf};

use greenhouse_core::config::RunConfig;
use greenhouse_core::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

/// What a command read and wrote, enough to rerun it bit-exactly.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config_sha256: String,
    pub options: serde_json::Value,
    pub inputs: Vec<FileEntry>,
    pub outputs: Vec<FileEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Tracks files for one command run inside a run directory.
pub struct Run {
    pub out: PathBuf,
    pub cfg: RunConfig,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Run {
    pub fn new(cfg: RunConfig) -> Self {
        Run {
            out: PathBuf::from(&cfg.out),
            cfg,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    /// `given`, or `default` inside the run directory.
    pub fn input(&mut self, given: Option<&Path>, default: &str) -> PathBuf {
        let p = given.map_or_else(|| self.out.join(default), Path::to_path_buf);
        self.inputs.push(p.clone());
        p
    }

    /// Path inside the run directory, creating parent directories.
    pub fn output(&mut self, rel: &str) -> Result<PathBuf> {
        let p = self.out.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        self.outputs.push(p.clone());
        Ok(p)
    }

    pub fn write(&mut self, rel: &str, text: &str) -> Result<PathBuf> {
        let p = self.output(rel)?;
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }

    fn display(&self, p: &Path) -> String {
        p.strip_prefix(&self.out).unwrap_or(p).to_string_lossy().replace('\\', "/")
    }

    fn entries(&self, paths: &[PathBuf]) -> Result<Vec<FileEntry>> {
        paths
            .iter()
            .filter(|p| p.is_file())
            .map(|p| {
                let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
                Ok(FileEntry {
                    path: self.display(p),
                    sha256: sha256_hex(&bytes),
                })
            })
            .collect()
    }

    /// Writes config.toml and manifests/<command>.json. The saved config
    /// records `out` as "." so a run directory can be moved or compared.
    pub fn finish(mut self, command: &str, options: serde_json::Value) -> Result<()> {
        let mut saved = self.cfg.clone();
        saved.out = ".".into();
        let config = saved.to_toml()?;
        self.write("config.toml", &config)?;
        let manifest = Manifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: self.cfg.seed,
            config_sha256: sha256_hex(config.as_bytes()),
            options,
            inputs: self.entries(&self.inputs)?,
            outputs: self.entries(&self.outputs)?,
        };
        let text = serde_json::to_string_pretty(&manifest)?;
        let p = self.output(&format!("manifests/{command}.json"))?;
        fs::write(&p, text + "\n").map_err(|e| Error::io(&p, e))
    }
}
