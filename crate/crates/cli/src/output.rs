//! Artifact writing with provenance headers.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::Config;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// SHA-256 of the canonical configuration, hex encoded.
pub fn config_hash(cfg: &Config) -> String {
    hex::encode(Sha256::digest(cfg.canonical_json().as_bytes()))
}

/// Output directory whose files all carry the same config hash.
#[derive(Debug, Clone)]
pub struct OutputDir {
    root: PathBuf,
    hash: String,
}

impl OutputDir {
    pub fn create(root: &Path, cfg: &Config) -> anyhow::Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(OutputDir { root: root.to_path_buf(), hash: config_hash(cfg) })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    /// Writes a CSV whose first line is `# config_hash=... version=...`.
    pub fn csv<F>(&self, name: &str, body: F) -> anyhow::Result<()>
    where
        F: FnOnce(&mut dyn Write) -> io::Result<()>,
    {
        let path = self.path(name);
        let mut out = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        writeln!(out, "# config_hash={} version={}", self.hash, VERSION)?;
        body(&mut out)?;
        out.flush()?;
        Ok(())
    }

    /// Writes pretty JSON; objects gain `config_hash` and `version` keys.
    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> anyhow::Result<()> {
        let mut v = serde_json::to_value(value)?;
        if let serde_json::Value::Object(map) = &mut v {
            map.insert("config_hash".into(), self.hash.clone().into());
            map.insert("version".into(), VERSION.into());
        }
        let path = self.path(name);
        let mut text = serde_json::to_string_pretty(&v)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}
