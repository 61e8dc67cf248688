//! Output files. CSVs open with a `# config_hash:` comment line; JSON files
//! carry the hash, the tool version and the effective tolerances.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use pmp_core::flow::FlowOptions;

use crate::config::Tolerances;
use crate::error::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub struct Sink {
    pub dir: PathBuf,
    pub hash: String,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    config_hash: &'a str,
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    tolerances: &'a Tolerances,
    flow: &'a FlowOptions,
    result: &'a T,
}

pub struct Meta<'a> {
    pub command: &'a str,
    pub seed: u64,
    pub tolerances: &'a Tolerances,
    pub flow: &'a FlowOptions,
}

impl Sink {
    pub fn new(dir: &Path, hash: String) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        Ok(Sink {
            dir: dir.to_path_buf(),
            hash,
        })
    }

    fn path(&self, name: &str) -> Result<PathBuf, CliError> {
        let p = self.dir.join(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        Ok(p)
    }

    pub fn csv<F>(&self, name: &str, body: F) -> Result<PathBuf, CliError>
    where
        F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    {
        let mut buf = Vec::new();
        writeln!(buf, "# config_hash: {}", self.hash)?;
        body(&mut buf)?;
        let p = self.path(name)?;
        fs::write(&p, buf)?;
        Ok(p)
    }

    pub fn json<T: Serialize>(&self, name: &str, meta: &Meta, result: &T) -> Result<PathBuf, CliError> {
        let env = Envelope {
            config_hash: &self.hash,
            tool: "pmp",
            version: VERSION,
            command: meta.command,
            seed: meta.seed,
            tolerances: meta.tolerances,
            flow: meta.flow,
            result,
        };
        let mut text = serde_json::to_string_pretty(&env).map_err(|e| CliError::Io(e.into()))?;
        text.push('\n');
        let p = self.path(name)?;
        fs::write(&p, text)?;
        Ok(p)
    }
}
