use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use deepsta::config::RunConfig;
use deepsta::hashing::file_sha256;
use deepsta::{Error, Result};
use serde::Serialize;

pub const MANIFEST_SUFFIX: &str = "_manifest.json";

/// Record of one command invocation. Written next to the outputs, also when
/// the command fails.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config: Option<serde_json::Value>,
    /// Content hash of every file read.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub wall_clock_secs: f64,
    pub seed: Option<u64>,
    pub error: Option<String>,
    pub exit_code: i32,
}

/// Collects what a command reads and writes.
pub struct Run {
    pub command: &'static str,
    pub out: PathBuf,
    pub config: Option<RunConfig>,
    pub seed: Option<u64>,
    inputs: BTreeMap<String, String>,
    outputs: Vec<PathBuf>,
    start: Instant,
}

impl Run {
    pub fn new(command: &'static str, out: PathBuf) -> Self {
        Run {
            command,
            out,
            config: None,
            seed: None,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            start: Instant::now(),
        }
    }

    /// Hashes an input file, failing if it is absent.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        if !path.is_file() {
            return Err(Error::Missing(path.to_path_buf()));
        }
        self.inputs.insert(path.display().to_string(), file_sha256(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: PathBuf) {
        if !self.outputs.contains(&path) {
            self.outputs.push(path);
        }
    }

    /// Writes `bytes` to `name` under the output directory.
    pub fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.out.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        self.output(path.clone());
        Ok(path)
    }

    pub fn finish(self, error: Option<String>, exit_code: i32) -> std::io::Result<PathBuf> {
        let path = self.out.join(format!("{}{MANIFEST_SUFFIX}", self.command));
        let manifest = RunManifest {
            command: self.command.into(),
            args: std::env::args().skip(1).collect(),
            config: self.config.as_ref().map(|c| serde_json::to_value(c).expect("serializable")),
            inputs: self.inputs,
            outputs: self.outputs.iter().map(|p| p.display().to_string()).collect(),
            wall_clock_secs: self.start.elapsed().as_secs_f64(),
            seed: self.seed,
            error,
            exit_code,
        };
        fs::create_dir_all(&self.out)?;
        fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(path)
    }
}
