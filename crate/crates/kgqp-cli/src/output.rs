//! CSV and JSON writers and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Collects the files written by one run.
pub struct OutputSet {
    dir: PathBuf,
    config_hash: String,
    files: Vec<String>,
    started: Instant,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub config_hash: String,
    pub code_version: String,
    pub subcommand: String,
    pub seed: u64,
    pub wall_clock_seconds: f64,
    pub files: Vec<String>,
}

#[derive(Serialize)]
struct Versioned<'a, T: Serialize> {
    schema_version: u32,
    config_hash: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

impl OutputSet {
    pub fn new(dir: &Path, config_hash: String) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), config_hash, files: vec![], started: Instant::now() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    /// Writes a comment line with the config hash, a header and the rows.
    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<f64>]) -> Result<(), CliError> {
        let mut text = format!("# config-hash: {}\n", self.config_hash);
        let mut w = csv::Writer::from_writer(vec![]);
        w.write_record(header).map_err(|e| CliError::Io(e.into()))?;
        for r in rows {
            debug_assert_eq!(r.len(), header.len());
            w.write_record(r.iter().map(|x| format!("{x:e}")))
                .map_err(|e| CliError::Io(e.into()))?;
        }
        let body = w.into_inner().map_err(|e| CliError::Io(e.into_error()))?;
        text.push_str(&String::from_utf8(body).expect("csv is utf-8"));
        self.write(name, text)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let v = Versioned { schema_version: SCHEMA_VERSION, config_hash: &self.config_hash, body: value };
        let text = serde_json::to_string_pretty(&v).map_err(|e| CliError::Io(e.into()))? + "\n";
        self.write(name, text)
    }

    fn write(&mut self, name: &str, text: String) -> Result<(), CliError> {
        fs::write(self.dir.join(name), text)?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn finish(self, subcommand: &str, seed: u64) -> Result<RunManifest, CliError> {
        let m = RunManifest {
            schema_version: SCHEMA_VERSION,
            config_hash: self.config_hash.clone(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            subcommand: subcommand.to_string(),
            seed,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            files: self.files.clone(),
        };
        let text = serde_json::to_string_pretty(&m).map_err(|e| CliError::Io(e.into()))? + "\n";
        fs::write(self.dir.join(format!("{subcommand}.manifest.json")), text)?;
        Ok(m)
    }
}
