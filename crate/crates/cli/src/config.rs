use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use slisemap::data::file_checksum;
use slisemap::Hyperparameters;

use crate::error::CliResult;

#[derive(Debug, Clone, Serialize)]
pub struct InputFile {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

/// Everything needed to reproduce an output artifact.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RunConfig {
    pub subcommand: String,
    pub version: String,
    pub seed: u64,
    /// Worker threads actually used.
    pub threads: usize,
    pub inputs: Vec<InputFile>,
    pub hyperparameters: Option<Hyperparameters>,
    /// The parsed subcommand arguments, defaults filled in.
    pub arguments: Value,
}

impl RunConfig {
    pub fn new(subcommand: &str, seed: u64, arguments: &impl Serialize) -> CliResult<Self> {
        Ok(Self {
            subcommand: subcommand.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            threads: rayon::current_num_threads(),
            inputs: Vec::new(),
            hyperparameters: None,
            arguments: serde_json::to_value(arguments)?,
        })
    }

    pub fn input(mut self, role: &str, path: &Path) -> CliResult<Self> {
        self.inputs.push(InputFile {
            role: role.to_string(),
            path: path.display().to_string(),
            sha256: file_checksum(path)?,
        });
        Ok(self)
    }

    pub fn hyperparameters(mut self, hyper: &Hyperparameters) -> Self {
        self.hyperparameters = Some(*hyper);
        self
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("run config serialises")
    }
}
