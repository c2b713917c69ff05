//! Checkpoints: a JSON document holding the full [`FluidState`] under a
//! magic string and a schema version.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use patchflow::FluidState;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const MAGIC: &str = "patchflow-checkpoint";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub magic: String,
    pub schema_version: u32,
    /// Hash of the scenario that produced the state.
    pub config_hash: String,
    pub step: u64,
    pub state: FluidState,
}

impl Checkpoint {
    pub fn new(config_hash: &str, step: u64, state: &FluidState) -> Self {
        Self {
            magic: MAGIC.into(),
            schema_version: SCHEMA_VERSION,
            config_hash: config_hash.into(),
            step,
            state: state.clone(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.flush()?;
        Ok(())
    }

    /// Reads and checks the magic string and schema version.
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let r = BufReader::new(File::open(path)?);
        let v: serde_json::Value = serde_json::from_reader(r)?;
        match v.get("magic").and_then(|m| m.as_str()) {
            Some(MAGIC) => {}
            _ => return Err(CliError::Config(format!("{} is not a patchflow checkpoint", path.display()))),
        }
        match v.get("schema_version").and_then(|m| m.as_u64()) {
            Some(x) if x == SCHEMA_VERSION as u64 => {}
            other => {
                return Err(CliError::Config(format!(
                    "{}: checkpoint schema version {other:?}, expected {SCHEMA_VERSION}",
                    path.display()
                )))
            }
        }
        serde_json::from_value(v).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}
