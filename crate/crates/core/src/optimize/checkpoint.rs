//! JSON checkpoints of an in-progress optimization.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{RunSettings, Strategy};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub channel: String,
    /// Noise strength of the channel.
    pub p: f64,
    pub theta0: f64,
    pub iteration: usize,
    pub qfi_trace: Vec<f64>,
    pub strategy: Strategy,
    pub settings: RunSettings,
}

/// Write through a temporary file so a crash never leaves a torn checkpoint.
pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, serde_json::to_vec_pretty(ck)?)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let ck: Checkpoint = serde_json::from_slice(&fs::read(path)?)?;
    if ck.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{} has format version {}, expected {CHECKPOINT_VERSION}",
            path.display(),
            ck.version
        )));
    }
    Ok(ck)
}
