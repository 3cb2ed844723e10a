use std::path::Path;

use serde::{Deserialize, Serialize};

use super::search::{SearchConfig, SearchState};
use crate::archspace::SpaceConfig;
use crate::Result;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Search state with the configuration needed to resume it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub space: SpaceConfig,
    pub search: SearchConfig,
    pub state: SearchState,
}

/// Writes JSON; floats round-trip exactly.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let text = serde_json::to_string(ckpt)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)?;
    let ckpt: Checkpoint = serde_json::from_str(&text)?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(crate::Error::config(
            "checkpoint.version",
            format!("unsupported version {}", ckpt.version),
        ));
    }
    Ok(ckpt)
}
