//! Stage implementations behind the `cribmil` command.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod stages;

use std::path::{Path, PathBuf};

use artifacts::Provenance;
use config::Settings;

/// Resolved settings plus the output root shared by every stage.
pub struct Ctx {
    pub out_dir: PathBuf,
    pub settings: Settings,
}

impl Ctx {
    pub fn new(out_dir: impl AsRef<Path>, settings: Settings) -> Self {
        Self {
            out_dir: out_dir.as_ref().to_path_buf(),
            settings,
        }
    }

    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.out_dir.join(stage)
    }

    pub fn provenance(&self, stage: &str) -> Provenance {
        Provenance::new(&self.settings, stage)
    }
}
