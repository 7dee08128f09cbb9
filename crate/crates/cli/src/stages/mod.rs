pub mod eval;
pub mod infer;
pub mod register;
pub mod synth;
pub mod tile;
pub mod train;

use std::collections::BTreeMap;
use std::path::Path;

use cribmil_core::manifest::{load_manifest, DatasetManifest};
use cribmil_core::PatchRecord;

use crate::artifacts::{require_stage, Table};
use crate::error::CliResult;

pub const PATCH_COLUMNS: &[&str] = &["scan_id", "slide_id", "key", "i", "j", "x", "y", "tissue_fraction"];

pub fn load_synth_manifest(out_dir: &Path) -> CliResult<DatasetManifest> {
    let dir = require_stage(out_dir, "synth")?;
    Ok(load_manifest(dir.join("manifest.csv"))?)
}

/// Kept patches per scan from the tiling table.
pub fn load_patch_table(out_dir: &Path) -> CliResult<BTreeMap<String, Vec<PatchRecord>>> {
    let dir = require_stage(out_dir, "tile")?;
    let t = Table::read(&dir.join("patches.csv"), PATCH_COLUMNS)?;
    let mut out: BTreeMap<String, Vec<PatchRecord>> = BTreeMap::new();
    for row in &t.rows {
        let rec = PatchRecord {
            i: t.get(row, 3)?,
            j: t.get(row, 4)?,
            x: t.get(row, 5)?,
            y: t.get(row, 6)?,
            tissue_fraction: t.get(row, 7)?,
            annotated_fraction: 0.0,
            label: false,
        };
        out.entry(row.1[0].clone()).or_default().push(rec);
    }
    Ok(out)
}
