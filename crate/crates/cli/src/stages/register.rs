//! Align every rescan to its primary scan and carry the annotation across.

use cribmil_core::registration::{phase_correlate, transfer_annotations};
use rayon::prelude::*;

use crate::artifacts::{csv_body, finish_stage, fresh_dir, load_mask, require_stage, save_mask, write_csv};
use crate::error::CliResult;
use crate::stages::load_synth_manifest;
use crate::Ctx;

pub const SHIFT_COLUMNS: &[&str] = &["slide_id", "source_scan", "target_scan", "dx", "dy", "peak_ratio"];

pub fn run(ctx: &Ctx) -> CliResult<()> {
    let manifest = load_synth_manifest(&ctx.out_dir)?;
    let synth = ctx.stage_dir("synth");
    let tile = require_stage(&ctx.out_dir, "tile")?;
    let dir = ctx.stage_dir("register");
    fresh_dir(&dir)?;
    std::fs::create_dir_all(dir.join("annotations"))?;
    let prov = ctx.provenance("register");

    let rows = manifest
        .slides
        .par_iter()
        .filter(|s| s.scans.len() > 1)
        .map(|slide| -> CliResult<Vec<String>> {
            let primary = slide.primary_scan();
            let fixed = load_mask(&tile.join("tissue").join(format!("{}.png", primary.scan_id)))?;
            let annotation = load_mask(&synth.join("masks").join(format!("{}.png", slide.slide_id)))?;
            let mut out = Vec::new();
            for scan in slide.scans.iter().filter(|c| !c.is_primary) {
                let moving = load_mask(&tile.join("tissue").join(format!("{}.png", scan.scan_id)))?;
                let shift = phase_correlate(&fixed, &moving)?;
                if shift.low_confidence() {
                    log::warn!(
                        "{} -> {}: low-confidence registration (peak ratio {:.3})",
                        primary.scan_id,
                        scan.scan_id,
                        shift.peak_ratio
                    );
                }
                let moved = transfer_annotations(&annotation, &shift);
                save_mask(&dir.join("annotations").join(format!("{}.png", scan.scan_id)), &moved)?;
                out.push(format!(
                    "{},{},{},{},{},{}",
                    slide.slide_id, primary.scan_id, scan.scan_id, shift.dx, shift.dy, shift.peak_ratio
                ));
            }
            Ok(out)
        })
        .collect::<CliResult<Vec<_>>>()?;
    let rows: Vec<String> = rows.into_iter().flatten().collect();
    log::info!("register: {} rescans aligned", rows.len());
    write_csv(&dir.join("shifts.csv"), &prov, &csv_body(&SHIFT_COLUMNS.join(","), rows))?;
    finish_stage(&dir, &prov, &ctx.settings)
}
