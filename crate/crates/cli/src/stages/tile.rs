//! Tissue masks, kept patches and one PNG patch store per scan.

use cribmil_core::patch_store::{encode_png, write_patch_store};
use cribmil_core::tiling::{crop_patch, tile_scan};
use rayon::prelude::*;

use crate::artifacts::{csv_body, finish_stage, fresh_dir, load_rgb, save_mask, write_csv};
use crate::error::CliResult;
use crate::stages::{load_synth_manifest, PATCH_COLUMNS};
use crate::Ctx;

pub fn run(ctx: &Ctx) -> CliResult<()> {
    let manifest = load_synth_manifest(&ctx.out_dir)?;
    let synth = ctx.stage_dir("synth");
    let cfg = &ctx.settings.tile;
    let dir = ctx.stage_dir("tile");
    fresh_dir(&dir)?;
    std::fs::create_dir_all(dir.join("tissue"))?;
    std::fs::create_dir_all(dir.join("stores"))?;
    let prov = ctx.provenance("tile");

    let scans: Vec<_> = manifest
        .slides
        .iter()
        .flat_map(|s| s.scans.iter().map(move |c| (s, c)))
        .collect();
    let per_scan = scans
        .par_iter()
        .map(|(slide, scan)| -> CliResult<Vec<String>> {
            let img = load_rgb(&synth.join(&scan.image_path))?;
            let (mask, patches) = tile_scan(&img, cfg)?;
            save_mask(&dir.join("tissue").join(format!("{}.png", scan.scan_id)), &mask)?;
            let entries = patches
                .iter()
                .map(|p| Ok((p.key(), encode_png(&crop_patch(&img, p, cfg))?)))
                .collect::<cribmil_core::Result<Vec<_>>>()?;
            write_patch_store(dir.join("stores").join(format!("{}.pstr", scan.scan_id)), &entries)?;
            if patches.is_empty() {
                log::warn!("{}: no patch passes the tissue filter", scan.scan_id);
            }
            Ok(patches
                .iter()
                .map(|p| {
                    format!(
                        "{},{},{},{},{},{},{},{}",
                        scan.scan_id,
                        slide.slide_id,
                        p.key(),
                        p.i,
                        p.j,
                        p.x,
                        p.y,
                        p.tissue_fraction
                    )
                })
                .collect())
        })
        .collect::<CliResult<Vec<_>>>()?;
    let n: usize = per_scan.iter().map(Vec::len).sum();
    log::info!("tile: {} scans, {n} patches", scans.len());
    write_csv(
        &dir.join("patches.csv"),
        &prov,
        &csv_body(&PATCH_COLUMNS.join(","), per_scan.into_iter().flatten()),
    )?;
    finish_stage(&dir, &prov, &ctx.settings)
}
