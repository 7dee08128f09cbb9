//! Cross-validated two-step training on the training role.

use std::collections::BTreeMap;
use std::path::Path;

use cribmil_core::manifest::{make_grouped_folds, Role};
use cribmil_core::nn::checkpoint::{save_checkpoint, Checkpoint};
use cribmil_core::patch_store::PatchStore;
use cribmil_core::tiling::label_patches;
use cribmil_core::train::{samples_from_crops, train_cross_validation, ScanBag, TrainSlide};
use cribmil_core::PatchRecord;
use image::RgbImage;
use rayon::prelude::*;
use serde::Serialize;

use crate::artifacts::{csv_body, finish_stage, fresh_dir, load_mask, require, require_stage, write_csv, write_json, Provenance};
use crate::error::{CliError, CliResult};
use crate::stages::{load_patch_table, load_synth_manifest};
use crate::Ctx;

#[derive(Serialize)]
struct PlattFile<'a> {
    provenance: &'a Provenance,
    a: f64,
    b: f64,
    iterations: usize,
    grad_norm: f64,
}

/// Decode the stored crops of `patches` from a scan's patch store.
pub fn load_crops(store: &Path, patches: &[PatchRecord]) -> CliResult<Vec<RgbImage>> {
    require(store, "patch store written by `cribmil tile`")?;
    let s = PatchStore::open(store)?;
    patches
        .iter()
        .map(|p| s.read_image(&p.key()).map_err(CliError::from))
        .collect()
}

pub fn checkpoint_name(fold: usize) -> String {
    format!("fold_{fold:02}.milw")
}

pub fn run(ctx: &Ctx) -> CliResult<()> {
    let s = &ctx.settings;
    let manifest = load_synth_manifest(&ctx.out_dir)?;
    let synth = ctx.stage_dir("synth");
    let tile = ctx.stage_dir("tile");
    let patches = load_patch_table(&ctx.out_dir)?;
    let register = require_stage(&ctx.out_dir, "register")?;
    let dir = ctx.stage_dir("train");
    fresh_dir(&dir)?;
    let prov = ctx.provenance("train");

    let records: Vec<_> = manifest.slides_with_role(Role::Train).collect();
    if records.is_empty() {
        return Err(CliError::Config("the manifest has no training slides".into()));
    }
    let empty = Vec::new();
    let slides = records
        .par_iter()
        .map(|rec| -> CliResult<TrainSlide> {
            let mut scans = Vec::new();
            for scan in &rec.scans {
                let annotation = if scan.is_primary {
                    load_mask(&synth.join("masks").join(format!("{}.png", rec.slide_id)))?
                } else {
                    load_mask(&register.join("annotations").join(format!("{}.png", scan.scan_id)))?
                };
                let mut kept = patches.get(&scan.scan_id).unwrap_or(&empty).clone();
                if kept.is_empty() {
                    log::warn!("{}: empty bag, scan skipped", scan.scan_id);
                    continue;
                }
                label_patches(&mut kept, &annotation, &s.tile)?;
                let crops = load_crops(&tile.join("stores").join(format!("{}.pstr", scan.scan_id)), &kept)?;
                let samples = samples_from_crops(&crops, &kept, &s.train.augment, s.train.augment_views, s.seed, &scan.scan_id);
                scans.push(ScanBag {
                    scan_id: scan.scan_id.clone(),
                    is_primary: scan.is_primary,
                    patches: samples,
                });
            }
            Ok(TrainSlide {
                slide_id: rec.slide_id.clone(),
                patient_id: rec.patient_id.clone(),
                label: rec.label,
                borderline: rec.borderline,
                pixel_annotated: !s.unannotated_cohorts.contains(&rec.cohort_id),
                scans,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    log::info!("train: {} slides, {} folds", slides.len(), s.train.folds);

    let folds = make_grouped_folds(&manifest, s.train.folds, s.seed)?;
    let cv = train_cross_validation(&slides, &folds, &s.train)?;

    for ck in &cv.checkpoints {
        save_checkpoint(
            dir.join(checkpoint_name(ck.fold)),
            &Checkpoint {
                params: ck.params.clone(),
                optimizer: ck.optimizer.clone(),
            },
        )?;
    }
    let p = cv.platt.params;
    write_json(
        &dir.join("platt.json"),
        &PlattFile {
            provenance: &prov,
            a: p.a,
            b: p.b,
            iterations: cv.platt.iterations,
            grad_norm: cv.platt.grad_norm,
        },
    )?;
    let report = cv.checkpoints.iter().map(|c| {
        format!(
            "{},{},{},{}",
            c.fold,
            c.best_epoch,
            c.holdout_kappa,
            c.patch_holdout_accuracy.map_or_else(String::new, |a| a.to_string())
        )
    });
    write_csv(
        &dir.join("fold_report.csv"),
        &prov,
        &csv_body("fold,best_epoch,holdout_kappa,patch_holdout_accuracy", report),
    )?;
    let scores = cv.checkpoints.iter().flat_map(|c| {
        c.holdout_scores
            .iter()
            .map(move |(id, score, label)| format!("{id},{},{score},{}", c.fold, *label as u8))
    });
    write_csv(&dir.join("holdout_scores.csv"), &prov, &csv_body("slide_id,fold,score,label", scores))?;
    let by_patient: BTreeMap<_, _> = folds.fold_of_patient.iter().collect();
    write_csv(
        &dir.join("folds.csv"),
        &prov,
        &csv_body("patient_id,fold", by_patient.iter().map(|(p, f)| format!("{p},{f}"))),
    )?;
    finish_stage(&dir, &prov, s)
}
