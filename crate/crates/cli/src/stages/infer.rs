//! Ensemble inference with test-time views on every non-training scan.

use std::path::{Path, PathBuf};

use cribmil_core::augment::tta_transforms;
use cribmil_core::infer::{ensemble_predict, view_descriptors};
use cribmil_core::manifest::Role;
use cribmil_core::nn::checkpoint::load_checkpoint;
use cribmil_core::{CalibrationParams, Error, ModelParams};
use rayon::prelude::*;

use crate::artifacts::{csv_body, finish_stage, fresh_dir, require, require_stage, write_csv};
use crate::error::{CliError, CliResult};
use crate::stages::train::load_crops;
use crate::stages::{load_patch_table, load_synth_manifest};
use crate::Ctx;

pub const PREDICTION_COLUMNS: &[&str] = &["slide_id", "scan_id", "raw_score", "calibrated_score", "label"];

fn read_platt(path: &Path) -> CliResult<CalibrationParams> {
    require(path, "Platt parameters written by `cribmil train`")?;
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let field = |k: &str| {
        v.get(k).and_then(serde_json::Value::as_f64).ok_or_else(|| {
            CliError::Core(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                msg: format!("missing numeric field {k:?}"),
            })
        })
    };
    Ok(CalibrationParams {
        a: field("a")?,
        b: field("b")?,
    })
}

/// Every `fold_*.milw` in the training directory, in name order.
fn default_checkpoints(train: &Path) -> CliResult<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(train)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "milw"))
        .collect();
    v.sort();
    if v.is_empty() {
        return Err(CliError::missing(train.join("fold_00.milw"), "no checkpoints in the training directory"));
    }
    Ok(v)
}

pub fn run(ctx: &Ctx, checkpoints: &[PathBuf]) -> CliResult<()> {
    let s = &ctx.settings;
    let manifest = load_synth_manifest(&ctx.out_dir)?;
    let patches = load_patch_table(&ctx.out_dir)?;
    let tile = ctx.stage_dir("tile");
    let paths = if checkpoints.is_empty() {
        default_checkpoints(&require_stage(&ctx.out_dir, "train")?)?
    } else {
        for p in checkpoints {
            require(p, "checkpoint given with --checkpoint")?;
        }
        checkpoints.to_vec()
    };
    let platt = if s.infer.calibrate {
        read_platt(&require_stage(&ctx.out_dir, "train")?.join("platt.json"))?
    } else {
        CalibrationParams::IDENTITY
    };
    let models: Vec<ModelParams> = paths
        .iter()
        .map(|p| load_checkpoint(p).map(|c| c.params))
        .collect::<cribmil_core::Result<_>>()?;
    let dir = ctx.stage_dir("infer");
    fresh_dir(&dir)?;
    let prov = ctx.provenance("infer");

    let scans: Vec<_> = manifest
        .slides
        .iter()
        .filter(|r| r.role != Role::Train)
        .flat_map(|r| r.scans.iter().map(move |c| (r, c)))
        .collect();
    if scans.is_empty() {
        return Err(CliError::Config("the manifest has no internal or external slides".into()));
    }
    let empty = Vec::new();
    let preds = scans
        .par_iter()
        .map(|(slide, scan)| {
            let kept = patches.get(&scan.scan_id).unwrap_or(&empty);
            let crops = load_crops(&tile.join("stores").join(format!("{}.pstr", scan.scan_id)), kept)?;
            let views = tta_transforms(s.infer.n_views, s.seed, &slide.slide_id);
            let bags = view_descriptors(&crops, &views);
            Ok(ensemble_predict(&slide.slide_id, &scan.scan_id, &bags, &models, &platt, &s.infer)?)
        })
        .collect::<CliResult<Vec<_>>>()?;
    log::info!("infer: {} scans, {} models, {} views", preds.len(), models.len(), s.infer.n_views);

    let rows = preds.iter().map(|p| {
        format!(
            "{},{},{},{},{}",
            p.slide_id, p.scan_id, p.raw_score, p.calibrated_score, p.label as u8
        )
    });
    write_csv(&dir.join("predictions.csv"), &prov, &csv_body(&PREDICTION_COLUMNS.join(","), rows))?;
    let views = preds.iter().flat_map(|p| {
        p.scores.iter().enumerate().flat_map(move |(m, row)| {
            row.iter()
                .enumerate()
                .map(move |(v, score)| format!("{},{m},{v},{score}", p.scan_id))
        })
    });
    write_csv(&dir.join("view_scores.csv"), &prov, &csv_body("scan_id,model,view,score", views))?;
    let used = paths
        .iter()
        .map(|p| p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned()));
    write_csv(&dir.join("models.csv"), &prov, &csv_body("checkpoint", used))?;
    finish_stage(&dir, &prov, s)
}
