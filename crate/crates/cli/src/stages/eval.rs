//! Slide-level evaluation on primary scans, per role: headline metrics with
//! bootstrap intervals, curves, the borderline analysis, the reader panel and
//! agreement across scanners.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use cribmil_core::eval::calibration::max_calibration_gap;
use cribmil_core::eval::report::{calibration_csv, confusion_csv, matrix_csv, roc_csv};
use cribmil_core::eval::{
    borderline_analysis, calibration_curve, confusion, cross_scanner_agreement, headline_metrics, mean_pairwise_kappa,
    pairwise_kappa_matrix, roc_curve, BorderlineAnalysis, RaterPanel, SlideOutcome,
};
use cribmil_core::manifest::{DatasetManifest, Role};
use cribmil_core::seeds::derive_seed;
use cribmil_core::{labels, MetricEstimate};
use serde::Serialize;

use crate::artifacts::{csv_body, finish_stage, fresh_dir, parse_bool01, require_stage, write_csv, write_json, Provenance, Table};
use crate::error::CliResult;
use crate::stages::infer::PREDICTION_COLUMNS;
use crate::stages::load_synth_manifest;
use crate::Ctx;

#[derive(Debug, Clone, Copy)]
struct Pred {
    calibrated: f64,
    label: bool,
}

#[derive(Serialize)]
struct PanelReport {
    raters: Vec<String>,
    mean_pairwise_kappa: BTreeMap<String, MetricEstimate>,
}

#[derive(Serialize)]
struct ScannerReport {
    scanners: Vec<String>,
    n_slides: usize,
    matrix: Vec<Vec<f64>>,
    mean_per_scanner: Vec<f64>,
    min_pairwise: f64,
}

#[derive(Serialize)]
struct RoleReport {
    n_slides: usize,
    n_positive: usize,
    n_borderline: usize,
    metrics: BTreeMap<String, MetricEstimate>,
    calibration_max_gap: f64,
    borderline: Option<BorderlineAnalysis>,
    rater_panel: Option<PanelReport>,
    cross_scanner: Option<ScannerReport>,
    cross_scanner_rescans: Option<ScannerReport>,
    notes: Vec<String>,
}

#[derive(Serialize)]
struct Report {
    provenance: Provenance,
    scans: &'static str,
    roles: BTreeMap<String, RoleReport>,
}

fn read_predictions(path: &Path) -> CliResult<HashMap<String, Pred>> {
    let t = Table::read(path, PREDICTION_COLUMNS)?;
    let mut out = HashMap::new();
    for row in &t.rows {
        let label: u8 = t.get(row, 4)?;
        out.insert(
            row.1[1].clone(),
            Pred {
                calibrated: t.get(row, 3)?,
                label: label == 1,
            },
        );
    }
    Ok(out)
}

/// Rater ids and per-slide calls.
fn read_raters(path: &Path) -> CliResult<(Vec<String>, HashMap<String, Vec<bool>>)> {
    let t = Table::read(path, &[])?;
    let ids = t.columns[1..].to_vec();
    let mut calls = HashMap::new();
    for row in &t.rows {
        let v = row.1[1..]
            .iter()
            .map(|c| parse_bool01(c))
            .collect::<Option<Vec<bool>>>()
            .ok_or_else(|| cribmil_core::Error::Parse {
                path: path.to_path_buf(),
                line: row.0,
                msg: "rater calls must be 0 or 1".into(),
            })?;
        calls.insert(row.1[0].clone(), v);
    }
    Ok((ids, calls))
}

fn scanner_report(preds: &BTreeMap<String, Vec<bool>>) -> Option<Result<ScannerReport, String>> {
    if preds.len() < 2 || preds.values().next().is_none_or(Vec::is_empty) {
        return None;
    }
    Some(cross_scanner_agreement(preds).map_err(|e| e.to_string()).map(|a| ScannerReport {
        min_pairwise: a.min_pairwise(),
        n_slides: preds.values().next().map_or(0, Vec::len),
        scanners: a.scanners,
        matrix: a.matrix,
        mean_per_scanner: a.mean_per_scanner,
    }))
}

fn optional<T>(name: &str, r: Option<Result<T, String>>, notes: &mut Vec<String>) -> Option<T> {
    match r? {
        Ok(v) => Some(v),
        Err(e) => {
            log::warn!("{name}: {e}");
            notes.push(format!("{name}: {e}"));
            None
        }
    }
}

fn evaluate_role(
    ctx: &Ctx,
    role: Role,
    manifest: &DatasetManifest,
    preds: &HashMap<String, Pred>,
    raters: &(Vec<String>, HashMap<String, Vec<bool>>),
    dir: &Path,
    prov: &Provenance,
) -> CliResult<Option<RoleReport>> {
    let s = &ctx.settings;
    let slides: Vec<_> = manifest
        .slides_with_role(role)
        .filter(|r| preds.contains_key(&r.primary_scan().scan_id))
        .collect();
    if slides.is_empty() {
        return Ok(None);
    }
    let seed = derive_seed(s.seed, labels!["eval", role.as_str()]);
    let outcomes: Vec<SlideOutcome> = slides
        .iter()
        .map(|r| {
            let p = preds[&r.primary_scan().scan_id];
            SlideOutcome {
                slide_id: r.slide_id.clone(),
                label: r.label,
                borderline: r.borderline,
                score: p.calibrated,
                call: p.label,
            }
        })
        .collect();
    let scores: Vec<f64> = outcomes.iter().map(|o| o.score).collect();
    let labels: Vec<bool> = outcomes.iter().map(|o| o.label).collect();
    let calls: Vec<bool> = outcomes.iter().map(|o| o.call).collect();
    let flags: Vec<bool> = outcomes.iter().map(|o| o.borderline).collect();

    let metrics = headline_metrics(&outcomes, s.eval.n_bootstrap, seed)?;
    let rdir = dir.join(role.as_str());
    std::fs::create_dir_all(&rdir)?;
    write_csv(
        &rdir.join("outcomes.csv"),
        prov,
        &csv_body(
            "slide_id,label,borderline,score,call",
            outcomes.iter().map(|o| {
                format!("{},{},{},{},{}", o.slide_id, o.label as u8, o.borderline as u8, o.score, o.call as u8)
            }),
        ),
    )?;
    write_csv(&rdir.join("roc.csv"), prov, &roc_csv(&roc_curve(&scores, &labels)?))?;
    let bins = calibration_curve(&scores, &labels, s.eval.calibration_bins)?;
    write_csv(&rdir.join("calibration.csv"), prov, &calibration_csv(&bins))?;
    write_csv(&rdir.join("confusion.csv"), prov, &confusion_csv(&confusion(&calls, &labels)?))?;

    let mut notes = Vec::new();
    let borderline = optional(
        "borderline",
        Some(borderline_analysis(&calls, &labels, &flags).map_err(|e| e.to_string())),
        &mut notes,
    );

    let (rater_ids, rater_calls) = raters;
    let panel = if rater_ids.is_empty() || slides.iter().any(|r| !rater_calls.contains_key(&r.slide_id)) {
        None
    } else {
        let mut ids = vec!["model".to_string()];
        ids.extend(rater_ids.iter().cloned());
        let mut panel_calls = vec![calls.clone()];
        for k in 0..rater_ids.len() {
            panel_calls.push(slides.iter().map(|r| rater_calls[&r.slide_id][k]).collect());
        }
        let panel = RaterPanel {
            comparator: ids.iter().map(|id| id != "model").collect(),
            rater_ids: ids,
            calls: panel_calls,
            reference: None,
        };
        let built = (|| -> cribmil_core::Result<(Vec<Vec<f64>>, PanelReport)> {
            let m = pairwise_kappa_matrix(&panel)?;
            let mut means = BTreeMap::new();
            for id in &panel.rater_ids {
                means.insert(id.clone(), mean_pairwise_kappa(&panel, id, s.eval.n_bootstrap, seed)?);
            }
            Ok((
                m,
                PanelReport {
                    raters: panel.rater_ids.clone(),
                    mean_pairwise_kappa: means,
                },
            ))
        })();
        Some(built.map_err(|e| e.to_string()))
    };
    let rater_panel = match optional("rater_panel", panel, &mut notes) {
        Some((m, report)) => {
            write_csv(&rdir.join("rater_kappa.csv"), prov, &matrix_csv(&report.raters, &m))?;
            Some(report)
        }
        None => None,
    };

    // Model calls per scanner on the slides scanned by every scanner of the role.
    let all_slides: Vec<_> = manifest.slides_with_role(role).collect();
    let scanners: BTreeSet<&str> = all_slides
        .iter()
        .flat_map(|r| r.scans.iter().map(|c| c.scanner_id.as_str()))
        .collect();
    let primary_scanners: BTreeSet<&str> = all_slides.iter().map(|r| r.primary_scan().scanner_id.as_str()).collect();
    let shared: Vec<_> = all_slides
        .iter()
        .filter(|r| {
            scanners.iter().all(|sc| {
                r.scans
                    .iter()
                    .any(|c| c.scanner_id == *sc && preds.contains_key(&c.scan_id))
            })
        })
        .collect();
    let per_scanner = |only_rescans: bool| -> BTreeMap<String, Vec<bool>> {
        scanners
            .iter()
            .filter(|sc| !only_rescans || !primary_scanners.contains(*sc))
            .map(|sc| {
                let v = shared
                    .iter()
                    .map(|r| {
                        let c = r.scans.iter().find(|c| c.scanner_id == *sc).expect("shared slide has every scanner");
                        preds[&c.scan_id].label
                    })
                    .collect();
                (sc.to_string(), v)
            })
            .collect()
    };
    let cross_scanner = optional("cross_scanner", scanner_report(&per_scanner(false)), &mut notes);
    if let Some(c) = &cross_scanner {
        write_csv(&rdir.join("scanner_kappa.csv"), prov, &matrix_csv(&c.scanners, &c.matrix))?;
    }
    let cross_scanner_rescans = optional("cross_scanner_rescans", scanner_report(&per_scanner(true)), &mut notes);

    Ok(Some(RoleReport {
        n_slides: outcomes.len(),
        n_positive: labels.iter().filter(|&&l| l).count(),
        n_borderline: flags.iter().filter(|&&b| b).count(),
        metrics,
        calibration_max_gap: max_calibration_gap(&bins),
        borderline,
        rater_panel,
        cross_scanner,
        cross_scanner_rescans,
        notes,
    }))
}

pub fn run(ctx: &Ctx) -> CliResult<()> {
    let manifest = load_synth_manifest(&ctx.out_dir)?;
    let raters = read_raters(&ctx.stage_dir("synth").join("raters.csv"))?;
    let infer = require_stage(&ctx.out_dir, "infer")?;
    let preds = read_predictions(&infer.join("predictions.csv"))?;
    let dir = ctx.stage_dir("eval");
    fresh_dir(&dir)?;
    let prov = ctx.provenance("eval");

    let mut roles = BTreeMap::new();
    for role in [Role::Internal, Role::External] {
        if let Some(r) = evaluate_role(ctx, role, &manifest, &preds, &raters, &dir, &prov)? {
            log::info!(
                "eval {role}: AUC {:.4} kappa {:.4} on {} slides",
                r.metrics["auc"].value,
                r.metrics["kappa"].value,
                r.n_slides
            );
            roles.insert(role.as_str().to_string(), r);
        }
    }
    if roles.is_empty() {
        return Err(crate::error::CliError::missing(
            infer.join("predictions.csv"),
            "no predictions for any internal or external primary scan",
        ));
    }
    write_json(
        &dir.join("report.json"),
        &Report {
            provenance: prov.clone(),
            scans: "primary",
            roles,
        },
    )?;
    finish_stage(&dir, &prov, &ctx.settings)
}
