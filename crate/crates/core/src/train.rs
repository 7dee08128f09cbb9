//! Two-step training: a supervised patch classifier per fold, then a
//! slide-level attention MIL model initialized from it, with kappa-based
//! checkpoint selection and pooled Platt scaling.

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_patch, AugmentConfig};
use crate::error::{Error, Result};
use crate::eval::metrics::cohens_kappa;
use crate::manifest::FoldAssignment;
use crate::nn::descriptor::{patch_descriptor, Descriptor};
use crate::nn::loss::pos_weight;
use crate::nn::model::{dropout_mask, patch_batch_loss_grad, patch_prob, slide_loss_grad, slide_prob, ModelParams};
use crate::nn::optim::{OptimizerKind, OptimizerState};
use crate::nn::schedule::onecycle_lr;
use crate::platt::{fit_platt, PlattFit};
use crate::seeds::{derive_seed, rng_for};
use crate::tiling::{crop_patch, split_disjoint_sets, PatchRecord, PipelineConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRunConfig {
    pub patch_epochs: usize,
    pub slide_epochs: usize,
    pub patch_batch: usize,
    pub slide_batch: usize,
    pub max_bag_size: usize,
    pub folds: usize,
    pub seed: u64,
    pub augment: AugmentConfig,
    /// Augmented descriptor views stored per patch besides the clean one.
    pub augment_views: usize,
    pub patch_weight_decay: f64,
    pub slide_lr: f64,
    pub slide_weight_decay: f64,
    pub operating_point: f64,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        Self {
            patch_epochs: 8,
            slide_epochs: 32,
            patch_batch: 64,
            slide_batch: 1,
            max_bag_size: 2200,
            folds: 10,
            seed: 7,
            augment: AugmentConfig::default(),
            augment_views: 2,
            patch_weight_decay: 1e-2,
            slide_lr: 3e-5,
            slide_weight_decay: 1e-5,
            operating_point: 0.5,
        }
    }
}

impl TrainRunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_batch == 0 || self.max_bag_size == 0 {
            return Err(Error::invalid("patch_batch and max_bag_size must be positive"));
        }
        if self.slide_batch != 1 {
            return Err(Error::invalid("slide_batch must be 1 (one bag per step)"));
        }
        if self.folds < 2 {
            return Err(Error::invalid("folds must be at least 2"));
        }
        for (name, v) in [
            ("patch_weight_decay", self.patch_weight_decay),
            ("slide_lr", self.slide_lr),
            ("slide_weight_decay", self.slide_weight_decay),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!("{name} must be a nonnegative number")));
            }
        }
        if !(0.0..=1.0).contains(&self.operating_point) {
            return Err(Error::invalid("operating_point must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// One tile with its label, disjoint-set membership and descriptor views
/// (view 0 is the unaugmented patch).
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSample {
    pub key: String,
    pub label: bool,
    /// 0 or 1 for members of a disjoint set, `None` otherwise.
    pub set: Option<u8>,
    pub views: Vec<Descriptor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanBag {
    pub scan_id: String,
    pub is_primary: bool,
    pub patches: Vec<PatchSample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSlide {
    pub slide_id: String,
    pub patient_id: String,
    pub label: bool,
    pub borderline: bool,
    /// Whether pixel annotations may be used for the patch step.
    pub pixel_annotated: bool,
    pub scans: Vec<ScanBag>,
}

impl TrainSlide {
    pub fn primary(&self) -> Option<&ScanBag> {
        self.scans.iter().find(|s| s.is_primary)
    }
}

/// Descriptor views for the kept patches of one scan.
pub fn build_patch_samples(
    image: &RgbImage,
    patches: &[PatchRecord],
    cfg: &PipelineConfig,
    augment: &AugmentConfig,
    n_augment: usize,
    seed: u64,
    scan_id: &str,
) -> Vec<PatchSample> {
    let crops: Vec<RgbImage> = patches.par_iter().map(|p| crop_patch(image, p, cfg)).collect();
    samples_from_crops(&crops, patches, augment, n_augment, seed, scan_id)
}

/// Same as [`build_patch_samples`] for patches already cut out of the scan
/// (`crops[k]` belongs to `patches[k]`).
pub fn samples_from_crops(
    crops: &[RgbImage],
    patches: &[PatchRecord],
    augment: &AugmentConfig,
    n_augment: usize,
    seed: u64,
    scan_id: &str,
) -> Vec<PatchSample> {
    assert_eq!(crops.len(), patches.len(), "one crop per patch");
    let sets = split_disjoint_sets(patches);
    let mut set_of = vec![None; patches.len()];
    for &k in &sets.a {
        set_of[k] = Some(0);
    }
    for &k in &sets.b {
        set_of[k] = Some(1);
    }
    patches
        .par_iter()
        .zip(crops.par_iter())
        .enumerate()
        .map(|(k, (p, crop))| {
            let mut views = vec![patch_descriptor(crop)];
            for v in 0..n_augment {
                let mut rng = rng_for(seed, labels!["augment", scan_id, &p.key(), v]);
                views.push(patch_descriptor(&augment_patch(crop, augment, &mut rng)));
            }
            PatchSample {
                key: p.key(),
                label: p.label,
                set: set_of[k],
                views,
            }
        })
        .collect()
}

pub struct FoldData<'a> {
    pub fold: usize,
    pub train: Vec<&'a TrainSlide>,
    pub holdout: Vec<&'a TrainSlide>,
}

/// Fails if any patient contributes slides to both sides.
pub fn check_leakage(train: &[&TrainSlide], holdout: &[&TrainSlide]) -> Result<()> {
    let held: std::collections::BTreeSet<&str> = holdout.iter().map(|s| s.patient_id.as_str()).collect();
    if let Some(s) = train.iter().find(|s| held.contains(s.patient_id.as_str())) {
        return Err(Error::invariant(format!(
            "patient {} appears in both training and holdout",
            s.patient_id
        )));
    }
    Ok(())
}

pub fn fold_split<'a>(slides: &'a [TrainSlide], folds: &FoldAssignment, fold: usize) -> Result<FoldData<'a>> {
    let mut train = Vec::new();
    let mut holdout = Vec::new();
    for s in slides {
        match folds.fold_of(&s.patient_id) {
            Some(f) if f == fold => holdout.push(s),
            Some(_) => train.push(s),
            None => return Err(Error::invalid(format!("patient {} has no fold", s.patient_id))),
        }
    }
    check_leakage(&train, &holdout)?;
    Ok(FoldData { fold, train, holdout })
}

/// Initial weights of a fold's model.
pub fn init_params(seed: u64, fold: usize) -> ModelParams {
    ModelParams::init(&mut rng_for(seed, labels!["init", fold]))
}

/// Step 1: supervised patch classifier with AdamW and the one-cycle schedule.
pub fn train_patch_classifier(data: &FoldData, cfg: &TrainRunConfig) -> Result<ModelParams> {
    let mut params = init_params(cfg.seed, data.fold);
    let samples: Vec<&PatchSample> = data
        .train
        .iter()
        .filter(|s| s.pixel_annotated)
        .flat_map(|s| s.scans.iter().flat_map(|b| b.patches.iter()))
        .collect();
    if cfg.patch_epochs == 0 {
        return Ok(params);
    }
    let n_pos = samples.iter().filter(|p| p.label).count();
    let n_neg = samples.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid(format!(
            "fold {}: patch labels are single-class ({n_pos} positive, {n_neg} negative)",
            data.fold
        )));
    }
    let pw = pos_weight(n_pos, n_neg);
    let per_epoch = samples.len().div_ceil(cfg.patch_batch);
    let total = per_epoch * cfg.patch_epochs;
    let mut opt = OptimizerState::new(OptimizerKind::AdamW, params.data.len(), cfg.patch_weight_decay);
    let mut step = 0;
    for epoch in 0..cfg.patch_epochs {
        let mut rng = rng_for(cfg.seed, labels!["patch-epoch", data.fold, epoch]);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.patch_batch) {
            let xs: Vec<&Descriptor> = batch
                .iter()
                .map(|&i| {
                    let v = &samples[i].views;
                    &v[rng.random_range(0..v.len())]
                })
                .collect();
            let ys: Vec<bool> = batch.iter().map(|&i| samples[i].label).collect();
            let (_, g) = patch_batch_loss_grad(&params, &xs, &ys, pw)?;
            opt.step(&mut params.data, &g.data, onecycle_lr(step, total, per_epoch))?;
            step += 1;
        }
        if !params.is_finite() {
            return Err(Error::NonFiniteLoss);
        }
    }
    Ok(params)
}

/// Patch-level accuracy at 0.5 on clean views.
pub fn patch_accuracy(params: &ModelParams, slides: &[&TrainSlide]) -> Option<f64> {
    let mut n = 0usize;
    let mut correct = 0usize;
    for s in slides {
        for b in &s.scans {
            for p in &b.patches {
                n += 1;
                correct += ((patch_prob(params, &p.views[0]) >= 0.5) == p.label) as usize;
            }
        }
    }
    (n > 0).then(|| correct as f64 / n as f64)
}

/// Uniform sample of at most `max` indices without replacement, in their
/// original order.
pub fn sample_bag(indices: &[usize], max: usize, rng: &mut impl Rng) -> Vec<usize> {
    if indices.len() <= max {
        return indices.to_vec();
    }
    let mut pick = rand::seq::index::sample(rng, indices.len(), max).into_vec();
    pick.sort_unstable();
    pick.into_iter().map(|i| indices[i]).collect()
}

/// 1-based epoch of the first maximum.
pub fn select_best_epoch(kappas: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &k) in kappas.iter().enumerate() {
        if best.is_none_or(|(_, b)| k > b) {
            best = Some((i, k));
        }
    }
    best.map(|(i, _)| i + 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldCheckpoint {
    pub fold: usize,
    /// 1-based; 0 when no slide epoch ran.
    pub best_epoch: usize,
    pub holdout_kappa: f64,
    pub epoch_kappas: Vec<f64>,
    /// Weights at the selected epoch, rounded to `f32`.
    pub params: ModelParams,
    pub optimizer: Option<OptimizerState>,
    /// `(slide_id, score, label)` on the holdout at the selected epoch.
    pub holdout_scores: Vec<(String, f64, bool)>,
    pub patch_holdout_accuracy: Option<f64>,
}

/// Holdout slide scores on primary scans with every patch, no dropout.
pub fn holdout_scores(params: &ModelParams, holdout: &[&TrainSlide]) -> Result<Vec<(String, f64, bool)>> {
    let mut out = Vec::new();
    for s in holdout {
        let Some(scan) = s.primary() else { continue };
        if scan.patches.is_empty() {
            log::warn!("holdout slide {} has no patches; skipped", s.slide_id);
            continue;
        }
        let bag: Vec<Descriptor> = scan.patches.iter().map(|p| p.views[0]).collect();
        out.push((s.slide_id.clone(), slide_prob(params, &bag, None)?, s.label));
    }
    Ok(out)
}

/// Cohen's kappa of thresholded scores against labels.
pub fn holdout_kappa(scores: &[(String, f64, bool)], operating_point: f64) -> Result<f64> {
    let calls: Vec<bool> = scores.iter().map(|s| s.1 >= operating_point).collect();
    let labels: Vec<bool> = scores.iter().map(|s| s.2).collect();
    cohens_kappa(&calls, &labels)
}

/// Step 2: slide-level MIL from the fold's patch weights, RAdam at a constant
/// rate, keeping the epoch with the highest holdout kappa.
pub fn train_slide_mil(data: &FoldData, init: &ModelParams, cfg: &TrainRunConfig) -> Result<FoldCheckpoint> {
    let fold = data.fold;
    let mut params = init.clone();
    let n_pos = data.train.iter().filter(|s| s.label).count();
    let pw = pos_weight(n_pos, data.train.len() - n_pos);
    let mut opt = OptimizerState::new(OptimizerKind::RAdam, params.data.len(), cfg.slide_weight_decay);
    let mut snapshot = init.clone();
    snapshot.quantize_f32();
    let mut best_scores = holdout_scores(&snapshot, &data.holdout)?;
    let mut best = FoldCheckpoint {
        fold,
        best_epoch: 0,
        holdout_kappa: if best_scores.is_empty() {
            0.0
        } else {
            holdout_kappa(&best_scores, cfg.operating_point)?
        },
        epoch_kappas: Vec::new(),
        params: snapshot,
        optimizer: None,
        holdout_scores: Vec::new(),
        patch_holdout_accuracy: None,
    };
    for epoch in 0..cfg.slide_epochs {
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        order.shuffle(&mut rng_for(cfg.seed, labels!["slide-order", fold, epoch]));
        for &i in &order {
            let slide = data.train[i];
            let mut rng = rng_for(cfg.seed, labels!["slide-step", fold, epoch, &slide.slide_id]);
            if slide.scans.is_empty() {
                continue;
            }
            let scan = &slide.scans[rng.random_range(0..slide.scans.len())];
            let phase = derive_seed(cfg.seed, labels!["set-phase", fold, &slide.slide_id]) as usize;
            let want = ((epoch + phase) % 2) as u8;
            let mut members: Vec<usize> = (0..scan.patches.len())
                .filter(|&k| scan.patches[k].set == Some(want))
                .collect();
            if members.is_empty() {
                members = (0..scan.patches.len())
                    .filter(|&k| scan.patches[k].set == Some(1 - want))
                    .collect();
            }
            if members.is_empty() {
                log::warn!("slide {} scan {}: empty bag; skipped", slide.slide_id, scan.scan_id);
                continue;
            }
            let chosen = sample_bag(&members, cfg.max_bag_size, &mut rng);
            let bag: Vec<Descriptor> = chosen
                .iter()
                .map(|&k| {
                    let v = &scan.patches[k].views;
                    v[rng.random_range(0..v.len())]
                })
                .collect();
            let mask = dropout_mask(&mut rng);
            let (_, _, g) = slide_loss_grad(&params, &bag, slide.label, pw, Some(&mask))?;
            opt.step(&mut params.data, &g.data, cfg.slide_lr)?;
        }
        if !params.is_finite() {
            return Err(Error::NonFiniteLoss);
        }
        let mut snap = params.clone();
        snap.quantize_f32();
        let scores = holdout_scores(&snap, &data.holdout)?;
        let kappa = if scores.is_empty() {
            0.0
        } else {
            holdout_kappa(&scores, cfg.operating_point)?
        };
        best.epoch_kappas.push(kappa);
        if best.best_epoch == 0 || kappa > best.holdout_kappa {
            best.best_epoch = epoch + 1;
            best.holdout_kappa = kappa;
            best.params = snap;
            best.optimizer = Some(opt.clone());
            best_scores = scores;
        }
    }
    best.holdout_scores = best_scores;
    Ok(best)
}

#[derive(Debug, Clone)]
pub struct CvResult {
    pub checkpoints: Vec<FoldCheckpoint>,
    pub platt: PlattFit,
}

/// Full cross-validation: both steps for every fold (in parallel), then
/// Platt scaling on the pooled holdout scores.
pub fn train_cross_validation(slides: &[TrainSlide], folds: &FoldAssignment, cfg: &TrainRunConfig) -> Result<CvResult> {
    cfg.validate()?;
    if folds.k != cfg.folds {
        return Err(Error::invalid(format!(
            "fold assignment has {} folds, config asks for {}",
            folds.k, cfg.folds
        )));
    }
    let checkpoints = (0..cfg.folds)
        .into_par_iter()
        .map(|fold| {
            let data = fold_split(slides, folds, fold)?;
            let patch = train_patch_classifier(&data, cfg)?;
            let acc = patch_accuracy(&patch, &data.holdout);
            let mut ck = train_slide_mil(&data, &patch, cfg)?;
            ck.patch_holdout_accuracy = acc;
            log::info!(
                "fold {fold}: best epoch {} holdout kappa {:.4}",
                ck.best_epoch,
                ck.holdout_kappa
            );
            Ok(ck)
        })
        .collect::<Result<Vec<_>>>()?;
    let pooled: Vec<&(String, f64, bool)> = checkpoints.iter().flat_map(|c| c.holdout_scores.iter()).collect();
    let scores: Vec<f64> = pooled.iter().map(|s| s.1).collect();
    let labels: Vec<bool> = pooled.iter().map(|s| s.2).collect();
    let platt = fit_platt(&scores, &labels)?;
    Ok(CvResult { checkpoints, platt })
}
