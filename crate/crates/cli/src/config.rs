//! Flat `key = value` run configuration.
//!
//! Every tunable of the pipeline has a documented key; `cribmil config`
//! prints them all with their resolved values. Lines starting with `#` and
//! blank lines are ignored.

use std::fmt::Write as _;
use std::path::Path;

use cribmil_core::infer::InferConfig;
use cribmil_core::manifest::Role;
use cribmil_core::synth::{CohortConfig, ScannerProfile};
use cribmil_core::{PipelineConfig, TrainRunConfig};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSettings {
    pub n_train: usize,
    pub n_internal: usize,
    pub n_external: usize,
    pub positive_rate: f64,
    pub borderline_rate: f64,
    pub borderline_difficulty: f64,
    pub width: u32,
    pub height: u32,
    pub max_shift: i32,
    pub train_cohorts: Vec<String>,
    pub internal_cohorts: Vec<String>,
    pub external_cohorts: Vec<String>,
    pub train_rescan_fraction: f64,
    pub internal_rescan_fraction: f64,
    pub n_raters: usize,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self {
            n_train: 200,
            n_internal: 60,
            n_external: 0,
            positive_rate: 0.24,
            borderline_rate: 0.15,
            borderline_difficulty: 0.0,
            width: 1536,
            height: 1536,
            max_shift: 32,
            train_cohorts: vec!["C1".into(), "C2".into()],
            internal_cohorts: vec!["C1".into(), "C2".into()],
            external_cohorts: vec!["C3".into()],
            train_rescan_fraction: 0.5,
            internal_rescan_fraction: 1.0,
            n_raters: 9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub n_bootstrap: usize,
    pub calibration_bins: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            n_bootstrap: 1000,
            calibration_bins: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub seed: u64,
    pub synth: SynthSettings,
    pub tile: PipelineConfig,
    pub train: TrainRunConfig,
    /// Cohorts whose pixel annotations are withheld from the patch step.
    pub unannotated_cohorts: Vec<String>,
    pub infer: InferConfig,
    pub eval: EvalSettings,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            seed: 7,
            synth: SynthSettings::default(),
            tile: PipelineConfig::default(),
            train: TrainRunConfig::default(),
            unannotated_cohorts: Vec::new(),
            infer: InferConfig::default(),
            eval: EvalSettings::default(),
        }
    }
}

trait Value: Sized {
    fn parse_value(s: &str) -> Result<Self, String>;
    fn show(&self) -> String;
}

macro_rules! num_value {
    ($($t:ty),*) => {$(
        impl Value for $t {
            fn parse_value(s: &str) -> Result<Self, String> {
                s.parse().map_err(|e| format!("{e}"))
            }
            fn show(&self) -> String {
                self.to_string()
            }
        }
    )*};
}
num_value!(u32, u64, i32, usize, f64);

impl Value for bool {
    fn parse_value(s: &str) -> Result<Self, String> {
        match s {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            _ => Err(format!("expected true or false, got {s:?}")),
        }
    }
    fn show(&self) -> String {
        self.to_string()
    }
}

impl Value for Vec<String> {
    fn parse_value(s: &str) -> Result<Self, String> {
        Ok(s.split(',').map(str::trim).filter(|t| !t.is_empty()).map(String::from).collect())
    }
    fn show(&self) -> String {
        self.join(",")
    }
}

macro_rules! keys {
    ($($key:literal => $($field:ident).+ : $doc:literal;)*) => {
        /// Every configuration key with its documentation.
        pub const KEYS: &[(&str, &str)] = &[$(($key, $doc)),*];

        impl Settings {
            /// Set one key from its textual value.
            pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
                match key {
                    $($key => {
                        self.$($field).+ = Value::parse_value(value.trim())
                            .map_err(|e| format!("{key}: {e}"))?;
                    })*
                    _ => return Err(format!("unknown key {key:?}")),
                }
                Ok(())
            }

            /// Resolved `(key, value)` pairs in key order.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                let mut v = vec![$(($key, Value::show(&self.$($field).+))),*];
                v.sort();
                v
            }
        }
    };
}

keys! {
    "seed" => seed: "base seed for every random stream";
    "synth.n_train" => synth.n_train: "training slides";
    "synth.n_internal" => synth.n_internal: "internal held-out slides";
    "synth.n_external" => synth.n_external: "external slides (scanner X1)";
    "synth.positive_rate" => synth.positive_rate: "fraction of positive slides per cohort";
    "synth.borderline_rate" => synth.borderline_rate: "fraction of negative slides with a borderline lesion";
    "synth.borderline_difficulty" => synth.borderline_difficulty: "0..1, how close borderline glands come to the sieve pattern";
    "synth.width" => synth.width: "slide width in pixels";
    "synth.height" => synth.height: "slide height in pixels";
    "synth.max_shift" => synth.max_shift: "largest stage offset of a rescan, pixels";
    "synth.train_cohorts" => synth.train_cohorts: "comma-separated cohort ids of training patients";
    "synth.internal_cohorts" => synth.internal_cohorts: "cohort ids of internal patients";
    "synth.external_cohorts" => synth.external_cohorts: "cohort ids of external patients";
    "synth.train_rescan_fraction" => synth.train_rescan_fraction: "fraction of training slides rescanned on S1..S3";
    "synth.internal_rescan_fraction" => synth.internal_rescan_fraction: "fraction of internal slides rescanned on S1..S3";
    "synth.n_raters" => synth.n_raters: "simulated pathologists";
    "tile.patch_size" => tile.patch_size: "patch side in pixels";
    "tile.stride" => tile.stride: "grid stride, must be half the patch size";
    "tile.target_spacing" => tile.target_spacing: "micrometres per pixel of extracted patches";
    "tile.min_tissue_fraction" => tile.min_tissue_fraction: "patches with less tissue are dropped";
    "tile.patch_positive_fraction" => tile.patch_positive_fraction: "patches with more annotated area are positive";
    "train.folds" => train.folds: "cross-validation folds (one model each)";
    "train.patch_epochs" => train.patch_epochs: "epochs of the patch classifier step";
    "train.slide_epochs" => train.slide_epochs: "epochs of the slide MIL step";
    "train.patch_batch" => train.patch_batch: "patches per optimizer step";
    "train.slide_batch" => train.slide_batch: "bags per optimizer step (must be 1)";
    "train.max_bag_size" => train.max_bag_size: "patches sampled per bag";
    "train.augment_views" => train.augment_views: "augmented descriptor views per patch";
    "train.patch_weight_decay" => train.patch_weight_decay: "AdamW weight decay of the patch step";
    "train.slide_lr" => train.slide_lr: "RAdam learning rate of the slide step";
    "train.slide_weight_decay" => train.slide_weight_decay: "RAdam L2 penalty of the slide step";
    "train.operating_point" => train.operating_point: "threshold for checkpoint-selection kappa";
    "train.unannotated_cohorts" => unannotated_cohorts: "cohorts whose pixel labels are withheld from the patch step";
    "augment.random_crop" => train.augment.random_crop: "random crop and rescale";
    "augment.flips" => train.augment.flips: "random flips";
    "augment.rot90" => train.augment.rot90: "random quarter turns";
    "augment.color_jitter" => train.augment.color_jitter: "gamma and channel gain jitter";
    "augment.noise" => train.augment.noise: "Gaussian and multiplicative noise";
    "augment.jpeg" => train.augment.jpeg: "JPEG round trip";
    "infer.n_views" => infer.n_views: "test-time views per model (view 0 is the identity)";
    "infer.calibrate" => infer.calibrate: "apply Platt scaling to the ensemble mean";
    "infer.threshold_raw" => infer.threshold_raw: "threshold the raw instead of the calibrated score";
    "infer.operating_point" => infer.operating_point: "label threshold";
    "eval.n_bootstrap" => eval.n_bootstrap: "bootstrap resamples per interval";
    "eval.calibration_bins" => eval.calibration_bins: "equal-width calibration bins";
}

impl Settings {
    /// Defaults overlaid with a config file.
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let mut s = Settings::default();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            s.apply_text(&text, p)?;
        }
        Ok(s)
    }

    pub fn apply_text(&mut self, text: &str, path: &Path) -> CliResult<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("{}:{}: expected key = value", path.display(), n + 1)))?;
            self.set(k.trim(), v)
                .map_err(|e| CliError::Config(format!("{}:{}: {e}", path.display(), n + 1)))?;
        }
        Ok(())
    }

    /// Keep derived fields in step with the single seed.
    pub fn sync(&mut self) {
        self.train.seed = self.seed;
    }

    pub fn validate(&self) -> CliResult<()> {
        let cfg = |e: cribmil_core::Error| CliError::Config(e.to_string());
        self.tile.validate().map_err(cfg)?;
        self.train.validate().map_err(cfg)?;
        for c in self.cohorts() {
            c.validate().map_err(cfg)?;
        }
        if self.synth.n_train + self.synth.n_internal + self.synth.n_external == 0 {
            return Err(CliError::Config("the corpus has no slides".into()));
        }
        if !(0.0..=1.0).contains(&self.synth.train_rescan_fraction)
            || !(0.0..=1.0).contains(&self.synth.internal_rescan_fraction)
        {
            return Err(CliError::Config("rescan fractions must lie in [0, 1]".into()));
        }
        if self.infer.n_views == 0 {
            return Err(CliError::Config("infer.n_views must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.infer.operating_point) {
            return Err(CliError::Config("infer.operating_point must lie in [0, 1]".into()));
        }
        if self.eval.n_bootstrap == 0 || self.eval.calibration_bins == 0 {
            return Err(CliError::Config("eval.n_bootstrap and eval.calibration_bins must be positive".into()));
        }
        Ok(())
    }

    /// Cohort generators for every role with a nonzero slide count.
    pub fn cohorts(&self) -> Vec<CohortConfig> {
        let s = &self.synth;
        let scanners = ScannerProfile::builtin();
        let rescanners: Vec<ScannerProfile> = scanners[1..4].to_vec();
        let base = CohortConfig {
            positive_rate: s.positive_rate,
            borderline_rate: s.borderline_rate,
            borderline_difficulty: s.borderline_difficulty,
            width: s.width,
            height: s.height,
            max_shift: s.max_shift,
            ..Default::default()
        };
        let mut out = Vec::new();
        if s.n_train > 0 {
            out.push(CohortConfig {
                role: Role::Train,
                id_prefix: "T".into(),
                n_slides: s.n_train,
                cohort_ids: s.train_cohorts.clone(),
                rescan_scanners: rescanners.clone(),
                rescan_fraction: s.train_rescan_fraction,
                ..base.clone()
            });
        }
        if s.n_internal > 0 {
            out.push(CohortConfig {
                role: Role::Internal,
                id_prefix: "I".into(),
                n_slides: s.n_internal,
                cohort_ids: s.internal_cohorts.clone(),
                rescan_scanners: rescanners,
                rescan_fraction: s.internal_rescan_fraction,
                ..base.clone()
            });
        }
        if s.n_external > 0 {
            out.push(CohortConfig {
                role: Role::External,
                id_prefix: "X".into(),
                n_slides: s.n_external,
                cohort_ids: s.external_cohorts.clone(),
                primary_scanner: scanners[4].clone(),
                ..base
            });
        }
        out
    }

    /// `key = value` lines of the resolved configuration.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Resolved configuration with one comment line per key.
    pub fn render_documented(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let doc = KEYS.iter().find(|(key, _)| *key == k).map_or("", |(_, d)| d);
            let _ = writeln!(out, "# {doc}\n{k} = {v}\n");
        }
        out
    }

    /// SHA-256 of the sorted resolved configuration.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.render().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
