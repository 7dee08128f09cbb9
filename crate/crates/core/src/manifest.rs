//! Dataset manifests, patient-grouped folds and primary-scan selection.
//!
//! A manifest is a CSV with one row per scan:
//!
//! ```text
//! slide_id,patient_id,cohort_id,role,label,borderline,scan_id,scanner_id,is_primary,pixel_spacing,image_path
//! ```
//!
//! Rows belonging to one slide must be contiguous. Lines starting with `#`
//! before the header are treated as comments (provenance headers).

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seeds::rng_for;

pub const MANIFEST_HEADER: &str =
    "slide_id,patient_id,cohort_id,role,label,borderline,scan_id,scanner_id,is_primary,pixel_spacing,image_path";

pub const SCHEMA_VERSION: u32 = 1;

/// Which part of the study a slide belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Train,
    Internal,
    External,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Internal => "internal",
            Role::External => "external",
        }
    }

    pub fn parse(s: &str) -> Option<Role> {
        match s {
            "train" => Some(Role::Train),
            "internal" => Some(Role::Internal),
            "external" => Some(Role::External),
            _ => None,
        }
    }
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One digitisation of a glass slide.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanRecord {
    pub scan_id: String,
    pub scanner_id: String,
    pub image_path: String,
    /// The scan the reference annotation was drawn on.
    pub is_primary: bool,
    /// Micrometres per pixel.
    pub pixel_spacing: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlideRecord {
    pub slide_id: String,
    pub patient_id: String,
    pub cohort_id: String,
    pub role: Role,
    /// Reference label: sieve pattern present.
    pub label: bool,
    /// Reference-negative slide the annotator flagged as suggestive.
    pub borderline: bool,
    pub scans: Vec<ScanRecord>,
}

impl SlideRecord {
    pub fn primary_scan(&self) -> &ScanRecord {
        self.scans
            .iter()
            .find(|s| s.is_primary)
            .expect("validated slide has a primary scan")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub slides: Vec<SlideRecord>,
}

impl Default for DatasetManifest {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            slides: Vec::new(),
        }
    }
}

impl DatasetManifest {
    /// Build a manifest, enforcing every invariant.
    pub fn new(slides: Vec<SlideRecord>) -> Result<Self> {
        let m = Self {
            schema_version: SCHEMA_VERSION,
            slides,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut slide_ids = HashSet::new();
        let mut scan_ids = HashSet::new();
        let mut patient_role: HashMap<&str, Role> = HashMap::new();
        for s in &self.slides {
            if !slide_ids.insert(s.slide_id.as_str()) {
                return Err(Error::invariant(format!("duplicate slide_id {}", s.slide_id)));
            }
            if s.scans.is_empty() {
                return Err(Error::invariant(format!("slide {} has no scans", s.slide_id)));
            }
            let primaries = s.scans.iter().filter(|c| c.is_primary).count();
            if primaries != 1 {
                return Err(Error::invariant(format!(
                    "slide {} has {} primary scans, expected exactly 1",
                    s.slide_id, primaries
                )));
            }
            for c in &s.scans {
                if !scan_ids.insert(c.scan_id.as_str()) {
                    return Err(Error::invariant(format!("duplicate scan_id {}", c.scan_id)));
                }
                if !(c.pixel_spacing > 0.0 && c.pixel_spacing.is_finite()) {
                    return Err(Error::invariant(format!(
                        "scan {} has non-positive pixel_spacing",
                        c.scan_id
                    )));
                }
                if c.scanner_id.is_empty() {
                    return Err(Error::invariant(format!("scan {} has empty scanner_id", c.scan_id)));
                }
            }
            match patient_role.get(s.patient_id.as_str()) {
                Some(&r) if r != s.role => {
                    return Err(Error::invariant(format!(
                        "patient {} appears in roles {} and {}",
                        s.patient_id, r, s.role
                    )))
                }
                _ => {
                    patient_role.insert(&s.patient_id, s.role);
                }
            }
        }
        Ok(())
    }

    pub fn slide(&self, slide_id: &str) -> Option<&SlideRecord> {
        self.slides.iter().find(|s| s.slide_id == slide_id)
    }

    pub fn slides_with_role(&self, role: Role) -> impl Iterator<Item = &SlideRecord> {
        self.slides.iter().filter(move |s| s.role == role)
    }

    /// Sorted, de-duplicated patient ids with the given role.
    pub fn patients(&self, role: Role) -> Vec<String> {
        self.slides_with_role(role)
            .map(|s| s.patient_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(64 * self.slides.len() + MANIFEST_HEADER.len());
        out.push_str(MANIFEST_HEADER);
        out.push('\n');
        for s in &self.slides {
            for c in &s.scans {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{}",
                    s.slide_id,
                    s.patient_id,
                    s.cohort_id,
                    s.role,
                    s.label as u8,
                    s.borderline as u8,
                    c.scan_id,
                    c.scanner_id,
                    c.is_primary as u8,
                    c.pixel_spacing,
                    c.image_path
                )
                .expect("writing to a String cannot fail");
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_manifest(&text, path)
}

pub fn parse_manifest(text: &str, path: &Path) -> Result<DatasetManifest> {
    let perr = |line: usize, msg: String| Error::Parse {
        path: PathBuf::from(path),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().skip_while(|(_, l)| l.starts_with('#'));
    match lines.next() {
        Some((_, h)) if h.trim_end_matches('\r') == MANIFEST_HEADER => {}
        Some((i, h)) => return Err(perr(i + 1, format!("unexpected header {h:?}"))),
        None => return Err(perr(1, "missing header".into())),
    }

    let mut slides: Vec<SlideRecord> = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (i, raw) in lines {
        let lineno = i + 1;
        if raw.is_empty() {
            continue;
        }
        let cols: Vec<&str> = raw.split(',').collect();
        if cols.len() != 11 {
            return Err(perr(lineno, format!("expected 11 columns, found {}", cols.len())));
        }
        let flag = |v: &str, name: &str| match v {
            "0" => Ok(false),
            "1" => Ok(true),
            _ => Err(perr(lineno, format!("{name} must be 0 or 1, got {v:?}"))),
        };
        let nonempty = |v: &str, name: &str| {
            if v.is_empty() {
                Err(perr(lineno, format!("{name} is empty")))
            } else {
                Ok(v.to_string())
            }
        };
        let slide_id = nonempty(cols[0], "slide_id")?;
        let patient_id = nonempty(cols[1], "patient_id")?;
        let cohort_id = nonempty(cols[2], "cohort_id")?;
        let role = Role::parse(cols[3])
            .ok_or_else(|| perr(lineno, format!("role must be train|internal|external, got {:?}", cols[3])))?;
        let label = flag(cols[4], "label")?;
        let borderline = flag(cols[5], "borderline")?;
        let pixel_spacing: f64 = cols[9]
            .parse()
            .map_err(|_| perr(lineno, format!("pixel_spacing {:?} is not a number", cols[9])))?;
        let scan = ScanRecord {
            scan_id: nonempty(cols[6], "scan_id")?,
            scanner_id: nonempty(cols[7], "scanner_id")?,
            is_primary: flag(cols[8], "is_primary")?,
            pixel_spacing,
            image_path: cols[10].to_string(),
        };

        match slides.last_mut() {
            Some(last) if last.slide_id == slide_id => {
                if last.patient_id != patient_id
                    || last.cohort_id != cohort_id
                    || last.role != role
                    || last.label != label
                    || last.borderline != borderline
                {
                    return Err(perr(
                        lineno,
                        format!("slide {slide_id} has conflicting slide-level fields across scans"),
                    ));
                }
                last.scans.push(scan);
            }
            _ => {
                if !seen.insert(slide_id.clone()) {
                    return Err(perr(lineno, format!("duplicate slide_id {slide_id}")));
                }
                slides.push(SlideRecord {
                    slide_id,
                    patient_id,
                    cohort_id,
                    role,
                    label,
                    borderline,
                    scans: vec![scan],
                });
            }
        }
    }
    let m = DatasetManifest {
        schema_version: SCHEMA_VERSION,
        slides,
    };
    m.validate()?;
    Ok(m)
}

/// Patient-level k-fold partition of the training role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub k: usize,
    pub seed: u64,
    pub fold_of_patient: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, patient_id: &str) -> Option<usize> {
        self.fold_of_patient.get(patient_id).copied()
    }

    pub fn patients_in(&self, fold: usize) -> Vec<&str> {
        self.fold_of_patient
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(p, _)| p.as_str())
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.fold_of_patient.values() {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Assign training patients to `k` folds.
///
/// Patients are sorted before the seeded shuffle, so the result does not depend
/// on manifest row order. Fold sizes differ by at most one patient; slide
/// counts per fold are not balanced.
pub fn make_grouped_folds(manifest: &DatasetManifest, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::invalid(format!("fold count must be >= 2, got {k}")));
    }
    let mut patients = manifest.patients(Role::Train);
    if patients.len() < k {
        return Err(Error::invalid(format!(
            "{} training patients cannot fill {k} folds",
            patients.len()
        )));
    }
    let mut rng = rng_for(seed, labels!["folds", k]);
    patients.shuffle(&mut rng);
    let fold_of_patient = patients
        .into_iter()
        .enumerate()
        .map(|(i, p)| (p, i % k))
        .collect();
    Ok(FoldAssignment {
        k,
        seed,
        fold_of_patient,
    })
}

/// `(slide_id, scan_id)` of the annotated scan of every slide, in manifest order.
pub fn select_primary_scans(manifest: &DatasetManifest) -> Vec<(String, String)> {
    manifest
        .slides
        .iter()
        .map(|s| (s.slide_id.clone(), s.primary_scan().scan_id.clone()))
        .collect()
}
