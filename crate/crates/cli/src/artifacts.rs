//! Artifact I/O: provenance headers, CSV tables, PNG files and the per-stage
//! `provenance.json` written when a stage completes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use cribmil_core::raster::Mask;
use cribmil_core::Error;
use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ExtendedColorType, GrayImage, ImageEncoder, RgbImage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Settings;
use crate::error::{CliError, CliResult};

pub const TOOL: &str = "cribmil";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const COMPLETION_MARKER: &str = "provenance.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub stage: String,
}

impl Provenance {
    pub fn new(settings: &Settings, stage: &str) -> Self {
        Self {
            tool: TOOL.into(),
            version: VERSION.into(),
            config_hash: settings.hash(),
            seed: settings.seed,
            stage: stage.into(),
        }
    }

    pub fn csv_header(&self) -> String {
        format!(
            "# tool={}\n# version={}\n# config_hash={}\n# seed={}\n# stage={}\n",
            self.tool, self.version, self.config_hash, self.seed, self.stage
        )
    }
}

/// Write a CSV table preceded by the provenance comment block.
pub fn write_csv(path: &Path, prov: &Provenance, body: &str) -> CliResult<()> {
    let mut s = prov.csv_header();
    s.push_str(body);
    std::fs::write(path, s)?;
    Ok(())
}

pub fn csv_body(header: &str, rows: impl IntoIterator<Item = String>) -> String {
    let mut s = String::from(header);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{r}");
    }
    s
}

/// A parsed CSV table: comment lines skipped, header checked.
pub struct Table {
    pub path: PathBuf,
    pub columns: Vec<String>,
    /// `(line number, fields)`.
    pub rows: Vec<(usize, Vec<String>)>,
}

impl Table {
    pub fn read(path: &Path, expected: &[&str]) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty());
        let parse_err = |line: usize, msg: String| {
            CliError::Core(Error::Parse {
                path: path.to_path_buf(),
                line,
                msg,
            })
        };
        let (hl, header) = lines.next().ok_or_else(|| parse_err(1, "empty table".into()))?;
        let columns: Vec<String> = header.split(',').map(String::from).collect();
        if !expected.is_empty() && columns != expected {
            return Err(parse_err(hl + 1, format!("expected columns {}, found {header}", expected.join(","))));
        }
        let mut rows = Vec::new();
        for (n, l) in lines {
            let fields: Vec<String> = l.split(',').map(String::from).collect();
            if fields.len() != columns.len() {
                return Err(parse_err(n + 1, format!("expected {} fields, found {}", columns.len(), fields.len())));
            }
            rows.push((n + 1, fields));
        }
        Ok(Self {
            path: path.to_path_buf(),
            columns,
            rows,
        })
    }

    /// Parse field `col` of a row, naming the file, line and column on failure.
    pub fn get<T: std::str::FromStr>(&self, row: &(usize, Vec<String>), col: usize) -> CliResult<T>
    where
        T::Err: std::fmt::Display,
    {
        row.1[col].parse().map_err(|e: T::Err| {
            CliError::Core(Error::Parse {
                path: self.path.clone(),
                line: row.0,
                msg: format!("column {}: {e}", self.columns[col]),
            })
        })
    }
}

pub fn parse_bool01(s: &str) -> Option<bool> {
    match s {
        "1" => Some(true),
        "0" => Some(false),
        _ => None,
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

fn png_writer(path: &Path) -> CliResult<PngEncoder<BufWriter<File>>> {
    let f = BufWriter::new(File::create(path)?);
    Ok(PngEncoder::new_with_quality(f, CompressionType::Fast, FilterType::Adaptive))
}

pub fn save_rgb(path: &Path, img: &RgbImage) -> CliResult<()> {
    png_writer(path)?.write_image(img.as_raw(), img.width(), img.height(), ExtendedColorType::Rgb8)?;
    Ok(())
}

pub fn save_mask(path: &Path, mask: &Mask) -> CliResult<()> {
    let g: GrayImage = mask.to_gray();
    png_writer(path)?.write_image(g.as_raw(), g.width(), g.height(), ExtendedColorType::L8)?;
    Ok(())
}

pub fn load_rgb(path: &Path) -> CliResult<RgbImage> {
    require(path, "image referenced by the manifest")?;
    Ok(image::open(path)?.to_rgb8())
}

pub fn load_mask(path: &Path) -> CliResult<Mask> {
    require(path, "mask image")?;
    Ok(Mask::from_gray(&image::open(path)?.to_luma8()))
}

pub fn require(path: &Path, hint: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::missing(path, hint))
    }
}

/// Fail unless `stage` has completed in `out_dir`.
pub fn require_stage(out_dir: &Path, stage: &str) -> CliResult<PathBuf> {
    let dir = out_dir.join(stage);
    let marker = dir.join(COMPLETION_MARKER);
    if !marker.exists() {
        return Err(CliError::missing(marker, format!("run `cribmil {stage}` first")));
    }
    Ok(dir)
}

/// Empty the stage directory so no stale artifact survives a rerun.
pub fn fresh_dir(dir: &Path) -> CliResult<()> {
    if dir.exists() {
        std::fs::remove_dir_all(dir)?;
    }
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn walk(dir: &Path, base: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for e in std::fs::read_dir(dir)? {
        let p = e?.path();
        if p.is_dir() {
            walk(&p, base, out)?;
        } else {
            out.push(p.strip_prefix(base).expect("walk stays below base").to_path_buf());
        }
    }
    Ok(())
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Serialize)]
struct StageRecord<'a> {
    provenance: &'a Provenance,
    config: BTreeMap<&'static str, String>,
    artifacts: BTreeMap<String, String>,
}

/// Record provenance, the resolved configuration and a digest of every
/// artifact. Written last, so its presence marks the stage as complete.
pub fn finish_stage(dir: &Path, prov: &Provenance, settings: &Settings) -> CliResult<()> {
    let mut files = Vec::new();
    walk(dir, dir, &mut files)?;
    files.sort();
    let mut artifacts = BTreeMap::new();
    for f in files {
        let key = f.to_string_lossy().replace('\\', "/");
        if key == COMPLETION_MARKER {
            continue;
        }
        artifacts.insert(key, sha256_file(&dir.join(&f))?);
    }
    let record = StageRecord {
        provenance: prov,
        config: settings.entries().into_iter().collect(),
        artifacts,
    };
    write_json(&dir.join(COMPLETION_MARKER), &record)
}
