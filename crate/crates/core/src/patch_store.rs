//! Indexed patch container.
//!
//! Little-endian layout:
//!
//! ```text
//! magic "PSTR" | version u32 = 1 | count u64
//! count x { key_len u16 | key bytes | offset u64 | length u64 }
//! payload blobs
//! ```
//!
//! Offsets are absolute file positions. The index is read once on open, after
//! which any payload is fetched with a single positioned read.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use image::{ImageFormat, RgbImage};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PSTR";
pub const VERSION: u32 = 1;

/// Encode entries into the container byte layout.
pub fn encode_store(entries: &[(String, Vec<u8>)]) -> Result<Vec<u8>> {
    let mut keys = std::collections::HashSet::new();
    let mut header_len = 4 + 4 + 8;
    for (k, _) in entries {
        if k.len() > u16::MAX as usize {
            return Err(Error::invalid(format!("key too long: {} bytes", k.len())));
        }
        if !keys.insert(k.as_str()) {
            return Err(Error::invalid(format!("duplicate patch key {k}")));
        }
        header_len += 2 + k.len() + 8 + 8;
    }
    let total = header_len + entries.iter().map(|(_, p)| p.len()).sum::<usize>();
    let mut out = Vec::with_capacity(total);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    let mut offset = header_len as u64;
    for (k, p) in entries {
        out.extend_from_slice(&(k.len() as u16).to_le_bytes());
        out.extend_from_slice(k.as_bytes());
        out.extend_from_slice(&offset.to_le_bytes());
        out.extend_from_slice(&(p.len() as u64).to_le_bytes());
        offset += p.len() as u64;
    }
    for (_, p) in entries {
        out.extend_from_slice(p);
    }
    Ok(out)
}

/// Write a sealed store.
pub fn write_patch_store(path: impl AsRef<Path>, entries: &[(String, Vec<u8>)]) -> Result<()> {
    let bytes = encode_store(entries)?;
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexEntry {
    pub offset: u64,
    pub length: u64,
}

/// Read-only handle on a sealed store; safe to share between threads.
#[derive(Debug)]
pub struct PatchStore {
    path: PathBuf,
    file: File,
    keys: Vec<String>,
    index: HashMap<String, IndexEntry>,
}

impl PatchStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let corrupt = |msg: &str| Error::Corrupt {
            path: path.clone(),
            msg: msg.to_string(),
        };
        let mut file = File::open(&path)?;
        let file_len = file.metadata()?.len();
        let mut head = [0u8; 16];
        file.read_exact(&mut head).map_err(|_| corrupt("truncated header"))?;
        if &head[..4] != MAGIC {
            return Err(corrupt("magic mismatch"));
        }
        let version = u32::from_le_bytes(head[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(corrupt(&format!("unsupported version {version}")));
        }
        let count = u64::from_le_bytes(head[8..16].try_into().expect("8 bytes"));
        let mut reader = std::io::BufReader::new(&file);
        let mut keys = Vec::new();
        let mut index = HashMap::new();
        let mut pos = 16u64;
        for _ in 0..count {
            let mut len = [0u8; 2];
            reader.read_exact(&mut len).map_err(|_| corrupt("truncated index"))?;
            let klen = u16::from_le_bytes(len) as usize;
            let mut key = vec![0u8; klen];
            reader.read_exact(&mut key).map_err(|_| corrupt("truncated index"))?;
            let mut nums = [0u8; 16];
            reader.read_exact(&mut nums).map_err(|_| corrupt("truncated index"))?;
            pos += 2 + klen as u64 + 16;
            let key = String::from_utf8(key).map_err(|_| corrupt("key is not UTF-8"))?;
            let e = IndexEntry {
                offset: u64::from_le_bytes(nums[..8].try_into().expect("8 bytes")),
                length: u64::from_le_bytes(nums[8..].try_into().expect("8 bytes")),
            };
            match e.offset.checked_add(e.length) {
                Some(end) if end <= file_len => {}
                _ => return Err(corrupt(&format!("entry {key} points past end of file (truncated?)"))),
            }
            if e.offset < pos {
                return Err(corrupt(&format!("entry {key} overlaps the index")));
            }
            if index.insert(key.clone(), e).is_some() {
                return Err(corrupt(&format!("duplicate key {key}")));
            }
            keys.push(key);
        }
        Ok(Self {
            path,
            file,
            keys,
            index,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Keys in file order.
    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn entry(&self, key: &str) -> Option<IndexEntry> {
        self.index.get(key).copied()
    }

    pub fn read(&self, key: &str) -> Result<Vec<u8>> {
        let e = self.index.get(key).ok_or_else(|| Error::MissingKey(key.to_string()))?;
        let mut buf = vec![0u8; e.length as usize];
        read_at(&self.file, &mut buf, e.offset)?;
        Ok(buf)
    }

    /// Decode a PNG payload.
    pub fn read_image(&self, key: &str) -> Result<RgbImage> {
        decode_png(&self.read(key)?)
    }
}

#[cfg(unix)]
fn read_at(file: &File, buf: &mut [u8], offset: u64) -> std::io::Result<()> {
    use std::os::unix::fs::FileExt;
    file.read_exact_at(buf, offset)
}

#[cfg(windows)]
fn read_at(file: &File, buf: &mut [u8], offset: u64) -> std::io::Result<()> {
    use std::os::windows::fs::FileExt;
    let mut done = 0;
    while done < buf.len() {
        let n = file.seek_read(&mut buf[done..], offset + done as u64)?;
        if n == 0 {
            return Err(std::io::ErrorKind::UnexpectedEof.into());
        }
        done += n;
    }
    Ok(())
}

pub fn read_patch_store(path: impl AsRef<Path>, key: &str) -> Result<Vec<u8>> {
    PatchStore::open(path)?.read(key)
}

/// Merge several stores into one new store; keys must be unique across inputs.
pub fn concat_stores(inputs: &[PathBuf], out: impl AsRef<Path>) -> Result<()> {
    let mut entries = Vec::new();
    for p in inputs {
        let s = PatchStore::open(p)?;
        for k in s.keys() {
            entries.push((k.clone(), s.read(k)?));
        }
    }
    write_patch_store(out, &entries)
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

pub fn decode_png(bytes: &[u8]) -> Result<RgbImage> {
    Ok(image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_rgb8())
}
