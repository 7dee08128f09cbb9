//! `MILW` checkpoint container: little-endian named `f32` arrays plus the
//! optimizer kind and step.
//!
//! Layout: magic `MILW`, version u32, optimizer tag u8 (255 = none), step u64,
//! array count u32, then per array: name length u16, UTF-8 name, dtype u8
//! (0 = f32), rank u8, dims u32 each, payload.

use std::path::Path;

use super::model::{ModelParams, Tensor};
use super::optim::{OptimizerKind, OptimizerState};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MILW";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;
const NO_OPTIMIZER: u8 = 255;
const M_PREFIX: &str = "optimizer.m.";
const V_PREFIX: &str = "optimizer.v.";
const WD_NAME: &str = "optimizer.weight_decay";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub optimizer: Option<OptimizerState>,
}

fn push_array(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(DTYPE_F32);
    out.push(shape.len() as u8);
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(ck.optimizer.as_ref().map_or(NO_OPTIMIZER, |o| o.kind.tag()));
    out.extend_from_slice(&ck.optimizer.as_ref().map_or(0, |o| o.step).to_le_bytes());
    let n_arrays = Tensor::ALL.len() * if ck.optimizer.is_some() { 3 } else { 1 } + ck.optimizer.is_some() as usize;
    out.extend_from_slice(&(n_arrays as u32).to_le_bytes());
    for t in Tensor::ALL {
        push_array(&mut out, t.name(), t.shape(), ck.params.get(t));
    }
    if let Some(o) = &ck.optimizer {
        for t in Tensor::ALL {
            push_array(&mut out, &format!("{M_PREFIX}{}", t.name()), t.shape(), &o.m[t.range()]);
        }
        for t in Tensor::ALL {
            push_array(&mut out, &format!("{V_PREFIX}{}", t.name()), t.shape(), &o.v[t.range()]);
        }
        push_array(&mut out, WD_NAME, &[1], &[o.weight_decay]);
    }
    out
}

pub fn save_checkpoint(path: impl AsRef<Path>, ck: &Checkpoint) -> Result<()> {
    std::fs::write(path, encode_checkpoint(ck))?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(self.corrupt("truncated checkpoint"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn corrupt(&self, msg: impl Into<String>) -> Error {
        Error::Corrupt {
            path: self.path.to_path_buf(),
            msg: msg.into(),
        }
    }
}

pub fn decode_checkpoint(buf: &[u8], path: &Path) -> Result<Checkpoint> {
    let mut r = Reader { buf, pos: 0, path };
    if r.take(4)? != MAGIC {
        return Err(r.corrupt("bad magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.corrupt(format!("unsupported version {version}")));
    }
    let tag = r.u8()?;
    let step = r.u64()?;
    let count = r.u32()? as usize;
    let kind = match tag {
        NO_OPTIMIZER => None,
        t => Some(OptimizerKind::from_tag(t).ok_or_else(|| r.corrupt(format!("unknown optimizer tag {t}")))?),
    };
    let n = crate::nn::model::param_count();
    let mut params = ModelParams::zeros();
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut wd = 0.0;
    let mut seen = std::collections::BTreeSet::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| r.corrupt("array name is not UTF-8"))?
            .to_string();
        if r.u8()? != DTYPE_F32 {
            return Err(r.corrupt(format!("{name}: unsupported dtype")));
        }
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 4)?;
        let data: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        if !seen.insert(name.clone()) {
            return Err(r.corrupt(format!("duplicate array {name}")));
        }
        if name == WD_NAME {
            wd = *data.first().ok_or_else(|| r.corrupt("empty weight decay"))?;
            continue;
        }
        let (base, dest): (&str, &mut [f64]) = if let Some(b) = name.strip_prefix(M_PREFIX) {
            (b, &mut m)
        } else if let Some(b) = name.strip_prefix(V_PREFIX) {
            (b, &mut v)
        } else {
            (name.as_str(), &mut params.data)
        };
        let t = Tensor::by_name(base).ok_or_else(|| r.corrupt(format!("unknown array {name}")))?;
        if shape != t.shape() {
            return Err(r.corrupt(format!("{name}: shape {shape:?}, expected {:?}", t.shape())));
        }
        dest[t.range()].copy_from_slice(&data);
    }
    if r.pos != buf.len() {
        return Err(r.corrupt("trailing bytes"));
    }
    if let Some(t) = Tensor::ALL.iter().find(|t| !seen.contains(t.name())) {
        return Err(r.corrupt(format!("missing array {}", t.name())));
    }
    let optimizer = kind.map(|kind| OptimizerState {
        kind,
        weight_decay: wd,
        step,
        m,
        v,
    });
    Ok(Checkpoint { params, optimizer })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let buf = std::fs::read(path)?;
    decode_checkpoint(&buf, path)
}
