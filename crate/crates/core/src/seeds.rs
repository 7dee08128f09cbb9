//! Labeled seed derivation.
//!
//! Every random stream in the pipeline is keyed by the run seed plus a list of
//! labels (stage name, fold, epoch, slide id, ...). The key is hashed, so the
//! stream a component sees does not depend on how work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// One component of a derivation label.
#[derive(Debug, Clone, Copy)]
pub enum Label<'a> {
    Str(&'a str),
    Int(u64),
}

impl<'a> From<&'a str> for Label<'a> {
    fn from(s: &'a str) -> Self {
        Label::Str(s)
    }
}

impl<'a> From<&'a String> for Label<'a> {
    fn from(s: &'a String) -> Self {
        Label::Str(s.as_str())
    }
}

impl From<u64> for Label<'_> {
    fn from(v: u64) -> Self {
        Label::Int(v)
    }
}

impl From<usize> for Label<'_> {
    fn from(v: usize) -> Self {
        Label::Int(v as u64)
    }
}

impl From<u32> for Label<'_> {
    fn from(v: u32) -> Self {
        Label::Int(v as u64)
    }
}

/// Derive a 64-bit seed from a base seed and labels.
pub fn derive_seed(seed: u64, labels: &[Label<'_>]) -> u64 {
    let mut h = Sha256::new();
    h.update(b"cribmil");
    h.update(seed.to_le_bytes());
    for l in labels {
        match l {
            Label::Str(s) => {
                h.update([0u8]);
                h.update((s.len() as u64).to_le_bytes());
                h.update(s.as_bytes());
            }
            Label::Int(v) => {
                h.update([1u8]);
                h.update(v.to_le_bytes());
            }
        }
    }
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("digest is 32 bytes"))
}

/// Seeded stream for the given labels.
pub fn rng_for(seed: u64, labels: &[Label<'_>]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, labels))
}

/// Shorthand for building a label list.
#[macro_export]
macro_rules! labels {
    ($($x:expr),* $(,)?) => {
        &[$($crate::seeds::Label::from($x)),*]
    };
}
