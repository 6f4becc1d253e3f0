//! Versioned binary model file.
//!
//! All integers and floats little-endian:
//!
//! ```text
//! "BANM"                      magic
//! u16                         format version (1)
//! u16 context_len, u16 latent_dim, u32 embed_dim, u32 hidden, u32 alphabet (256)
//! u32 epochs, u32 batch, u64 seed, u8 attention sign
//! u64                         number of hyperparameter pairs
//! (f64 mean, f64 precision)*  generator W, generator b, encoder mean,
//!                             encoder log-variance, decoder table
//! u64                         FNV-1a checksum of everything above
//! ```

use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;

use crate::attention::DecoderParams;
use crate::error::{BanError, Result};
use crate::gaussnet::{Architecture, HyperBlock, HyperNetParams, Pmf, ALPHABET};
use crate::pipeline::{LatentMode, PredictionPath};
use crate::trainer::AttentionSign;

pub const MAGIC: &[u8; 4] = b"BANM";
pub const VERSION: u16 = 1;

/// How a snapshot was trained. Carried for provenance only.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrainMeta {
    pub epochs: u32,
    pub batch: u32,
    pub seed: u64,
    pub attention_sign: AttentionSign,
}

impl Default for TrainMeta {
    fn default() -> Self {
        TrainMeta { epochs: 0, batch: 0, seed: 0, attention_sign: AttentionSign::Descent }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSnapshot {
    pub arch: Architecture,
    pub meta: TrainMeta,
    pub v: HyperNetParams,
    pub u: DecoderParams,
}

pub fn fnv64(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

impl ModelSnapshot {
    pub fn new(meta: TrainMeta, v: HyperNetParams, u: DecoderParams) -> Self {
        ModelSnapshot { arch: v.arch, meta, v, u }
    }

    /// All means zero: predicts the uniform distribution for every context.
    pub fn uniform(arch: Architecture) -> Self {
        ModelSnapshot::new(TrainMeta::default(), HyperNetParams::zeros(arch), DecoderParams::zeros(&arch))
    }

    fn blocks(&self) -> impl Iterator<Item = &HyperBlock> {
        self.v.blocks().into_iter().chain(std::iter::once(&self.u.table))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let pairs: usize = self.blocks().map(|b| b.len()).sum();
        let mut out = Vec::with_capacity(64 + pairs * 16);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.arch.context_len as u16).to_le_bytes());
        out.extend_from_slice(&(self.arch.latent_dim as u16).to_le_bytes());
        out.extend_from_slice(&(self.arch.embed_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.arch.hidden as u32).to_le_bytes());
        out.extend_from_slice(&(ALPHABET as u32).to_le_bytes());
        out.extend_from_slice(&self.meta.epochs.to_le_bytes());
        out.extend_from_slice(&self.meta.batch.to_le_bytes());
        out.extend_from_slice(&self.meta.seed.to_le_bytes());
        out.push(self.meta.attention_sign.as_byte());
        out.extend_from_slice(&(pairs as u64).to_le_bytes());
        for block in self.blocks() {
            for h in block.iter() {
                out.extend_from_slice(&h.mean.to_le_bytes());
                out.extend_from_slice(&h.precision.to_le_bytes());
            }
        }
        let sum = fnv64(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(BanError::BadMagic { expected: "BANM" });
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(BanError::UnsupportedVersion(version as u32));
        }
        let arch = Architecture {
            context_len: r.u16()? as usize,
            latent_dim: r.u16()? as usize,
            embed_dim: r.u32()? as usize,
            hidden: r.u32()? as usize,
        };
        let alphabet = r.u32()?;
        if alphabet as usize != ALPHABET {
            return Err(BanError::InvalidConfig(format!("alphabet {alphabet} is not 256")));
        }
        arch.validate()?;
        let meta = TrainMeta {
            epochs: r.u32()?,
            batch: r.u32()?,
            seed: r.u64()?,
            attention_sign: AttentionSign::from_byte(r.u8()?)
                .ok_or_else(|| BanError::Corrupt("unknown attention sign".into()))?,
        };
        let pairs = r.u64()? as usize;
        let mut snapshot = ModelSnapshot::uniform(arch);
        snapshot.meta = meta;
        let expected: usize = snapshot.blocks().map(|b| b.len()).sum();
        if pairs != expected {
            return Err(BanError::Corrupt(format!("{pairs} hyperparameters, architecture needs {expected}")));
        }
        // checksum before the bulk parse
        if bytes.len() < r.pos + pairs * 16 + 8 {
            return Err(BanError::Truncated("model snapshot"));
        }
        let body_end = r.pos + pairs * 16;
        let stored = u64::from_le_bytes(bytes[body_end..body_end + 8].try_into().unwrap());
        if fnv64(&bytes[..body_end]) != stored {
            return Err(BanError::ChecksumMismatch);
        }
        if bytes.len() != body_end + 8 {
            return Err(BanError::Corrupt("trailing bytes after snapshot".into()));
        }
        let [a, b, c, d] = snapshot.v.blocks_mut();
        for block in [a, b, c, d, &mut snapshot.u.table] {
            for i in 0..block.len() {
                block.mean[i] = r.f64()?;
                block.precision[i] = r.f64()?;
            }
        }
        Ok(snapshot)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        ModelSnapshot::from_bytes(&std::fs::read(path)?)
    }

    /// Next-byte distribution for `context` on the deterministic prediction path.
    pub fn predict(&self, context: &[u8]) -> Result<Pmf> {
        if context.len() != self.arch.context_len {
            return Err(BanError::DimensionMismatch { expected: self.arch.context_len, got: context.len() });
        }
        let mut path = PredictionPath::new(self, LatentMode::Mean);
        Pmf::from_probs(path.pmf(context)?.to_vec())
    }

    /// Identity used by containers: FNV-1a of the serialized snapshot.
    pub fn hash(&self) -> u64 {
        fnv64(&self.to_bytes())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(BanError::Truncated("model snapshot"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
