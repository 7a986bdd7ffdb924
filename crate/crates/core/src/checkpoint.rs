//! Single-file checkpoint archive.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "SCIRECKP" | u32 version | u32 entry count
//! per entry: u32 name length | name | u8 kind | payload
//!   kind 0 (json):   u64 byte length | bytes
//!   kind 1 (tensor): u32 rank | u64 dims... | f32 values
//! sha256 of everything above (32 bytes)
//! ```
//!
//! The first entry is always `config.json`; parameter blocks follow in the
//! model's block order.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::model::{HybridModel, MultiTaskConfig};
use crate::params::ParamBlocks;

const MAGIC: &[u8; 8] = b"SCIRECKP";
pub const FORMAT_VERSION: u32 = 1;
const CONFIG_ENTRY: &str = "config.json";
const KIND_JSON: u8 = 0;
const KIND_TENSOR: u8 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointConfig {
    pub encoder: EncoderConfig,
    pub multitask: MultiTaskConfig,
    pub n_users: usize,
    pub n_items: usize,
    pub n_tags: usize,
    pub vocab_size: usize,
    /// Fingerprint of the vocabulary the embeddings index into.
    pub vocab_hash: String,
    /// Training step the parameters were taken at.
    pub step: usize,
    pub validation_recall: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: CheckpointConfig,
    pub model: HybridModel,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_name(out: &mut Vec<u8>, name: &str) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn name(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("entry name is not UTF-8".into()))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let blocks = self.model.blocks();
        let mut out = Vec::with_capacity(64 + 4 * self.model.n_params());
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        put_u32(&mut out, 1 + blocks.len() as u32);

        let json = serde_json::to_vec_pretty(&self.config)?;
        put_name(&mut out, CONFIG_ENTRY);
        out.push(KIND_JSON);
        put_u64(&mut out, json.len() as u64);
        out.extend_from_slice(&json);

        for (name, block) in blocks {
            put_name(&mut out, &name);
            out.push(KIND_TENSOR);
            put_u32(&mut out, block.ndim() as u32);
            for &d in block.shape() {
                put_u64(&mut out, d as u64);
            }
            for &v in block.iter() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 8 + 32 {
            return Err(Error::Checkpoint("file too short".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Checkpoint("checksum mismatch".into()));
        }
        let mut r = Reader { bytes: body, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let n_entries = r.u32()? as usize;

        let name = r.name()?;
        if name != CONFIG_ENTRY || r.u8()? != KIND_JSON {
            return Err(Error::Checkpoint(format!("first entry must be {CONFIG_ENTRY}")));
        }
        let len = r.u64()? as usize;
        let config: CheckpointConfig = serde_json::from_slice(r.take(len)?)?;
        config.encoder.validate()?;

        // Build a model of the right shape, then overwrite every block.
        let mut model = HybridModel::init(
            &config.encoder,
            config.vocab_size,
            config.n_users,
            config.n_items,
            config.n_tags,
            &mut ChaCha8Rng::seed_from_u64(0),
        )?;
        let mut blocks = model.blocks_mut();
        if blocks.len() + 1 != n_entries {
            return Err(Error::Checkpoint(format!(
                "{} parameter blocks stored, model expects {}",
                n_entries.saturating_sub(1),
                blocks.len()
            )));
        }
        for (expected, block) in &mut blocks {
            let name = r.name()?;
            if &name != expected {
                return Err(Error::Checkpoint(format!("expected block {expected}, found {name}")));
            }
            if r.u8()? != KIND_TENSOR {
                return Err(Error::Checkpoint(format!("block {name} is not a tensor")));
            }
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            if shape != block.shape() {
                return Err(Error::Checkpoint(format!("block {name} has shape {shape:?}, expected {:?}", block.shape())));
            }
            let data = r.take(4 * block.len())?;
            for (v, chunk) in block.iter_mut().zip(data.chunks_exact(4)) {
                *v = f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64;
            }
        }
        drop(blocks);
        if r.pos != body.len() {
            return Err(Error::Checkpoint("trailing bytes after the last block".into()));
        }
        Ok(Checkpoint { config, model })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Refuses a checkpoint trained on another vocabulary.
    pub fn check_vocabulary(&self, vocab_hash: &str) -> Result<()> {
        if self.config.vocab_hash != vocab_hash {
            return Err(Error::VocabularyMismatch {
                checkpoint: self.config.vocab_hash.clone(),
                corpus: vocab_hash.to_string(),
            });
        }
        Ok(())
    }

    /// Rounds every parameter through `f32`, giving exactly what a save and
    /// load cycle would return.
    pub fn quantize(model: &mut HybridModel) {
        for (_, mut b) in model.blocks_mut() {
            b.mapv_inplace(|v| v as f32 as f64);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderKind;

    fn sample(kind: EncoderKind) -> Checkpoint {
        let encoder = EncoderConfig {
            kind,
            embed_dim: 4,
            context_dim: 6,
            baseline_dim: 4,
            conv_filters: 5,
            output_dim: 4,
            ..Default::default()
        };
        let mut model = HybridModel::init(&encoder, 12, 3, 5, 7, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        model.tables.item_bias[2] = 0.25;
        Checkpoint {
            config: CheckpointConfig {
                encoder,
                multitask: MultiTaskConfig::default(),
                n_users: 3,
                n_items: 5,
                n_tags: 7,
                vocab_size: 12,
                vocab_hash: "abc".into(),
                step: 40,
                validation_recall: Some(0.5),
            },
            model,
        }
    }

    #[test]
    fn round_trip_is_exact_after_quantizing() {
        for kind in EncoderKind::ALL {
            let mut ck = sample(kind);
            Checkpoint::quantize(&mut ck.model);
            let bytes = ck.to_bytes().unwrap();
            let back = Checkpoint::from_bytes(&bytes).unwrap();
            assert_eq!(back, ck);
            assert_eq!(back.to_bytes().unwrap(), bytes);
        }
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = sample(EncoderKind::Rhcnn).to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[100] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Checkpoint(_))));
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::from_bytes(b"nope").is_err());
    }

    #[test]
    fn vocabulary_guard() {
        let ck = sample(EncoderKind::EmbedBaseline);
        ck.check_vocabulary("abc").unwrap();
        assert!(matches!(ck.check_vocabulary("xyz"), Err(Error::VocabularyMismatch { .. })));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut ck = sample(EncoderKind::GruBaseline);
        Checkpoint::quantize(&mut ck.model);
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    }
}
