//! Binary checkpoint container.
//!
//! Layout (little endian): magic `ULKT`, `u32` format version, `u32` header
//! length, JSON header (model config, step, objective lineage, vocabulary),
//! `u64` parameter count, then the parameters as raw `f64`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams, Objective};
use crate::error::{Error, Result};
use crate::tokenizer::Vocab;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"ULKT";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    /// Objective of the run that produced the parameters.
    pub objective: Option<Objective>,
    pub vocab: Vocab,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    step: u64,
    objective: Option<Objective>,
    vocab: Vec<String>,
    casefold: bool,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            config: self.params.config.clone(),
            step: self.params.step,
            objective: self.objective,
            vocab: self.vocab.tokens().to_vec(),
            casefold: self.vocab.casefold(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + json.len() + 8 * self.params.flat.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(self.params.flat.len() as u64).to_le_bytes());
        for x in &self.params.flat {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut at = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let chunk = bytes
                .get(at..at + n)
                .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
            at += n;
            Ok(chunk)
        };
        if take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let hlen = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        let header: Header = serde_json::from_slice(take(hlen)?)
            .map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        let n = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
        let raw = take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        let flat = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if at != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        let vocab = Vocab::from_tokens(header.vocab, header.casefold)?;
        if vocab.len() != header.config.vocab_size {
            return Err(Error::Checkpoint("vocabulary does not match model size".into()));
        }
        Ok(Checkpoint {
            params: ModelParams::from_flat(header.config, flat, header.step)?,
            objective: header.objective,
            vocab,
        })
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
