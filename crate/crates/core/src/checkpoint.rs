//! Binary checkpoint container.
//!
//! Layout (all integers little-endian), documented in `docs/checkpoint.md`:
//!
//! ```text
//! magic        8 bytes   "EKGECKPT"
//! version      u32       1
//! header_len   u32       byte length of the JSON header
//! header       JSON      kind, rank, counts, vocab_hash, table directory
//! payload      f64 LE    every table's values, in directory order
//! digest       32 bytes  SHA-256 of all preceding bytes
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::models::{Counts, ModelError, ModelKind, ModelParams, Rank, Role, Table};

pub const MAGIC: &[u8; 8] = b"EKGECKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("malformed header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("unknown table role {0:?}")]
    UnknownRole(String),
    #[error("payload is truncated")]
    Truncated,
    #[error("checksum mismatch")]
    Checksum,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("checkpoint was trained on vocabulary {found}, expected {expected}")]
    VocabularyMismatch { expected: String, found: String },
}

#[derive(Debug, Serialize, Deserialize)]
struct TableEntry {
    role: String,
    rows: usize,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    kind: ModelKind,
    rank: Rank,
    counts: Counts,
    vocab_hash: String,
    tables: Vec<TableEntry>,
}

/// Parameters plus the hash of the vocabulary they were trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub vocab_hash: String,
}

impl Checkpoint {
    pub fn new(params: ModelParams, vocab_hash: impl Into<String>) -> Self {
        Self { params, vocab_hash: vocab_hash.into() }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CheckpointError> {
        let p = &self.params;
        let header = Header {
            kind: p.kind(),
            rank: p.rank(),
            counts: p.counts(),
            vocab_hash: self.vocab_hash.clone(),
            tables: p
                .tables()
                .iter()
                .map(|t| TableEntry { role: t.role.name().to_owned(), rows: t.rows, shape: t.row_shape.clone() })
                .collect(),
        };
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + header.len() + 8 * p.allocated_len() + 32);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for t in p.tables() {
            for x in &t.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 16 + 32 {
            return Err(if bytes.starts_with(MAGIC) { CheckpointError::Truncated } else { CheckpointError::BadMagic });
        }
        if &bytes[..8] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(CheckpointError::Checksum);
        }
        let header_len = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
        let header_end =
            16usize.checked_add(header_len).filter(|&e| e <= body.len()).ok_or(CheckpointError::Truncated)?;
        let header: Header = serde_json::from_slice(&body[16..header_end])?;
        let mut payload = body[header_end..].chunks_exact(8);
        let mut tables = Vec::with_capacity(header.tables.len());
        for entry in header.tables {
            let role = Role::from_name(&entry.role).ok_or_else(|| CheckpointError::UnknownRole(entry.role.clone()))?;
            let mut table = Table::zeros(role, entry.rows, entry.shape);
            for x in table.data.iter_mut() {
                let chunk = payload.next().ok_or(CheckpointError::Truncated)?;
                *x = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
            }
            tables.push(table);
        }
        if payload.next().is_some() || !payload.remainder().is_empty() {
            return Err(CheckpointError::Truncated);
        }
        let params = ModelParams::from_tables(header.kind, header.rank, header.counts, tables)?;
        Ok(Self { params, vocab_hash: header.vocab_hash })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&self.to_bytes()?)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        let mut bytes = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// Fails unless the checkpoint was trained on a vocabulary with `hash`.
    pub fn expect_vocabulary(&self, hash: &str) -> Result<(), CheckpointError> {
        if self.vocab_hash != hash {
            return Err(CheckpointError::VocabularyMismatch {
                expected: hash.to_owned(),
                found: self.vocab_hash.clone(),
            });
        }
        Ok(())
    }
}
