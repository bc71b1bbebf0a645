//! Binary checkpoint format: magic, format version, config and vocab
//! digests, dimensions, parameter blob (f64 little-endian, fixed tensor
//! order), an opaque extra section for trainer state, and a trailing
//! SHA-256 checksum over everything before it.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::model::{CharVocab, ModelError, ModelParams, TrainingConfig};

const MAGIC: &[u8; 4] = b"NKDP";
const VERSION: u32 = 1;

pub fn save(
    params: &ModelParams,
    vocab: &CharVocab,
    extra: &[u8],
    path: &Path,
) -> Result<(), ModelError> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&params.config_digest());
    buf.extend_from_slice(&vocab.digest());
    buf.extend_from_slice(&(params.vocab as u64).to_le_bytes());
    buf.extend_from_slice(&(params.embed as u64).to_le_bytes());
    buf.extend_from_slice(&(params.hidden as u64).to_le_bytes());
    buf.push(params.encoder_frozen as u8);
    buf.extend_from_slice(&(extra.len() as u64).to_le_bytes());
    buf.extend_from_slice(extra);
    for (_, slice) in params.param_slices() {
        for v in slice {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let checksum: [u8; 32] = Sha256::digest(&buf).into();
    buf.extend_from_slice(&checksum);
    fs::write(path, &buf).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load(path: &Path, vocab: &CharVocab) -> Result<(ModelParams, Vec<u8>), ModelError> {
    let buf = fs::read(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    if buf.len() < 32 {
        return Err(ModelError::ChecksumMismatch);
    }
    let (body, checksum) = buf.split_at(buf.len() - 32);
    let expected: [u8; 32] = Sha256::digest(body).into();
    if checksum != expected {
        return Err(ModelError::ChecksumMismatch);
    }

    let mut cur = Cursor { body, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(ModelError::VersionMismatch("bad magic".into()));
    }
    let version = u32::from_le_bytes(cur.take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(ModelError::VersionMismatch(format!(
            "format version {version}, expected {VERSION}"
        )));
    }
    let config_digest: [u8; 32] = cur.take(32)?.try_into().unwrap();
    let vocab_digest: [u8; 32] = cur.take(32)?.try_into().unwrap();
    if vocab_digest != vocab.digest() {
        return Err(ModelError::VersionMismatch("vocab digest differs".into()));
    }
    let v = u64::from_le_bytes(cur.take(8)?.try_into().unwrap()) as usize;
    let e = u64::from_le_bytes(cur.take(8)?.try_into().unwrap()) as usize;
    let h = u64::from_le_bytes(cur.take(8)?.try_into().unwrap()) as usize;
    let frozen = cur.take(1)?[0] != 0;
    let extra_len = u64::from_le_bytes(cur.take(8)?.try_into().unwrap()) as usize;
    let extra = cur.take(extra_len)?.to_vec();

    if v != vocab.len() {
        return Err(ModelError::VersionMismatch(format!(
            "checkpoint vocab size {v} != {}",
            vocab.len()
        )));
    }
    let config = TrainingConfig {
        hidden_size: h,
        embed_size: e,
        freeze_encoder: frozen,
        ..TrainingConfig::default()
    };
    let mut params = ModelParams::init(&config, vocab, 0);
    params.encoder_frozen = frozen;
    if params.config_digest() != config_digest {
        return Err(ModelError::VersionMismatch("config digest differs".into()));
    }
    for (_, slice) in params.param_slices_mut() {
        for v in slice.iter_mut() {
            *v = f64::from_le_bytes(cur.take(8)?.try_into().unwrap());
        }
    }
    if cur.pos != cur.body.len() {
        return Err(ModelError::VersionMismatch("trailing bytes".into()));
    }
    Ok((params, extra))
}

struct Cursor<'a> {
    body: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.pos + n > self.body.len() {
            return Err(ModelError::ChecksumMismatch);
        }
        let out = &self.body[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
}
