//! Binary checkpoint layout, all integers little-endian:
//!
//! ```text
//! magic "SYMSPOT\0" | version u32 | config length u32 | config JSON
//! | epoch u64 | parameter count u64 | parameters f32 ... | CRC-32 of all preceding bytes
//! ```

use std::fs;
use std::path::Path;

use super::{Predictor, PredictorConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SYMSPOT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(p: &Predictor) -> Vec<u8> {
    let config = serde_json::to_vec(p.config()).expect("config serializes");
    let params = p.net.params();
    let mut out = Vec::with_capacity(32 + config.len() + 4 * params.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&(p.epoch as u64).to_le_bytes());
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in params {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(e) => {
                let s = &self.bytes[self.at..e];
                self.at = e;
                Ok(s)
            }
            None => Err(Error::Integrity(format!("checkpoint truncated while reading {what}"))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Predictor> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(8, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Integrity("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    if bytes.len() < 4 {
        return Err(Error::Integrity("checkpoint truncated".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::Integrity("checksum mismatch (truncated or corrupted checkpoint)".into()));
    }
    let mut r = Reader { bytes: body, at: 12 };
    let clen = r.u32("config length")? as usize;
    let config: PredictorConfig = serde_json::from_slice(r.take(clen, "config")?)
        .map_err(|e| Error::Integrity(format!("config block unreadable: {e}")))?;
    let epoch = r.u64("epoch")? as usize;
    let count = r.u64("parameter count")? as usize;
    let mut p = Predictor::new(config)?;
    if count != p.num_params() {
        return Err(Error::Integrity(format!(
            "checkpoint holds {count} parameters, configuration needs {}",
            p.num_params()
        )));
    }
    let raw = r.take(count.checked_mul(4).ok_or_else(|| Error::Integrity("parameter count overflow".into()))?, "parameters")?;
    if r.at != body.len() {
        return Err(Error::Integrity("trailing bytes after parameters".into()));
    }
    let params: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    p.net.set_params(&params);
    p.epoch = epoch;
    Ok(p)
}

pub fn save_checkpoint(p: &Predictor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(p)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Predictor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
