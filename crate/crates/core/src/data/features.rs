//! Binary feature files.
//!
//! Layout (all integers little-endian):
//! `"TCMF"`, `u32` version, `u8` label, `u16` id length, UTF-8 id,
//! `u32` T, `u32` F, then `T·F` `f32` values row-major.

use std::fs;
use std::path::Path;

use super::{Label, Utterance};
use crate::binio::Reader;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FEATURE_MAGIC: &[u8; 4] = b"TCMF";
pub const FEATURE_VERSION: u32 = 1;

/// Serializes `utt`. Values are stored as `f32`; anything not exactly
/// representable is rounded.
pub fn encode_features(utt: &Utterance) -> Result<Vec<u8>> {
    let id = utt.id.as_bytes();
    let id_len = u16::try_from(id.len())
        .map_err(|_| Error::config(format!("utterance id is {} bytes, limit is {}", id.len(), u16::MAX)))?;
    let (t, f) = utt.features.dims2()?;
    let as_u32 =
        |n: usize, what: &str| u32::try_from(n).map_err(|_| Error::config(format!("{what} {n} does not fit in u32")));
    let (t32, f32_) = (as_u32(t, "frame count")?, as_u32(f, "feature dim")?);

    let mut out = Vec::with_capacity(4 + 4 + 1 + 2 + id.len() + 8 + 4 * t * f);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.push(utt.label.index() as u8);
    out.extend_from_slice(&id_len.to_le_bytes());
    out.extend_from_slice(id);
    out.extend_from_slice(&t32.to_le_bytes());
    out.extend_from_slice(&f32_.to_le_bytes());
    for &v in utt.features.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_features(bytes: &[u8]) -> Result<Utterance> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4, "magic")?;
    if magic != FEATURE_MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: format!("bad magic {magic:?}, expected \"TCMF\""),
        });
    }
    let at = r.pos();
    let version = r.u32("version")?;
    if version != FEATURE_VERSION {
        return Err(Error::Format {
            offset: at,
            msg: format!("unsupported version {version}"),
        });
    }
    let at = r.pos();
    let label_byte = r.u8("label")?;
    let label = Label::from_index(label_byte).ok_or_else(|| Error::Format {
        offset: at,
        msg: format!("label byte {label_byte} is neither 0 nor 1"),
    })?;
    let id_len = r.u16("id length")? as usize;
    let at = r.pos();
    let id = std::str::from_utf8(r.take(id_len, "id")?)
        .map_err(|e| Error::Format {
            offset: at,
            msg: format!("id is not UTF-8: {e}"),
        })?
        .to_owned();
    let t = r.u32("frame count")? as usize;
    let f = r.u32("feature dim")? as usize;
    let at = r.pos();
    let n = t
        .checked_mul(f)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format {
            offset: at,
            msg: format!("T={t} × F={f} overflows"),
        })?;
    let data: Vec<f64> = r
        .take(n, "feature values")?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    if r.pos() != bytes.len() {
        return Err(Error::Format {
            offset: r.pos(),
            msg: format!("{} trailing bytes", bytes.len() - r.pos()),
        });
    }
    Ok(Utterance {
        id,
        label,
        features: Tensor::new([t, f], data)?,
    })
}

pub fn write_features(utt: &Utterance, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_features(utt)?).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: impl AsRef<Path>) -> Result<Utterance> {
    let path = path.as_ref();
    decode_features(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
