//! Checkpoint files.
//!
//! Layout (little-endian): `"TCMC"`, `u32` version, `u32` tensor count; per
//! tensor a `u16` name length, UTF-8 name, `u8` rank, `rank × u32` dims and
//! the `f64` values; then a `u32`-length-prefixed UTF-8 JSON config echo, the
//! `f64` validation loss and the `u32` epoch.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::{write_atomic, Reader};
use crate::error::{Error, Result};
use crate::model::{Classifier, ModelConfig, ParamStore};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TCMC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParamStore,
    /// JSON text describing the run; see [`ConfigEcho`].
    pub config: String,
    pub val_loss: f64,
    pub epoch: u32,
}

/// What the trainer records as a checkpoint's config echo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub model: ModelConfig,
    #[serde(default)]
    pub train: serde_json::Value,
}

impl Checkpoint {
    pub fn model_config(&self) -> Result<ModelConfig> {
        let echo: ConfigEcho = serde_json::from_str(&self.config)?;
        Ok(echo.model)
    }

    /// Rebuilds the classifier, checking names and shapes against the config.
    pub fn classifier(&self) -> Result<Classifier> {
        Classifier::from_params(self.model_config()?, self.params.clone())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&len_u32(self.params.len(), "tensor count")?.to_le_bytes());
        for (name, t) in self.params.iter() {
            let n = u16::try_from(name.len()).map_err(|_| Error::Checkpoint(format!("name too long: {name}")))?;
            out.extend_from_slice(&n.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let rank = u8::try_from(t.rank()).map_err(|_| Error::Checkpoint(format!("rank of {name} exceeds 255")))?;
            out.push(rank);
            for &d in t.shape() {
                out.extend_from_slice(&len_u32(d, "dimension")?.to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&len_u32(self.config.len(), "config length")?.to_le_bytes());
        out.extend_from_slice(self.config.as_bytes());
        out.extend_from_slice(&self.val_loss.to_le_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::Format {
                offset: 0,
                msg: "bad magic, expected \"TCMC\"".into(),
            });
        }
        let at = r.pos();
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format {
                offset: at,
                msg: format!("unsupported version {version}"),
            });
        }
        let count = r.u32("tensor count")? as usize;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let n = r.u16("name length")? as usize;
            let at = r.pos();
            let name = utf8(r.take(n, "name")?, at)?;
            let rank = r.u8("rank")? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32("dimension")? as usize);
            }
            let at = r.pos();
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&n| n <= r.remaining() / 8)
                .ok_or_else(|| Error::Format {
                    offset: at,
                    msg: format!("tensor {name} of shape {shape:?} exceeds the file"),
                })?;
            let data = r
                .take(numel * 8, "tensor values")?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            params
                .push(name.clone(), Tensor::new(shape, data)?)
                .map_err(|_| Error::Format {
                    offset: at,
                    msg: format!("duplicate tensor {name}"),
                })?;
        }
        let n = r.u32("config length")? as usize;
        let at = r.pos();
        let config = utf8(r.take(n, "config")?, at)?;
        let val_loss = r.f64("validation loss")?;
        let epoch = r.u32("epoch")?;
        if r.remaining() != 0 {
            return Err(Error::Format {
                offset: r.pos(),
                msg: format!("{} trailing bytes", r.remaining()),
            });
        }
        Ok(Checkpoint {
            params,
            config,
            val_loss,
            epoch,
        })
    }

    /// Atomic: the file appears complete or not at all.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.encode()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

fn len_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Checkpoint(format!("{what} {n} does not fit in u32")))
}

fn utf8(bytes: &[u8], offset: usize) -> Result<String> {
    std::str::from_utf8(bytes)
        .map(str::to_owned)
        .map_err(|e| Error::Format {
            offset,
            msg: format!("invalid UTF-8: {e}"),
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hand_fixture() -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(b"TCMC");
        b.extend_from_slice(&[1, 0, 0, 0]); // version
        b.extend_from_slice(&[1, 0, 0, 0]); // one tensor
        b.extend_from_slice(&[1, 0]); // name length
        b.push(b'w');
        b.push(2); // rank
        b.extend_from_slice(&[1, 0, 0, 0, 2, 0, 0, 0]); // 1×2
        b.extend_from_slice(&[0, 0, 0, 0, 0, 0, 0xF0, 0x3F]); // 1.0
        b.extend_from_slice(&[0, 0, 0, 0, 0, 0, 0x04, 0xC0]); // -2.5
        b.extend_from_slice(&[2, 0, 0, 0]);
        b.extend_from_slice(b"{}");
        b.extend_from_slice(&[0, 0, 0, 0, 0, 0, 0xE0, 0x3F]); // 0.5
        b.extend_from_slice(&[3, 0, 0, 0]);
        b
    }

    #[test]
    fn hand_built_file_parses_and_reencodes() {
        let c = Checkpoint::decode(&hand_fixture()).unwrap();
        assert_eq!(c.params.len(), 1);
        let (name, t) = c.params.by_index(0);
        assert_eq!(name, "w");
        assert_eq!(t.shape(), &[1, 2]);
        assert_eq!(t.data(), &[1.0, -2.5]);
        assert_eq!(c.config, "{}");
        assert_eq!(c.val_loss, 0.5);
        assert_eq!(c.epoch, 3);
        assert_eq!(c.encode().unwrap(), hand_fixture());
    }

    #[test]
    fn truncations_and_bad_magic_are_format_errors() {
        let full = hand_fixture();
        for cut in 0..full.len() {
            assert!(
                matches!(Checkpoint::decode(&full[..cut]), Err(Error::Format { .. })),
                "cut {cut}"
            );
        }
        let mut b = full.clone();
        b[3] = b'X';
        assert!(matches!(Checkpoint::decode(&b), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn save_load_is_bit_exact_and_leaves_no_temp() {
        let model = Classifier::new(
            ModelConfig {
                feature_dim: 3,
                model_dim: 8,
                heads: 2,
                blocks: 1,
                conv_kernel: 3,
                ..ModelConfig::desk_scale()
            },
            4,
        )
        .unwrap();
        let echo = ConfigEcho {
            model: model.config().clone(),
            train: serde_json::Value::Null,
        };
        let c = Checkpoint {
            params: model.params().clone(),
            config: serde_json::to_string(&echo).unwrap(),
            val_loss: 0.1 + 0.2,
            epoch: 9,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        c.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.val_loss.to_bits(), c.val_loss.to_bits());
        assert_eq!(back.classifier().unwrap(), model);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);

        let mut wrong = echo.model.clone();
        wrong.model_dim = 16;
        let bad = Checkpoint {
            config: serde_json::to_string(&ConfigEcho {
                model: wrong,
                train: serde_json::Value::Null,
            })
            .unwrap(),
            ..c
        };
        assert!(bad.classifier().is_err());
    }
}
