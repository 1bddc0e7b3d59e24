//! Binary checkpoint format.
//!
//! ```text
//! magic    8 bytes   "SIMDSTCK"
//! version  u32 LE
//! hlen     u64 LE    length of the JSON header
//! header   hlen bytes UTF-8 JSON: config, epoch, dev scores, and the
//!                    parameter table [{name, shape}] sorted by name
//! payload  for each table entry, product(shape) f64 LE values
//! ```
//!
//! The frozen word table is not stored; it is reloaded from the embedding
//! file. No timestamps are written, so equal runs give equal bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SIMDSTCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub epoch: usize,
    pub dev_joint_goal: f64,
    pub dev_turn_request: f64,
    pub params: ParamStore,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    epoch: usize,
    dev_joint_goal: f64,
    dev_turn_request: f64,
    params: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let trainable: Vec<_> = self.params.iter_by_name().filter(|(_, p)| !p.frozen).collect();
        let header = Header {
            config: self.config.clone(),
            epoch: self.epoch,
            dev_joint_goal: self.dev_joint_goal,
            dev_turn_request: self.dev_turn_request,
            params: trainable
                .iter()
                .map(|(name, p)| Entry {
                    name: name.to_string(),
                    shape: p.value.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let payload: usize = trainable.iter().map(|(_, p)| p.value.len() * 8).sum();
        let mut out = Vec::with_capacity(20 + json.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, p) in trainable {
            for x in p.value.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = &bytes[20..];
        if body.len() < hlen {
            return Err(bad("truncated header"));
        }
        let header: Header =
            serde_json::from_slice(&body[..hlen]).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        let mut rest = &body[hlen..];
        let mut params = ParamStore::new();
        for entry in header.params {
            let n: usize = entry.shape.iter().product();
            if rest.len() < n * 8 {
                return Err(Error::Checkpoint(format!("truncated payload at `{}`", entry.name)));
            }
            let data = rest[..n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            rest = &rest[n * 8..];
            let value = Tensor::new(entry.shape, data).map_err(|e| Error::Checkpoint(e.to_string()))?;
            params.add(entry.name, value, false)?;
        }
        if !rest.is_empty() {
            return Err(bad("trailing bytes after payload"));
        }
        Ok(Self {
            config: header.config,
            epoch: header.epoch,
            dev_joint_goal: header.dev_joint_goal,
            dev_turn_request: header.dev_turn_request,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut params = ParamStore::new();
        params.add("z", Tensor::vector(vec![1.5, -0.25]), false).unwrap();
        params.add("a", Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, f64::MIN_POSITIVE]).unwrap(), false).unwrap();
        params.add("frozen", Tensor::vector(vec![9.0]), true).unwrap();
        Checkpoint {
            config: TrainConfig::default(),
            epoch: 3,
            dev_joint_goal: 0.25,
            dev_turn_request: 0.75,
            params,
        }
    }

    #[test]
    fn round_trip_skips_frozen() {
        let ck = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back.epoch, 3);
        assert_eq!(back.params.len(), 2);
        assert_eq!(back.params.value(back.params.id("a").unwrap()), ck.params.value(ck.params.id("a").unwrap()));
        assert_eq!(back.to_bytes().unwrap(), ck.to_bytes().unwrap());
    }

    #[test]
    fn layout_starts_with_magic_and_version() {
        let bytes = sample().to_bytes().unwrap();
        assert_eq!(&bytes[..8], b"SIMDSTCK");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        let mut wrong = bytes;
        wrong[0] = b'X';
        assert!(Checkpoint::from_bytes(&wrong).is_err());
    }
}
