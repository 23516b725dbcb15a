//! Binary checkpoint container for neural scorers.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     4 bytes  "SSCK"
//! version   u32      1
//! hdr_len   u64      length of the JSON header
//! header    JSON     {"model": <config>, "meta": <meta>, "config_hash": <hex sha256>}
//! count     u32      number of tensors
//! tensor*   name_len u32, name bytes (UTF-8), rows u64, cols u64,
//!           rows*cols f64 values, row-major
//! ```
//!
//! `config_hash` is the SHA-256 of the compact JSON of `model`. Values are
//! always stored as `f64` so a file reads identically on every platform and
//! `f32` parameters round-trip exactly.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AnyModel, AttnConfig, AttnRec, GruConfig, GruRec};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::{ParamSet, Tensor};

const MAGIC: &[u8; 4] = b"SSCK";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NeuralConfig {
    Attn(AttnConfig),
    Gru(GruConfig),
}

/// Free-form provenance stored next to the parameters.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub split: String,
    pub target: String,
    pub loss: String,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: NeuralConfig,
    meta: CheckpointMeta,
    config_hash: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub config: NeuralConfig,
    pub meta: CheckpointMeta,
    pub config_hash: String,
    pub params: ParamSet<T>,
}

pub fn config_hash(config: &NeuralConfig) -> String {
    let json = serde_json::to_vec(config).expect("config serializes");
    hex::encode(Sha256::digest(&json))
}

impl<T: Real> Checkpoint<T> {
    pub fn from_model(model: &AnyModel<T>, meta: CheckpointMeta) -> Result<Self> {
        let (config, params) = match model {
            AnyModel::Attn(m) => (NeuralConfig::Attn(m.config.clone()), m.params.clone()),
            AnyModel::Gru(m) => (NeuralConfig::Gru(m.config.clone()), m.params.clone()),
            other => {
                return Err(Error::Checkpoint(format!("{} has no parameters to save", other.kind())));
            }
        };
        let config_hash = config_hash(&config);
        Ok(Checkpoint { config, meta, config_hash, params })
    }

    pub fn into_model(self) -> Result<AnyModel<T>> {
        Ok(match self.config {
            NeuralConfig::Attn(c) => AnyModel::Attn(AttnRec::from_params(c, self.params)?),
            NeuralConfig::Gru(c) => AnyModel::Gru(GruRec::from_params(c, self.params)?),
        })
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let header = Header { model: self.config.clone(), meta: self.meta.clone(), config_hash: self.config_hash.clone() };
        let header = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        w.write_all(&(self.params.tensors.len() as u32).to_le_bytes())?;
        for t in &self.params.tensors {
            w.write_all(&(t.name.len() as u32).to_le_bytes())?;
            w.write_all(t.name.as_bytes())?;
            w.write_all(&(t.rows as u64).to_le_bytes())?;
            w.write_all(&(t.cols as u64).to_le_bytes())?;
            for x in &t.data {
                w.write_all(&x.as_f64().to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let hdr_len = read_u64(&mut r)? as usize;
        let mut hdr = vec![0u8; hdr_len];
        r.read_exact(&mut hdr)?;
        let header: Header = serde_json::from_slice(&hdr).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if config_hash(&header.model) != header.config_hash {
            return Err(Error::Checkpoint("config hash mismatch".into()));
        }
        let count = read_u32(&mut r)? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|e| Error::Checkpoint(e.to_string()))?;
            let rows = read_u64(&mut r)? as usize;
            let cols = read_u64(&mut r)? as usize;
            let mut data = Vec::with_capacity(rows * cols);
            let mut buf = [0u8; 8];
            for _ in 0..rows * cols {
                r.read_exact(&mut buf)?;
                data.push(T::lit(f64::from_le_bytes(buf)));
            }
            tensors.push(Tensor { name, rows, cols, data });
        }
        Ok(Checkpoint { config: header.model, meta: header.meta, config_hash: header.config_hash, params: ParamSet { tensors } })
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn f32_round_trip_is_exact() {
        let m = GruRec::<f32>::new(GruConfig::new(7, 3, 5), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let ck = Checkpoint::from_model(&AnyModel::Gru(m.clone()), CheckpointMeta::default()).unwrap();
        let mut bytes = Vec::new();
        ck.write(&mut bytes).unwrap();
        let back = Checkpoint::<f32>::read(bytes.as_slice()).unwrap();
        assert_eq!(back, ck);
        match back.into_model().unwrap() {
            AnyModel::Gru(g) => assert_eq!(g, m),
            _ => panic!("wrong kind"),
        }
    }

    #[test]
    fn corrupted_header_is_rejected() {
        let m = AttnRec::<f64>::new(AttnConfig::new(4, 2, 3), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let ck = Checkpoint::from_model(&AnyModel::Attn(m), CheckpointMeta::default()).unwrap();
        let mut bytes = Vec::new();
        ck.write(&mut bytes).unwrap();
        bytes[0] = b'X';
        assert!(Checkpoint::<f64>::read(bytes.as_slice()).is_err());
    }

    #[test]
    fn hash_tracks_config() {
        let a = NeuralConfig::Gru(GruConfig::new(4, 2, 3));
        let b = NeuralConfig::Gru(GruConfig::new(4, 2, 4));
        assert_ne!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a), config_hash(&a.clone()));
    }
}
