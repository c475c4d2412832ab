//! Versioned on-disk checkpoint.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes  "DSYSCKPT"
//! version   u32      currently 1
//! hdr_len   u64      byte length of the JSON header
//! header    JSON     {"config": ModelConfig, "params": [{name, shape, offset}], "meta": {..}}
//! data      f64 × N  every array back to back, offsets in values
//! ```
//!
//! Parameter names are dotted, branch-scoped paths:
//!
//! - `shared.time.fc1.{w,b}`, `shared.time.fc2.{w,b}`
//! - `video.patch.{w,b}`, `video.cond_embed`, `video.final.{mod,proj,skip}.{w,b}`
//! - `text.embed`
//! - `audio.in_proj.{w,b}`
//! - `{video,text,audio}.blocks.{i}.{mod,qkv,out,ff1,ff2}.{w,b}` (symmetric audio branch)
//! - `audio.blocks.{i}.xattn.{q,k,v}.{w,b}`, `audio.blocks.{i}.xattn.o.w` (cross-attention variant,
//!   which has no `audio.blocks.{i}.{mod,...}` arrays)
//!
//! Weights are stored `in × out`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{ParamSpec, ParamStore};
use super::{Model, ModelConfig, ModelError, Result};

const MAGIC: &[u8; 8] = b"DSYSCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParamStore,
    /// Free-form provenance (stage, step count, ...).
    pub meta: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    params: Vec<ParamSpec>,
    meta: BTreeMap<String, String>,
}

fn ck_err(e: impl std::fmt::Display) -> ModelError {
    ModelError::Checkpoint(e.to_string())
}

impl Checkpoint {
    pub fn from_model(model: &Model) -> Self {
        Self { config: model.cfg.clone(), params: model.params.clone(), meta: BTreeMap::new() }
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<String>) -> Self {
        self.meta.insert(key.to_string(), value.into());
        self
    }

    pub fn into_model(self) -> Result<Model> {
        Model::from_params(self.config, self.params)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header { config: self.config.clone(), params: self.params.specs().to_vec(), meta: self.meta.clone() };
        let json = serde_json::to_vec(&header).map_err(ck_err)?;
        let mut out = Vec::with_capacity(20 + json.len() + 8 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for v in self.params.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(ck_err("not a checkpoint file (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(ck_err(format!("unsupported checkpoint version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = bytes.get(20..).ok_or_else(|| ck_err("truncated"))?;
        if body.len() < hlen {
            return Err(ck_err("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..hlen]).map_err(ck_err)?;
        let raw = &body[hlen..];
        if raw.len() % 8 != 0 {
            return Err(ck_err("data section is not a whole number of f64 values"));
        }
        let data: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let params = ParamStore::from_parts(header.params, data).map_err(ck_err)?;
        Ok(Self { config: header.config, params, meta: header.meta })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path).map_err(ck_err)?;
        f.write_all(&bytes).map_err(ck_err)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(ck_err)?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bitwise() {
        let m = Model::new(ModelConfig { depth: 1, ..Default::default() }, 7).unwrap();
        let ck = Checkpoint::from_model(&m).with_meta("stage", "warmup");
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ck);
        let bits = |p: &ParamStore| p.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back.params), bits(&m.params));
        let m2 = back.into_model().unwrap();
        assert_eq!(m2.cfg, m.cfg);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        assert!(Checkpoint::from_bytes(b"nonsense").is_err());
        let m = Model::new(ModelConfig { depth: 1, ..Default::default() }, 7).unwrap();
        let mut b = Checkpoint::from_model(&m).to_bytes().unwrap();
        b[8] = 9;
        assert!(matches!(Checkpoint::from_bytes(&b), Err(ModelError::Checkpoint(m)) if m.contains("version")));
        let b = Checkpoint::from_model(&m).to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&b[..b.len() - 3]).is_err());
    }
}
