//! Binary checkpoint format, version 1. All integers and floats little-endian.
//!
//! ```text
//! magic        8 bytes  "BIASCKPT"
//! version      u32      1
//! config_len   u64      followed by that many bytes of JSON (TrainConfig)
//! iteration    u64
//! epoch        u64
//! rng_state    u64      state of the view-noise stream
//! input_dim    u64
//! embed_dim    u64
//! logit_scale  f64
//! anchors      2 · embed_dim f64, live then spoof
//! weights      embed.weight (row-major), embed.bias, hidden.weight,
//!              hidden.bias, classifier.weight, classifier.bias, all f64
//! has_velocity u8       0 or 1; when 1, a second weights block follows
//! ```

use std::path::Path;

use super::config::TrainConfig;
use super::{ModelParams, Weights};
use crate::error::{Error, Result};
use crate::fod::TextAnchors;

const MAGIC: &[u8; 8] = b"BIASCKPT";
const VERSION: u32 = 1;

/// Complete training state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub config: TrainConfig,
    pub iteration: u64,
    pub epoch: u64,
    pub rng_state: u64,
    /// Momentum buffer; absent for plain SGD.
    pub velocity: Option<Weights>,
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn put_weights(out: &mut Vec<u8>, w: &Weights) {
    for block in w.blocks() {
        put_f64s(out, block);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Parse {
            line: 0,
            column: self.pos,
            message: "checkpoint truncated".into(),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64s(&mut self, dst: &mut [f64]) -> Result<()> {
        for x in dst {
            *x = self.f64()?;
        }
        Ok(())
    }

    fn weights(&mut self, input_dim: usize, embed_dim: usize) -> Result<Weights> {
        let mut w = Weights::zeros(input_dim, embed_dim);
        for block in w.blocks_mut() {
            self.f64s(block)?;
        }
        Ok(w)
    }

    fn error(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            line: 0,
            column: self.pos,
            message: message.into(),
        }
    }
}

/// Dimensions above this are rejected as corrupt.
const MAX_DIM: u64 = 1 << 24;

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let config = serde_json::to_vec(&self.config).expect("config serializes");
        put_u64(&mut out, config.len() as u64);
        out.extend_from_slice(&config);
        put_u64(&mut out, self.iteration);
        put_u64(&mut out, self.epoch);
        put_u64(&mut out, self.rng_state);
        put_u64(&mut out, self.params.input_dim() as u64);
        put_u64(&mut out, self.params.embed_dim() as u64);
        put_f64s(&mut out, &[self.params.logit_scale]);
        for a in self.params.anchors.as_array() {
            put_f64s(&mut out, a);
        }
        put_weights(&mut out, &self.params.weights);
        match &self.velocity {
            Some(v) => {
                out.push(1);
                put_weights(&mut out, v);
            }
            None => out.push(0),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(r.error("not a checkpoint file (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.error(format!("unsupported checkpoint version {version}")));
        }
        let config_len = r.u64()? as usize;
        let config: TrainConfig = serde_json::from_slice(r.take(config_len)?)
            .map_err(|e| r.error(format!("bad config record: {e}")))?;
        let iteration = r.u64()?;
        let epoch = r.u64()?;
        let rng_state = r.u64()?;
        let input_dim = r.u64()?;
        let embed_dim = r.u64()?;
        if input_dim == 0 || embed_dim == 0 || input_dim > MAX_DIM || embed_dim > MAX_DIM {
            return Err(r.error(format!("implausible dimensions {input_dim}x{embed_dim}")));
        }
        let (input_dim, embed_dim) = (input_dim as usize, embed_dim as usize);
        let logit_scale = r.f64()?;
        let mut live = vec![0.0; embed_dim];
        let mut spoof = vec![0.0; embed_dim];
        r.f64s(&mut live)?;
        r.f64s(&mut spoof)?;
        let anchors = TextAnchors::from_unit(live, spoof)?;
        let weights = r.weights(input_dim, embed_dim)?;
        let velocity = match r.u8()? {
            0 => None,
            1 => Some(r.weights(input_dim, embed_dim)?),
            other => return Err(r.error(format!("bad velocity flag {other}"))),
        };
        if r.pos != bytes.len() {
            return Err(r.error("trailing bytes after checkpoint"));
        }
        if !weights.is_finite() {
            return Err(Error::Numerical(
                "checkpoint holds non-finite weights".into(),
            ));
        }
        Ok(Checkpoint {
            params: ModelParams::new(weights, anchors, logit_scale)?,
            config,
            iteration,
            epoch,
            rng_state,
            velocity,
        })
    }

    /// Writes the checkpoint, creating missing parent directories.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
