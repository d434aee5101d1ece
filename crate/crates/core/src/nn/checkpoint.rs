//! Model checkpoint format.
//!
//! ```text
//! magic      8 bytes  "HSRMNN\0\0"
//! version    u32 LE
//! n_layers   u32 LE
//! per layer:
//!   desc_len u32 LE, desc: UTF-8 JSON LayerSpec
//!   n_params u32 LE
//!   per parameter: ndim u32 LE, dims u64 LE x ndim, data f64 LE x prod(dims)
//! sha256     32 bytes over everything above
//! ```
//!
//! A JSON sidecar (`<file>.json`) carries the layer specs, free-form
//! hyperparameters and the hex digest.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::{LayerSpec, Model};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"HSRMNN\0\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format_version: u32,
    pub layers: Vec<LayerSpec>,
    pub hyper: serde_json::Value,
    pub sha256: String,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn encode(model: &Model) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(model.layers.len() as u32).to_le_bytes());
    for layer in &model.layers {
        let desc = serde_json::to_vec(&layer.spec())?;
        buf.extend_from_slice(&(desc.len() as u32).to_le_bytes());
        buf.extend_from_slice(&desc);
        let params = layer.params();
        buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
        for p in params {
            buf.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
            for &d in &p.shape {
                buf.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in &p.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    Ok(buf)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(self.corrupt("truncated"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn corrupt(&self, msg: &str) -> Error {
        Error::Corrupt {
            path: self.path.to_path_buf(),
            msg: msg.to_string(),
        }
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Model> {
    if bytes.len() < MAGIC.len() + 8 + 32 {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            msg: "file too short".into(),
        });
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checksum {
            path: path.to_path_buf(),
        });
    }
    let mut r = Reader {
        buf: body,
        pos: 0,
        path,
    };
    if r.take(8)? != MAGIC {
        return Err(r.corrupt("bad magic"));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(r.corrupt(&format!("unsupported format version {version}")));
    }
    let n_layers = r.u32()? as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let len = r.u32()? as usize;
        let spec: LayerSpec = serde_json::from_slice(r.take(len)?)?;
        let mut layer = spec.build(&mut rng);
        let n_params = r.u32()? as usize;
        let mut params = layer.params_mut();
        if n_params != params.len() {
            return Err(r.corrupt("parameter count does not match layer kind"));
        }
        for p in params.iter_mut() {
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            if shape != p.shape {
                return Err(r.corrupt(&format!("parameter shape {shape:?}, expected {:?}", p.shape)));
            }
            for v in p.data.iter_mut() {
                *v = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
            }
        }
        layers.push(layer);
    }
    if r.pos != body.len() {
        return Err(r.corrupt("trailing bytes"));
    }
    Ok(Model::new(layers))
}

/// Writes the binary checkpoint and its sidecar.
pub fn save(model: &Model, path: &Path, hyper: serde_json::Value) -> Result<()> {
    let bytes = encode(model)?;
    let sha = hex::encode(&bytes[bytes.len() - 32..]);
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    let side = Sidecar {
        format_version: FORMAT_VERSION,
        layers: model.specs(),
        hyper,
        sha256: sha,
    };
    let sp = sidecar_path(path);
    fs::write(&sp, serde_json::to_vec_pretty(&side)?).map_err(|e| Error::io(&sp, e))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(Model, Option<Sidecar>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let model = decode(&bytes, path)?;
    let sp = sidecar_path(path);
    let side = match fs::read(&sp) {
        Ok(b) => Some(serde_json::from_slice::<Sidecar>(&b)?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(Error::io(&sp, e)),
    };
    Ok((model, side))
}
