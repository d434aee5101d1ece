//! Dataset container: a directory with `meta.json` plus one flat
//! little-endian f64 file per array (`<name>.bin`, row-major, shape in meta).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayInfo {
    pub shape: Vec<usize>,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Meta<T> {
    schema_version: u32,
    arrays: BTreeMap<String, ArrayInfo>,
    #[serde(flatten)]
    payload: T,
}

fn to_bytes(data: &[f64]) -> Vec<u8> {
    data.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn write<T: Serialize>(dir: &Path, payload: &T, arrays: &[(&str, Vec<usize>, &[f64])]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut infos = BTreeMap::new();
    for (name, shape, data) in arrays {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: data.len(),
            });
        }
        let bytes = to_bytes(data);
        let path = dir.join(format!("{name}.bin"));
        fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        infos.insert(
            name.to_string(),
            ArrayInfo {
                shape: shape.clone(),
                sha256: hex::encode(Sha256::digest(&bytes)),
            },
        );
    }
    let meta = Meta {
        schema_version: SCHEMA_VERSION,
        arrays: infos,
        payload,
    };
    let path = dir.join("meta.json");
    fs::write(&path, serde_json::to_vec_pretty(&meta)?).map_err(|e| Error::io(&path, e))
}

/// Reads the payload and every array listed in the metadata, verifying
/// shapes and digests.
pub fn read<T: DeserializeOwned>(dir: &Path) -> Result<(T, BTreeMap<String, (Vec<usize>, Vec<f64>)>)> {
    let path = dir.join("meta.json");
    let raw = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let meta: Meta<T> = serde_json::from_slice(&raw)?;
    if meta.schema_version != SCHEMA_VERSION {
        return Err(Error::Corrupt {
            path,
            msg: format!("unsupported schema version {}", meta.schema_version),
        });
    }
    let mut out = BTreeMap::new();
    for (name, info) in meta.arrays {
        let p = dir.join(format!("{name}.bin"));
        let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        if hex::encode(Sha256::digest(&bytes)) != info.sha256 {
            return Err(Error::Checksum { path: p });
        }
        let n: usize = info.shape.iter().product();
        if bytes.len() != 8 * n {
            return Err(Error::Corrupt {
                path: p,
                msg: format!("expected {} values, found {} bytes", n, bytes.len()),
            });
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.insert(name, (info.shape, data));
    }
    Ok((meta.payload, out))
}

pub(crate) fn take(
    arrays: &mut BTreeMap<String, (Vec<usize>, Vec<f64>)>,
    name: &str,
    dir: &Path,
) -> Result<(Vec<usize>, Vec<f64>)> {
    arrays.remove(name).ok_or_else(|| Error::Corrupt {
        path: dir.to_path_buf(),
        msg: format!("missing array {name}"),
    })
}
