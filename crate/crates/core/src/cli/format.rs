//! `UDP1` dataset container and its JSON sidecar.
//!
//! Layout: magic `UDP1`, little-endian `u32` n, m, d, a `u8` kind
//! (0 = real, 1 = categorical), then row-major `f64` samples or `u32`
//! categories.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{DpError, Result};
use crate::synthdata::{AdversarySpec, DataSpec};
use crate::userlevel::{DiscreteSamples, UserDataset};

pub const MAGIC: &[u8; 4] = b"UDP1";
const HEADER_LEN: usize = 4 + 3 * 4 + 1;

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetFile {
    Real(UserDataset),
    Categorical(DiscreteSamples),
}

impl DatasetFile {
    pub fn shape(&self) -> (usize, usize, usize) {
        match self {
            DatasetFile::Real(x) => (x.n(), x.m(), x.d()),
            DatasetFile::Categorical(x) => (x.n(), x.m(), x.d()),
        }
    }

    /// Real view; categorical samples become one-hot vectors.
    pub fn to_real(&self) -> UserDataset {
        match self {
            DatasetFile::Real(x) => x.clone(),
            DatasetFile::Categorical(x) => x.one_hot(),
        }
    }
}

/// Generating spec and true mean stored next to a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub version: String,
    pub spec: DataSpec,
    pub true_mean: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adversary: Option<AdversarySpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub corrupted_users: Vec<usize>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DpError + '_ {
    move |source| DpError::Io { path: path.display().to_string(), source }
}

fn dim_u32(v: usize, name: &str) -> Result<[u8; 4]> {
    u32::try_from(v)
        .map(u32::to_le_bytes)
        .map_err(|_| DpError::invalid(format!("{name} = {v} does not fit the container")))
}

pub fn encode(file: &DatasetFile) -> Result<Vec<u8>> {
    let (n, m, d) = file.shape();
    let mut out = Vec::with_capacity(HEADER_LEN + n * m * d * 8);
    out.extend_from_slice(MAGIC);
    for (v, name) in [(n, "n"), (m, "m"), (d, "d")] {
        out.extend_from_slice(&dim_u32(v, name)?);
    }
    match file {
        DatasetFile::Real(x) => {
            out.push(0);
            x.as_flat().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        }
        DatasetFile::Categorical(x) => {
            out.push(1);
            x.as_flat().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<DatasetFile> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(DpError::Parse("missing UDP1 header".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (n, m, d) = (word(0), word(1), word(2));
    let body = &bytes[HEADER_LEN..];
    let count = n
        .checked_mul(m)
        .and_then(|x| x.checked_mul(d))
        .ok_or_else(|| DpError::Parse("header dimensions overflow".into()))?;
    let bad = |e: DpError| DpError::Parse(format!("invalid dataset body: {e}"));
    match bytes[HEADER_LEN - 1] {
        0 => {
            if body.len() != count * 8 {
                return Err(DpError::Parse(format!("expected {} payload bytes, found {}", count * 8, body.len())));
            }
            let data = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            UserDataset::new(n, m, d, data).map(DatasetFile::Real).map_err(bad)
        }
        1 => {
            let count = n * m;
            if body.len() != count * 4 {
                return Err(DpError::Parse(format!("expected {} payload bytes, found {}", count * 4, body.len())));
            }
            let data = body.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
            DiscreteSamples::new(n, m, d, data).map(DatasetFile::Categorical).map_err(bad)
        }
        k => Err(DpError::Parse(format!("unknown dataset kind {k}"))),
    }
}

pub fn write_dataset(path: &Path, file: &DatasetFile) -> Result<()> {
    fs::write(path, encode(file)?).map_err(io_err(path))
}

pub fn read_dataset(path: &Path) -> Result<DatasetFile> {
    decode(&fs::read(path).map_err(io_err(path))?)
}

pub fn write_sidecar(path: &Path, sidecar: &Sidecar) -> Result<()> {
    let p = sidecar_path(path);
    let text = serde_json::to_string_pretty(sidecar).map_err(|e| DpError::Parse(e.to_string()))?;
    fs::write(&p, text + "\n").map_err(io_err(&p))
}

/// `Ok(None)` when no sidecar exists.
pub fn read_sidecar(path: &Path) -> Result<Option<Sidecar>> {
    let p = sidecar_path(path);
    if !p.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&p).map_err(io_err(&p))?;
    serde_json::from_str(&text).map(Some).map_err(|e| DpError::Parse(format!("{}: {e}", p.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_real_and_categorical() {
        let real = DatasetFile::Real(UserDataset::new(2, 3, 2, (0..12).map(|i| i as f64 * 0.1 - 0.3).collect()).unwrap());
        assert_eq!(decode(&encode(&real).unwrap()).unwrap(), real);
        let cat = DatasetFile::Categorical(DiscreteSamples::new(2, 2, 4, vec![1, 4, 2, 3]).unwrap());
        let bytes = encode(&cat).unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 16);
        assert_eq!(decode(&bytes).unwrap(), cat);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(decode(b"NOPE"), Err(DpError::Parse(_))));
        let real = DatasetFile::Real(UserDataset::new(1, 1, 1, vec![0.5]).unwrap());
        let mut bytes = encode(&real).unwrap();
        bytes.pop();
        assert!(matches!(decode(&bytes), Err(DpError::Parse(_))));
        let mut bytes = encode(&real).unwrap();
        bytes[HEADER_LEN - 1] = 7;
        assert!(matches!(decode(&bytes), Err(DpError::Parse(_))));
        let cat = DatasetFile::Categorical(DiscreteSamples::new(1, 1, 2, vec![2]).unwrap());
        let mut bytes = encode(&cat).unwrap();
        bytes[HEADER_LEN] = 9;
        assert!(matches!(decode(&bytes), Err(DpError::Parse(_))));
    }

    #[test]
    fn missing_file_is_io_error() {
        match read_dataset(Path::new("/nonexistent/x.udp")) {
            Err(DpError::Io { path, .. }) => assert!(path.contains("x.udp")),
            other => panic!("{other:?}"),
        }
    }
}
