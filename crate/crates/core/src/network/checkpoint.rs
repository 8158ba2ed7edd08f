//! Checkpoint file: magic bytes, a JSON header (architecture, precision,
//! head constants as IEEE bit patterns, free-form metadata), then every
//! parameter little-endian in the stored precision, in `MlpParams::iter` order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, HeadBinding, MlpParams, Precision, Real};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SPINNCK1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub params: MlpParams<T>,
    pub head: HeadBinding,
    pub meta: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    arch: Architecture,
    precision: Precision,
    x0_bits: Vec<u64>,
    d0_bits: Vec<u64>,
    meta: BTreeMap<String, String>,
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn unbits(v: &[u64]) -> Vec<f64> {
    v.iter().map(|&b| f64::from_bits(b)).collect()
}

pub fn write_checkpoint<T: Real>(path: &Path, ck: &Checkpoint<T>) -> Result<()> {
    let header = Header {
        arch: ck.params.arch.clone(),
        precision: T::PRECISION,
        x0_bits: bits(&ck.head.x0),
        d0_bits: bits(&ck.head.d0),
        meta: ck.meta.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Format {
        path: path.into(),
        message: e.to_string(),
    })?;
    let mut out = Vec::with_capacity(16 + json.len() + ck.params.num_params() * T::BYTES);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for &v in ck.params.iter() {
        v.write_le(&mut out);
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn split(path: &Path, bytes: &[u8]) -> Result<(Header, usize)> {
    let bad = |message: &str| Error::Format {
        path: path.into(),
        message: message.into(),
    };
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let end = 16usize.checked_add(len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[16..end]).map_err(|e| bad(&e.to_string()))?;
    Ok((header, end))
}

fn load(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Precision a checkpoint was stored in.
pub fn checkpoint_precision(path: &Path) -> Result<Precision> {
    Ok(split(path, &load(path)?)?.0.precision)
}

pub fn read_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = load(path)?;
    let (header, start) = split(path, &bytes)?;
    if header.precision != T::PRECISION {
        return Err(Error::Format {
            path: path.into(),
            message: format!(
                "stored in {} precision, requested {}",
                header.precision.label(),
                T::PRECISION.label()
            ),
        });
    }
    let count = header.arch.num_params();
    let body = &bytes[start..];
    if body.len() != count * T::BYTES {
        return Err(Error::Format {
            path: path.into(),
            message: format!("expected {} parameter bytes, found {}", count * T::BYTES, body.len()),
        });
    }
    let flat: Vec<T> = body.chunks_exact(T::BYTES).map(T::read_le).collect();
    let params = MlpParams::from_flat(&header.arch, &flat)?;
    Ok(Checkpoint {
        params,
        head: HeadBinding {
            x0: unbits(&header.x0_bits),
            d0: unbits(&header.d0_bits),
        },
        meta: header.meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{init_params, InitScheme};
    use crate::rng::{stream, Domain};

    fn sample<T: Real>() -> Checkpoint<T> {
        let arch = Architecture::for_problem(8, 1, 1, 512).unwrap();
        let params = init_params(&arch, InitScheme::Glorot, &mut stream(1, Domain::Test, 0, 0));
        let mut meta = BTreeMap::new();
        meta.insert("seed".to_string(), "1".to_string());
        Checkpoint {
            params,
            head: HeadBinding {
                x0: vec![-0.3],
                d0: vec![0.1 + 0.2],
            },
            meta,
        }
    }

    #[test]
    fn bit_exact_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p32 = dir.path().join("a.ckpt");
        let ck = sample::<f32>();
        write_checkpoint(&p32, &ck).unwrap();
        let back: Checkpoint<f32> = read_checkpoint(&p32).unwrap();
        assert!(ck.params.iter().zip(back.params.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(back, ck);
        assert_eq!(checkpoint_precision(&p32).unwrap(), Precision::Single);

        let p64 = dir.path().join("b.ckpt");
        let ck = sample::<f64>();
        write_checkpoint(&p64, &ck).unwrap();
        assert_eq!(read_checkpoint::<f64>(&p64).unwrap(), ck);
        assert!(read_checkpoint::<f32>(&p64).is_err());
    }

    #[test]
    fn missing_and_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("none.ckpt");
        let err = read_checkpoint::<f64>(&missing).unwrap_err();
        assert!(err.to_string().contains("none.ckpt"));
        let junk = dir.path().join("junk.ckpt");
        std::fs::write(&junk, b"hello").unwrap();
        assert!(matches!(read_checkpoint::<f64>(&junk), Err(Error::Format { .. })));
    }
}
