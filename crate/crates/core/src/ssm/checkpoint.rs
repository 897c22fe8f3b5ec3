//! Parameter checkpoints: `PSSM`, a version word, a manifest of
//! `(name, shape, offset)` entries, then the raw little-endian `f32` payload.
//! The model configuration travels in a JSON file next to it.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use evssm_autodiff::optim::ParamStore;
use evssm_autodiff::{Scalar, Tensor};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CoreError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PSSM";
pub const CHECKPOINT_VERSION: u32 = 1;

/// `model.pssm` -> `model.pssm.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes every parameter of `store` (cast to `f32`) and `config` as the
/// sidecar.
pub fn save_checkpoint<T: Scalar, C: Serialize>(
    path: &Path,
    store: &ParamStore<T>,
    config: &C,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    let mut offset = 0u64;
    for e in store.entries() {
        let name = e.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[e.decay as u8])?;
        w.write_all(&(e.value.rank() as u32).to_le_bytes())?;
        for &d in e.value.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        w.write_all(&offset.to_le_bytes())?;
        offset += e.value.len() as u64;
    }
    for e in store.entries() {
        for v in e.value.data() {
            w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    serde_json::to_writer_pretty(File::create(sidecar_path(path))?, config)?;
    Ok(())
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)
        .map_err(|_| CoreError::Checkpoint("truncated checkpoint".into()))?;
    Ok(b)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

pub fn load_checkpoint<T: Scalar, C: DeserializeOwned>(path: &Path) -> Result<(ParamStore<T>, C)> {
    if !path.exists() {
        return Err(CoreError::MissingFile(path.to_path_buf()));
    }
    let mut r = BufReader::new(File::open(path)?);
    if &read_array::<4>(&mut r)? != CHECKPOINT_MAGIC {
        return Err(CoreError::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(CoreError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }
    let count = read_u32(&mut r)? as usize;
    let mut manifest = Vec::with_capacity(count.min(1 << 16));
    let mut expected = 0u64;
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        if len > 4096 {
            return Err(CoreError::Checkpoint(format!(
                "parameter name of {len} bytes"
            )));
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)
            .map_err(|_| CoreError::Checkpoint("truncated checkpoint".into()))?;
        let name = String::from_utf8(name)
            .map_err(|_| CoreError::Checkpoint("parameter name is not UTF-8".into()))?;
        let decay = read_array::<1>(&mut r)?[0] != 0;
        let rank = read_u32(&mut r)? as usize;
        if rank > 8 {
            return Err(CoreError::Checkpoint(format!("{name}: rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| Ok(read_u64(&mut r)? as usize))
            .collect::<Result<Vec<_>>>()?;
        let offset = read_u64(&mut r)?;
        if offset != expected {
            return Err(CoreError::Checkpoint(format!(
                "{name}: offset {offset}, expected {expected}"
            )));
        }
        expected += shape.iter().product::<usize>() as u64;
        manifest.push((name, decay, shape));
    }
    let mut store = ParamStore::new();
    for (name, decay, shape) in manifest {
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes)
            .map_err(|_| CoreError::Checkpoint(format!("{name}: truncated payload")))?;
        let data = bytes
            .chunks_exact(4)
            .map(|b| T::of(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
            .collect();
        store.insert(name, Tensor::new(shape, data)?, decay)?;
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(CoreError::Checkpoint("trailing bytes after payload".into()));
    }
    let sidecar = sidecar_path(path);
    if !sidecar.exists() {
        return Err(CoreError::MissingFile(sidecar));
    }
    let config = serde_json::from_reader(BufReader::new(File::open(sidecar)?))?;
    Ok((store, config))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pssm");
        let mut store = ParamStore::<f32>::new();
        store
            .insert(
                "a",
                Tensor::new(vec![2, 3], vec![1., -2., 3.5, 0., 1e-7, 9.]).unwrap(),
                true,
            )
            .unwrap();
        store
            .insert("b.bias", Tensor::new(vec![1], vec![0.25]).unwrap(), false)
            .unwrap();
        save_checkpoint(&path, &store, &vec![7u32, 8]).unwrap();
        let (back, cfg): (ParamStore<f32>, Vec<u32>) = load_checkpoint(&path).unwrap();
        assert_eq!(cfg, vec![7, 8]);
        assert_eq!(back.len(), 2);
        for (x, y) in store.entries().iter().zip(back.entries()) {
            assert_eq!(x.name, y.name);
            assert_eq!(x.decay, y.decay);
            assert_eq!(x.value, y.value);
        }

        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 2]).unwrap();
        assert!(matches!(
            load_checkpoint::<f32, Vec<u32>>(&path),
            Err(CoreError::Checkpoint(_))
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(
            load_checkpoint::<f32, Vec<u32>>(&path),
            Err(CoreError::Checkpoint(_))
        ));
        assert!(matches!(
            load_checkpoint::<f32, Vec<u32>>(&dir.path().join("none.pssm")),
            Err(CoreError::MissingFile(_))
        ));
    }
}
