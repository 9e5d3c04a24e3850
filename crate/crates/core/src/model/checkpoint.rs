//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  b"FPCK"
//! version u32      1
//! count   u32      number of tensors
//! per tensor:
//!   name_len u32, name bytes (utf-8)
//!   ndim     u32, dims as u32 each
//! data: all tensors' values as f32, in manifest order
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ModelConfig, ModelError, ModelParams, NamedTensor};

const MAGIC: &[u8; 4] = b"FPCK";
const VERSION: u32 = 1;

pub fn write_checkpoint(path: &Path, params: &ModelParams) -> Result<(), ModelError> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(params.tensors().len() as u32).to_le_bytes())?;
    for t in params.tensors() {
        let name = t.name.as_bytes();
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name)?;
        out.write_all(&(t.shape.len() as u32).to_le_bytes())?;
        for &d in &t.shape {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
    }
    for t in params.tensors() {
        for &v in &t.data {
            out.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32, ModelError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub fn read_checkpoint(path: &Path) -> Result<ModelParams, ModelError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ModelError::Format(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(ModelError::Format(format!(
            "unsupported version {version}"
        )));
    }
    let count = read_u32(&mut r)? as usize;
    if count != super::N_TENSORS {
        return Err(ModelError::Format(format!(
            "expected {} tensors, found {count}",
            super::N_TENSORS
        )));
    }
    let mut manifest = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        if name_len > 256 {
            return Err(ModelError::Format("tensor name too long".into()));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| ModelError::Format("tensor name is not utf-8".into()))?;
        let ndim = read_u32(&mut r)? as usize;
        if ndim > 8 {
            return Err(ModelError::Format("tensor rank too large".into()));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u32(&mut r)? as usize);
        }
        manifest.push((name, shape));
    }

    let mut tensors = Vec::with_capacity(count);
    for (name, shape) in manifest {
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        let mut buf = [0u8; 4];
        for k in 0..len {
            r.read_exact(&mut buf).map_err(|e| {
                ModelError::Format(format!("truncated data for {name} at element {k}: {e}"))
            })?;
            data.push(f32::from_le_bytes(buf) as f64);
        }
        tensors.push(NamedTensor { name, shape, data });
    }

    let cfg = config_from_tensors(&tensors)?;
    let expected = ModelParams::init(cfg, 0);
    for (read, exp) in tensors.iter().zip(expected.tensors()) {
        if read.name != exp.name || read.shape != exp.shape {
            return Err(ModelError::Format(format!(
                "tensor {} has shape {:?}, expected {} {:?}",
                read.name, read.shape, exp.name, exp.shape
            )));
        }
    }
    Ok(ModelParams::from_tensors(cfg, tensors))
}

fn config_from_tensors(tensors: &[NamedTensor]) -> Result<ModelConfig, ModelError> {
    let shape_of = |name: &str| -> Result<&Vec<usize>, ModelError> {
        tensors
            .iter()
            .find(|t| t.name == name)
            .map(|t| &t.shape)
            .ok_or_else(|| ModelError::Format(format!("missing tensor {name}")))
    };
    let enc1 = shape_of("enc1.weight")?;
    let enc2 = shape_of("enc2.weight")?;
    let enc3 = shape_of("enc3.weight")?;
    let desc = shape_of("desc.weight")?;
    if enc1.len() != 4 || enc2.len() != 4 || enc3.len() != 4 || desc.len() != 4 {
        return Err(ModelError::Format("kernel tensors must be rank 4".into()));
    }
    Ok(ModelConfig {
        enc1: enc1[0],
        enc2: enc2[0],
        enc3: enc3[0],
        desc_dim: desc[0],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_f32_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.fpck");
        let params = ModelParams::init(ModelConfig::tiny(), 99);
        write_checkpoint(&path, &params).unwrap();
        let loaded = read_checkpoint(&path).unwrap();
        assert_eq!(loaded.config(), params.config());
        for (a, b) in loaded.tensors().iter().zip(params.tensors()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.shape, b.shape);
            for (x, y) in a.data.iter().zip(&b.data) {
                assert_eq!(*x, *y as f32 as f64);
            }
        }
    }

    #[test]
    fn second_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.fpck");
        let p2 = dir.path().join("b.fpck");
        let params = ModelParams::init(ModelConfig::tiny(), 7);
        write_checkpoint(&p1, &params).unwrap();
        let loaded = read_checkpoint(&p1).unwrap();
        write_checkpoint(&p2, &loaded).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.fpck");
        std::fs::write(&path, b"NOPE0000").unwrap();
        match read_checkpoint(&path) {
            Err(ModelError::Format(msg)) => assert!(msg.contains("magic")),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_data_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.fpck");
        let params = ModelParams::init(ModelConfig::tiny(), 7);
        write_checkpoint(&path, &params).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
        match read_checkpoint(&path) {
            Err(ModelError::Format(msg)) => assert!(msg.contains("truncated")),
            other => panic!("expected format error, got {other:?}"),
        }
    }
}
