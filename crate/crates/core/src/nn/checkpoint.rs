use std::path::Path;

use super::{Param, Real};
use crate::error::Result;
use crate::io::{BinReader, BinWriter};

const MAGIC: &[u8; 4] = b"GHNN";
const VERSION: u16 = 1;

/// A named tensor as stored in a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<u64>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn from_param<T: Real>(p: &Param<T>) -> Self {
        Self {
            name: p.name.clone(),
            dims: vec![p.rows as u64, p.cols as u64],
            data: p.value.iter().map(|v| v.as_f64() as f32).collect(),
        }
    }
}

pub fn save_checkpoint(path: &Path, tensors: &[Tensor]) -> Result<()> {
    let mut w = BinWriter::create(path)?;
    w.bytes(MAGIC)?;
    w.u16(VERSION)?;
    w.u32(tensors.len() as u32)?;
    for t in tensors {
        w.u16(t.name.len() as u16)?;
        w.bytes(t.name.as_bytes())?;
        w.u8(t.dims.len() as u8)?;
        for d in &t.dims {
            w.u64(*d)?;
        }
        w.f32_slice(&t.data)?;
    }
    w.finish()
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<Tensor>> {
    let mut r = BinReader::open(path)?;
    r.magic(MAGIC)?;
    let version = r.u16()?;
    if version != VERSION {
        return Err(r.format_error(format!("unsupported version {version}")));
    }
    let count = r.u32()?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = r.u16()? as usize;
        let mut name = vec![0u8; len];
        r.bytes(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| r.format_error("tensor name is not UTF-8"))?;
        let ndim = r.u8()?;
        let dims = (0..ndim).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let n = dims
            .iter()
            .try_fold(1u64, |a, &d| a.checked_mul(d))
            .filter(|&n| n < 1 << 34)
            .ok_or_else(|| r.format_error(format!("tensor {name} is implausibly large")))?;
        let data = r.f32_vec(n as usize)?;
        out.push(Tensor { name, dims, data });
    }
    r.expect_eof()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut p = Param::<f32>::zeros("layer.weight", 2, 3);
        p.value = vec![1.0, -2.0, 3.5, 0.0, 1e-7, -0.25];
        let t = vec![
            Tensor::from_param(&p),
            Tensor {
                name: "scalar".into(),
                dims: vec![],
                data: vec![4.0],
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ghnn");
        save_checkpoint(&path, &t).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), t);
        let raw = std::fs::read(&path).unwrap();
        assert_eq!(&raw[..4], b"GHNN");
        std::fs::write(&path, &raw[..raw.len() - 2]).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
