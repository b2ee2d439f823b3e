//! Versioned binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//! `magic[8] | version u32 | count u32 | { name_len u32 | name | rank u32 | dims u64* | f32* }*`

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::Tensor;

pub const MAGIC: [u8; 8] = *b"AMBWCKPT";
pub const VERSION: u32 = 1;

const MAX_NAME_LEN: usize = 4096;
const MAX_RANK: usize = 8;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

pub fn write_checkpoint<W: Write>(mut w: W, entries: &[(&str, &Tensor<f32>)]) -> Result<(), CheckpointError> {
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, t) in entries {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, CheckpointError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<(String, Tensor<f32>)>, CheckpointError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let count = read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(count.min(1024));
    for i in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        if name_len > MAX_NAME_LEN {
            return Err(CheckpointError::Corrupt(format!("tensor {i}: name length {name_len}")));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name =
            String::from_utf8(name).map_err(|_| CheckpointError::Corrupt(format!("tensor {i}: name is not UTF-8")))?;
        let rank = read_u32(&mut r)? as usize;
        if rank > MAX_RANK {
            return Err(CheckpointError::Corrupt(format!("{name}: rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r)? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| CheckpointError::Corrupt(format!("{name}: shape overflow")))?;
        let mut bytes = Vec::new();
        (&mut r).take(numel as u64 * 4).read_to_end(&mut bytes)?;
        if bytes.len() != numel * 4 {
            return Err(CheckpointError::Corrupt(format!("{name}: truncated data")));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let t = Tensor::new(&shape, data).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        out.push((name, t));
    }
    Ok(out)
}

pub fn save(path: &Path, entries: &[(&str, &Tensor<f32>)]) -> Result<(), CheckpointError> {
    write_checkpoint(BufWriter::new(File::create(path)?), entries)
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor<f32>)>, CheckpointError> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let a = Tensor::new(&[2, 3], vec![1.5f32, -0.0, f32::MIN_POSITIVE, 3.25e7, -1.0e-20, 0.1]).unwrap();
        let b = Tensor::scalar(7.0f32);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &[("conv.weight", &a), ("bn.running_mean", &b)]).unwrap();
        let back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].0, "conv.weight");
        assert_eq!(back[0].1, a);
        assert_eq!(back[1].1, b);
        assert_eq!(&buf[..8], b"AMBWCKPT");
        assert_eq!(&buf[8..12], &1u32.to_le_bytes());
    }

    #[test]
    fn rejects_bad_files() {
        assert!(matches!(
            read_checkpoint(&b"NOTACKPTxxxxxxxx"[..]),
            Err(CheckpointError::BadMagic)
        ));
        let mut buf = MAGIC.to_vec();
        buf.extend(9u32.to_le_bytes());
        buf.extend(0u32.to_le_bytes());
        assert!(matches!(
            read_checkpoint(buf.as_slice()),
            Err(CheckpointError::UnsupportedVersion(9))
        ));

        let t = Tensor::full(&[4], 1.0f32);
        let mut good = Vec::new();
        write_checkpoint(&mut good, &[("w", &t)]).unwrap();
        good.truncate(good.len() - 2);
        assert!(read_checkpoint(good.as_slice()).is_err());
    }
}
