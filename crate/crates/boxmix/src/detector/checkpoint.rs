//! Versioned binary parameter container.
//!
//! Layout, all integers little-endian:
//! magic `BOXMIXCK`, u32 version, 32-byte architecture digest, u32 block
//! count, then per block: u16 name length, name bytes, u8 rank, u32 dims,
//! f64 payload. Save/load round-trips bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::tensor::{ParamBlock, ParamSet};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"BOXMIXCK";
const VERSION: u32 = 1;

pub fn save_checkpoint(path: &Path, params: &ParamSet, digest: &[u8; 32]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(digest)?;
    w.write_all(&(params.blocks.len() as u32).to_le_bytes())?;
    for b in &params.blocks {
        let name = b.name.as_bytes();
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[b.shape.len() as u8])?;
        for d in &b.shape {
            w.write_all(&(*d as u32).to_le_bytes())?;
        }
        for v in &b.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format("checkpoint truncated".into()))?;
    Ok(buf)
}

/// Load a checkpoint, verifying the magic, version and architecture digest.
pub fn load_checkpoint(path: &Path, expect_digest: Option<&[u8; 32]>) -> Result<ParamSet> {
    let mut r = BufReader::new(File::open(path)?);
    let magic = read_exact::<8>(&mut r)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a parameter checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(read_exact::<4>(&mut r)?);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let digest = read_exact::<32>(&mut r)?;
    if let Some(expect) = expect_digest {
        if &digest != expect {
            return Err(Error::Format(
                "checkpoint was produced by a different configuration".into(),
            ));
        }
    }
    let n_blocks = u32::from_le_bytes(read_exact::<4>(&mut r)?) as usize;
    let mut blocks = Vec::with_capacity(n_blocks);
    for _ in 0..n_blocks {
        let name_len = u16::from_le_bytes(read_exact::<2>(&mut r)?) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)
            .map_err(|_| Error::Format("checkpoint truncated".into()))?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Format("checkpoint block name is not utf-8".into()))?;
        let rank = read_exact::<1>(&mut r)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(read_exact::<4>(&mut r)?) as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(f64::from_le_bytes(read_exact::<8>(&mut r)?));
        }
        blocks.push(ParamBlock { name, shape, data });
    }
    Ok(ParamSet { blocks })
}

/// Digest of a checkpoint file's raw bytes, for reproducibility checks.
pub fn file_digest(path: &Path) -> Result<[u8; 32]> {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hasher.finalize().into())
}
