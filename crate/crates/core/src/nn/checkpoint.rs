//! Binary parameter checkpoints.
//!
//! Layout: the ASCII magic `ADSM1`, then one record per tensor until EOF:
//! name length (u64), name bytes (UTF-8), rank (u64), extents (u64 each),
//! then the values as IEEE-754 `f64`. All integers and floats little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 5] = b"ADSM1";

/// Ordered list of named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.entries.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Looks up `name` and checks it has the expected shape.
    pub fn take(&self, name: &str, shape: &[usize]) -> Result<Tensor> {
        let t = self
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
        if t.shape() != shape {
            return Err(Error::Checkpoint(format!(
                "parameter `{name}` has shape {:?}, configuration expects {:?}",
                t.shape(),
                shape
            )));
        }
        Ok(t.clone())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        for (name, t) in &self.entries {
            w.write_all(&(name.len() as u64).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.rank() as u64).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for &v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Checkpoint("file too short for magic".into()))?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic, not an ADSM1 checkpoint".into()));
        }
        let mut entries = Vec::new();
        loop {
            let mut len = [0u8; 8];
            match read_full(&mut r, &mut len)? {
                0 => break,
                8 => {}
                _ => return Err(Error::Checkpoint("truncated record header".into())),
            }
            let name_len = u64::from_le_bytes(len) as usize;
            if name_len > 1 << 16 {
                return Err(Error::Checkpoint(format!("implausible name length {name_len}")));
            }
            let mut name = vec![0u8; name_len];
            read_exact(&mut r, &mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
            let rank = read_u64(&mut r)? as usize;
            if rank == 0 || rank > 8 {
                return Err(Error::Checkpoint(format!("`{name}`: unsupported rank {rank}")));
            }
            let shape = (0..rank)
                .map(|_| read_u64(&mut r).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
            let n = n.filter(|&n| n <= 1 << 31).ok_or_else(|| {
                Error::Checkpoint(format!("`{name}`: implausible shape {shape:?}"))
            })?;
            let mut raw = vec![0u8; n * 8];
            read_exact(&mut r, &mut raw)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("`{name}`: {e}")))?;
            entries.push((name, t));
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<usize> {
    let mut got = 0;
    while got < buf.len() {
        match r.read(&mut buf[got..])? {
            0 => break,
            n => got += n,
        }
    }
    Ok(got)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    if read_full(r, buf)? != buf.len() {
        return Err(Error::Checkpoint("unexpected end of file".into()));
    }
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}
