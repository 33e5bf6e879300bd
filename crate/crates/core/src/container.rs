//! Binary container for [`ParamSet`].
//!
//! All integers are little-endian.
//!
//! | offset | size        | field                                        |
//! |--------|-------------|----------------------------------------------|
//! | 0      | 8           | magic `TXSPARAM`                             |
//! | 8      | 4           | format version (`u32`, currently 1)          |
//! | 12     | 32          | pipeline fingerprint (SHA-256)               |
//! | 44     | 4           | layer count `K` (`u32`)                      |
//!
//! followed by `K` layer records:
//!
//! | size        | field                                               |
//! |-------------|-----------------------------------------------------|
//! | 4           | channels `C` (`u32`)                                |
//! | 4           | frequency bins `F` (`u32`)                          |
//! | 1           | mask flag (0 = none, 1 = mask follows)              |
//! | `C*C`       | mask bytes, row-major, 1 = kept (only if flagged)   |
//! | `8*C*C*F`   | `f64` payload, entry `(i, j, x)` at `(i*C + j)*F + x` |

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::{Fingerprint, GramTensor, PairMask, ParamSet};

pub const MAGIC: &[u8; 8] = b"TXSPARAM";
pub const VERSION: u32 = 1;

pub fn encode(params: &ParamSet) -> Vec<u8> {
    let payload: usize = params
        .tensors
        .iter()
        .map(|t| 9 + t.channels * t.channels * (1 + 8 * t.bins))
        .sum();
    let mut out = Vec::with_capacity(48 + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&params.fingerprint.0);
    out.extend_from_slice(&(params.tensors.len() as u32).to_le_bytes());
    for t in &params.tensors {
        out.extend_from_slice(&(t.channels as u32).to_le_bytes());
        out.extend_from_slice(&(t.bins as u32).to_le_bytes());
        match &t.mask {
            Some(m) => {
                out.push(1);
                out.extend(m.as_slice().iter().map(|k| *k as u8));
            }
            None => out.push(0),
        }
        for v in &t.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.bytes.len())
            .ok_or_else(|| Error::Container(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ParamSet> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(Error::Container("bad magic bytes".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Container(format!("unsupported version {version}")));
    }
    let fingerprint = Fingerprint(c.take(32)?.try_into().unwrap());
    let layers = c.u32()? as usize;
    let mut tensors = Vec::with_capacity(layers);
    for layer_index in 0..layers {
        let channels = c.u32()? as usize;
        let bins = c.u32()? as usize;
        let mask = match c.take(1)?[0] {
            0 => None,
            1 => {
                let raw = c.take(channels * channels)?;
                Some(PairMask::from_fn(channels, |i, j| raw[i * channels + j] == 1))
            }
            other => return Err(Error::Container(format!("bad mask flag {other}"))),
        };
        let n = channels * channels * bins;
        let values = c
            .take(n.checked_mul(8).ok_or_else(|| Error::Container("layer too large".into()))?)?
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        tensors.push(GramTensor {
            values,
            channels,
            bins,
            mask,
            layer_index,
        });
    }
    if c.pos != bytes.len() {
        return Err(Error::Container(format!(
            "{} trailing bytes",
            bytes.len() - c.pos
        )));
    }
    Ok(ParamSet {
        tensors,
        fingerprint,
    })
}

pub fn write_params(params: &ParamSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode(params)).map_err(|e| Error::io(path, e))
}

pub fn read_params(path: impl AsRef<Path>) -> Result<ParamSet> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Whether `bytes` start with the container magic.
pub fn is_param_file(bytes: &[u8]) -> bool {
    bytes.starts_with(MAGIC)
}
