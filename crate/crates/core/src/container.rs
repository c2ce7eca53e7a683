//! Flat binary container for coding tensors, mask sets and estimator
//! parameters.
//!
//! Layout, all integers and floats little-endian:
//!
//! | offset | size        | field                                   |
//! |--------|-------------|-----------------------------------------|
//! | 0      | 4           | magic `MWSC`                            |
//! | 4      | 2           | format version (`1`)                    |
//! | 6      | 2           | payload kind (see [`PayloadKind`])      |
//! | 8      | 4           | `ndims`                                 |
//! | 12     | 4 * ndims   | dimensions, outermost first             |
//! | ..     | 4           | `nattrs`                                |
//! | ..     | 8 * nattrs  | f64 attributes (payload-specific)       |
//! | ..     | 4 * prod    | f32 values, row-major                   |
//!
//! Attributes: coding tensors store `[span_deg]` with dims `[T, K, Theta]`;
//! mask sets have dims `[I, T, K]` and no attributes; estimator parameters
//! have dims `[parameter count]`, attributes `[seed, input, hidden, output]`
//! and values `w1 | b1 | w2 | b2`.

use std::path::Path;

use crate::coding::{CodingKind, CodingTensor, MaskSet, SpatialGrid};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MWSC";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayloadKind {
    Coding(CodingKind),
    Masks,
    EstimatorParams,
}

impl PayloadKind {
    pub fn code(self) -> u16 {
        match self {
            PayloadKind::Coding(k) => k.code(),
            PayloadKind::Masks => 16,
            PayloadKind::EstimatorParams => 32,
        }
    }

    pub fn from_code(code: u16) -> Option<Self> {
        match code {
            16 => Some(PayloadKind::Masks),
            32 => Some(PayloadKind::EstimatorParams),
            c => CodingKind::from_code(c).map(PayloadKind::Coding),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: PayloadKind,
    pub dims: Vec<u32>,
    pub attrs: Vec<f64>,
    pub values: Vec<f32>,
}

impl Container {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.dims.len() + 8 * self.attrs.len() + 4 * self.values.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.kind.code().to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.extend_from_slice(&(self.attrs.len() as u32).to_le_bytes());
        for a in &self.attrs {
            out.extend_from_slice(&a.to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad container magic".into()));
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != VERSION {
            return Err(Error::Unsupported(format!("container version {version}")));
        }
        let code = u16::from_le_bytes(r.array()?);
        let kind = PayloadKind::from_code(code).ok_or_else(|| Error::Unsupported(format!("payload kind {code}")))?;
        let ndims = u32::from_le_bytes(r.array()?) as usize;
        if ndims > 16 {
            return Err(Error::Format(format!("{ndims} dimensions")));
        }
        let dims = (0..ndims)
            .map(|_| r.array().map(u32::from_le_bytes))
            .collect::<Result<Vec<_>>>()?;
        let nattrs = u32::from_le_bytes(r.array()?) as usize;
        if nattrs > 64 {
            return Err(Error::Format(format!("{nattrs} attributes")));
        }
        let attrs = (0..nattrs)
            .map(|_| r.array().map(f64::from_le_bytes))
            .collect::<Result<Vec<_>>>()?;
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
            .ok_or_else(|| Error::Format("dimension product overflows".into()))?;
        let body = r.take(
            count
                .checked_mul(4)
                .ok_or_else(|| Error::Format("payload too large".into()))?,
        )?;
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let values = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Container {
            kind,
            dims,
            attrs,
            values,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("container truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let s = self.take(N)?;
        let mut a = [0u8; N];
        a.copy_from_slice(s);
        Ok(a)
    }
}

impl From<&CodingTensor> for Container {
    fn from(c: &CodingTensor) -> Self {
        Container {
            kind: PayloadKind::Coding(c.kind()),
            dims: vec![c.frames() as u32, c.bins() as u32, c.theta_count() as u32],
            attrs: vec![c.grid().span_deg()],
            values: c.values().iter().map(|&v| v as f32).collect(),
        }
    }
}

impl From<&MaskSet> for Container {
    fn from(m: &MaskSet) -> Self {
        Container {
            kind: PayloadKind::Masks,
            dims: vec![m.speakers() as u32, m.frames() as u32, m.bins() as u32],
            attrs: Vec::new(),
            values: m.values().iter().map(|&v| v as f32).collect(),
        }
    }
}

impl TryFrom<&Container> for CodingTensor {
    type Error = Error;

    fn try_from(c: &Container) -> Result<Self> {
        let PayloadKind::Coding(kind) = c.kind else {
            return Err(Error::Format("container does not hold a coding tensor".into()));
        };
        let [t, k, n] = c.dims[..] else {
            return Err(Error::Format("coding tensor needs 3 dimensions".into()));
        };
        let span = *c
            .attrs
            .first()
            .ok_or_else(|| Error::Format("coding tensor lacks span attribute".into()))?;
        let grid = SpatialGrid::new(n as usize, span)?;
        CodingTensor::new(
            t as usize,
            k as usize,
            grid,
            kind,
            c.values.iter().map(|&v| f64::from(v)).collect(),
        )
    }
}

impl TryFrom<&Container> for MaskSet {
    type Error = Error;

    fn try_from(c: &Container) -> Result<Self> {
        if c.kind != PayloadKind::Masks {
            return Err(Error::Format("container does not hold masks".into()));
        }
        let [i, t, k] = c.dims[..] else {
            return Err(Error::Format("mask set needs 3 dimensions".into()));
        };
        MaskSet::new(
            i as usize,
            t as usize,
            k as usize,
            c.values.iter().map(|&v| f64::from(v)).collect(),
        )
    }
}
