//! `RST1` binary raster: a minimal typed n-d array container.
//!
//! Layout (little-endian): magic `RST1` | u8 dtype | u8 ndim | u32 dims[ndim] | data row-major.
//! dtype codes: 1 = f32, 2 = f64, 3 = complex64 (re, im as f32 pairs).

use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use num_complex::Complex32;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RST1";
const FORMAT: &str = "RST1";

#[derive(Debug, Clone, PartialEq)]
pub enum Raster {
    F32(ArrayD<f32>),
    F64(ArrayD<f64>),
    Complex64(ArrayD<Complex32>),
}

impl Raster {
    fn dtype(&self) -> u8 {
        match self {
            Raster::F32(_) => 1,
            Raster::F64(_) => 2,
            Raster::Complex64(_) => 3,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            Raster::F32(a) => a.shape(),
            Raster::F64(a) => a.shape(),
            Raster::Complex64(a) => a.shape(),
        }
    }

    pub fn into_f32(self) -> Result<ArrayD<f32>> {
        match self {
            Raster::F32(a) => Ok(a),
            _ => Err(fmt_err("expected f32 raster")),
        }
    }

    pub fn into_complex64(self) -> Result<ArrayD<Complex32>> {
        match self {
            Raster::Complex64(a) => Ok(a),
            _ => Err(fmt_err("expected complex64 raster")),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let shape = self.shape();
        let mut out = Vec::with_capacity(6 + 4 * shape.len());
        out.extend_from_slice(MAGIC);
        out.push(self.dtype());
        out.push(shape.len() as u8);
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match self {
            Raster::F32(a) => a.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            Raster::F64(a) => a.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            Raster::Complex64(a) => a.iter().for_each(|v| {
                out.extend_from_slice(&v.re.to_le_bytes());
                out.extend_from_slice(&v.im.to_le_bytes());
            }),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes, FORMAT);
        if cur.take(4, "magic")? != MAGIC {
            return Err(fmt_err("bad magic"));
        }
        let dtype = cur.take(1, "dtype")?[0];
        let ndim = cur.take(1, "ndim")?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(cur.u32("dims")? as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| fmt_err("dimension overflow"))?;
        let elem = match dtype {
            1 => 4,
            2 => 8,
            3 => 8,
            other => return Err(fmt_err(&format!("unknown dtype {other}"))),
        };
        let nbytes = count
            .checked_mul(elem)
            .ok_or_else(|| fmt_err("dimension overflow"))?;
        let data = cur.take(nbytes, "data")?;
        if !cur.is_empty() {
            return Err(fmt_err("trailing bytes"));
        }
        let shape = IxDyn(&shape);
        let raster = match dtype {
            1 => Raster::F32(ArrayD::from_shape_vec(
                shape,
                data.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            )
            .map_err(|e| fmt_err(&e.to_string()))?),
            2 => Raster::F64(ArrayD::from_shape_vec(
                shape,
                data.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            )
            .map_err(|e| fmt_err(&e.to_string()))?),
            _ => Raster::Complex64(ArrayD::from_shape_vec(
                shape,
                data.chunks_exact(8)
                    .map(|c| {
                        Complex32::new(
                            f32::from_le_bytes(c[..4].try_into().unwrap()),
                            f32::from_le_bytes(c[4..].try_into().unwrap()),
                        )
                    })
                    .collect(),
            )
            .map_err(|e| fmt_err(&e.to_string()))?),
        };
        Ok(raster)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn fmt_err(msg: &str) -> Error {
    Error::Format {
        format: FORMAT,
        message: msg.to_string(),
    }
}

/// Bounds-checked little-endian reader shared by the binary formats.
pub(crate) struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    format: &'static str,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(bytes: &'a [u8], format: &'static str) -> Self {
        Self {
            bytes,
            pos: 0,
            format,
        }
    }

    pub(crate) fn take(&mut self, n: usize, section: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(Error::Truncated {
                format: self.format,
                section,
            }),
        }
    }

    pub(crate) fn u32(&mut self, section: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, section)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self, section: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, section)?.try_into().unwrap()))
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.remaining() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn f32_round_trip(dims in proptest::collection::vec(1usize..5, 1..4), seed in any::<u32>()) {
            let count: usize = dims.iter().product();
            let data: Vec<f32> = (0..count).map(|i| (i as f32 * 0.37 + seed as f32).sin()).collect();
            let r = Raster::F32(ArrayD::from_shape_vec(IxDyn(&dims), data).unwrap());
            prop_assert_eq!(Raster::from_bytes(&r.to_bytes()).unwrap(), r);
        }
    }

    #[test]
    fn complex_layout_is_interleaved() {
        let a = ArrayD::from_shape_vec(IxDyn(&[1]), vec![Complex32::new(1.0, -2.0)]).unwrap();
        let bytes = Raster::Complex64(a).to_bytes();
        assert_eq!(&bytes[..4], b"RST1");
        assert_eq!(bytes[4], 3);
        assert_eq!(bytes[5], 1);
        assert_eq!(&bytes[6..10], &1u32.to_le_bytes());
        assert_eq!(&bytes[10..14], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[14..18], &(-2.0f32).to_le_bytes());
    }

    #[test]
    fn truncated_and_bad_magic() {
        let r = Raster::F64(ArrayD::zeros(IxDyn(&[2, 3])));
        let bytes = r.to_bytes();
        assert!(matches!(
            Raster::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Truncated { section: "data", .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Raster::from_bytes(&bad), Err(Error::Format { .. })));
    }
}
