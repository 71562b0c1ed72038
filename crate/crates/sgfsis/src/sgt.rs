//! SGT1 tensor files.
//!
//! Layout: the magic `SGT1`, a `u8` rank, `rank` little-endian `u32`
//! extents, a `u8` dtype code (0 = f32, 1 = u32, 2 = u8) and the values in
//! row-major order, little-endian.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use sgfsis_core::{BinaryMask, LabelRaster, Tensor};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SGT1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32 = 0,
    U32 = 1,
    U8 = 2,
}

impl Dtype {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Dtype::F32),
            1 => Some(Dtype::U32),
            2 => Some(Dtype::U8),
            _ => None,
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32 | Dtype::U32 => 4,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SgtData {
    F32(Vec<f32>),
    U32(Vec<u32>),
    U8(Vec<u8>),
}

impl SgtData {
    pub fn dtype(&self) -> Dtype {
        match self {
            SgtData::F32(_) => Dtype::F32,
            SgtData::U32(_) => Dtype::U32,
            SgtData::U8(_) => Dtype::U8,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            SgtData::F32(v) => v.len(),
            SgtData::U32(v) => v.len(),
            SgtData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sgt {
    pub dims: Vec<usize>,
    pub data: SgtData,
}

impl Sgt {
    pub fn new(dims: Vec<usize>, data: SgtData) -> std::result::Result<Self, String> {
        if dims.len() > u8::MAX as usize {
            return Err(format!("rank {} exceeds 255", dims.len()));
        }
        if dims.iter().any(|&d| d > u32::MAX as usize) {
            return Err(format!("extent in {dims:?} exceeds u32"));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(format!("{dims:?} holds {n} values, got {}", data.len()));
        }
        Ok(Self { dims, data })
    }

    pub fn write_to(&self, mut w: impl Write) -> io::Result<()> {
        let mut buf = Vec::with_capacity(6 + 4 * self.dims.len() + 4 * self.data.len());
        buf.extend_from_slice(MAGIC);
        buf.push(self.dims.len() as u8);
        for &d in &self.dims {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        buf.push(self.data.dtype().code());
        match &self.data {
            SgtData::F32(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
            SgtData::U32(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
            SgtData::U8(v) => buf.extend_from_slice(v),
        }
        w.write_all(&buf)
    }

    /// Parses a complete file image; trailing bytes are an error.
    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = bytes;
        let mut take = |n: usize| -> std::result::Result<&[u8], String> {
            if r.len() < n {
                return Err("truncated".into());
            }
            let (head, tail) = r.split_at(n);
            r = tail;
            Ok(head)
        };
        if take(4)? != MAGIC {
            return Err("bad magic".into());
        }
        let rank = take(1)?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            let b = take(4)?;
            dims.push(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize);
        }
        let code = take(1)?[0];
        let dtype = Dtype::from_code(code).ok_or_else(|| format!("unknown dtype code {code}"))?;
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or("extent product overflows")?;
        let raw = take(n.checked_mul(dtype.width()).ok_or("size overflows")?)?;
        if !r.is_empty() {
            return Err(format!("{} trailing bytes", r.len()));
        }
        let word = |c: &[u8]| [c[0], c[1], c[2], c[3]];
        let data = match dtype {
            Dtype::F32 => SgtData::F32(raw.chunks_exact(4).map(|c| f32::from_le_bytes(word(c))).collect()),
            Dtype::U32 => SgtData::U32(raw.chunks_exact(4).map(|c| u32::from_le_bytes(word(c))).collect()),
            Dtype::U8 => SgtData::U8(raw.to_vec()),
        };
        Ok(Self { dims, data })
    }

    pub fn read_from(mut r: impl Read) -> io::Result<std::result::Result<Self, String>> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Ok(Self::from_bytes(&bytes))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|m| Error::format(path, m))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    fn expect(&self, dtype: Dtype, rank: Option<usize>, path: &Path) -> Result<()> {
        if self.data.dtype() != dtype {
            return Err(Error::format(
                path,
                format!("expected dtype code {}, found {}", dtype.code(), self.data.dtype().code()),
            ));
        }
        if let Some(r) = rank {
            if self.dims.len() != r {
                return Err(Error::format(path, format!("expected rank {r}, found {}", self.dims.len())));
            }
        }
        Ok(())
    }
}

impl From<&Tensor<f32>> for Sgt {
    fn from(t: &Tensor<f32>) -> Self {
        Sgt {
            dims: t.dims().to_vec(),
            data: SgtData::F32(t.data().to_vec()),
        }
    }
}

impl From<&LabelRaster> for Sgt {
    fn from(r: &LabelRaster) -> Self {
        Sgt {
            dims: vec![r.height(), r.width()],
            data: SgtData::U32(r.data().to_vec()),
        }
    }
}

impl From<&BinaryMask> for Sgt {
    fn from(m: &BinaryMask) -> Self {
        Sgt {
            dims: vec![m.height(), m.width()],
            data: SgtData::U8(m.data().iter().map(|&b| u8::from(b)).collect()),
        }
    }
}

pub fn save_tensor(path: &Path, t: &Tensor<f32>) -> Result<()> {
    Sgt::from(t).save(path)
}

pub fn load_tensor(path: &Path) -> Result<Tensor<f32>> {
    let s = Sgt::load(path)?;
    s.expect(Dtype::F32, None, path)?;
    let SgtData::F32(v) = s.data else { unreachable!() };
    Tensor::new(&s.dims, v).map_err(|e| Error::format(path, e.to_string()))
}

pub fn save_raster(path: &Path, r: &LabelRaster) -> Result<()> {
    Sgt::from(r).save(path)
}

pub fn load_raster(path: &Path) -> Result<LabelRaster> {
    let s = Sgt::load(path)?;
    s.expect(Dtype::U32, Some(2), path)?;
    let SgtData::U32(v) = s.data else { unreachable!() };
    LabelRaster::new(s.dims[1], s.dims[0], v).map_err(|e| Error::format(path, e.to_string()))
}

pub fn save_mask(path: &Path, m: &BinaryMask) -> Result<()> {
    Sgt::from(m).save(path)
}

/// Accepts u8 masks; any nonzero value is set.
pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    let s = Sgt::load(path)?;
    s.expect(Dtype::U8, Some(2), path)?;
    let SgtData::U8(v) = s.data else { unreachable!() };
    BinaryMask::new(s.dims[1], s.dims[0], v.into_iter().map(|b| b != 0).collect())
        .map_err(|e| Error::format(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let s = Sgt::new(vec![2, 1], SgtData::U32(vec![1, 0x0102_0304])).unwrap();
        let mut b = Vec::new();
        s.write_to(&mut b).unwrap();
        assert_eq!(
            b,
            [b'S', b'G', b'T', b'1', 2, 2, 0, 0, 0, 1, 0, 0, 0, 1, 1, 0, 0, 0, 4, 3, 2, 1]
        );
    }

    #[test]
    fn rejects_malformed() {
        assert!(Sgt::from_bytes(b"SGT2\x00\x02\x07").is_err());
        assert!(Sgt::from_bytes(b"SGT1\x00\x07").unwrap_err().contains("dtype"));
        assert!(Sgt::from_bytes(b"SGT1\x01\x02\x00\x00\x00\x02\x01").unwrap_err().contains("truncated"));
        assert!(Sgt::from_bytes(b"SGT1\x00\x02\x01\x09").unwrap_err().contains("trailing"));
    }

    fn arb_sgt() -> impl Strategy<Value = Sgt> {
        prop::collection::vec(0usize..5, 0..4).prop_flat_map(|dims| {
            let n: usize = dims.iter().product();
            let d = dims.clone();
            prop_oneof![
                prop::collection::vec(any::<f32>(), n).prop_map(SgtData::F32),
                prop::collection::vec(any::<u32>(), n).prop_map(SgtData::U32),
                prop::collection::vec(any::<u8>(), n).prop_map(SgtData::U8),
            ]
            .prop_map(move |data| Sgt::new(d.clone(), data).unwrap())
        })
    }

    proptest! {
        #[test]
        fn bytes_round_trip(s in arb_sgt()) {
            let mut b = Vec::new();
            s.write_to(&mut b).unwrap();
            let back = Sgt::from_bytes(&b).unwrap();
            prop_assert_eq!(back.dims, s.dims);
            // Compare f32 by bits so NaN payloads count.
            match (back.data, s.data) {
                (SgtData::F32(a), SgtData::F32(b)) => {
                    prop_assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
                }
                (a, b) => prop_assert_eq!(a, b),
            }
        }
    }
}
