//! Single-file binary container for named, typed arrays plus a JSON metadata blob.
//!
//! Byte layout (all integers little-endian), version 1:
//!
//! ```text
//! offset  size        field
//! 0       8           magic  b"IMLOCDS\0"
//! 8       4           version (u32) = 1
//! 12      4           header_len (u32): bytes from offset 16 up to the end of metadata
//! 16      4           array_count (u32)
//!         per array:
//!           2         name_len (u16)
//!           name_len  name (UTF-8)
//!           1         dtype: 0 = f32, 1 = f64, 2 = i64, 3 = c32 (interleaved re/im f32)
//!           1         ndim (<= 8)
//!           8*ndim    dims (u64 each)
//!           8         byte offset into the body (u64)
//!           8         byte length (u64)
//!         4           metadata_len (u32)
//!         metadata_len  metadata (UTF-8 JSON)
//! H       4           header CRC-32 over bytes [0, H)
//! H+4     4           body CRC-32
//! H+8     ...         body: arrays back to back in table order
//! ```
//!
//! Arrays are stored row-major. A file is valid only if its length is exactly
//! `H + 8 + sum(byte_len)`.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayD, IxDyn};
use num_complex::Complex32;
use serde_json::Value;
use thiserror::Error;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 8] = *b"IMLOCDS\0";
pub const VERSION: u32 = 1;
const MAX_NDIM: usize = 8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("not a container: bad magic bytes")]
    BadMagic,
    #[error("unsupported container version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },
    #[error("truncated container: needed {needed} bytes, found {available}")]
    Truncated { needed: u64, available: u64 },
    #[error("{section} checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch {
        section: &'static str,
        stored: u32,
        computed: u32,
    },
    #[error("malformed container: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
    I64,
    C32,
}

impl DType {
    fn tag(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
            DType::I64 => 2,
            DType::C32 => 3,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => DType::F32,
            1 => DType::F64,
            2 => DType::I64,
            3 => DType::C32,
            _ => return None,
        })
    }

    pub fn element_size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 | DType::I64 | DType::C32 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    I64(Vec<i64>),
    C32(Vec<Complex32>),
}

impl ArrayData {
    pub fn dtype(&self) -> DType {
        match self {
            ArrayData::F32(_) => DType::F32,
            ArrayData::F64(_) => DType::F64,
            ArrayData::I64(_) => DType::I64,
            ArrayData::C32(_) => DType::C32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::F64(v) => v.len(),
            ArrayData::I64(v) => v.len(),
            ArrayData::C32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn write_le(&self, out: &mut Vec<u8>) {
        match self {
            ArrayData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::C32(v) => v.iter().for_each(|z| {
                out.extend_from_slice(&z.re.to_le_bytes());
                out.extend_from_slice(&z.im.to_le_bytes());
            }),
        }
    }

    fn read_le(dtype: DType, bytes: &[u8]) -> Self {
        let f32_at = |c: &[u8]| f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        match dtype {
            DType::F32 => ArrayData::F32(bytes.chunks_exact(4).map(f32_at).collect()),
            DType::F64 => ArrayData::F64(
                bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::I64 => ArrayData::I64(
                bytes
                    .chunks_exact(8)
                    .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::C32 => ArrayData::C32(
                bytes
                    .chunks_exact(8)
                    .map(|c| Complex32::new(f32_at(&c[..4]), f32_at(&c[4..])))
                    .collect(),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub arrays: Vec<NamedArray>,
    pub metadata: Value,
}

impl Default for Container {
    fn default() -> Self {
        Self::new(Value::Object(Default::default()))
    }
}

impl Container {
    pub fn new(metadata: Value) -> Self {
        Self {
            arrays: Vec::new(),
            metadata,
        }
    }

    pub fn push(&mut self, name: &str, shape: &[usize], data: ArrayData) -> Result<()> {
        if self.get(name).is_some() {
            return Err(Error::input(format!("duplicate array name `{name}`")));
        }
        if name.len() > u16::MAX as usize {
            return Err(Error::input("array name too long"));
        }
        if shape.len() > MAX_NDIM {
            return Err(Error::shape(format!("`{name}` has {} dims (max {MAX_NDIM})", shape.len())));
        }
        let count: usize = shape.iter().product();
        if count != data.len() {
            return Err(Error::shape(format!(
                "`{name}`: shape {shape:?} holds {count} elements, data has {}",
                data.len()
            )));
        }
        self.arrays.push(NamedArray {
            name: name.to_owned(),
            shape: shape.to_vec(),
            data,
        });
        Ok(())
    }

    pub fn push_f64_2d(&mut self, name: &str, a: &Array2<f64>) -> Result<()> {
        let shape = [a.nrows(), a.ncols()];
        self.push(name, &shape, ArrayData::F64(a.iter().copied().collect()))
    }

    pub fn push_f64_1d(&mut self, name: &str, a: &[f64]) -> Result<()> {
        self.push(name, &[a.len()], ArrayData::F64(a.to_vec()))
    }

    pub fn push_i64_1d(&mut self, name: &str, a: &[i64]) -> Result<()> {
        self.push(name, &[a.len()], ArrayData::I64(a.to_vec()))
    }

    pub fn get(&self, name: &str) -> Option<&NamedArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    fn require(&self, name: &str) -> Result<&NamedArray> {
        self.get(name)
            .ok_or_else(|| Error::input(format!("container has no array `{name}`")))
    }

    pub fn f64_1d(&self, name: &str) -> Result<Array1<f64>> {
        let a = self.require(name)?;
        match (&a.data, a.shape.len()) {
            (ArrayData::F64(v), 1) => Ok(Array1::from(v.clone())),
            _ => Err(Error::shape(format!("`{name}` is not a 1-d f64 array"))),
        }
    }

    pub fn f64_2d(&self, name: &str) -> Result<Array2<f64>> {
        let a = self.require(name)?;
        match (&a.data, a.shape.as_slice()) {
            (ArrayData::F64(v), &[r, c]) => Ok(Array2::from_shape_vec((r, c), v.clone()).unwrap()),
            _ => Err(Error::shape(format!("`{name}` is not a 2-d f64 array"))),
        }
    }

    pub fn i64_1d(&self, name: &str) -> Result<Vec<i64>> {
        let a = self.require(name)?;
        match (&a.data, a.shape.len()) {
            (ArrayData::I64(v), 1) => Ok(v.clone()),
            _ => Err(Error::shape(format!("`{name}` is not a 1-d i64 array"))),
        }
    }

    pub fn c32_nd(&self, name: &str) -> Result<ArrayD<Complex32>> {
        let a = self.require(name)?;
        match &a.data {
            ArrayData::C32(v) => Ok(ArrayD::from_shape_vec(IxDyn(&a.shape), v.clone()).unwrap()),
            _ => Err(Error::shape(format!("`{name}` is not a complex array"))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&self.metadata).expect("json value serializes");
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes()); // header_len, patched below
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for a in &self.arrays {
            let byte_len = (a.data.len() * a.data.dtype().element_size()) as u64;
            out.extend_from_slice(&(a.name.len() as u16).to_le_bytes());
            out.extend_from_slice(a.name.as_bytes());
            out.push(a.data.dtype().tag());
            out.push(a.shape.len() as u8);
            for &d in &a.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&offset.to_le_bytes());
            out.extend_from_slice(&byte_len.to_le_bytes());
            offset += byte_len;
        }
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        let header_len = (out.len() - 16) as u32;
        out[12..16].copy_from_slice(&header_len.to_le_bytes());

        let mut body = Vec::with_capacity(offset as usize);
        for a in &self.arrays {
            a.data.write_le(&mut body);
        }
        let header_crc = crc32fast::hash(&out);
        out.extend_from_slice(&header_crc.to_le_bytes());
        out.extend_from_slice(&crc32fast::hash(&body).to_le_bytes());
        out.extend_from_slice(&body);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(FormatError::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(FormatError::UnsupportedVersion {
                found: version,
                expected: VERSION,
            });
        }
        let header_len = r.u32()? as usize;
        let header_end = 16 + header_len;
        r.ensure(header_end + 8)?;
        let stored = u32::from_le_bytes(bytes[header_end..header_end + 4].try_into().unwrap());
        let computed = crc32fast::hash(&bytes[..header_end]);
        if stored != computed {
            return Err(FormatError::ChecksumMismatch {
                section: "header",
                stored,
                computed,
            });
        }

        // Past this point the header bytes are authentic; remaining checks
        // guard against a well-checksummed but inconsistent writer.
        let mut r = Reader {
            bytes: &bytes[..header_end],
            pos: 16,
        };
        let count = r.u32()? as usize;
        let mut table = Vec::new();
        let mut expected_offset = 0u64;
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| FormatError::Malformed("array name is not UTF-8".into()))?
                .to_owned();
            let dtype = DType::from_tag(r.u8()?)
                .ok_or_else(|| FormatError::Malformed(format!("unknown dtype for `{name}`")))?;
            let ndim = r.u8()? as usize;
            if ndim > MAX_NDIM {
                return Err(FormatError::Malformed(format!("`{name}` has {ndim} dims")));
            }
            let mut shape = Vec::with_capacity(ndim);
            let mut elems = 1u64;
            for _ in 0..ndim {
                let d = r.u64()?;
                elems = elems
                    .checked_mul(d)
                    .ok_or_else(|| FormatError::Malformed(format!("`{name}` shape overflows")))?;
                shape.push(usize::try_from(d).map_err(|_| {
                    FormatError::Malformed(format!("`{name}` dimension too large"))
                })?);
            }
            let offset = r.u64()?;
            let byte_len = r.u64()?;
            if offset != expected_offset {
                return Err(FormatError::Malformed(format!("`{name}` offset is not contiguous")));
            }
            if elems.checked_mul(dtype.element_size() as u64) != Some(byte_len) {
                return Err(FormatError::Malformed(format!(
                    "`{name}` byte length disagrees with its shape"
                )));
            }
            expected_offset = offset
                .checked_add(byte_len)
                .ok_or_else(|| FormatError::Malformed("body size overflows".into()))?;
            table.push((name, dtype, shape, offset, byte_len));
        }
        let meta_len = r.u32()? as usize;
        let meta_bytes = r.take(meta_len)?;
        if r.pos != header_end {
            return Err(FormatError::Malformed("header length disagrees with its contents".into()));
        }
        let metadata: Value = serde_json::from_slice(meta_bytes)
            .map_err(|e| FormatError::Malformed(format!("metadata is not JSON: {e}")))?;

        let body_start = header_end as u64 + 8;
        let needed = body_start + expected_offset;
        if (bytes.len() as u64) < needed {
            return Err(FormatError::Truncated {
                needed,
                available: bytes.len() as u64,
            });
        }
        if bytes.len() as u64 > needed {
            return Err(FormatError::Malformed(format!(
                "{} trailing bytes after body",
                bytes.len() as u64 - needed
            )));
        }
        let body = &bytes[body_start as usize..];
        let stored = u32::from_le_bytes(bytes[header_end + 4..header_end + 8].try_into().unwrap());
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(FormatError::ChecksumMismatch {
                section: "body",
                stored,
                computed,
            });
        }

        let arrays = table
            .into_iter()
            .map(|(name, dtype, shape, offset, len)| {
                let raw = &body[offset as usize..(offset + len) as usize];
                NamedArray {
                    name,
                    shape,
                    data: ArrayData::read_le(dtype, raw),
                }
            })
            .collect::<Vec<_>>();
        for (i, a) in arrays.iter().enumerate() {
            if arrays[..i].iter().any(|b| b.name == a.name) {
                return Err(FormatError::Malformed(format!("duplicate array `{}`", a.name)));
            }
        }
        Ok(Self { arrays, metadata })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn ensure(&self, end: usize) -> Result<(), FormatError> {
        if end > self.bytes.len() {
            Err(FormatError::Truncated {
                needed: end as u64,
                available: self.bytes.len() as u64,
            })
        } else {
            Ok(())
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self
            .pos
            .checked_add(n)
            .ok_or_else(|| FormatError::Malformed("length overflows".into()))?;
        self.ensure(end)?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn write_container(path: impl AsRef<Path>, container: &Container) -> Result<()> {
    std::fs::write(path, container.to_bytes())?;
    Ok(())
}

pub fn read_container(path: impl AsRef<Path>) -> Result<Container> {
    let bytes = std::fs::read(path)?;
    Ok(Container::from_bytes(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    fn sample() -> Container {
        let mut c = Container::new(json!({"kind": "test", "n": 3}));
        c.push("pos", &[3, 2], ArrayData::F64(vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]))
            .unwrap();
        c.push("idx", &[2], ArrayData::I64(vec![-1, 7])).unwrap();
        c.push(
            "cfr",
            &[1, 2],
            ArrayData::C32(vec![Complex32::new(1.0, -1.0), Complex32::new(0.5, 2.0)]),
        )
        .unwrap();
        c
    }

    #[test]
    fn empty_container_is_valid() {
        let c = Container::default();
        let back = Container::from_bytes(&c.to_bytes()).unwrap();
        assert!(back.arrays.is_empty());
        assert_eq!(back.metadata, json!({}));
    }

    #[test]
    fn header_corruption_is_a_checksum_error() {
        let mut bytes = sample().to_bytes();
        // flip a byte inside the array table (after the fixed 16-byte preamble)
        bytes[20] ^= 0x40;
        assert!(matches!(
            Container::from_bytes(&bytes),
            Err(FormatError::ChecksumMismatch { section: "header", .. })
        ));
    }

    #[test]
    fn body_corruption_is_a_checksum_error() {
        let mut bytes = sample().to_bytes();
        let n = bytes.len();
        bytes[n - 3] ^= 1;
        assert!(matches!(
            Container::from_bytes(&bytes),
            Err(FormatError::ChecksumMismatch { section: "body", .. })
        ));
    }

    #[test]
    fn distinct_error_kinds() {
        let bytes = sample().to_bytes();
        assert_eq!(Container::from_bytes(&bytes[..4]), Err(FormatError::Truncated { needed: 8, available: 4 }));
        assert!(matches!(
            Container::from_bytes(&bytes[..bytes.len() - 1]),
            Err(FormatError::Truncated { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(Container::from_bytes(&bad), Err(FormatError::BadMagic));
        let mut v2 = bytes;
        v2[8] = 2;
        assert_eq!(
            Container::from_bytes(&v2),
            Err(FormatError::UnsupportedVersion { found: 2, expected: 1 })
        );
    }

    #[test]
    fn push_rejects_duplicates_and_bad_shapes() {
        let mut c = sample();
        assert!(c.push("pos", &[1], ArrayData::F64(vec![1.0])).is_err());
        assert!(c.push("x", &[2, 2], ArrayData::F64(vec![1.0])).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.imlc");
        write_container(&path, &sample()).unwrap();
        assert_eq!(read_container(&path).unwrap(), sample());
    }

    fn bits_f32(v: &[f32]) -> Vec<u32> {
        v.iter().map(|x| x.to_bits()).collect()
    }

    proptest! {
        // Bit patterns, not values: NaN payloads must survive.
        #[test]
        fn round_trip_is_bit_exact(
            f in proptest::collection::vec(any::<u32>(), 0..40),
            d in proptest::collection::vec(any::<u64>(), 0..40),
            i in proptest::collection::vec(any::<i64>(), 0..40),
            z in proptest::collection::vec((any::<u32>(), any::<u32>()), 0..20),
        ) {
            let mut c = Container::new(json!({"k": [1, 2, 3]}));
            let f32s: Vec<f32> = f.iter().map(|&b| f32::from_bits(b)).collect();
            c.push("f", &[f32s.len()], ArrayData::F32(f32s.clone())).unwrap();
            let f64s: Vec<f64> = d.iter().map(|&b| f64::from_bits(b)).collect();
            c.push("d", &[f64s.len()], ArrayData::F64(f64s.clone())).unwrap();
            c.push("i", &[i.len(), 1], ArrayData::I64(i.clone())).unwrap();
            let zs: Vec<Complex32> = z.iter().map(|&(a, b)| Complex32::new(f32::from_bits(a), f32::from_bits(b))).collect();
            c.push("z", &[zs.len()], ArrayData::C32(zs.clone())).unwrap();

            let back = Container::from_bytes(&c.to_bytes()).unwrap();
            match &back.get("f").unwrap().data { ArrayData::F32(v) => prop_assert_eq!(bits_f32(v), f), _ => unreachable!() }
            match &back.get("d").unwrap().data { ArrayData::F64(v) => prop_assert_eq!(v.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), d), _ => unreachable!() }
            match &back.get("i").unwrap().data { ArrayData::I64(v) => prop_assert_eq!(v, &i), _ => unreachable!() }
            match &back.get("z").unwrap().data {
                ArrayData::C32(v) => {
                    let got: Vec<(u32, u32)> = v.iter().map(|c| (c.re.to_bits(), c.im.to_bits())).collect();
                    prop_assert_eq!(got, z);
                }
                _ => unreachable!(),
            }
            prop_assert_eq!(back.metadata, c.metadata);
        }

        #[test]
        fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
            let _ = Container::from_bytes(&bytes);
        }
    }
}
