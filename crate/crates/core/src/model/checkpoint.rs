//! Network checkpoint file, version 1 (little-endian):
//!
//! ```text
//! 0    8         magic b"IMLOCNN\0"
//! 8    4         version (u32) = 1
//! 12   1         activation tag: 1 = tanh hidden / identity output
//! 13   1         width count W (= 4)
//! 14   8*W       widths (u64)
//!      32        config hash (SHA-256 of the training config and inputs)
//!      8         parameter count P (u64)
//!      4*P       parameters (f32), flat layer order: weight (in x out) then bias
//!      4         CRC-32 over everything before it
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::FormatError;

use super::mlp::Mlp;

pub const MAGIC: [u8; 8] = *b"IMLOCNN\0";
pub const VERSION: u32 = 1;
const TANH: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Mlp,
    pub config_hash: [u8; 32],
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let widths = self.model.widths();
        let params = self.model.params();
        let mut out = Vec::with_capacity(64 + 8 * widths.len() + 4 * params.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(TANH);
        out.push(widths.len() as u8);
        for &w in widths {
            out.extend_from_slice(&(w as u64).to_le_bytes());
        }
        out.extend_from_slice(&self.config_hash);
        out.extend_from_slice(&(params.len() as u64).to_le_bytes());
        for &p in params {
            out.extend_from_slice(&(p as f32).to_le_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(FormatError::BadMagic.into());
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(FormatError::UnsupportedVersion {
                found: version,
                expected: VERSION,
            }
            .into());
        }
        if bytes.len() < 4 {
            return Err(truncated(4, bytes.len()));
        }
        let body_end = bytes.len() - 4;
        let stored = u32::from_le_bytes(bytes[body_end..].try_into().unwrap());
        let computed = crc32fast::hash(&bytes[..body_end]);
        if stored != computed {
            return Err(FormatError::ChecksumMismatch {
                section: "checkpoint",
                stored,
                computed,
            }
            .into());
        }
        let r_bytes = &bytes[..body_end];
        let mut r = Reader {
            bytes: r_bytes,
            pos: r.pos,
        };
        let act = r.take(1)?[0];
        if act != TANH {
            return Err(FormatError::Malformed(format!("unknown activation tag {act}")).into());
        }
        let count = r.take(1)?[0] as usize;
        if count != Mlp::LAYERS + 1 {
            return Err(FormatError::Malformed(format!("{count} widths, expected {}", Mlp::LAYERS + 1)).into());
        }
        let mut widths = Vec::with_capacity(count);
        for _ in 0..count {
            let w = r.u64()?;
            let w = usize::try_from(w)
                .ok()
                .filter(|&w| w > 0 && w <= 1 << 24)
                .ok_or_else(|| FormatError::Malformed(format!("width {w} out of range")))?;
            widths.push(w);
        }
        let mut config_hash = [0u8; 32];
        config_hash.copy_from_slice(r.take(32)?);
        let n = r.u64()?;
        let expected: u64 = widths.windows(2).map(|w| (w[0] * w[1] + w[1]) as u64).sum();
        if n != expected {
            return Err(FormatError::Malformed(format!("{n} parameters, widths imply {expected}")).into());
        }
        let raw = r.take(n as usize * 4)?;
        if r.pos != r_bytes.len() {
            return Err(FormatError::Malformed("trailing bytes after parameters".into()).into());
        }
        let params = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let model = Mlp::from_params(&widths, params).map_err(|e| match e {
            Error::Input(m) | Error::Shape(m) | Error::Config(m) => Error::Format(FormatError::Malformed(m)),
            other => other,
        })?;
        Ok(Self { model, config_hash })
    }
}

fn truncated(needed: usize, available: usize) -> Error {
    FormatError::Truncated {
        needed: needed as u64,
        available: available as u64,
    }
    .into()
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| truncated(self.pos.saturating_add(n), self.bytes.len()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, ckpt.to_bytes())?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn sample() -> Checkpoint {
        Checkpoint {
            model: Mlp::new(&[5, 4, 3, 3], &mut Rng::seed_from_u64(1)).unwrap(),
            config_hash: [7; 32],
        }
    }

    #[test]
    fn round_trip_rounds_through_f32() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back.model, c.model.rounded_to_f32());
        assert_eq!(back.config_hash, [7; 32]);
        // a second trip is lossless
        assert_eq!(Checkpoint::from_bytes(&back.to_bytes()).unwrap(), back);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        write_checkpoint(&p, &sample()).unwrap();
        assert_eq!(read_checkpoint(&p).unwrap().model, sample().model.rounded_to_f32());
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = sample().to_bytes();
        let mut bad = bytes.clone();
        bad[20] ^= 1;
        assert!(matches!(
            Checkpoint::from_bytes(&bad),
            Err(Error::Format(FormatError::ChecksumMismatch { .. }))
        ));
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 9]),
            Err(Error::Format(FormatError::ChecksumMismatch { .. }))
        ));
        assert!(matches!(Checkpoint::from_bytes(b"nope"), Err(Error::Format(FormatError::Truncated { .. }))));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&magic), Err(Error::Format(FormatError::BadMagic))));
        let mut ver = bytes;
        ver[8] = 9;
        assert!(matches!(
            Checkpoint::from_bytes(&ver),
            Err(Error::Format(FormatError::UnsupportedVersion { found: 9, .. }))
        ));
    }

    proptest! {
        #[test]
        fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
            let _ = Checkpoint::from_bytes(&bytes);
        }

        #[test]
        fn checksummed_garbage_never_panics(body in proptest::collection::vec(any::<u8>(), 0..200)) {
            let mut bytes = MAGIC.to_vec();
            bytes.extend_from_slice(&VERSION.to_le_bytes());
            bytes.extend_from_slice(&body);
            let crc = crc32fast::hash(&bytes);
            bytes.extend_from_slice(&crc.to_le_bytes());
            let _ = Checkpoint::from_bytes(&bytes);
        }
    }
}
