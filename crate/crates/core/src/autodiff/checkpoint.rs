//! Binary parameter container.
//!
//! All integers are little-endian.
//!
//! ```text
//! offset  size   field
//! 0       8      magic b"SUMPCKPT"
//! 8       4      format version (u32) = 1
//! 12      1      element width in bytes: 4 = f32, 8 = f64
//! 13      4      metadata length M (u32)
//! 17      M      metadata, UTF-8 (JSON by convention)
//! .       4      parameter count P (u32)
//!         P records, each:
//!           4      name length L (u32)
//!           L      name, UTF-8
//!           4      rank R (u32)
//!           8·R    dimensions (u64 each)
//!           w·N    values, IEEE-754, N = product of dimensions
//! end-4   4      CRC-32 (IEEE) of every preceding byte (u32)
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use super::{ParamStore, Real, Tensor};

pub const MAGIC: &[u8; 8] = b"SUMPCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

pub fn write_checkpoint<S: Real>(store: &ParamStore<S>, metadata: &str) -> Vec<u8> {
    let mut buf = Vec::with_capacity(64 + store.num_values() * S::DTYPE.width());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(S::DTYPE.width() as u8);
    buf.extend_from_slice(&(metadata.len() as u32).to_le_bytes());
    buf.extend_from_slice(metadata.as_bytes());
    buf.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for p in store.iter() {
        buf.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(p.name.as_bytes());
        buf.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
        for &d in p.value.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in p.value.data() {
            match S::DTYPE {
                Dtype::F32 => buf.extend_from_slice(&(x.f64() as f32).to_le_bytes()),
                Dtype::F64 => buf.extend_from_slice(&x.f64().to_le_bytes()),
            }
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() - self.pos < n {
            return Err(CheckpointError::Malformed(format!("truncated at byte {}", self.pos)));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self, n: usize) -> Result<String, CheckpointError> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| CheckpointError::Malformed(e.to_string()))
    }
}

/// Parses a container, converting values to `S` regardless of the stored
/// width. Returns the parameters and the metadata string.
pub fn read_checkpoint<S: Real>(bytes: &[u8]) -> Result<(ParamStore<S>, String), CheckpointError> {
    if bytes.len() < 8 + 4 + 1 + 4 + 4 + 4 || &bytes[..8] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(CheckpointError::Checksum { stored, computed });
    }
    let mut r = Reader { bytes: body, pos: 8 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let width = r.take(1)?[0];
    let dtype = match width {
        4 => Dtype::F32,
        8 => Dtype::F64,
        w => return Err(CheckpointError::Malformed(format!("element width {w}"))),
    };
    let meta_len = r.u32()? as usize;
    let metadata = r.string(meta_len)?;
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = r.string(name_len)?;
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let size: usize = shape.iter().product();
        let raw = r.take(size * dtype.width())?;
        let data = match dtype {
            Dtype::F32 => raw
                .chunks_exact(4)
                .map(|c| S::c(f32::from_le_bytes(c.try_into().unwrap()) as f64))
                .collect(),
            Dtype::F64 => raw
                .chunks_exact(8)
                .map(|c| S::c(f64::from_le_bytes(c.try_into().unwrap())))
                .collect(),
        };
        let value = Tensor::new(shape, data).map_err(|e| CheckpointError::Malformed(format!("{name}: {e}")))?;
        if store.id(&name).is_some() {
            return Err(CheckpointError::Malformed(format!("duplicate parameter {name}")));
        }
        store.add(&name, value);
    }
    if r.pos != body.len() {
        return Err(CheckpointError::Malformed(format!(
            "{} trailing bytes",
            body.len() - r.pos
        )));
    }
    Ok((store, metadata))
}

pub fn save_checkpoint<S: Real>(path: &Path, store: &ParamStore<S>, metadata: &str) -> Result<(), CheckpointError> {
    let bytes = write_checkpoint(store, metadata);
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_checkpoint<S: Real>(path: &Path) -> Result<(ParamStore<S>, String), CheckpointError> {
    read_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_store() -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add(
            "a.weight",
            Tensor::new(vec![2, 3], vec![1.0, -2.5, 3.25, 0.0, 1e-7, -9.0]).unwrap(),
        );
        s.add("b", Tensor::vector(vec![0.5]));
        s
    }

    #[test]
    fn header_layout() {
        let bytes = write_checkpoint(&sample_store(), "{}");
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(bytes[12], 8);
        assert_eq!(u32::from_le_bytes(bytes[13..17].try_into().unwrap()), 2);
        assert_eq!(&bytes[17..19], b"{}");
        // 8+4+1+4+2 header, 4 count, records, 4 crc
        let rec_a = 4 + 8 + 4 + 16 + 6 * 8;
        let rec_b = 4 + 1 + 4 + 8 + 8;
        assert_eq!(bytes.len(), 19 + 4 + rec_a + rec_b + 4);
    }

    #[test]
    fn corruption_detected() {
        let mut bytes = write_checkpoint(&sample_store(), "meta");
        let n = bytes.len();
        bytes[n / 2] ^= 0xff;
        assert!(matches!(
            read_checkpoint::<f64>(&bytes),
            Err(CheckpointError::Checksum { .. })
        ));
        assert!(matches!(
            read_checkpoint::<f64>(b"nonsense-bytes-here-1234"),
            Err(CheckpointError::BadMagic)
        ));
    }

    #[test]
    fn f32_container_loads_as_f64() {
        let s32: ParamStore<f32> = sample_store().cast();
        let (back, meta) = read_checkpoint::<f64>(&write_checkpoint(&s32, "x")).unwrap();
        assert_eq!(meta, "x");
        assert_eq!(back.get(back.id("b").unwrap()).value.data(), &[0.5]);
    }

    proptest! {
        #[test]
        fn round_trip(values in proptest::collection::vec(-1e6f64..1e6, 1..40), meta in "[a-z{}:\" ]{0,30}") {
            let mut s = ParamStore::new();
            s.add("p", Tensor::vector(values.clone()));
            let (back, m) = read_checkpoint::<f64>(&write_checkpoint(&s, &meta)).unwrap();
            prop_assert_eq!(m, meta);
            prop_assert_eq!(back.get(back.id("p").unwrap()).value.data(), values.as_slice());
        }
    }
}
