//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian: magic `RAUC`, `u32` version, `u32`
//! entry count, then per entry a `u16` name length, the UTF-8 name, a `u8`
//! rank, one `u32` per dimension and the row-major `f64` data.

use std::path::Path;

use crate::error::{Error, Result};
use crate::files;
use crate::model::RauModel;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"RAUC";
pub const VERSION: u32 = 1;

pub fn encode(entries: &[(String, Tensor)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        let len = u16::try_from(name.len())
            .map_err(|_| Error::contract(format!("parameter name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.path,
                format!("truncated while reading {what} at byte {}", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Parses checkpoint bytes; `path` is only used in error messages.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { bytes, pos: 0, path };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::format(path, format!("bad magic {magic:?}, expected RAUC")));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(
            path,
            format!("unsupported version {version}, expected {VERSION}"),
        ));
    }
    let count = r.u32("entry count")?;
    let mut entries = Vec::new();
    for _ in 0..count {
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::format(path, "parameter name is not UTF-8"))?
            .to_string();
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dimension")? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n.saturating_mul(8), "tensor data")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::format(path, format!("`{name}`: {e}")))?;
        entries.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(Error::format(path, format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(entries)
}

pub fn save(model: &RauModel, path: &Path) -> Result<()> {
    files::write_atomic(path, &encode(&model.named_tensors())?)
}

/// Loads a model; its dimensions come from the stored tensor shapes.
pub fn load(path: &Path) -> Result<RauModel> {
    let entries = decode(&files::read(path)?, path)?;
    RauModel::from_named(entries).map_err(|e| match e {
        e @ Error::Format { .. } => e,
        other => Error::format(path, other.to_string()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelDims;
    use crate::tensor::SeededRng;

    fn model() -> RauModel {
        let dims = ModelDims {
            vocab: 7,
            word_dim: 3,
            question_hidden: 2,
            channels: 4,
            locations: 3,
            hidden: 5,
            attention: 2,
            classes: 4,
        };
        RauModel::new(dims, &mut SeededRng::new(2)).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.rauc");
        let m = model();
        save(&m, &p).unwrap();
        let back = load(&p).unwrap();
        assert_eq!(back.dims, m.dims);
        for ((n1, t1), (n2, t2)) in m.named_tensors().iter().zip(back.named_tensors().iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            let b1: Vec<u64> = t1.data().iter().map(|v| v.to_bits()).collect();
            let b2: Vec<u64> = t2.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(b1, b2);
        }
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&[("ab".into(), Tensor::vector(vec![1.5, -2.0]))]).unwrap();
        assert_eq!(&bytes[..4], b"RAUC");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..12], &[1, 0, 0, 0]);
        assert_eq!(&bytes[12..14], &[2, 0]);
        assert_eq!(&bytes[14..16], b"ab");
        assert_eq!(bytes[16], 1);
        assert_eq!(&bytes[17..21], &[2, 0, 0, 0]);
        assert_eq!(&bytes[21..29], &1.5f64.to_le_bytes());
        assert_eq!(bytes.len(), 37);
    }

    #[test]
    fn bad_magic_version_and_truncation() {
        let p = Path::new("x.rauc");
        let good = encode(&model().named_tensors()).unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(decode(&bad, p).unwrap_err().to_string().contains("magic"));
        let mut v2 = good.clone();
        v2[4] = 2;
        assert!(decode(&v2, p).unwrap_err().to_string().contains("version"));
        let cut = &good[..good.len() - 3];
        assert!(decode(cut, p).unwrap_err().to_string().contains("truncated"));
        assert!(decode(&good[..2], p).is_err());
    }

    #[test]
    fn unknown_parameter_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.rauc");
        let mut entries = model().named_tensors();
        entries[0].0 = "enc.bogus".into();
        files::write_atomic(&p, &encode(&entries).unwrap()).unwrap();
        assert!(matches!(load(&p).unwrap_err(), Error::Format { .. }));
    }
}
