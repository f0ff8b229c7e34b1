//! Portable weights container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "N2NW"                      4 bytes magic
//! version                     u16 (= 1)
//! layer count                 u32
//! per layer:
//!   name length               u16
//!   name                      UTF-8 bytes
//!   rank                      u8
//!   extents                   rank x u32
//!   payload                   product(extents) x f32, row-major
//! ```

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"N2NW";
pub const VERSION: u16 = 1;

/// Ordered list of named `f32` tensors.
pub type NamedTensors = Vec<(String, Tensor<f32>)>;

pub fn encode(layers: &[(String, Tensor<f32>)]) -> Result<Vec<u8>> {
    let mut seen = HashSet::new();
    for (name, _) in layers {
        if !seen.insert(name.as_str()) {
            return Err(Error::DuplicateName(name.clone()));
        }
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(
        &u32::try_from(layers.len())
            .map_err(|_| Error::Format("too many layers".into()))?
            .to_le_bytes(),
    );
    for (name, t) in layers {
        let len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("layer name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let rank = u8::try_from(t.rank()).map_err(|_| Error::Format("rank exceeds 255".into()))?;
        out.push(rank);
        for &e in t.shape() {
            let e = u32::try_from(e).map_err(|_| Error::Format("extent exceeds u32".into()))?;
            out.extend_from_slice(&e.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated(format!(
                "needed {n} bytes for {what} at offset {}, {} available",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode(bytes: &[u8]) -> Result<NamedTensors> {
    if bytes.len() < MAGIC.len() || &bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic, expected \"N2NW\"".into()));
    }
    let mut r = Reader { buf: bytes, pos: 4 };
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::Version {
            found: version,
            expected: VERSION,
        });
    }
    let count = r.u32("layer count")?;
    let mut layers = Vec::new();
    let mut seen = HashSet::new();
    for _ in 0..count {
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Format(format!("layer name at offset {} is not UTF-8", r.pos - len)))?
            .to_string();
        if !seen.insert(name.clone()) {
            return Err(Error::DuplicateName(name));
        }
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("extent")? as usize);
        }
        let n: usize = shape.iter().product();
        let payload = r.take(n * 4, &format!("payload of `{name}`"))?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let t = Tensor::from_vec(&shape, data).map_err(|e| Error::Format(format!("layer `{name}`: {e}")))?;
        layers.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after last layer",
            bytes.len() - r.pos
        )));
    }
    Ok(layers)
}

pub fn save_weights(path: impl AsRef<Path>, layers: &[(String, Tensor<f32>)]) -> Result<()> {
    std::fs::write(path, encode(layers)?)?;
    Ok(())
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<NamedTensors> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn sample() -> NamedTensors {
        let mut rng = Rng::new(5);
        vec![
            ("head".to_string(), rng.normal(&[4, 1, 3, 3], 1.0).unwrap()),
            ("tail".to_string(), rng.normal(&[1, 4, 3, 3], 1.0).unwrap()),
        ]
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.rdw");
        let layers = sample();
        save_weights(&path, &layers).unwrap();
        let back = load_weights(&path).unwrap();
        assert_eq!(back.len(), layers.len());
        for ((n1, t1), (n2, t2)) in layers.iter().zip(&back) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            let b1: Vec<u32> = t1.data().iter().map(|v| v.to_bits()).collect();
            let b2: Vec<u32> = t2.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(b1, b2);
        }
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&sample()).unwrap();
        assert_eq!(&bytes[..4], b"N2NW");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(&bytes[6..10], &[2, 0, 0, 0]);
        assert_eq!(&bytes[10..12], &[4, 0]);
        assert_eq!(&bytes[12..16], b"head");
        assert_eq!(bytes[16], 4);
        assert_eq!(&bytes[17..21], &[4, 0, 0, 0]);
        // 4 + 2 + 4 + 2 layers x (2 + 4 + 1 + 16) + 2 x 36 x 4
        assert_eq!(bytes.len(), 10 + 2 * 23 + 2 * 36 * 4);
    }

    #[test]
    fn corrupt_magic() {
        let mut bytes = encode(&sample()).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn version_mismatch() {
        let mut bytes = encode(&sample()).unwrap();
        bytes[4] = 2;
        assert!(matches!(decode(&bytes), Err(Error::Version { found: 2, expected: 1 })));
    }

    #[test]
    fn truncated_payload() {
        let bytes = encode(&sample()).unwrap();
        let err = decode(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::Truncated(_)));
        assert!(err.to_string().contains("truncated payload"));
    }

    #[test]
    fn duplicate_names() {
        let mut layers = sample();
        layers[1].0 = "head".into();
        assert!(matches!(encode(&layers), Err(Error::DuplicateName(_))));
        // hand-crafted duplicate on the decode side
        let mut ok = sample();
        ok[1].0 = "hexd".into();
        let mut bytes = encode(&ok).unwrap();
        let at = bytes.windows(4).rposition(|w| w == b"hexd").unwrap();
        bytes[at + 2] = b'a';
        assert!(matches!(decode(&bytes), Err(Error::DuplicateName(_))));
    }
}
