//! Little-endian binary containers with a magic tag, a version, and a
//! trailing SHA-256 of everything before it.
//!
//! ```text
//! magic     8 bytes
//! version   u32
//! payload   container specific
//! checksum  32 bytes, SHA-256 over magic..payload
//! ```

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const DIGEST_LEN: usize = 32;

pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 8], version: u32) -> Self {
        let mut buf = Vec::with_capacity(1 << 16);
        buf.extend_from_slice(magic);
        buf.extend_from_slice(&version.to_le_bytes());
        Self { buf }
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    pub fn f64s(&mut self, values: &[f64]) {
        self.buf.reserve(values.len() * 8);
        for v in values {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn finish(mut self) -> Vec<u8> {
        let digest = Sha256::digest(&self.buf);
        self.buf.extend_from_slice(&digest);
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Verifies magic, version and checksum, and positions the reader at
    /// the start of the payload.
    pub fn open(bytes: &'a [u8], magic: &[u8; 8], version: u32) -> Result<Self> {
        if bytes.len() < 12 + DIGEST_LEN || &bytes[..8] != magic {
            return Err(Error::Format("unrecognized file header".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Checksum);
        }
        let found = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
        if found != version {
            return Err(Error::VersionMismatch { found, expected: version });
        }
        Ok(Self { buf: body, pos: 12 })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("truncated payload".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("length overflow".into()))
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("length overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format("trailing bytes in payload".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_corruption_and_version() {
        let mut w = Writer::new(b"TESTTEST", 3);
        w.str("hello");
        w.f64s(&[1.5, -0.0, f64::MAX]);
        let bytes = w.finish();

        let mut r = Reader::open(&bytes, b"TESTTEST", 3).unwrap();
        assert_eq!(r.str().unwrap(), "hello");
        let v = r.f64s(3).unwrap();
        assert_eq!(v[1].to_bits(), (-0.0f64).to_bits());
        r.finish().unwrap();

        let mut bad = bytes.clone();
        bad[14] ^= 1;
        assert!(matches!(Reader::open(&bad, b"TESTTEST", 3), Err(Error::Checksum)));
        assert!(matches!(
            Reader::open(&bytes, b"TESTTEST", 4),
            Err(Error::VersionMismatch { found: 3, expected: 4 })
        ));
        assert!(Reader::open(&bytes, b"OTHERTAG", 3).is_err());
    }
}
