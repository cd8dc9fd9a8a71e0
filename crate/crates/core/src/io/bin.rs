//! Little-endian primitives shared by the binary formats.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub(crate) struct Writer<W: Write> {
    inner: W,
}

impl<W: Write> Writer<W> {
    pub fn new(inner: W) -> Self {
        Self { inner }
    }

    pub fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.inner.write_all(b)?;
        Ok(())
    }

    pub fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
        self.bytes(&v.to_le_bytes())
    }

    pub fn flag(&mut self, v: bool) -> Result<()> {
        self.u32(v as usize)
    }

    pub fn f32s(&mut self, v: &[f64]) -> Result<()> {
        let mut buf = Vec::with_capacity(v.len() * 4);
        for &x in v {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
        self.bytes(&buf)
    }

    pub fn u32s(&mut self, v: &[u32]) -> Result<()> {
        let mut buf = Vec::with_capacity(v.len() * 4);
        for &x in v {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        self.bytes(&buf)
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

pub(crate) struct Reader<R: Read> {
    inner: R,
}

impl<R: Read> Reader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner }
    }

    fn exact(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0; n];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Format("truncated file".into()),
            _ => Error::Io(e),
        })?;
        Ok(buf)
    }

    pub fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.exact(4)?;
        if got != expected {
            return Err(Error::Format(format!("bad magic, expected {:?}", String::from_utf8_lossy(expected))));
        }
        Ok(())
    }

    pub fn u32(&mut self) -> Result<usize> {
        let b = self.exact(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    pub fn flag(&mut self) -> Result<bool> {
        match self.u32()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(Error::Format(format!("bad flag {v}"))),
        }
    }

    /// A count, refused when implausibly large for the remaining data.
    pub fn count(&mut self, limit: usize) -> Result<usize> {
        let n = self.u32()?;
        if n > limit {
            return Err(Error::Format(format!("count {n} exceeds limit {limit}")));
        }
        Ok(n)
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let b = self.exact(n.checked_mul(4).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(b.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect())
    }

    pub fn u32s(&mut self, n: usize) -> Result<Vec<u32>> {
        let b = self.exact(n.checked_mul(4).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(b.chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
    }

    pub fn finish(mut self) -> Result<()> {
        let mut rest = [0u8; 1];
        match self.inner.read(&mut rest)? {
            0 => Ok(()),
            _ => Err(Error::Format("trailing bytes".into())),
        }
    }
}
