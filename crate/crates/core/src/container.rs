//! Little-endian binary container helpers shared by the 4DRT, CVOX, RPC1
//! and NNPB formats.
//!
//! Every container starts with a four byte ASCII magic. Readers track the
//! byte offset so format errors can point at the offending position.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub(crate) struct ByteWriter<W: Write> {
    inner: W,
}

impl<W: Write> ByteWriter<W> {
    pub fn new(inner: W) -> Self {
        Self { inner }
    }

    pub fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.inner.write_all(b)?;
        Ok(())
    }

    pub fn u16(&mut self, v: u16) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn u32(&mut self, v: u32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn f64(&mut self, v: f64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn f32s(&mut self, vs: &[f32]) -> Result<()> {
        let mut buf = Vec::with_capacity(vs.len() * 4);
        for v in vs {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.bytes(&buf)
    }

    pub fn len_u32(&mut self, n: usize, what: &str) -> Result<()> {
        let v = u32::try_from(n)
            .map_err(|_| Error::Domain(format!("{what} = {n} does not fit in u32")))?;
        self.u32(v)
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

pub(crate) struct ByteReader<R: Read> {
    inner: R,
    offset: u64,
}

impl<R: Read> ByteReader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner, offset: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.offset
    }

    pub fn exact(&mut self, buf: &mut [u8]) -> Result<()> {
        let mut filled = 0;
        while filled < buf.len() {
            match self.inner.read(&mut buf[filled..]) {
                Ok(0) => {
                    return Err(Error::format(
                        self.offset + filled as u64,
                        format!("truncated: expected {} more bytes", buf.len() - filled),
                    ))
                }
                Ok(n) => filled += n,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        self.offset += buf.len() as u64;
        Ok(())
    }

    pub fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let mut m = [0u8; 4];
        self.exact(&mut m)?;
        if &m != expected {
            return Err(Error::format(
                0,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(&m),
                    String::from_utf8_lossy(expected)
                ),
            ));
        }
        Ok(())
    }

    pub fn u16(&mut self) -> Result<u16> {
        let mut b = [0u8; 2];
        self.exact(&mut b)?;
        Ok(u16::from_le_bytes(b))
    }

    pub fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let mut buf = vec![0u8; n * 4];
        self.exact(&mut buf)?;
        Ok(buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    pub fn version(&mut self, supported: u16) -> Result<u16> {
        let at = self.offset;
        let v = self.u16()?;
        if v != supported {
            return Err(Error::format(at, format!("unsupported version {v}")));
        }
        Ok(v)
    }

    /// Fails unless the stream is exhausted.
    pub fn expect_eof(&mut self) -> Result<()> {
        let mut b = [0u8; 1];
        loop {
            match self.inner.read(&mut b) {
                Ok(0) => return Ok(()),
                Ok(_) => {
                    return Err(Error::format(
                        self.offset,
                        "trailing bytes after declared payload",
                    ))
                }
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
    }
}

/// Writes `bytes` to `path` atomically by renaming a sibling temp file.
pub fn write_atomic(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Domain(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path).inspect_err(|_| {
        let _ = std::fs::remove_file(&tmp);
    })?;
    Ok(())
}
