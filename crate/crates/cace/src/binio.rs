//! Little-endian primitives shared by the binary formats.

use std::io::{Read, Write};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a {expected} file (bad magic)")]
    Magic { expected: &'static str },
    #[error("unsupported {what} version {found}")]
    Version { what: &'static str, found: u32 },
    #[error("corrupt file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Core(#[from] cace_core::Error),
}

pub type Result<T> = std::result::Result<T, FormatError>;

/// Upper bound on any length prefix, so a corrupt header cannot trigger a
/// huge allocation.
const MAX_LEN: u64 = 1 << 28;

pub struct Writer<W: Write>(pub W);

impl<W: Write> Writer<W> {
    pub fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.0.write_all(b)?;
        Ok(())
    }

    pub fn u8(&mut self, v: u8) -> Result<()> {
        self.bytes(&[v])
    }

    pub fn u32(&mut self, v: u32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn u64(&mut self, v: u64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn f64(&mut self, v: f64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn f64s(&mut self, vs: &[f64]) -> Result<()> {
        vs.iter().try_for_each(|&v| self.f64(v))
    }

    /// Length-prefixed (u64) run of f64.
    pub fn vec(&mut self, vs: &[f64]) -> Result<()> {
        self.u64(vs.len() as u64)?;
        self.f64s(vs)
    }
}

pub struct Reader<R: Read>(pub R);

impl<R: Read> Reader<R> {
    pub fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0.read_exact(&mut b)?;
        Ok(b)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        if n as u64 > MAX_LEN {
            return Err(FormatError::Corrupt(format!("length {n} too large")));
        }
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn vec(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()?;
        if n > MAX_LEN {
            return Err(FormatError::Corrupt(format!("length {n} too large")));
        }
        self.f64s(n as usize)
    }

    pub fn magic(&mut self, magic: &[u8; 8], expected: &'static str) -> Result<()> {
        if &self.array::<8>()? != magic {
            return Err(FormatError::Magic { expected });
        }
        Ok(())
    }

    /// Fails unless the stream is exhausted.
    pub fn finish(mut self) -> Result<()> {
        let mut rest = [0u8; 1];
        if self.0.read(&mut rest)? != 0 {
            return Err(FormatError::Corrupt("trailing bytes".into()));
        }
        Ok(())
    }
}
