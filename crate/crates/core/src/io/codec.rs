//! Little-endian byte buffers with bounds-checked reads.

use crate::error::{Error, Result};
use crate::provenance::Provenance;

#[derive(Debug, Default)]
pub struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new(magic: &[u8; 4]) -> Self {
        ByteWriter { buf: magic.to_vec() }
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn len_u32(&mut self, v: usize) {
        self.u32(u32::try_from(v).expect("length exceeds u32"));
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64s<'a>(&mut self, vs: impl IntoIterator<Item = &'a f64>) {
        for v in vs {
            self.f64(*v);
        }
    }

    pub fn f32s<'a>(&mut self, vs: impl IntoIterator<Item = &'a f64>) {
        for v in vs {
            self.buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }

    pub fn str(&mut self, s: &str) {
        self.len_u32(s.len());
        self.buf.extend_from_slice(s.as_bytes());
    }

    pub fn provenance(&mut self, p: &Provenance) {
        self.buf.extend_from_slice(&p.train_hash);
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub struct ByteReader<'a> {
    kind: &'static str,
    data: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn open(kind: &'static str, magic: &[u8; 4], data: &'a [u8]) -> Result<Self> {
        if data.len() < 4 || &data[..4] != magic {
            return Err(Error::format(kind, "bad magic"));
        }
        Ok(ByteReader { kind, data, pos: 4 })
    }

    pub fn err(&self, reason: impl Into<String>) -> Error {
        Error::format(self.kind, reason)
    }

    pub fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    pub fn at_end(&self) -> bool {
        self.remaining() == 0
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(self.err(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    pub fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().expect("eight bytes")))
    }

    /// `a · b` with an overflow check, for sizing arrays from header fields.
    pub fn product(&self, a: usize, b: usize) -> Result<usize> {
        a.checked_mul(b).ok_or_else(|| self.err("size overflow"))
    }

    fn ensure(&self, n: usize, width: usize) -> Result<()> {
        match n.checked_mul(width) {
            Some(bytes) if bytes <= self.remaining() => Ok(()),
            _ => Err(self.err(format!("truncated: need {n} values of {width} bytes"))),
        }
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        self.ensure(n, 8)?;
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        self.ensure(n, 4)?;
        Ok(self
            .take(n * 4)?
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
            .collect())
    }

    pub fn u32s(&mut self, n: usize) -> Result<Vec<u32>> {
        self.ensure(n, 4)?;
        (0..n).map(|_| self.u32()).collect()
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.usize()?;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| self.err("id is not UTF-8"))
    }

    pub fn provenance(&mut self) -> Result<Provenance> {
        let b = self.take(32)?;
        Ok(Provenance {
            train_hash: b.try_into().expect("32 bytes"),
        })
    }

    pub fn finish(self) -> Result<()> {
        if self.at_end() {
            Ok(())
        } else {
            Err(self.err(format!("{} trailing bytes", self.remaining())))
        }
    }
}

/// Reject NaN and infinities in a decoded model block.
pub fn require_finite(kind: &'static str, what: &str, vs: &[f64]) -> Result<()> {
    if vs.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::format(kind, format!("non-finite value in {what}")))
    }
}
