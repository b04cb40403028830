//! Little-endian helpers shared by the binary file formats.

use crate::error::FormatError;

/// Cursor over a byte slice; every read reports truncation against the
/// full buffer length.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).ok_or(FormatError::Truncated { expected: usize::MAX, actual: self.buf.len() })?;
        if end > self.buf.len() {
            return Err(FormatError::Truncated { expected: end, actual: self.buf.len() });
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f32(&mut self) -> Result<f32, FormatError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub(crate) fn check_magic(buf: &[u8], magic: [u8; 4]) -> Result<(), FormatError> {
    if buf.len() < 4 {
        return Err(FormatError::Truncated { expected: 4, actual: buf.len() });
    }
    let found: [u8; 4] = buf[..4].try_into().unwrap();
    if found != magic {
        return Err(FormatError::BadMagic { expected: magic, found });
    }
    Ok(())
}

pub(crate) fn check_version(buf: &[u8], supported: u32) -> Result<(), FormatError> {
    let mut r = Reader::new(buf);
    r.take(4)?;
    let found = r.u32()?;
    if found != supported {
        return Err(FormatError::Version { found, supported });
    }
    Ok(())
}

/// Splits a buffer into body and trailing CRC32, returning the body if the
/// checksum matches.
pub(crate) fn verify_crc(buf: &[u8]) -> Result<&[u8], FormatError> {
    if buf.len() < 4 {
        return Err(FormatError::Truncated { expected: 4, actual: buf.len() });
    }
    let (body, tail) = buf.split_at(buf.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(FormatError::Crc { stored, computed });
    }
    Ok(body)
}

pub(crate) fn append_crc(buf: &mut Vec<u8>) {
    let crc = crc32fast::hash(buf);
    buf.extend_from_slice(&crc.to_le_bytes());
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crc_round_trip_and_detection() {
        let mut b = b"hello world".to_vec();
        append_crc(&mut b);
        assert_eq!(verify_crc(&b).unwrap(), b"hello world");
        b[3] ^= 1;
        assert!(matches!(verify_crc(&b), Err(FormatError::Crc { .. })));
    }

    #[test]
    fn reader_reports_truncation() {
        let mut r = Reader::new(&[1, 0, 0]);
        assert_eq!(r.u16().unwrap(), 1);
        assert_eq!(r.u32(), Err(FormatError::Truncated { expected: 6, actual: 3 }));
    }
}
