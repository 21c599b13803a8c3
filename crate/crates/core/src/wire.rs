//! Low-level framing shared by envelopes, the relay protocol and the peer
//! fetch protocol.
//!
//! A frame is a 4-byte big-endian body length followed by the body. Every
//! body starts with the version byte and an opcode byte. Variable-length
//! fields are prefixed with their 4-byte big-endian length.

use std::io::{self, Read, Write};

use crate::id::{EntityId, MessageId, Role};
use crate::CodecError;

pub const WIRE_VERSION: u8 = 0x01;
pub const LEN_PREFIX: usize = 4;

/// Appends wire primitives to a buffer.
#[derive(Debug, Default)]
pub struct WireWriter {
    buf: Vec<u8>,
}

impl WireWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u16(&mut self, v: u16) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn raw(&mut self, bytes: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(bytes);
        self
    }

    pub fn entity(&mut self, id: &EntityId) -> &mut Self {
        self.buf.extend_from_slice(id.uuid().as_bytes());
        self.buf.push(id.role().wire_byte());
        self
    }

    pub fn message_id(&mut self, id: &MessageId) -> &mut Self {
        self.buf.extend_from_slice(id.as_bytes());
        self
    }

    /// Length-prefixed byte string. Panics if `bytes` exceeds `u32::MAX`;
    /// frame builders check sizes before calling this.
    pub fn field(&mut self, bytes: &[u8]) -> &mut Self {
        let len = u32::try_from(bytes.len()).expect("field longer than u32::MAX");
        self.u32(len);
        self.raw(bytes)
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.buf
    }
}

/// Builds a complete frame: the length prefix is patched in by [`FrameBuilder::finish`].
#[derive(Debug)]
pub struct FrameBuilder {
    w: WireWriter,
}

impl FrameBuilder {
    pub fn new(opcode: u8) -> Self {
        let mut w = WireWriter::new();
        w.u32(0).u8(WIRE_VERSION).u8(opcode);
        Self { w }
    }

    pub fn writer(&mut self) -> &mut WireWriter {
        &mut self.w
    }

    /// Adds a length-prefixed field, refusing anything that cannot be framed.
    pub fn field(&mut self, bytes: &[u8]) -> Result<&mut Self, CodecError> {
        if bytes.len() > u32::MAX as usize {
            return Err(CodecError::TooLarge { len: bytes.len() as u64 });
        }
        self.w.field(bytes);
        Ok(self)
    }

    pub fn finish(self) -> Result<Vec<u8>, CodecError> {
        let mut buf = self.w.into_inner();
        let body = buf.len() - LEN_PREFIX;
        let body32 = u32::try_from(body).map_err(|_| CodecError::TooLarge { len: body as u64 })?;
        buf[..LEN_PREFIX].copy_from_slice(&body32.to_be_bytes());
        Ok(buf)
    }
}

/// Bounds-checked cursor over a byte slice. Offsets in errors are reported
/// relative to `base`, so readers over a frame body report frame offsets.
#[derive(Debug, Clone)]
pub struct WireReader<'a> {
    buf: &'a [u8],
    pos: usize,
    base: usize,
}

impl<'a> WireReader<'a> {
    pub fn new(buf: &'a [u8], base: usize) -> Self {
        Self { buf, pos: 0, base }
    }

    pub fn offset(&self) -> usize {
        self.base + self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.remaining() < n {
            return Err(CodecError::Truncated { offset: self.offset() });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, CodecError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    pub fn u32(&mut self) -> Result<u32, CodecError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn u64(&mut self) -> Result<u64, CodecError> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_be_bytes(a))
    }

    pub fn array16(&mut self) -> Result<[u8; 16], CodecError> {
        let b = self.take(16)?;
        let mut a = [0u8; 16];
        a.copy_from_slice(b);
        Ok(a)
    }

    pub fn entity(&mut self) -> Result<EntityId, CodecError> {
        let uuid = uuid::Uuid::from_bytes(self.array16()?);
        let at = self.offset();
        let role = Role::from_wire_byte(self.u8()?).ok_or(CodecError::InvalidValue {
            offset: at,
            what: "role byte".into(),
        })?;
        Ok(EntityId::new(uuid, role))
    }

    pub fn message_id(&mut self) -> Result<MessageId, CodecError> {
        Ok(MessageId::from_bytes(self.array16()?))
    }

    /// Length-prefixed byte string.
    pub fn field(&mut self) -> Result<&'a [u8], CodecError> {
        let len = self.u32()? as usize;
        self.take(len)
    }

    /// Length-prefixed field that must be exactly `n` bytes long.
    pub fn fixed_field(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        let at = self.offset();
        let f = self.field()?;
        if f.len() != n {
            return Err(CodecError::InvalidValue {
                offset: at,
                what: format!("expected {n}-byte field, got {}", f.len()),
            });
        }
        Ok(f)
    }

    pub fn str_field(&mut self) -> Result<&'a str, CodecError> {
        let at = self.offset() + LEN_PREFIX;
        let f = self.field()?;
        std::str::from_utf8(f).map_err(|_| CodecError::InvalidUtf8 { offset: at })
    }

    pub fn u8_field(&mut self) -> Result<u8, CodecError> {
        Ok(self.fixed_field(1)?[0])
    }

    pub fn u32_field(&mut self) -> Result<u32, CodecError> {
        let f = self.fixed_field(4)?;
        Ok(u32::from_be_bytes([f[0], f[1], f[2], f[3]]))
    }

    pub fn u64_field(&mut self) -> Result<u64, CodecError> {
        let f = self.fixed_field(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(f);
        Ok(u64::from_be_bytes(a))
    }

    pub fn entity_field(&mut self) -> Result<EntityId, CodecError> {
        let at = self.offset();
        let f = self.fixed_field(17)?;
        WireReader::new(f, at + LEN_PREFIX).entity()
    }

    pub fn finish(&self) -> Result<(), CodecError> {
        if self.remaining() != 0 {
            return Err(CodecError::TrailingBytes { offset: self.offset() });
        }
        Ok(())
    }
}

/// Splits a frame into `(opcode, reader over the rest of the body)` after
/// checking the length prefix and the version byte.
pub fn open_frame(frame: &[u8]) -> Result<(u8, WireReader<'_>), CodecError> {
    let mut r = WireReader::new(frame, 0);
    let declared = r.u32()? as usize;
    let actual = frame.len() - LEN_PREFIX;
    if declared != actual {
        return Err(CodecError::LengthMismatch {
            declared: declared as u64,
            actual: actual as u64,
        });
    }
    let at = r.offset();
    let version = r.u8()?;
    if version != WIRE_VERSION {
        return Err(CodecError::UnsupportedVersion { found: version, offset: at });
    }
    let opcode = r.u8()?;
    Ok((opcode, r))
}

/// Reads one complete frame (prefix included). Frames whose declared body
/// exceeds `max_body` are rejected before any allocation.
pub fn read_frame<R: Read>(r: &mut R, max_body: usize) -> io::Result<Vec<u8>> {
    let mut prefix = [0u8; LEN_PREFIX];
    r.read_exact(&mut prefix)?;
    let len = u32::from_be_bytes(prefix) as usize;
    if len > max_body {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("frame body of {len} bytes exceeds limit {max_body}"),
        ));
    }
    // grow with the bytes actually received instead of trusting the prefix
    let mut frame = Vec::with_capacity(LEN_PREFIX + len.min(1 << 20));
    frame.extend_from_slice(&prefix);
    let got = r.take(len as u64).read_to_end(&mut frame)?;
    if got != len {
        return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "frame truncated"));
    }
    Ok(frame)
}

pub fn write_frame<W: Write>(w: &mut W, frame: &[u8]) -> io::Result<()> {
    w.write_all(frame)?;
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builder_patches_length() {
        let mut b = FrameBuilder::new(0x42);
        b.field(b"abc").unwrap();
        let f = b.finish().unwrap();
        assert_eq!(&f[..4], &(f.len() as u32 - 4).to_be_bytes());
        let (op, mut r) = open_frame(&f).unwrap();
        assert_eq!(op, 0x42);
        assert_eq!(r.field().unwrap(), b"abc");
        r.finish().unwrap();
    }

    #[test]
    fn reader_reports_truncation_offset() {
        let mut b = FrameBuilder::new(1);
        b.field(&[9; 10]).unwrap();
        let f = b.finish().unwrap();
        let mut r = WireReader::new(&f[6..12], 6);
        assert_eq!(r.field(), Err(CodecError::Truncated { offset: 10 }));
    }

    #[test]
    fn read_frame_rejects_oversized() {
        let mut data: &[u8] = &[0, 0, 1, 0, 1];
        let err = read_frame(&mut data, 16).unwrap_err();
        assert_eq!(err.kind(), io::ErrorKind::InvalidData);
    }
}
