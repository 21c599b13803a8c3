//! Envelopes, payloads and their bit-exact wire encoding.
//!
//! Envelope body layout after the 4-byte length prefix:
//!
//! ```text
//! version (0x01) | kind | src (16 + role) | dest (16 + role) | message_id (16) | fields...
//! ```
//!
//! where every kind-specific field is a 4-byte big-endian length followed by
//! that many bytes. See `docs/protocol.md` for the per-kind field lists.

use std::fmt;

use crate::id::{EntityId, MessageId};
use crate::wire::{open_frame, FrameBuilder, WireReader, WireWriter, LEN_PREFIX};
use crate::CodecError;

/// Upper bound on an encoded [`ProxyRef`].
pub const MAX_REFERENCE_BYTES: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Kind {
    ActionRequest = 0x01,
    ActionResponse = 0x02,
    Ping = 0x03,
    PingResponse = 0x04,
    Shutdown = 0x05,
}

impl Kind {
    pub fn from_byte(b: u8) -> Option<Kind> {
        Some(match b {
            0x01 => Kind::ActionRequest,
            0x02 => Kind::ActionResponse,
            0x03 => Kind::Ping,
            0x04 => Kind::PingResponse,
            0x05 => Kind::Shutdown,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum ErrorKind {
    ActionRaised = 0x01,
    UnknownAction = 0x02,
    MailboxClosed = 0x03,
    Timeout = 0x04,
    TransportFailure = 0x05,
}

impl ErrorKind {
    fn from_byte(b: u8) -> Option<ErrorKind> {
        Some(match b {
            0x01 => ErrorKind::ActionRaised,
            0x02 => ErrorKind::UnknownAction,
            0x03 => ErrorKind::MailboxClosed,
            0x04 => ErrorKind::Timeout,
            0x05 => ErrorKind::TransportFailure,
            _ => return None,
        })
    }
}

/// Error reported to the caller of an action.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErrorInfo {
    pub kind: ErrorKind,
    pub detail: String,
}

impl ErrorInfo {
    pub fn new(kind: ErrorKind, detail: impl Into<String>) -> Self {
        Self {
            kind,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for ErrorInfo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.kind, self.detail)
    }
}

impl std::error::Error for ErrorInfo {}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObjectId(pub [u8; 16]);

impl ObjectId {
    pub fn random() -> Self {
        ObjectId(*uuid::Uuid::new_v4().as_bytes())
    }
}

impl fmt::Debug for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ObjectId({})", self)
    }
}

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

/// Where the bytes behind a reference can be fetched from.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Location {
    /// Direct fetch from a peer endpoint (`host:port`).
    Peer(String),
    /// Object store key on the relay store.
    StoreKey(String),
}

/// Descriptor of a value passed by reference.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ProxyRef {
    pub object_id: ObjectId,
    pub size: u64,
    pub origin: EntityId,
    pub locations: Vec<Location>,
    pub checksum: [u8; 32],
}

impl ProxyRef {
    pub fn encode(&self) -> Result<Vec<u8>, CodecError> {
        let mut w = WireWriter::new();
        w.raw(&self.object_id.0)
            .u64(self.size)
            .entity(&self.origin)
            .raw(&self.checksum);
        let n = u8::try_from(self.locations.len()).map_err(|_| CodecError::ReferenceTooLarge {
            len: usize::MAX,
            limit: MAX_REFERENCE_BYTES,
        })?;
        w.u8(n);
        for loc in &self.locations {
            let (tag, s) = match loc {
                Location::Peer(s) => (0x01, s),
                Location::StoreKey(s) => (0x02, s),
            };
            let len = u16::try_from(s.len()).unwrap_or(u16::MAX);
            w.u8(tag).u16(len).raw(&s.as_bytes()[..len as usize]);
        }
        if w.len() > MAX_REFERENCE_BYTES {
            return Err(CodecError::ReferenceTooLarge {
                len: w.len(),
                limit: MAX_REFERENCE_BYTES,
            });
        }
        Ok(w.into_inner())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        Self::read(&mut WireReader::new(bytes, 0))
    }

    fn read(r: &mut WireReader<'_>) -> Result<Self, CodecError> {
        if r.remaining() > MAX_REFERENCE_BYTES {
            return Err(CodecError::ReferenceTooLarge {
                len: r.remaining(),
                limit: MAX_REFERENCE_BYTES,
            });
        }
        let object_id = ObjectId(r.array16()?);
        let size = r.u64()?;
        let origin = r.entity()?;
        let mut checksum = [0u8; 32];
        checksum.copy_from_slice(r.take(32)?);
        let n = r.u8()?;
        let mut locations = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let at = r.offset();
            let tag = r.u8()?;
            let len = r.u16()? as usize;
            let s_at = r.offset();
            let s = std::str::from_utf8(r.take(len)?)
                .map_err(|_| CodecError::InvalidUtf8 { offset: s_at })?
                .to_string();
            locations.push(match tag {
                0x01 => Location::Peer(s),
                0x02 => Location::StoreKey(s),
                _ => {
                    return Err(CodecError::InvalidValue {
                        offset: at,
                        what: "location tag".into(),
                    })
                }
            });
        }
        r.finish()?;
        Ok(Self {
            object_id,
            size,
            origin,
            locations,
            checksum,
        })
    }
}

/// Action argument or result: inline bytes or a reference resolved out of band.
#[derive(Clone, PartialEq, Eq, Hash)]
pub enum Payload {
    Inline(Vec<u8>),
    Reference(ProxyRef),
}

impl Payload {
    pub fn empty() -> Self {
        Payload::Inline(Vec::new())
    }

    pub fn as_inline(&self) -> Option<&[u8]> {
        match self {
            Payload::Inline(b) => Some(b),
            Payload::Reference(_) => None,
        }
    }

    pub fn into_inline(self) -> Option<Vec<u8>> {
        match self {
            Payload::Inline(b) => Some(b),
            Payload::Reference(_) => None,
        }
    }
}

impl fmt::Debug for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Payload::Inline(b) if b.len() <= 32 => write!(f, "Inline({b:?})"),
            Payload::Inline(b) => write!(f, "Inline(<{} bytes>)", b.len()),
            Payload::Reference(r) => write!(f, "Reference({:?}, {} bytes)", r.object_id, r.size),
        }
    }
}

impl From<Vec<u8>> for Payload {
    fn from(v: Vec<u8>) -> Self {
        Payload::Inline(v)
    }
}

/// Kind-specific envelope contents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Body {
    ActionRequest {
        action: String,
        payload: Payload,
    },
    ActionResponse {
        request_id: MessageId,
        outcome: Result<Payload, ErrorInfo>,
    },
    Ping,
    PingResponse {
        request_id: MessageId,
    },
    Shutdown {
        terminal: bool,
    },
}

impl Body {
    pub fn kind(&self) -> Kind {
        match self {
            Body::ActionRequest { .. } => Kind::ActionRequest,
            Body::ActionResponse { .. } => Kind::ActionResponse,
            Body::Ping => Kind::Ping,
            Body::PingResponse { .. } => Kind::PingResponse,
            Body::Shutdown { .. } => Kind::Shutdown,
        }
    }
}

/// The unit of communication between entities.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub src: EntityId,
    pub dest: EntityId,
    pub message_id: MessageId,
    pub body: Body,
}

impl Envelope {
    /// New envelope with a fresh message id.
    pub fn new(src: EntityId, dest: EntityId, body: Body) -> Self {
        Self {
            src,
            dest,
            message_id: MessageId::random(),
            body,
        }
    }

    pub fn kind(&self) -> Kind {
        self.body.kind()
    }

    /// Response to this envelope, addressed back to its sender.
    pub fn reply(&self, body: Body) -> Envelope {
        Envelope::new(self.dest, self.src, body)
    }

    /// The request id a response refers to, if this is a response.
    pub fn request_id(&self) -> Option<MessageId> {
        match &self.body {
            Body::ActionResponse { request_id, .. } | Body::PingResponse { request_id } => {
                Some(*request_id)
            }
            _ => None,
        }
    }
}

const PAYLOAD_INLINE: u8 = 0x00;
const PAYLOAD_REFERENCE: u8 = 0x01;
const OUTCOME_OK: u8 = 0x00;
const OUTCOME_ERR: u8 = 0x01;

fn put_payload(b: &mut FrameBuilder, p: &Payload) -> Result<(), CodecError> {
    match p {
        Payload::Inline(bytes) => {
            b.field(&[PAYLOAD_INLINE])?;
            b.field(bytes)?;
        }
        Payload::Reference(r) => {
            b.field(&[PAYLOAD_REFERENCE])?;
            b.field(&r.encode()?)?;
        }
    }
    Ok(())
}

fn read_payload(r: &mut WireReader<'_>) -> Result<Payload, CodecError> {
    let at = r.offset();
    match r.u8_field()? {
        PAYLOAD_INLINE => Ok(Payload::Inline(r.field()?.to_vec())),
        PAYLOAD_REFERENCE => {
            let base = r.offset() + LEN_PREFIX;
            let f = r.field()?;
            Ok(Payload::Reference(ProxyRef::read(&mut WireReader::new(f, base))?))
        }
        _ => Err(CodecError::InvalidValue {
            offset: at,
            what: "payload tag".into(),
        }),
    }
}

/// Encodes an envelope as one complete frame.
pub fn encode_envelope(e: &Envelope) -> Result<Vec<u8>, CodecError> {
    let mut b = FrameBuilder::new(e.kind() as u8);
    b.writer()
        .entity(&e.src)
        .entity(&e.dest)
        .message_id(&e.message_id);
    match &e.body {
        Body::ActionRequest { action, payload } => {
            b.field(action.as_bytes())?;
            put_payload(&mut b, payload)?;
        }
        Body::ActionResponse {
            request_id,
            outcome,
        } => {
            b.field(request_id.as_bytes())?;
            match outcome {
                Ok(p) => {
                    b.field(&[OUTCOME_OK])?;
                    put_payload(&mut b, p)?;
                }
                Err(info) => {
                    b.field(&[OUTCOME_ERR])?;
                    b.field(&[info.kind as u8])?;
                    b.field(info.detail.as_bytes())?;
                }
            }
        }
        Body::Ping => {}
        Body::PingResponse { request_id } => {
            b.field(request_id.as_bytes())?;
        }
        Body::Shutdown { terminal } => {
            b.field(&[*terminal as u8])?;
        }
    }
    b.finish()
}

/// Decodes one complete frame produced by [`encode_envelope`].
pub fn decode_envelope(frame: &[u8]) -> Result<Envelope, CodecError> {
    let (kind_byte, mut r) = open_frame(frame)?;
    let kind = Kind::from_byte(kind_byte).ok_or(CodecError::UnknownKind {
        found: kind_byte,
        offset: LEN_PREFIX + 1,
    })?;
    decode_after_kind(kind, &mut r)
}

/// Decodes the remainder of an envelope frame whose kind byte was already read.
pub fn decode_after_kind(kind: Kind, r: &mut WireReader<'_>) -> Result<Envelope, CodecError> {
    let src = r.entity()?;
    let dest = r.entity()?;
    let message_id = r.message_id()?;
    let body = match kind {
        Kind::ActionRequest => {
            let action = r.str_field()?.to_string();
            let payload = read_payload(r)?;
            Body::ActionRequest { action, payload }
        }
        Kind::ActionResponse => {
            let request_id = MessageId::from_bytes(r.fixed_field(16)?.try_into().unwrap());
            let at = r.offset();
            let outcome = match r.u8_field()? {
                OUTCOME_OK => Ok(read_payload(r)?),
                OUTCOME_ERR => {
                    let at = r.offset();
                    let kind = ErrorKind::from_byte(r.u8_field()?).ok_or(
                        CodecError::InvalidValue {
                            offset: at,
                            what: "error kind".into(),
                        },
                    )?;
                    let detail = r.str_field()?.to_string();
                    Err(ErrorInfo { kind, detail })
                }
                _ => {
                    return Err(CodecError::InvalidValue {
                        offset: at,
                        what: "outcome tag".into(),
                    })
                }
            };
            Body::ActionResponse {
                request_id,
                outcome,
            }
        }
        Kind::Ping => Body::Ping,
        Kind::PingResponse => Body::PingResponse {
            request_id: MessageId::from_bytes(r.fixed_field(16)?.try_into().unwrap()),
        },
        Kind::Shutdown => {
            let at = r.offset();
            let terminal = match r.u8_field()? {
                0 => false,
                1 => true,
                _ => {
                    return Err(CodecError::InvalidValue {
                        offset: at,
                        what: "terminal flag".into(),
                    })
                }
            };
            Body::Shutdown { terminal }
        }
    };
    r.finish()?;
    Ok(Envelope {
        src,
        dest,
        message_id,
        body,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::id::Role;
    use uuid::Uuid;

    fn zero_ids() -> (EntityId, EntityId) {
        (
            EntityId::new(Uuid::nil(), Role::Client),
            EntityId::new(Uuid::nil(), Role::Agent),
        )
    }

    #[test]
    fn ping_frame_layout() {
        let (src, dest) = zero_ids();
        let e = Envelope {
            src,
            dest,
            message_id: MessageId::nil(),
            body: Body::Ping,
        };
        let f = encode_envelope(&e).unwrap();
        // 4 prefix + version + kind + 17 src + 17 dest + 16 message id
        assert_eq!(f.len(), 56);
        assert_eq!(&f[..4], &[0x00, 0x00, 0x00, 0x34]);
        assert_eq!(f[4], 0x01);
        assert_eq!(f[5], Kind::Ping as u8);
        assert_eq!(f[22], 0x02);
        assert_eq!(f[39], 0x01);
        assert_eq!(decode_envelope(&f).unwrap(), e);
    }

    #[test]
    fn inline_length_is_linear() {
        let (src, dest) = zero_ids();
        let req = |n: usize| {
            encode_envelope(&Envelope::new(
                src,
                dest,
                Body::ActionRequest {
                    action: "echo".into(),
                    payload: Payload::Inline(vec![7; n]),
                },
            ))
            .unwrap()
            .len()
        };
        assert_eq!(req(20) - req(10), 10);
    }

    #[test]
    fn bad_version_rejected() {
        let (src, dest) = zero_ids();
        let mut f = encode_envelope(&Envelope::new(src, dest, Body::Ping)).unwrap();
        f[4] = 0x02;
        let err = decode_envelope(&f).unwrap_err();
        assert_eq!(err, CodecError::UnsupportedVersion { found: 2, offset: 4 });
        assert!(err.to_string().contains("unsupported version"));
    }

    #[test]
    fn unknown_kind_rejected() {
        let (src, dest) = zero_ids();
        let mut f = encode_envelope(&Envelope::new(src, dest, Body::Ping)).unwrap();
        f[5] = 0x7f;
        assert_eq!(
            decode_envelope(&f).unwrap_err(),
            CodecError::UnknownKind { found: 0x7f, offset: 5 }
        );
    }

    #[test]
    fn truncated_field_reports_offset() {
        let (src, dest) = zero_ids();
        let f = encode_envelope(&Envelope::new(
            src,
            dest,
            Body::ActionRequest {
                action: "square".into(),
                payload: Payload::Inline(vec![1, 2, 3, 4]),
            },
        ))
        .unwrap();
        // chop the last two payload bytes and fix up the prefix so only the
        // field itself is short
        let mut cut = f[..f.len() - 2].to_vec();
        let body = (cut.len() - 4) as u32;
        cut[..4].copy_from_slice(&body.to_be_bytes());
        let err = decode_envelope(&cut).unwrap_err();
        assert!(matches!(err, CodecError::Truncated { .. }), "{err:?}");
        // payload bytes start after the 4-byte field prefix
        assert_eq!(err.offset(), Some(f.len() - 4));
    }

    #[test]
    fn prefix_mismatch_rejected() {
        let (src, dest) = zero_ids();
        let f = encode_envelope(&Envelope::new(src, dest, Body::Ping)).unwrap();
        assert!(matches!(
            decode_envelope(&f[..f.len() - 1]),
            Err(CodecError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn reference_stays_small() {
        let r = ProxyRef {
            object_id: ObjectId::random(),
            size: 10 << 20,
            origin: EntityId::random(Role::Agent),
            locations: vec![
                Location::Peer("127.0.0.1:40000".into()),
                Location::StoreKey("obj/abc".into()),
            ],
            checksum: [3; 32],
        };
        let bytes = r.encode().unwrap();
        assert!(bytes.len() < MAX_REFERENCE_BYTES);
        assert_eq!(ProxyRef::decode(&bytes).unwrap(), r);

        let huge = ProxyRef {
            locations: vec![Location::StoreKey("k".repeat(600))],
            ..r
        };
        assert!(matches!(huge.encode(), Err(CodecError::ReferenceTooLarge { .. })));
    }
}
