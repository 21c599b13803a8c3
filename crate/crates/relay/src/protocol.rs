//! Request/response frames spoken between relay-store clients and the server.
//!
//! Frames reuse the envelope framing: 4-byte length, version byte, opcode
//! byte, then length-prefixed fields.

use agentry_core::wire::{open_frame, FrameBuilder, WireReader, WireWriter};
use agentry_core::{BehaviorSpec, CodecError, EntityId};

pub mod op {
    pub const REGISTER: u8 = 0x20;
    pub const ADVERTISE: u8 = 0x21;
    pub const LOCATE: u8 = 0x22;
    pub const PUT_MSG: u8 = 0x23;
    pub const POLL_MSGS: u8 = 0x24;
    pub const CLOSE: u8 = 0x25;
    pub const DISCOVER: u8 = 0x26;
    pub const OBJ_PUT: u8 = 0x27;
    pub const OBJ_GET: u8 = 0x28;
    pub const OBJ_DEL: u8 = 0x29;
    pub const REQUEUE: u8 = 0x2a;
    pub const STATS: u8 = 0x2b;

    pub const R_OK: u8 = 0x80;
    pub const R_LOCATED: u8 = 0x81;
    pub const R_MESSAGES: u8 = 0x82;
    pub const R_IDS: u8 = 0x83;
    pub const R_OBJECT: u8 = 0x84;
    pub const R_STATS: u8 = 0x85;
    pub const R_ERROR: u8 = 0xff;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Request {
    Register { entity: EntityId, spec: Option<BehaviorSpec> },
    Advertise { entity: EntityId, endpoint: String },
    Locate { entity: EntityId },
    PutMsg { dest: EntityId, envelope: Vec<u8> },
    PollMsgs { entity: EntityId, max: u32, wait_ms: u32 },
    Close { entity: EntityId },
    Discover { behavior: String },
    ObjPut { key: String, bytes: Vec<u8>, ttl_ms: Option<u64> },
    ObjGet { key: String },
    ObjDel { key: String },
    /// Puts undelivered envelopes back at the head of a mailbox, oldest first.
    Requeue { entity: EntityId, envelopes: Vec<Vec<u8>> },
    Stats,
}

/// Answer to a LOCATE request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Located {
    Unadvertised,
    Endpoint(String),
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ErrorCode {
    AlreadyExists = 1,
    UnknownEntity = 2,
    Closed = 3,
    NotFound = 4,
    BadRequest = 5,
    Internal = 6,
}

impl ErrorCode {
    fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            1 => ErrorCode::AlreadyExists,
            2 => ErrorCode::UnknownEntity,
            3 => ErrorCode::Closed,
            4 => ErrorCode::NotFound,
            5 => ErrorCode::BadRequest,
            6 => ErrorCode::Internal,
            _ => return None,
        })
    }
}

/// Operation counters kept by the server, used to instrument benchmarks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StoreStats {
    pub register: u64,
    pub advertise: u64,
    pub locate: u64,
    pub put_msg: u64,
    pub put_msg_bytes: u64,
    pub poll: u64,
    pub polled_msgs: u64,
    pub polled_bytes: u64,
    pub close: u64,
    pub discover: u64,
    pub obj_put: u64,
    pub obj_put_bytes: u64,
    pub obj_get: u64,
    pub obj_get_bytes: u64,
    pub obj_del: u64,
    pub requeue: u64,
}

impl StoreStats {
    fn fields(&self) -> [u64; 16] {
        [
            self.register,
            self.advertise,
            self.locate,
            self.put_msg,
            self.put_msg_bytes,
            self.poll,
            self.polled_msgs,
            self.polled_bytes,
            self.close,
            self.discover,
            self.obj_put,
            self.obj_put_bytes,
            self.obj_get,
            self.obj_get_bytes,
            self.obj_del,
            self.requeue,
        ]
    }

    fn from_fields(f: [u64; 16]) -> Self {
        StoreStats {
            register: f[0],
            advertise: f[1],
            locate: f[2],
            put_msg: f[3],
            put_msg_bytes: f[4],
            poll: f[5],
            polled_msgs: f[6],
            polled_bytes: f[7],
            close: f[8],
            discover: f[9],
            obj_put: f[10],
            obj_put_bytes: f[11],
            obj_get: f[12],
            obj_get_bytes: f[13],
            obj_del: f[14],
            requeue: f[15],
        }
    }

    /// Counter-wise difference `self - earlier`.
    pub fn since(&self, earlier: &StoreStats) -> StoreStats {
        let a = self.fields();
        let b = earlier.fields();
        let mut out = [0u64; 16];
        for i in 0..16 {
            out[i] = a[i].saturating_sub(b[i]);
        }
        StoreStats::from_fields(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Response {
    Ok,
    Located(Located),
    Messages(Vec<Vec<u8>>),
    Ids(Vec<EntityId>),
    Object(Vec<u8>),
    Stats(StoreStats),
    Error { code: ErrorCode, detail: String },
}

impl Response {
    pub fn error(code: ErrorCode, detail: impl Into<String>) -> Self {
        Response::Error {
            code,
            detail: detail.into(),
        }
    }
}

fn entity_bytes(id: &EntityId) -> Vec<u8> {
    let mut w = WireWriter::new();
    w.entity(id);
    w.into_inner()
}

pub fn encode_request(req: &Request) -> Result<Vec<u8>, CodecError> {
    use Request::*;
    let mut b;
    match req {
        Register { entity, spec } => {
            b = FrameBuilder::new(op::REGISTER);
            b.field(&entity_bytes(entity))?;
            match spec {
                Some(s) => {
                    b.field(&[1])?;
                    b.field(&s.encode())?;
                }
                None => {
                    b.field(&[0])?;
                }
            }
        }
        Advertise { entity, endpoint } => {
            b = FrameBuilder::new(op::ADVERTISE);
            b.field(&entity_bytes(entity))?;
            b.field(endpoint.as_bytes())?;
        }
        Locate { entity } => {
            b = FrameBuilder::new(op::LOCATE);
            b.field(&entity_bytes(entity))?;
        }
        PutMsg { dest, envelope } => {
            b = FrameBuilder::new(op::PUT_MSG);
            b.field(&entity_bytes(dest))?;
            b.field(envelope)?;
        }
        PollMsgs { entity, max, wait_ms } => {
            b = FrameBuilder::new(op::POLL_MSGS);
            b.field(&entity_bytes(entity))?;
            b.field(&max.to_be_bytes())?;
            b.field(&wait_ms.to_be_bytes())?;
        }
        Close { entity } => {
            b = FrameBuilder::new(op::CLOSE);
            b.field(&entity_bytes(entity))?;
        }
        Discover { behavior } => {
            b = FrameBuilder::new(op::DISCOVER);
            b.field(behavior.as_bytes())?;
        }
        ObjPut { key, bytes, ttl_ms } => {
            b = FrameBuilder::new(op::OBJ_PUT);
            b.field(key.as_bytes())?;
            b.field(bytes)?;
            b.field(&ttl_ms.unwrap_or(0).to_be_bytes())?;
        }
        ObjGet { key } => {
            b = FrameBuilder::new(op::OBJ_GET);
            b.field(key.as_bytes())?;
        }
        ObjDel { key } => {
            b = FrameBuilder::new(op::OBJ_DEL);
            b.field(key.as_bytes())?;
        }
        Requeue { entity, envelopes } => {
            b = FrameBuilder::new(op::REQUEUE);
            b.field(&entity_bytes(entity))?;
            b.field(&(envelopes.len() as u32).to_be_bytes())?;
            for e in envelopes {
                b.field(e)?;
            }
        }
        Stats => {
            b = FrameBuilder::new(op::STATS);
        }
    }
    b.finish()
}

fn count(r: &mut WireReader<'_>) -> Result<usize, CodecError> {
    let n = r.u32_field()? as usize;
    // each element carries at least a 4-byte length prefix
    if n > r.remaining() / 4 {
        return Err(CodecError::Truncated { offset: r.offset() });
    }
    Ok(n)
}

pub fn decode_request(frame: &[u8]) -> Result<Request, CodecError> {
    let (opcode, mut r) = open_frame(frame)?;
    let req = match opcode {
        op::REGISTER => {
            let entity = r.entity_field()?;
            let at = r.offset();
            let spec = match r.u8_field()? {
                0 => None,
                1 => Some(BehaviorSpec::decode(r.field()?)?),
                _ => {
                    return Err(CodecError::InvalidValue {
                        offset: at,
                        what: "spec flag".into(),
                    })
                }
            };
            Request::Register { entity, spec }
        }
        op::ADVERTISE => Request::Advertise {
            entity: r.entity_field()?,
            endpoint: r.str_field()?.to_string(),
        },
        op::LOCATE => Request::Locate {
            entity: r.entity_field()?,
        },
        op::PUT_MSG => Request::PutMsg {
            dest: r.entity_field()?,
            envelope: r.field()?.to_vec(),
        },
        op::POLL_MSGS => Request::PollMsgs {
            entity: r.entity_field()?,
            max: r.u32_field()?,
            wait_ms: r.u32_field()?,
        },
        op::CLOSE => Request::Close {
            entity: r.entity_field()?,
        },
        op::DISCOVER => Request::Discover {
            behavior: r.str_field()?.to_string(),
        },
        op::OBJ_PUT => {
            let key = r.str_field()?.to_string();
            let bytes = r.field()?.to_vec();
            let ttl = r.u64_field()?;
            Request::ObjPut {
                key,
                bytes,
                ttl_ms: (ttl != 0).then_some(ttl),
            }
        }
        op::OBJ_GET => Request::ObjGet {
            key: r.str_field()?.to_string(),
        },
        op::OBJ_DEL => Request::ObjDel {
            key: r.str_field()?.to_string(),
        },
        op::REQUEUE => {
            let entity = r.entity_field()?;
            let n = count(&mut r)?;
            let envelopes = (0..n)
                .map(|_| r.field().map(<[u8]>::to_vec))
                .collect::<Result<_, _>>()?;
            Request::Requeue { entity, envelopes }
        }
        op::STATS => Request::Stats,
        other => {
            return Err(CodecError::UnknownKind {
                found: other,
                offset: 5,
            })
        }
    };
    r.finish()?;
    Ok(req)
}

pub fn encode_response(resp: &Response) -> Result<Vec<u8>, CodecError> {
    let mut b;
    match resp {
        Response::Ok => b = FrameBuilder::new(op::R_OK),
        Response::Located(l) => {
            b = FrameBuilder::new(op::R_LOCATED);
            match l {
                Located::Unadvertised => {
                    b.field(&[0])?;
                }
                Located::Endpoint(e) => {
                    b.field(&[1])?;
                    b.field(e.as_bytes())?;
                }
                Located::Closed => {
                    b.field(&[2])?;
                }
            }
        }
        Response::Messages(msgs) => {
            b = FrameBuilder::new(op::R_MESSAGES);
            b.field(&(msgs.len() as u32).to_be_bytes())?;
            for m in msgs {
                b.field(m)?;
            }
        }
        Response::Ids(ids) => {
            b = FrameBuilder::new(op::R_IDS);
            b.field(&(ids.len() as u32).to_be_bytes())?;
            for id in ids {
                b.field(&entity_bytes(id))?;
            }
        }
        Response::Object(bytes) => {
            b = FrameBuilder::new(op::R_OBJECT);
            b.field(bytes)?;
        }
        Response::Stats(s) => {
            b = FrameBuilder::new(op::R_STATS);
            for v in s.fields() {
                b.field(&v.to_be_bytes())?;
            }
        }
        Response::Error { code, detail } => {
            b = FrameBuilder::new(op::R_ERROR);
            b.field(&[*code as u8])?;
            b.field(detail.as_bytes())?;
        }
    }
    b.finish()
}

pub fn decode_response(frame: &[u8]) -> Result<Response, CodecError> {
    let (opcode, mut r) = open_frame(frame)?;
    let resp = match opcode {
        op::R_OK => Response::Ok,
        op::R_LOCATED => {
            let at = r.offset();
            match r.u8_field()? {
                0 => Response::Located(Located::Unadvertised),
                1 => Response::Located(Located::Endpoint(r.str_field()?.to_string())),
                2 => Response::Located(Located::Closed),
                _ => {
                    return Err(CodecError::InvalidValue {
                        offset: at,
                        what: "locate status".into(),
                    })
                }
            }
        }
        op::R_MESSAGES => {
            let n = count(&mut r)?;
            Response::Messages(
                (0..n)
                    .map(|_| r.field().map(<[u8]>::to_vec))
                    .collect::<Result<_, _>>()?,
            )
        }
        op::R_IDS => {
            let n = count(&mut r)?;
            Response::Ids((0..n).map(|_| r.entity_field()).collect::<Result<_, _>>()?)
        }
        op::R_OBJECT => Response::Object(r.field()?.to_vec()),
        op::R_STATS => {
            let mut f = [0u64; 16];
            for v in f.iter_mut() {
                *v = r.u64_field()?;
            }
            Response::Stats(StoreStats::from_fields(f))
        }
        op::R_ERROR => {
            let at = r.offset();
            let code = ErrorCode::from_byte(r.u8_field()?).ok_or(CodecError::InvalidValue {
                offset: at,
                what: "error code".into(),
            })?;
            Response::Error {
                code,
                detail: r.str_field()?.to_string(),
            }
        }
        other => {
            return Err(CodecError::UnknownKind {
                found: other,
                offset: 5,
            })
        }
    };
    r.finish()?;
    Ok(resp)
}
