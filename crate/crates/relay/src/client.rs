//! Blocking client for the relay store.

use std::io;
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::time::Duration;

use agentry_core::wire::{read_frame, write_frame};
use agentry_core::{BehaviorSpec, CodecError, EntityId};
use parking_lot::Mutex;

use crate::protocol::{
    decode_response, encode_request, ErrorCode, Located, Request, Response, StoreStats,
};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("relay store i/o: {0}")]
    Io(#[from] io::Error),
    #[error("relay store codec: {0}")]
    Codec(#[from] CodecError),
    #[error("already exists: {0}")]
    AlreadyExists(String),
    #[error("unknown entity: {0}")]
    UnknownEntity(String),
    #[error("mailbox closed: {0}")]
    Closed(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("rejected by store: {0}")]
    Rejected(String),
    #[error("unexpected response {0:?}")]
    Unexpected(Box<Response>),
}

impl ClientError {
    fn from_remote(code: ErrorCode, detail: String) -> Self {
        match code {
            ErrorCode::AlreadyExists => ClientError::AlreadyExists(detail),
            ErrorCode::UnknownEntity => ClientError::UnknownEntity(detail),
            ErrorCode::Closed => ClientError::Closed(detail),
            ErrorCode::NotFound => ClientError::NotFound(detail),
            ErrorCode::BadRequest | ErrorCode::Internal => ClientError::Rejected(detail),
        }
    }

    /// True for failures to reach the store at all.
    pub fn is_transport(&self) -> bool {
        matches!(self, ClientError::Io(_) | ClientError::Codec(_))
    }
}

pub type ClientResult<T> = Result<T, ClientError>;

/// Connection pool to one relay store. Safe to share between threads; each
/// concurrent call uses its own connection.
#[derive(Debug)]
pub struct RelayClient {
    addr: SocketAddr,
    idle: Mutex<Vec<TcpStream>>,
    connect_timeout: Duration,
}

impl RelayClient {
    /// Connects eagerly so an unreachable store is reported up front.
    pub fn connect<A: ToSocketAddrs>(addr: A) -> ClientResult<RelayClient> {
        let addr = addr.to_socket_addrs()?.next().ok_or_else(|| {
            io::Error::new(io::ErrorKind::InvalidInput, "no address for relay store")
        })?;
        let client = RelayClient {
            addr,
            idle: Mutex::new(Vec::new()),
            connect_timeout: Duration::from_secs(5),
        };
        let s = client.open()?;
        client.idle.lock().push(s);
        Ok(client)
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    fn open(&self) -> io::Result<TcpStream> {
        let s = TcpStream::connect_timeout(&self.addr, self.connect_timeout)?;
        s.set_nodelay(true)?;
        Ok(s)
    }

    fn roundtrip(stream: &mut TcpStream, frame: &[u8]) -> ClientResult<Response> {
        write_frame(stream, frame)?;
        let resp = read_frame(stream, u32::MAX as usize)?;
        Ok(decode_response(&resp)?)
    }

    /// Sends one request. A pooled connection that turns out to be dead is
    /// retried once on a fresh connection.
    pub fn call(&self, req: &Request) -> ClientResult<Response> {
        let frame = encode_request(req)?;
        let pooled = self.idle.lock().pop();
        let (mut stream, was_pooled) = match pooled {
            Some(s) => (s, true),
            None => (self.open()?, false),
        };
        let resp = match Self::roundtrip(&mut stream, &frame) {
            Ok(r) => r,
            Err(ClientError::Io(_)) if was_pooled => {
                stream = self.open()?;
                Self::roundtrip(&mut stream, &frame)?
            }
            Err(e) => return Err(e),
        };
        self.idle.lock().push(stream);
        match resp {
            Response::Error { code, detail } => Err(ClientError::from_remote(code, detail)),
            other => Ok(other),
        }
    }

    fn expect_ok(&self, req: &Request) -> ClientResult<()> {
        match self.call(req)? {
            Response::Ok => Ok(()),
            other => Err(ClientError::Unexpected(Box::new(other))),
        }
    }

    pub fn register(&self, entity: EntityId, spec: Option<BehaviorSpec>) -> ClientResult<()> {
        self.expect_ok(&Request::Register { entity, spec })
    }

    pub fn advertise(&self, entity: EntityId, endpoint: &str) -> ClientResult<()> {
        self.expect_ok(&Request::Advertise {
            entity,
            endpoint: endpoint.to_string(),
        })
    }

    pub fn locate(&self, entity: EntityId) -> ClientResult<Located> {
        match self.call(&Request::Locate { entity })? {
            Response::Located(l) => Ok(l),
            other => Err(ClientError::Unexpected(Box::new(other))),
        }
    }

    pub fn put_msg(&self, dest: EntityId, envelope: Vec<u8>) -> ClientResult<()> {
        self.expect_ok(&Request::PutMsg { dest, envelope })
    }

    pub fn poll_msgs(&self, entity: EntityId, max: u32, wait: Duration) -> ClientResult<Vec<Vec<u8>>> {
        let wait_ms = wait.as_millis().min(u32::MAX as u128) as u32;
        match self.call(&Request::PollMsgs { entity, max, wait_ms })? {
            Response::Messages(m) => Ok(m),
            other => Err(ClientError::Unexpected(Box::new(other))),
        }
    }

    pub fn requeue(&self, entity: EntityId, envelopes: Vec<Vec<u8>>) -> ClientResult<()> {
        self.expect_ok(&Request::Requeue { entity, envelopes })
    }

    /// Ends any long-poll currently waiting on `entity`'s mailbox.
    pub fn release(&self, entity: EntityId) -> ClientResult<()> {
        self.requeue(entity, Vec::new())
    }

    pub fn close(&self, entity: EntityId) -> ClientResult<()> {
        self.expect_ok(&Request::Close { entity })
    }

    pub fn discover(&self, behavior: &str) -> ClientResult<Vec<EntityId>> {
        match self.call(&Request::Discover {
            behavior: behavior.to_string(),
        })? {
            Response::Ids(ids) => Ok(ids),
            other => Err(ClientError::Unexpected(Box::new(other))),
        }
    }

    pub fn obj_put(&self, key: &str, bytes: Vec<u8>, ttl: Option<Duration>) -> ClientResult<()> {
        self.expect_ok(&Request::ObjPut {
            key: key.to_string(),
            bytes,
            ttl_ms: ttl.map(|t| t.as_millis().max(1) as u64),
        })
    }

    pub fn obj_get(&self, key: &str) -> ClientResult<Vec<u8>> {
        match self.call(&Request::ObjGet { key: key.to_string() })? {
            Response::Object(b) => Ok(b),
            other => Err(ClientError::Unexpected(Box::new(other))),
        }
    }

    pub fn obj_del(&self, key: &str) -> ClientResult<()> {
        self.expect_ok(&Request::ObjDel { key: key.to_string() })
    }

    pub fn stats(&self) -> ClientResult<StoreStats> {
        match self.call(&Request::Stats)? {
            Response::Stats(s) => Ok(s),
            other => Err(ClientError::Unexpected(Box::new(other))),
        }
    }
}
