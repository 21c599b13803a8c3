//! Peer-to-peer socket protocol: envelope delivery with acknowledgement and
//! object fetch, sharing one listener.

use std::io;
use std::net::{IpAddr, Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Weak};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use agentry_core::wire::{open_frame, read_frame, write_frame, FrameBuilder};
use agentry_core::envelope::decode_after_kind;
use agentry_core::{CodecError, Envelope, Kind, MessageId, ObjectId};
use parking_lot::Mutex;

pub(crate) const ACK_DELIVERED: u8 = 0x10;
pub(crate) const ACK_REJECTED: u8 = 0x11;
pub(crate) const CATCH_UP: u8 = 0x12;
pub(crate) const CAUGHT_UP: u8 = 0x13;
pub(crate) const FETCH: u8 = 0x30;
pub(crate) const FETCH_OK: u8 = 0x31;
pub(crate) const FETCH_NOT_FOUND: u8 = 0x32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub(crate) enum Reject {
    Closed = 1,
    WrongDestination = 2,
    Stopping = 3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Ack {
    Delivered,
    Rejected(u8),
}

/// Receiving side of a listener.
pub(crate) trait Sink: Send + Sync {
    fn deliver(&self, e: Envelope) -> Result<(), Reject>;
    /// Pulls every envelope the relay holds for this mailbox into the inbox.
    fn catch_up(&self);
    fn fetch(&self, id: &ObjectId) -> Option<Arc<Vec<u8>>>;
}

pub(crate) struct DirectListener {
    addr: SocketAddr,
    stopping: Arc<AtomicBool>,
    conns: Arc<Mutex<Vec<TcpStream>>>,
    acceptor: Option<JoinHandle<()>>,
}

impl DirectListener {
    pub fn start(host: IpAddr, sink: Weak<dyn Sink>) -> io::Result<DirectListener> {
        let listener = TcpListener::bind(SocketAddr::new(host, 0))?;
        let addr = listener.local_addr()?;
        let stopping = Arc::new(AtomicBool::new(false));
        let conns = Arc::new(Mutex::new(Vec::new()));
        let acceptor = {
            let stopping = stopping.clone();
            let conns = conns.clone();
            thread::Builder::new()
                .name("direct-accept".into())
                .spawn(move || accept_loop(listener, sink, stopping, conns))?
        };
        Ok(DirectListener {
            addr,
            stopping,
            conns,
            acceptor: Some(acceptor),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stop(&mut self) {
        if self.stopping.swap(true, Ordering::SeqCst) {
            return;
        }
        for c in self.conns.lock().drain(..) {
            let _ = c.shutdown(Shutdown::Both);
        }
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }
}

impl Drop for DirectListener {
    fn drop(&mut self) {
        self.stop();
    }
}

fn accept_loop(
    listener: TcpListener,
    sink: Weak<dyn Sink>,
    stopping: Arc<AtomicBool>,
    conns: Arc<Mutex<Vec<TcpStream>>>,
) {
    for conn in listener.incoming() {
        if stopping.load(Ordering::SeqCst) {
            break;
        }
        let Ok(stream) = conn else { continue };
        let _ = stream.set_nodelay(true);
        if let Ok(c) = stream.try_clone() {
            let mut conns = conns.lock();
            conns.retain(|s| s.peer_addr().is_ok());
            conns.push(c);
        }
        let sink = sink.clone();
        let stopping = stopping.clone();
        let _ = thread::Builder::new()
            .name("direct-conn".into())
            .spawn(move || {
                if let Err(e) = serve(stream, &sink, &stopping) {
                    if e.kind() != io::ErrorKind::UnexpectedEof {
                        log::debug!("direct connection ended: {e}");
                    }
                }
            });
    }
}

fn codec_io(e: CodecError) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, e)
}

fn serve(mut stream: TcpStream, sink: &Weak<dyn Sink>, stopping: &AtomicBool) -> io::Result<()> {
    loop {
        let frame = read_frame(&mut stream, u32::MAX as usize)?;
        let (op, mut r) = open_frame(&frame).map_err(codec_io)?;
        let reply = if op == CATCH_UP {
            r.finish().map_err(codec_io)?;
            if let Some(s) = sink.upgrade() {
                s.catch_up();
            }
            FrameBuilder::new(CAUGHT_UP).finish().map_err(codec_io)?
        } else if op == FETCH {
            let id = ObjectId(r.array16().map_err(codec_io)?);
            r.finish().map_err(codec_io)?;
            let found = sink.upgrade().and_then(|s| s.fetch(&id));
            match found {
                Some(bytes) => {
                    let mut b = FrameBuilder::new(FETCH_OK);
                    b.field(&bytes).map_err(codec_io)?;
                    b.finish().map_err(codec_io)?
                }
                None => FrameBuilder::new(FETCH_NOT_FOUND).finish().map_err(codec_io)?,
            }
        } else {
            let kind = Kind::from_byte(op).ok_or_else(|| {
                io::Error::new(io::ErrorKind::InvalidData, format!("unknown opcode 0x{op:02x}"))
            })?;
            let env = decode_after_kind(kind, &mut r).map_err(codec_io)?;
            r.finish().map_err(codec_io)?;
            let id = env.message_id;
            let outcome = match sink.upgrade() {
                Some(_) if stopping.load(Ordering::SeqCst) => Err(Reject::Stopping),
                Some(s) => s.deliver(env),
                None => Err(Reject::Stopping),
            };
            let mut b = match outcome {
                Ok(()) => FrameBuilder::new(ACK_DELIVERED),
                Err(_) => FrameBuilder::new(ACK_REJECTED),
            };
            b.writer().message_id(&id);
            if let Err(why) = outcome {
                b.writer().u8(why as u8);
            }
            b.finish().map_err(codec_io)?
        };
        write_frame(&mut stream, &reply)?;
    }
}

/// Asks the peer to drain its relay queue before taking direct envelopes, so
/// that a sender moving from the relay to the direct path keeps its order.
pub(crate) fn request_catch_up(stream: &mut TcpStream) -> io::Result<()> {
    write_frame(stream, &FrameBuilder::new(CATCH_UP).finish().map_err(codec_io)?)?;
    let resp = read_frame(stream, 1 << 10)?;
    match open_frame(&resp).map_err(codec_io)?.0 {
        CAUGHT_UP => Ok(()),
        other => Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("unexpected reply opcode 0x{other:02x}"),
        )),
    }
}

/// Writes one envelope frame and waits for its acknowledgement.
pub(crate) fn send_envelope(stream: &mut TcpStream, frame: &[u8], id: MessageId) -> io::Result<Ack> {
    write_frame(stream, frame)?;
    let resp = read_frame(stream, 1 << 10)?;
    let (op, mut r) = open_frame(&resp).map_err(codec_io)?;
    let acked = r.message_id().map_err(codec_io)?;
    if acked != id {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "acknowledgement for another message"));
    }
    match op {
        ACK_DELIVERED => Ok(Ack::Delivered),
        ACK_REJECTED => Ok(Ack::Rejected(r.u8().map_err(codec_io)?)),
        other => Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("unexpected reply opcode 0x{other:02x}"),
        )),
    }
}

/// Fetches an object from a peer. `Ok(None)` means the peer does not hold it.
pub(crate) fn fetch(endpoint: &str, id: &ObjectId, timeout: Duration) -> io::Result<Option<Vec<u8>>> {
    let addr: SocketAddr = endpoint
        .parse()
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, format!("bad endpoint {endpoint:?}")))?;
    let mut stream = TcpStream::connect_timeout(&addr, timeout)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(timeout))?;
    let mut b = FrameBuilder::new(FETCH);
    b.writer().raw(&id.0);
    write_frame(&mut stream, &b.finish().map_err(codec_io)?)?;
    let resp = read_frame(&mut stream, u32::MAX as usize)?;
    let (op, mut r) = open_frame(&resp).map_err(codec_io)?;
    match op {
        FETCH_OK => {
            let bytes = r.field().map_err(codec_io)?.to_vec();
            r.finish().map_err(codec_io)?;
            Ok(Some(bytes))
        }
        FETCH_NOT_FOUND => Ok(None),
        other => Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("unexpected fetch reply 0x{other:02x}"),
        )),
    }
}
