//! TCP front end of the relay store.
//!
//! One acceptor thread, one session thread per connection. All state sits
//! behind a single mutex; long polls park on a condition variable that is
//! signalled whenever a mailbox gains messages or closes.

use std::collections::HashMap;
use std::io;
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use agentry_core::wire::{read_frame, write_frame};
use agentry_core::EntityId;
use parking_lot::{Condvar, Mutex};

use crate::persist::Journal;
use crate::protocol::{
    decode_request, encode_response, ErrorCode, Request, Response, StoreStats,
};
use crate::store::{error_response, Mutation, PollOutcome, Store};

pub const DEFAULT_PORT: u16 = 7420;
/// Upper bound on a single long poll.
pub const MAX_POLL_WAIT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone)]
pub struct RelayConfig {
    pub bind: SocketAddr,
    /// Persistence directory; `None` keeps everything in memory.
    pub data_dir: Option<PathBuf>,
    /// Emulated round-trip time between clients and the store.
    pub inject_latency: Duration,
    /// Bytes that fit in one emulated round trip. Transfers larger than this
    /// pay one extra `inject_latency` per additional window.
    pub inject_window: usize,
    /// Journal records between snapshots.
    pub snapshot_every: usize,
}

impl Default for RelayConfig {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 0)),
            data_dir: None,
            inject_latency: Duration::ZERO,
            inject_window: 4 << 20,
            snapshot_every: 10_000,
        }
    }
}

struct Inner {
    store: Store,
    journal: Option<Journal>,
    /// Bumped by an empty REQUEUE; waiting polls of that entity return.
    releases: HashMap<EntityId, u64>,
}

impl Inner {
    fn log(&mut self, m: &Mutation) -> Result<(), (ErrorCode, String)> {
        let Some(j) = self.journal.as_mut() else {
            return Ok(());
        };
        j.append(m)
            .map_err(|e| (ErrorCode::Internal, format!("journal write failed: {e}")))?;
        if j.needs_snapshot() {
            if let Err(e) = j.snapshot(&self.store) {
                log::error!("snapshot failed: {e}");
            }
        }
        Ok(())
    }
}

struct Shared {
    inner: Mutex<Inner>,
    arrivals: Condvar,
    config: RelayConfig,
    stopping: AtomicBool,
    sessions: Mutex<Vec<TcpStream>>,
}

/// A running relay store. Dropping it stops the server.
pub struct RelayServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    acceptor: Option<JoinHandle<()>>,
}

impl RelayServer {
    pub fn start(config: RelayConfig) -> io::Result<RelayServer> {
        let (journal, store) = match &config.data_dir {
            Some(dir) => {
                let (j, s) = Journal::open(dir, config.snapshot_every.max(1))?;
                (Some(j), s)
            }
            None => (None, Store::default()),
        };
        let listener = TcpListener::bind(config.bind)?;
        let addr = listener.local_addr()?;
        let shared = Arc::new(Shared {
            inner: Mutex::new(Inner {
                store,
                journal,
                releases: HashMap::new(),
            }),
            arrivals: Condvar::new(),
            config,
            stopping: AtomicBool::new(false),
            sessions: Mutex::new(Vec::new()),
        });
        let acceptor = {
            let shared = shared.clone();
            thread::Builder::new()
                .name("relay-accept".into())
                .spawn(move || accept_loop(listener, shared))?
        };
        log::info!("relay store listening on {addr}");
        Ok(RelayServer {
            addr,
            shared,
            acceptor: Some(acceptor),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stats(&self) -> StoreStats {
        self.shared.inner.lock().store.stats
    }

    /// Blocks until the acceptor exits (i.e. forever, unless stopped).
    pub fn wait(mut self) {
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }

    pub fn stop(mut self) {
        self.stop_inner();
    }

    fn stop_inner(&mut self) {
        if self.shared.stopping.swap(true, Ordering::SeqCst) {
            return;
        }
        self.shared.arrivals.notify_all();
        for s in self.shared.sessions.lock().drain(..) {
            let _ = s.shutdown(Shutdown::Both);
        }
        // unblock accept()
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }
}

impl Drop for RelayServer {
    fn drop(&mut self) {
        self.stop_inner();
    }
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    for conn in listener.incoming() {
        if shared.stopping.load(Ordering::SeqCst) {
            break;
        }
        let stream = match conn {
            Ok(s) => s,
            Err(e) => {
                log::warn!("accept failed: {e}");
                continue;
            }
        };
        let _ = stream.set_nodelay(true);
        if let Ok(c) = stream.try_clone() {
            let mut sessions = shared.sessions.lock();
            sessions.retain(|s| s.peer_addr().is_ok());
            sessions.push(c);
        }
        let shared = shared.clone();
        let spawned = thread::Builder::new()
            .name("relay-session".into())
            .spawn(move || {
                if let Err(e) = session(stream, &shared) {
                    if e.kind() != io::ErrorKind::UnexpectedEof {
                        log::debug!("session ended: {e}");
                    }
                }
            });
        if let Err(e) = spawned {
            log::error!("cannot spawn session thread: {e}");
        }
    }
}

/// Extra emulated round trips needed to move `n` bytes.
fn extra_round_trips(n: usize, window: usize) -> u32 {
    if window == 0 {
        return 0;
    }
    (n.saturating_sub(1) / window) as u32
}

fn session(mut stream: TcpStream, shared: &Shared) -> io::Result<()> {
    let latency = shared.config.inject_latency;
    let window = shared.config.inject_window;
    loop {
        let frame = read_frame(&mut stream, u32::MAX as usize)?;
        if shared.stopping.load(Ordering::SeqCst) {
            return Ok(());
        }
        if !latency.is_zero() {
            thread::sleep(latency / 2 + latency * extra_round_trips(frame.len(), window));
        }
        let resp = match decode_request(&frame) {
            Ok(req) => handle(shared, req, &|| peer_alive(&stream)),
            Err(e) => Response::error(ErrorCode::BadRequest, e.to_string()),
        };
        let out = encode_response(&resp)
            .unwrap_or_else(|e| encode_response(&Response::error(ErrorCode::Internal, e.to_string())).unwrap());
        if !latency.is_zero() {
            thread::sleep(latency / 2 + latency * extra_round_trips(out.len(), window));
        }
        write_frame(&mut stream, &out)?;
    }
}

/// True unless the peer has hung up. Clients wait for each response, so a
/// readable socket during a request means EOF or a protocol violation.
fn peer_alive(stream: &TcpStream) -> bool {
    if stream.set_nonblocking(true).is_err() {
        return false;
    }
    let mut b = [0u8; 1];
    let alive = matches!(stream.peek(&mut b), Err(e) if e.kind() == io::ErrorKind::WouldBlock);
    stream.set_nonblocking(false).is_ok() && alive
}

fn handle(shared: &Shared, req: Request, alive: &dyn Fn() -> bool) -> Response {
    let now = Instant::now();
    let mut inner = shared.inner.lock();
    let result: Result<Response, (ErrorCode, String)> = (|| match req {
        Request::Register { entity, spec } => {
            let m = inner.store.register(entity, spec)?;
            inner.log(&m)?;
            Ok(Response::Ok)
        }
        Request::Advertise { entity, endpoint } => {
            inner.store.advertise(entity, endpoint)?;
            Ok(Response::Ok)
        }
        Request::Locate { entity } => Ok(Response::Located(inner.store.locate(entity)?)),
        Request::PutMsg { dest, envelope } => {
            let m = inner.store.put_msg(dest, envelope)?;
            inner.log(&m)?;
            shared.arrivals.notify_all();
            Ok(Response::Ok)
        }
        Request::PollMsgs { entity, max, wait_ms } => {
            inner.store.stats.poll += 1;
            let wait = Duration::from_millis(wait_ms as u64).min(MAX_POLL_WAIT);
            let deadline = now + wait;
            let epoch = inner.releases.get(&entity).copied();
            let mut waited = false;
            loop {
                // a consumer that died or let go mid-poll must not take
                // messages with it
                if waited && (!alive() || inner.releases.get(&entity).copied() != epoch) {
                    return Ok(Response::Messages(Vec::new()));
                }
                let (outcome, m) = inner.store.poll_now(entity, max)?;
                if let Some(m) = m {
                    inner.log(&m)?;
                }
                match outcome {
                    PollOutcome::Messages(msgs) => return Ok(Response::Messages(msgs)),
                    PollOutcome::Empty => {
                        if shared.stopping.load(Ordering::SeqCst) || Instant::now() >= deadline {
                            return Ok(Response::Messages(Vec::new()));
                        }
                        shared.arrivals.wait_until(&mut inner, deadline);
                        waited = true;
                    }
                }
            }
        }
        Request::Close { entity } => {
            if let Some(m) = inner.store.close(entity)? {
                inner.log(&m)?;
            }
            shared.arrivals.notify_all();
            Ok(Response::Ok)
        }
        Request::Discover { behavior } => Ok(Response::Ids(inner.store.discover(&behavior))),
        Request::ObjPut { key, bytes, ttl_ms } => {
            inner
                .store
                .obj_put(key, bytes, ttl_ms.map(Duration::from_millis), now);
            Ok(Response::Ok)
        }
        Request::ObjGet { key } => Ok(Response::Object(inner.store.obj_get(&key, now)?)),
        Request::ObjDel { key } => {
            inner.store.obj_del(&key)?;
            Ok(Response::Ok)
        }
        Request::Requeue { entity, envelopes } => {
            let release = envelopes.is_empty();
            let m = inner.store.requeue(entity, envelopes)?;
            if release {
                *inner.releases.entry(entity).or_default() += 1;
            } else {
                inner.log(&m)?;
            }
            shared.arrivals.notify_all();
            Ok(Response::Ok)
        }
        Request::Stats => Ok(Response::Stats(inner.store.stats)),
    })();
    result.unwrap_or_else(error_response)
}
