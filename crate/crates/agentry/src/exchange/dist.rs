//! Distributed exchange: direct peer sockets when reachable, the relay
//! store otherwise.
//!
//! Every bound client runs a relay poller that long-polls its pending queue
//! and, when listening, a socket listener that accepts envelopes and object
//! fetches from peers. Both feed one local inbox. Routes to peers are cached
//! as hints: a failed direct send demotes the peer to relay and the direct
//! path is probed again after `reprobe_after`.

use std::collections::{HashMap, HashSet, VecDeque};
use std::net::{IpAddr, Ipv4Addr, SocketAddr, TcpStream, ToSocketAddrs};
use std::sync::{Arc, OnceLock, Weak};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use agentry_core::{
    decode_envelope, encode_envelope, BehaviorSpec, EntityId, Envelope, MessageId, ObjectId, Role,
};
use agentry_relay::{ClientError, Located, RelayClient};
use parking_lot::{Condvar, Mutex};

use super::direct::{self, Ack, DirectListener, Reject, Sink};
use super::{Exchange, ExchangeClient, ExchangeError, ExchangeResult};
use crate::dataplane::{DepotConfig, ObjectDepot};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Routing {
    /// Direct delivery when the peer advertises an endpoint, relay otherwise.
    Hybrid,
    /// Every envelope goes through the relay store.
    RelayOnly,
}

#[derive(Debug, Clone)]
pub struct DistConfig {
    pub routing: Routing,
    /// Open a socket listener and advertise it. Without one the entity is
    /// reachable only through the relay, as if behind a NAT.
    pub listen: bool,
    pub listen_host: IpAddr,
    pub poll_wait: Duration,
    pub poll_batch: u32,
    /// Locally buffered envelopes above which the poller pauses.
    pub inbox_limit: usize,
    pub reprobe_after: Duration,
    pub direct_timeout: Duration,
    pub idle_close: Duration,
    pub dedup_window: usize,
    pub depot: DepotConfig,
}

impl Default for DistConfig {
    fn default() -> Self {
        Self {
            routing: Routing::Hybrid,
            listen: true,
            listen_host: IpAddr::V4(Ipv4Addr::LOCALHOST),
            poll_wait: Duration::from_secs(1),
            poll_batch: 64,
            inbox_limit: 1024,
            reprobe_after: Duration::from_secs(10),
            direct_timeout: Duration::from_secs(5),
            idle_close: Duration::from_secs(60),
            dedup_window: 4096,
            depot: DepotConfig::default(),
        }
    }
}

impl DistConfig {
    pub fn relay_only() -> Self {
        Self {
            routing: Routing::RelayOnly,
            listen: false,
            ..Self::default()
        }
    }
}

fn store_error(e: ClientError, dest: EntityId) -> ExchangeError {
    match e {
        ClientError::Closed(_) => ExchangeError::MailboxClosed(dest),
        ClientError::UnknownEntity(_) => ExchangeError::UnknownEntity(dest),
        other => ExchangeError::Transport(other.to_string()),
    }
}

/// Exchange backed by a relay store. Cloning shares the store connection
/// pool.
#[derive(Clone)]
pub struct DistExchange {
    store: Arc<RelayClient>,
    config: Arc<DistConfig>,
}

impl DistExchange {
    pub fn connect<A: ToSocketAddrs>(store: A, config: DistConfig) -> ExchangeResult<Self> {
        let store = RelayClient::connect(store).map_err(|e| ExchangeError::Transport(e.to_string()))?;
        Ok(Self {
            store: Arc::new(store),
            config: Arc::new(config),
        })
    }

    /// Same store, different routing configuration.
    pub fn with_config(&self, config: DistConfig) -> Self {
        Self {
            store: self.store.clone(),
            config: Arc::new(config),
        }
    }

    pub fn store(&self) -> &Arc<RelayClient> {
        &self.store
    }

    pub fn config(&self) -> &DistConfig {
        &self.config
    }

    /// Like [`Exchange::bind`], keeping the concrete client type.
    pub fn bind_client(&self, id: EntityId) -> ExchangeResult<Arc<DistClient>> {
        Ok(Arc::new(DistClient::bind(id, self.store.clone(), self.config.clone())?))
    }

    /// Registers a new entity and binds it.
    pub fn connect_entity(
        &self,
        role: Role,
        spec: Option<BehaviorSpec>,
    ) -> ExchangeResult<Arc<dyn ExchangeClient>> {
        let id = self.register(role, spec)?;
        self.bind(id)
    }
}

impl Exchange for DistExchange {
    fn register(&self, role: Role, spec: Option<BehaviorSpec>) -> ExchangeResult<EntityId> {
        loop {
            let id = EntityId::random(role);
            match self.store.register(id, spec.clone()) {
                Ok(()) => return Ok(id),
                Err(ClientError::AlreadyExists(_)) => continue,
                Err(e) => return Err(ExchangeError::Transport(e.to_string())),
            }
        }
    }

    fn bind(&self, id: EntityId) -> ExchangeResult<Arc<dyn ExchangeClient>> {
        Ok(self.bind_client(id)?)
    }

    fn close(&self, id: EntityId) -> ExchangeResult<()> {
        self.store.close(id).map_err(|e| store_error(e, id))
    }

    fn discover(&self, behavior: &str) -> ExchangeResult<Vec<EntityId>> {
        self.store
            .discover(behavior)
            .map_err(|e| ExchangeError::Transport(e.to_string()))
    }
}

#[derive(Default)]
struct Inbox {
    queue: VecDeque<Envelope>,
    /// The store reported the mailbox closed and drained.
    closed: bool,
    close_requested: bool,
    stopping: bool,
    poll_active: bool,
    /// Envelopes handed back by `stop` while a poll was in flight; the
    /// poller requeues them together with its batch.
    leftover: Vec<Vec<u8>>,
}

enum PollStep {
    Got(usize),
    Stopped,
    Closed,
    Failed(ClientError),
}

#[derive(Default)]
struct Dedup {
    order: VecDeque<MessageId>,
    seen: HashSet<MessageId>,
}

#[derive(Debug, Clone)]
enum Route {
    Direct(String),
    Relay(Instant),
}

struct Conn {
    stream: Option<TcpStream>,
    last_used: Instant,
}

struct Shared {
    id: EntityId,
    store: Arc<RelayClient>,
    config: Arc<DistConfig>,
    inbox: Mutex<Inbox>,
    arrived: Condvar,
    dedup: Mutex<HashMap<EntityId, Dedup>>,
    routes: Mutex<HashMap<EntityId, Route>>,
    /// Destinations that received relayed envelopes since the last direct
    /// delivery; the next direct send asks them to catch up first.
    relayed: Mutex<HashSet<EntityId>>,
    poll_turn: Mutex<()>,
    conns: Mutex<HashMap<String, Arc<Mutex<Conn>>>>,
    depot: OnceLock<Arc<ObjectDepot>>,
}

impl Shared {
    /// False if `e` was seen recently from the same sender.
    fn first_sighting(&self, e: &Envelope) -> bool {
        let mut dedup = self.dedup.lock();
        let d = dedup.entry(e.src).or_default();
        if !d.seen.insert(e.message_id) {
            return false;
        }
        d.order.push_back(e.message_id);
        if d.order.len() > self.config.dedup_window {
            if let Some(old) = d.order.pop_front() {
                d.seen.remove(&old);
            }
        }
        true
    }

    fn push(&self, inbox: &mut Inbox, e: Envelope) {
        if self.first_sighting(&e) {
            inbox.queue.push_back(e);
        } else {
            log::debug!("{}: dropped duplicate {}", self.id, e.message_id);
        }
    }

    fn requeue(&self, frames: Vec<Vec<u8>>) {
        if frames.is_empty() {
            return;
        }
        let n = frames.len();
        match self.store.requeue(self.id, frames) {
            Ok(()) => log::debug!("{}: handed {n} envelopes back to the store", self.id),
            Err(e) => log::warn!("{}: could not requeue {n} envelopes: {e}", self.id),
        }
    }

    /// One store poll. Polls are serialized so that a batch taken from the
    /// store lands in the inbox before the next poll starts.
    fn poll_once(&self, wait: Duration) -> PollStep {
        let _turn = self.poll_turn.lock();
        {
            let mut inbox = self.inbox.lock();
            if inbox.stopping {
                return PollStep::Stopped;
            }
            if inbox.closed {
                return PollStep::Closed;
            }
            inbox.poll_active = true;
        }
        let res = self.store.poll_msgs(self.id, self.config.poll_batch, wait);
        let mut inbox = self.inbox.lock();
        inbox.poll_active = false;
        match res {
            Ok(frames) if inbox.stopping => {
                let mut all = std::mem::take(&mut inbox.leftover);
                all.extend(frames);
                drop(inbox);
                self.requeue(all);
                PollStep::Stopped
            }
            Ok(frames) => {
                let n = frames.len();
                for f in frames {
                    match decode_envelope(&f) {
                        Ok(e) => self.push(&mut inbox, e),
                        Err(err) => log::warn!("{}: undecodable relayed envelope: {err}", self.id),
                    }
                }
                self.arrived.notify_all();
                PollStep::Got(n)
            }
            Err(ClientError::Closed(_)) | Err(ClientError::UnknownEntity(_)) => {
                inbox.closed = true;
                self.arrived.notify_all();
                PollStep::Closed
            }
            Err(e) => PollStep::Failed(e),
        }
    }

    fn poll_loop(self: Arc<Self>) {
        loop {
            {
                let mut inbox = self.inbox.lock();
                if inbox.stopping || inbox.closed {
                    return;
                }
                if inbox.queue.len() >= self.config.inbox_limit {
                    self.arrived
                        .wait_for(&mut inbox, Duration::from_millis(20));
                    continue;
                }
            }
            match self.poll_once(self.config.poll_wait) {
                PollStep::Got(_) => {}
                PollStep::Stopped | PollStep::Closed => return,
                PollStep::Failed(e) => {
                    if self.inbox.lock().stopping {
                        return;
                    }
                    log::warn!("{}: relay poll failed: {e}", self.id);
                    thread::sleep(Duration::from_millis(200));
                }
            }
        }
    }

    fn route(&self, dest: EntityId) -> ExchangeResult<Option<String>> {
        match self.routes.lock().get(&dest) {
            Some(Route::Direct(ep)) => return Ok(Some(ep.clone())),
            Some(Route::Relay(since)) if since.elapsed() < self.config.reprobe_after => {
                return Ok(None)
            }
            _ => {}
        }
        match self.store.locate(dest) {
            Ok(Located::Endpoint(ep)) => Ok(Some(ep)),
            Ok(Located::Unadvertised) => {
                self.routes.lock().insert(dest, Route::Relay(Instant::now()));
                Ok(None)
            }
            Ok(Located::Closed) => Err(ExchangeError::MailboxClosed(dest)),
            Err(ClientError::UnknownEntity(_)) => Err(ExchangeError::UnknownEntity(dest)),
            Err(e) => {
                log::debug!("locate {dest} failed: {e}");
                Ok(None)
            }
        }
    }

    fn try_direct(&self, ep: &str, frame: &[u8], id: MessageId, catch_up: bool) -> std::io::Result<Ack> {
        let conn = self
            .conns
            .lock()
            .entry(ep.to_string())
            .or_insert_with(|| {
                Arc::new(Mutex::new(Conn {
                    stream: None,
                    last_used: Instant::now(),
                }))
            })
            .clone();
        let mut c = conn.lock();
        if c.last_used.elapsed() > self.config.idle_close {
            c.stream = None;
        }
        let reused = c.stream.is_some();
        for attempt in 0..2 {
            if c.stream.is_none() {
                let addr: SocketAddr = ep.parse().map_err(|_| {
                    std::io::Error::new(std::io::ErrorKind::InvalidInput, format!("bad endpoint {ep:?}"))
                })?;
                let s = TcpStream::connect_timeout(&addr, self.config.direct_timeout)?;
                s.set_nodelay(true)?;
                s.set_read_timeout(Some(self.config.direct_timeout))?;
                c.stream = Some(s);
            }
            let stream = c.stream.as_mut().expect("connected above");
            let sent = if catch_up {
                direct::request_catch_up(stream).and_then(|()| direct::send_envelope(stream, frame, id))
            } else {
                direct::send_envelope(stream, frame, id)
            };
            match sent {
                Ok(ack) => {
                    c.last_used = Instant::now();
                    return Ok(ack);
                }
                Err(e) => {
                    c.stream = None;
                    // a pooled socket may have died while idle; try one fresh one
                    if !(reused && attempt == 0) {
                        return Err(e);
                    }
                }
            }
        }
        unreachable!("second attempt always returns")
    }

    fn send(&self, e: &Envelope) -> ExchangeResult<()> {
        let frame = encode_envelope(e).map_err(|err| ExchangeError::Transport(err.to_string()))?;
        if self.config.routing == Routing::Hybrid {
            if let Some(ep) = self.route(e.dest)? {
                let catch_up = self.relayed.lock().contains(&e.dest);
                match self.try_direct(&ep, &frame, e.message_id, catch_up) {
                    Ok(Ack::Delivered) => {
                        self.routes.lock().insert(e.dest, Route::Direct(ep));
                        self.relayed.lock().remove(&e.dest);
                        return Ok(());
                    }
                    Ok(Ack::Rejected(why)) => {
                        log::debug!("{} rejected direct delivery ({why}); relaying", e.dest);
                        if why != Reject::Closed as u8 {
                            self.routes.lock().insert(e.dest, Route::Relay(Instant::now()));
                        }
                    }
                    Err(err) => {
                        log::debug!("direct send to {} at {ep} failed: {err}; relaying", e.dest);
                        self.routes.lock().insert(e.dest, Route::Relay(Instant::now()));
                    }
                }
            }
        }
        self.store.put_msg(e.dest, frame).map_err(|err| store_error(err, e.dest))?;
        if self.config.routing == Routing::Hybrid {
            self.relayed.lock().insert(e.dest);
        }
        Ok(())
    }
}

impl Sink for Shared {
    fn deliver(&self, e: Envelope) -> Result<(), Reject> {
        if e.dest != self.id {
            return Err(Reject::WrongDestination);
        }
        let mut inbox = self.inbox.lock();
        if inbox.closed || inbox.close_requested {
            return Err(Reject::Closed);
        }
        if inbox.stopping {
            return Err(Reject::Stopping);
        }
        self.push(&mut inbox, e);
        self.arrived.notify_all();
        Ok(())
    }

    fn catch_up(&self) {
        while let PollStep::Got(n) = self.poll_once(Duration::ZERO) {
            if n < self.config.poll_batch as usize {
                break;
            }
        }
    }

    fn fetch(&self, id: &ObjectId) -> Option<Arc<Vec<u8>>> {
        self.depot.get()?.serve(id)
    }
}

/// A mailbox bound through a [`DistExchange`].
pub struct DistClient {
    shared: Arc<Shared>,
    listener: Mutex<Option<DirectListener>>,
    poller: Mutex<Option<JoinHandle<()>>>,
}

impl DistClient {
    fn bind(id: EntityId, store: Arc<RelayClient>, config: Arc<DistConfig>) -> ExchangeResult<Self> {
        match store.locate(id) {
            Ok(Located::Closed) => return Err(ExchangeError::MailboxClosed(id)),
            Ok(_) => {}
            Err(e) => return Err(store_error(e, id)),
        }
        let shared = Arc::new(Shared {
            id,
            store: store.clone(),
            config: config.clone(),
            inbox: Mutex::new(Inbox::default()),
            arrived: Condvar::new(),
            dedup: Mutex::new(HashMap::new()),
            routes: Mutex::new(HashMap::new()),
            relayed: Mutex::new(HashSet::new()),
            poll_turn: Mutex::new(()),
            conns: Mutex::new(HashMap::new()),
            depot: OnceLock::new(),
        });
        let mut endpoint = None;
        let listener = if config.listen {
            let weak: Weak<dyn Sink> = Arc::downgrade(&(shared.clone() as Arc<dyn Sink>));
            let l = DirectListener::start(config.listen_host, weak)
                .map_err(|e| ExchangeError::Transport(format!("cannot listen: {e}")))?;
            let ep = l.addr().to_string();
            store.advertise(id, &ep).map_err(|e| store_error(e, id))?;
            endpoint = Some(ep);
            Some(l)
        } else {
            None
        };
        let depot = ObjectDepot::new(id, config.depot.clone(), endpoint, Some(store));
        let _ = shared.depot.set(Arc::new(depot));
        let poller = {
            let shared = shared.clone();
            thread::Builder::new()
                .name("relay-poll".into())
                .spawn(move || shared.poll_loop())
                .map_err(|e| ExchangeError::Transport(format!("cannot start poller: {e}")))?
        };
        Ok(DistClient {
            shared,
            listener: Mutex::new(listener),
            poller: Mutex::new(Some(poller)),
        })
    }

    /// Advertised direct endpoint, if the client listens.
    pub fn endpoint(&self) -> Option<String> {
        self.listener.lock().as_ref().map(|l| l.addr().to_string())
    }

    /// Shuts the direct listener while leaving the endpoint advertised, as
    /// when the peer becomes unreachable. Delivery continues via the relay.
    pub fn stop_listener(&self) {
        if let Some(mut l) = self.listener.lock().take() {
            l.stop();
        }
    }
}

impl ExchangeClient for DistClient {
    fn id(&self) -> EntityId {
        self.shared.id
    }

    fn send(&self, e: &Envelope) -> ExchangeResult<()> {
        self.shared.send(e)
    }

    fn recv(&self, timeout: Duration) -> ExchangeResult<Envelope> {
        let deadline = Instant::now() + timeout;
        let s = &self.shared;
        let mut inbox = s.inbox.lock();
        loop {
            if let Some(e) = inbox.queue.pop_front() {
                if inbox.queue.len() + 1 == s.config.inbox_limit {
                    s.arrived.notify_all();
                }
                return Ok(e);
            }
            if inbox.closed {
                return Err(ExchangeError::MailboxClosed(s.id));
            }
            if s.arrived.wait_until(&mut inbox, deadline).timed_out() && inbox.queue.is_empty() {
                return Err(if inbox.closed {
                    ExchangeError::MailboxClosed(s.id)
                } else {
                    ExchangeError::Timeout
                });
            }
        }
    }

    fn discover(&self, behavior: &str) -> ExchangeResult<Vec<EntityId>> {
        self.shared
            .store
            .discover(behavior)
            .map_err(|e| ExchangeError::Transport(e.to_string()))
    }

    fn close(&self) -> ExchangeResult<()> {
        self.shared.inbox.lock().close_requested = true;
        let id = self.shared.id;
        self.shared.store.close(id).map_err(|e| store_error(e, id))
    }

    fn stop(&self) {
        let s = &self.shared;
        let (requeue_now, release) = {
            let mut inbox = s.inbox.lock();
            if inbox.stopping {
                return;
            }
            inbox.stopping = true;
            let frames: Vec<Vec<u8>> = inbox
                .queue
                .drain(..)
                .filter_map(|e| encode_envelope(&e).ok())
                .collect();
            s.arrived.notify_all();
            if inbox.closed || inbox.close_requested {
                (Vec::new(), false)
            } else if inbox.poll_active {
                inbox.leftover = frames;
                (Vec::new(), true)
            } else {
                (frames, false)
            }
        };
        s.requeue(requeue_now);
        if release {
            // cut the long-poll short so join does not wait it out
            if let Err(e) = s.store.release(s.id) {
                log::debug!("{}: release failed: {e}", s.id);
            }
        }
        if let Some(mut l) = self.listener.lock().take() {
            l.stop();
        }
    }

    fn join(&self) {
        if let Some(h) = self.poller.lock().take() {
            let _ = h.join();
        }
    }

    fn depot(&self) -> Arc<ObjectDepot> {
        self.shared.depot.get().expect("depot set at bind").clone()
    }
}

impl Drop for DistClient {
    fn drop(&mut self) {
        self.stop();
    }
}
