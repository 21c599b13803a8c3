//! Client-side references to agents.
//!
//! A [`MailboxRouter`] owns one mailbox and one listener; any number of
//! [`Handle`]s share it. Requests are matched to responses by message id.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Weak};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use agentry_core::{Body, EntityId, Envelope, ErrorInfo, ErrorKind, MessageId, Payload, Role};
use parking_lot::Mutex;

use crate::completion::Completion;
use crate::dataplane::ObjectDepot;
use crate::exchange::{Exchange, ExchangeClient, ExchangeError, ExchangeResult};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);
const LISTEN_TICK: Duration = Duration::from_millis(100);

static LISTENERS: AtomicUsize = AtomicUsize::new(0);

/// Router listener threads currently running in this process.
pub fn active_listeners() -> usize {
    LISTENERS.load(Ordering::SeqCst)
}

pub type Outcome = Result<Payload, ErrorInfo>;

struct Pending {
    cell: Arc<Completion<Outcome>>,
    deadline: Instant,
}

struct RouterInner {
    client: Arc<dyn ExchangeClient>,
    pending: Mutex<HashMap<MessageId, Pending>>,
    listener: Mutex<Option<JoinHandle<()>>>,
    /// Close the mailbox when the router goes away.
    owns_mailbox: bool,
}

impl RouterInner {
    fn deliver(&self, e: Envelope) {
        let Some(request_id) = e.request_id() else {
            log::debug!("{}: router ignoring {:?} from {}", self.client.id(), e.kind(), e.src);
            return;
        };
        let outcome = match e.body {
            Body::ActionResponse { outcome, .. } => outcome,
            _ => Ok(Payload::empty()),
        };
        match self.pending.lock().remove(&request_id) {
            Some(p) => {
                p.cell.complete(outcome);
            }
            None => log::debug!("{}: dropping late or foreign response {request_id}", self.client.id()),
        }
    }

    fn sweep(&self, now: Instant) {
        self.pending.lock().retain(|_, p| {
            if p.deadline <= now {
                p.cell.complete(Err(ErrorInfo::new(ErrorKind::Timeout, "no response before deadline")));
                false
            } else {
                true
            }
        });
    }

    fn fail_all(&self, info: ErrorInfo) {
        for (_, p) in self.pending.lock().drain() {
            p.cell.complete(Err(info.clone()));
        }
    }
}

impl Drop for RouterInner {
    fn drop(&mut self) {
        if self.owns_mailbox {
            let _ = self.client.close();
            self.client.stop();
        }
    }
}

fn listen(weak: Weak<RouterInner>) {
    let mut last_sweep = Instant::now();
    loop {
        // hold only the client while waiting so the router's owner drops it
        // (and closes its mailbox) synchronously
        let Some(client) = weak.upgrade().map(|i| i.client.clone()) else { break };
        let got = client.recv(LISTEN_TICK);
        drop(client);
        let Some(inner) = weak.upgrade() else { break };
        match got {
            Ok(e) => inner.deliver(e),
            Err(ExchangeError::Timeout) => {}
            Err(ExchangeError::MailboxClosed(_)) => {
                inner.fail_all(ErrorInfo::new(ErrorKind::MailboxClosed, "client mailbox closed"));
                break;
            }
            Err(e) => {
                log::warn!("router listener: {e}");
                drop(inner);
                thread::sleep(LISTEN_TICK);
                continue;
            }
        }
        let now = Instant::now();
        if now.duration_since(last_sweep) >= LISTEN_TICK {
            inner.sweep(now);
            last_sweep = now;
        }
    }
    LISTENERS.fetch_sub(1, Ordering::SeqCst);
}

/// Shared by every handle in a process (or inside one agent).
#[derive(Clone)]
pub struct MailboxRouter {
    inner: Arc<RouterInner>,
}

impl MailboxRouter {
    /// Router with its own listener thread consuming `client`.
    pub fn start(client: Arc<dyn ExchangeClient>) -> Self {
        Self::spawn(client, false)
    }

    fn spawn(client: Arc<dyn ExchangeClient>, owns_mailbox: bool) -> Self {
        let inner = Arc::new(RouterInner {
            client,
            pending: Mutex::new(HashMap::new()),
            listener: Mutex::new(None),
            owns_mailbox,
        });
        let weak = Arc::downgrade(&inner);
        // counted before the thread runs so the count is exact on return
        LISTENERS.fetch_add(1, Ordering::SeqCst);
        let h = thread::Builder::new()
            .name("router".into())
            .spawn(move || listen(weak))
            .expect("spawn router listener");
        *inner.listener.lock() = Some(h);
        Self { inner }
    }

    /// Router without a listener; the mailbox owner passes responses to
    /// [`MailboxRouter::deliver`].
    pub fn attached(client: Arc<dyn ExchangeClient>) -> Self {
        Self {
            inner: Arc::new(RouterInner {
                client,
                pending: Mutex::new(HashMap::new()),
                listener: Mutex::new(None),
                owns_mailbox: false,
            }),
        }
    }

    /// Registers a fresh client mailbox and starts a router on it. The
    /// mailbox is closed when the last clone of the router is dropped.
    pub fn open(exchange: &dyn Exchange) -> ExchangeResult<Self> {
        let id = exchange.register(Role::Client, None)?;
        Ok(Self::spawn(exchange.bind(id)?, true))
    }

    pub fn id(&self) -> EntityId {
        self.inner.client.id()
    }

    pub fn client(&self) -> &Arc<dyn ExchangeClient> {
        &self.inner.client
    }

    pub fn depot(&self) -> Arc<ObjectDepot> {
        self.inner.client.depot()
    }

    pub fn has_listener(&self) -> bool {
        self.inner.listener.lock().is_some()
    }

    /// Requests still waiting for a response.
    pub fn pending(&self) -> usize {
        self.inner.pending.lock().len()
    }

    pub fn deliver(&self, e: Envelope) {
        self.inner.deliver(e);
    }

    pub fn handle(&self, target: EntityId) -> Handle {
        Handle {
            target,
            router: self.clone(),
            timeout: DEFAULT_TIMEOUT,
        }
    }

    /// Rebuilds a handle serialized with [`Handle::to_bytes`].
    pub fn handle_from_bytes(&self, bytes: &[u8]) -> Result<Handle, ErrorInfo> {
        let text = std::str::from_utf8(bytes)
            .map_err(|_| ErrorInfo::new(ErrorKind::ActionRaised, "handle is not utf-8"))?;
        let target = text
            .parse()
            .map_err(|e| ErrorInfo::new(ErrorKind::ActionRaised, format!("bad handle: {e}")))?;
        Ok(self.handle(target))
    }

    fn request(&self, target: EntityId, body: Body, timeout: Duration) -> ActionFuture {
        let e = Envelope::new(self.id(), target, body);
        let cell = Completion::new();
        let deadline = Instant::now() + timeout;
        self.inner.pending.lock().insert(
            e.message_id,
            Pending {
                cell: cell.clone(),
                deadline,
            },
        );
        if let Err(err) = self.inner.client.send(&e) {
            self.inner.pending.lock().remove(&e.message_id);
            cell.complete(Err(err.to_info()));
        }
        ActionFuture {
            request_id: e.message_id,
            cell,
            deadline,
            router: Arc::downgrade(&self.inner),
        }
    }
}

/// Result of a request; resolves exactly once.
pub struct ActionFuture {
    request_id: MessageId,
    cell: Arc<Completion<Outcome>>,
    deadline: Instant,
    router: Weak<RouterInner>,
}

impl ActionFuture {
    pub fn request_id(&self) -> MessageId {
        self.request_id
    }

    pub fn is_done(&self) -> bool {
        self.cell.is_done()
    }

    pub fn try_result(&self) -> Option<Outcome> {
        self.cell.try_get()
    }

    fn resolve_locally(&self, info: ErrorInfo) -> Outcome {
        if self.cell.complete(Err(info)) {
            if let Some(r) = self.router.upgrade() {
                r.pending.lock().remove(&self.request_id);
            }
        }
        self.cell.try_get().expect("completed above")
    }

    /// Blocks until the response arrives or the request's deadline passes.
    pub fn wait(&self) -> Outcome {
        match self.cell.wait_until(self.deadline) {
            Some(v) => v,
            None => self.resolve_locally(ErrorInfo::new(ErrorKind::Timeout, "no response before deadline")),
        }
    }

    /// Like [`ActionFuture::wait`] with a shorter deadline. Expiry of this
    /// wait does not resolve the future.
    pub fn wait_timeout(&self, timeout: Duration) -> Option<Outcome> {
        let until = (Instant::now() + timeout).min(self.deadline);
        match self.cell.wait_until(until) {
            Some(v) => Some(v),
            None if until >= self.deadline => Some(self.wait()),
            None => None,
        }
    }

    /// Gives up on the request; a late response is dropped.
    pub fn cancel(&self) {
        let _ = self.resolve_locally(ErrorInfo::new(ErrorKind::Timeout, "cancelled"));
    }
}

/// Reference to a remote agent. Cheap to clone; clones share the router.
#[derive(Clone)]
pub struct Handle {
    target: EntityId,
    router: MailboxRouter,
    timeout: Duration,
}

impl PartialEq for Handle {
    fn eq(&self, other: &Self) -> bool {
        self.target == other.target
    }
}

impl Eq for Handle {}

impl std::hash::Hash for Handle {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.target.hash(state);
    }
}

impl std::fmt::Debug for Handle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Handle({})", self.target)
    }
}

impl Handle {
    /// Handle with a router and mailbox of its own instead of the shared one.
    pub fn dedicated(exchange: &dyn Exchange, target: EntityId) -> ExchangeResult<Handle> {
        Ok(MailboxRouter::open(exchange)?.handle(target))
    }

    pub fn target(&self) -> EntityId {
        self.target
    }

    pub fn router(&self) -> &MailboxRouter {
        &self.router
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Handle {
        self.timeout = timeout;
        self
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.target.to_string().into_bytes()
    }

    pub fn invoke(&self, action: &str, payload: Payload) -> ActionFuture {
        self.invoke_with_timeout(action, payload, self.timeout)
    }

    pub fn invoke_with_timeout(&self, action: &str, payload: Payload, timeout: Duration) -> ActionFuture {
        self.router.request(
            self.target,
            Body::ActionRequest {
                action: action.to_string(),
                payload,
            },
            timeout,
        )
    }

    pub fn call(&self, action: &str, payload: Payload) -> Outcome {
        self.invoke(action, payload).wait()
    }

    /// Sends bytes (by reference when large) and returns the materialized
    /// result.
    pub fn call_bytes(&self, action: &str, args: Vec<u8>) -> Result<Vec<u8>, ErrorInfo> {
        let depot = self.router.depot();
        let payload = depot.auto_payload(args)?;
        let result = self.call(action, payload)?;
        let bytes = depot.materialize(result)?;
        Ok(Arc::try_unwrap(bytes).unwrap_or_else(|b| (*b).clone()))
    }

    pub fn ping(&self) -> Result<Duration, ErrorInfo> {
        let t0 = Instant::now();
        self.router.request(self.target, Body::Ping, self.timeout).wait()?;
        Ok(t0.elapsed())
    }

    /// Asks the agent to stop. `terminal` closes its mailbox for good;
    /// otherwise the mailbox stays open for a restarted agent. With
    /// `blocking`, waits for the agent's acknowledgement.
    pub fn shutdown(&self, terminal: bool, blocking: bool) -> Result<(), ErrorInfo> {
        let f = self
            .router
            .request(self.target, Body::Shutdown { terminal }, self.timeout);
        if !blocking {
            return match f.try_result() {
                Some(Err(e)) if e.kind != ErrorKind::MailboxClosed => Err(e),
                _ => {
                    f.cancel();
                    Ok(())
                }
            };
        }
        match f.wait() {
            Ok(_) => Ok(()),
            Err(e) if e.kind == ErrorKind::MailboxClosed => Ok(()),
            Err(e) => Err(e),
        }
    }
}
