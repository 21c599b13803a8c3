//! Runs a behavior as a live agent.
//!
//! Order of events: `on_setup`, then every control loop and the mailbox
//! listener start. Once the shutdown signal latches the loops are joined,
//! queued actions drain, `on_shutdown` runs and the mailbox is closed or
//! left open according to the shutdown request.

use std::any::Any;
use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use agentry_core::{Body, EntityId, Envelope, ErrorInfo, ErrorKind, Payload};
use crossbeam_channel::{select, unbounded, Receiver, RecvTimeoutError, Sender};
use parking_lot::Mutex;

use crate::behavior::{AgentBehavior, BoxError, ErasedAction, ErasedLoop, LoopKind};
use crate::dataplane::ObjectDepot;
use crate::exchange::{ExchangeClient, ExchangeError};
use crate::handle::{Handle, MailboxRouter};
use crate::launch::StateStore;
use crate::trace::TraceSink;

pub const DEFAULT_POOL_SIZE: usize = 4;
pub const DEFAULT_JOIN_BUDGET: Duration = Duration::from_secs(5);
const LISTEN_TICK: Duration = Duration::from_millis(50);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LoopErrorPolicy {
    /// A failing loop shuts the agent down.
    #[default]
    ShutdownOnError,
    /// Failures are logged; timer and event loops keep iterating.
    SuppressAndContinue,
}

#[derive(Debug, Clone)]
pub struct RuntimeConfig {
    pub loop_error_policy: LoopErrorPolicy,
    /// Worker threads for actions; defaults to the behavior's declared
    /// concurrency, else [`DEFAULT_POOL_SIZE`].
    pub action_pool_size: Option<usize>,
    pub join_budget: Duration,
    pub trace: TraceSink,
    pub state: Option<StateStore>,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        Self {
            loop_error_policy: LoopErrorPolicy::default(),
            action_pool_size: None,
            join_budget: DEFAULT_JOIN_BUDGET,
            trace: TraceSink::off(),
            state: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunStatus {
    CleanShutdown,
    LoopFailure(ErrorInfo),
    SetupFailure(ErrorInfo),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RuntimeError {
    #[error("no event loop listens for {0:?}")]
    UnknownEvent(String),
}

/// One-way latch. The first `set` decides whether shutdown is terminal.
pub struct ShutdownSignal {
    terminal: Mutex<Option<bool>>,
    tx: Mutex<Option<Sender<()>>>,
    rx: Receiver<()>,
}

impl Default for ShutdownSignal {
    fn default() -> Self {
        let (tx, rx) = crossbeam_channel::bounded(0);
        Self {
            terminal: Mutex::new(None),
            tx: Mutex::new(Some(tx)),
            rx,
        }
    }
}

impl ShutdownSignal {
    /// Returns true for the call that latched the signal.
    pub fn set(&self, terminal: bool) -> bool {
        let mut t = self.terminal.lock();
        if t.is_some() {
            return false;
        }
        *t = Some(terminal);
        // disconnecting the channel wakes every waiter
        self.tx.lock().take();
        true
    }

    pub fn is_set(&self) -> bool {
        self.terminal.lock().is_some()
    }

    pub fn terminal(&self) -> Option<bool> {
        *self.terminal.lock()
    }

    /// Waits up to `timeout`; true if the signal is set.
    pub fn wait_timeout(&self, timeout: Duration) -> bool {
        matches!(self.rx.recv_timeout(timeout), Err(RecvTimeoutError::Disconnected))
    }

    /// Receiver that disconnects when the signal is set, for `select!`.
    pub fn receiver(&self) -> Receiver<()> {
        self.rx.clone()
    }
}

/// Agent-wide services reachable from every action, loop and hook.
pub struct AgentControl {
    id: EntityId,
    signal: ShutdownSignal,
    events: HashMap<String, (Sender<()>, Receiver<()>)>,
    router: MailboxRouter,
    depot: Arc<ObjectDepot>,
    state: Option<StateStore>,
    trace: TraceSink,
}

impl AgentControl {
    pub fn id(&self) -> EntityId {
        self.id
    }

    /// Same as receiving a terminal Shutdown.
    pub fn self_shutdown(&self) {
        self.signal.set(true);
    }

    pub fn self_shutdown_with(&self, terminal: bool) {
        self.signal.set(terminal);
    }

    pub fn is_shutting_down(&self) -> bool {
        self.signal.is_set()
    }

    /// Sleeps up to `timeout`, returning early (true) on shutdown.
    pub fn wait_shutdown(&self, timeout: Duration) -> bool {
        self.signal.wait_timeout(timeout)
    }

    pub fn signal(&self) -> &ShutdownSignal {
        &self.signal
    }

    /// Runs every loop waiting on `name` once. A no-op after shutdown.
    pub fn fire_event(&self, name: &str) -> Result<(), RuntimeError> {
        let (tx, _) = self
            .events
            .get(name)
            .ok_or_else(|| RuntimeError::UnknownEvent(name.to_string()))?;
        if !self.signal.is_set() {
            let _ = tx.send(());
        }
        Ok(())
    }

    /// Handle to another agent, sharing this agent's mailbox for responses.
    pub fn handle(&self, target: EntityId) -> Handle {
        self.router.handle(target)
    }

    pub fn router(&self) -> &MailboxRouter {
        &self.router
    }

    pub fn discover(&self, behavior: &str) -> Result<Vec<EntityId>, ExchangeError> {
        self.router.client().discover(behavior)
    }

    pub fn depot(&self) -> &Arc<ObjectDepot> {
        &self.depot
    }

    /// Bytes behind a payload.
    pub fn resolve(&self, p: Payload) -> Result<Arc<Vec<u8>>, ErrorInfo> {
        Ok(self.depot.materialize(p)?)
    }

    /// Inline or by-reference payload depending on size.
    pub fn payload(&self, bytes: Vec<u8>) -> Result<Payload, ErrorInfo> {
        Ok(self.depot.auto_payload(bytes)?)
    }

    /// Checkpoint storage, when the launcher provides one.
    pub fn state_store(&self) -> Option<&StateStore> {
        self.state.as_ref()
    }

    pub fn trace(&self, event: &str, name: Option<&str>, ok: Option<bool>) {
        self.trace.emit(&self.id, event, name, ok);
    }
}

fn panic_text(p: Box<dyn Any + Send>) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "non-string panic".into()
    }
}

fn guarded<T>(f: impl FnOnce() -> Result<T, BoxError>) -> Result<T, String> {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(v)) => Ok(v),
        Ok(Err(e)) => Err(e.to_string()),
        Err(p) => Err(format!("panicked: {}", panic_text(p))),
    }
}

struct Job {
    name: String,
    action: ErasedAction,
    payload: Payload,
    request: Envelope,
}

/// A behavior bound to a mailbox, ready to run.
pub struct AgentRuntime {
    control: Arc<AgentControl>,
    behavior: AgentBehavior,
    client: Arc<dyn ExchangeClient>,
    config: RuntimeConfig,
}

impl AgentRuntime {
    pub fn new(behavior: AgentBehavior, client: Arc<dyn ExchangeClient>, config: RuntimeConfig) -> Self {
        let events = behavior
            .events()
            .iter()
            .map(|e| (e.clone(), unbounded()))
            .collect();
        let control = Arc::new(AgentControl {
            id: client.id(),
            signal: ShutdownSignal::default(),
            events,
            router: MailboxRouter::attached(client.clone()),
            depot: client.depot(),
            state: config.state.clone(),
            trace: config.trace.clone(),
        });
        Self {
            control,
            behavior,
            client,
            config,
        }
    }

    pub fn id(&self) -> EntityId {
        self.control.id
    }

    /// Control surface usable from outside while [`AgentRuntime::run`] runs.
    pub fn control(&self) -> Arc<AgentControl> {
        self.control.clone()
    }

    pub fn run(self) -> RunStatus {
        let AgentRuntime {
            control,
            behavior,
            client,
            config,
        } = self;
        let pool_size = config
            .action_pool_size
            .or(behavior.spec().max_action_concurrency().map(|n| n.get()))
            .unwrap_or(DEFAULT_POOL_SIZE)
            .max(1);
        let bound = behavior.bind(control.clone());

        control.trace("setup", None, None);
        if let Some(setup) = bound.setup {
            if let Err(e) = guarded(setup) {
                control.trace("setup", None, Some(false));
                log::error!("{}: on_setup failed: {e}", control.id);
                let _ = client.close();
                client.stop();
                return RunStatus::SetupFailure(ErrorInfo::new(ErrorKind::ActionRaised, e));
            }
        }

        let (job_tx, job_rx) = unbounded::<Job>();
        let workers: Vec<_> = (0..pool_size)
            .map(|_| {
                let rx = job_rx.clone();
                let control = control.clone();
                let client = client.clone();
                thread::Builder::new()
                    .name("action".into())
                    .spawn(move || {
                        for job in rx {
                            execute(&control, client.as_ref(), job);
                        }
                    })
                    .expect("spawn action worker")
            })
            .collect();
        drop(job_rx);

        let failure: Arc<Mutex<Option<ErrorInfo>>> = Arc::new(Mutex::new(None));
        let loops: Vec<_> = bound
            .loops
            .into_iter()
            .map(|(name, kind, f)| {
                let control = control.clone();
                let failure = failure.clone();
                let policy = config.loop_error_policy;
                thread::Builder::new()
                    .name(format!("loop-{name}"))
                    .spawn(move || run_loop(&control, &name, kind, f, policy, &failure))
                    .expect("spawn loop")
            })
            .collect();

        let actions = bound.actions;
        let mut shutdown_requests = Vec::new();
        while !control.signal.is_set() {
            match client.recv(LISTEN_TICK) {
                Ok(e) => dispatch(&control, client.as_ref(), &actions, &job_tx, &mut shutdown_requests, e),
                Err(ExchangeError::Timeout) => {}
                Err(ExchangeError::MailboxClosed(_)) => {
                    log::info!("{}: mailbox closed underneath the agent", control.id);
                    control.signal.set(true);
                }
                Err(e) => {
                    log::warn!("{}: receive failed: {e}", control.id);
                    control.signal.wait_timeout(LISTEN_TICK);
                }
            }
        }

        join_within(loops, config.join_budget, &control, "loop");
        drop(job_tx);
        join_within(workers, config.join_budget, &control, "action worker");

        if let Some(hook) = bound.shutdown {
            if let Err(e) = guarded(hook) {
                log::warn!("{}: on_shutdown failed: {e}", control.id);
            }
        }

        let terminal = control.signal.terminal().unwrap_or(true);
        if terminal {
            let _ = client.close();
            // refuse whatever is still queued
            while let Ok(e) = client.recv(Duration::ZERO) {
                match &e.body {
                    Body::ActionRequest { .. } => {
                        let info = ErrorInfo::new(ErrorKind::MailboxClosed, format!("{} shut down", control.id));
                        let _ = client.send(&e.reply(Body::ActionResponse {
                            request_id: e.message_id,
                            outcome: Err(info),
                        }));
                    }
                    Body::Shutdown { .. } => shutdown_requests.push(e),
                    Body::ActionResponse { .. } | Body::PingResponse { .. } => control.router.deliver(e),
                    Body::Ping => {}
                }
            }
        }
        client.stop();
        for req in shutdown_requests {
            let _ = client.send(&req.reply(Body::PingResponse {
                request_id: req.message_id,
            }));
        }
        control.trace("shutdown", None, Some(terminal));
        let failed = failure.lock().take();
        match failed {
            Some(info) => RunStatus::LoopFailure(info),
            None => RunStatus::CleanShutdown,
        }
    }
}

fn dispatch(
    control: &AgentControl,
    client: &dyn ExchangeClient,
    actions: &HashMap<String, ErasedAction>,
    jobs: &Sender<Job>,
    shutdown_requests: &mut Vec<Envelope>,
    e: Envelope,
) {
    if e.dest != control.id {
        log::warn!("{}: dropping envelope addressed to {}", control.id, e.dest);
        return;
    }
    match &e.body {
        Body::Ping => {
            let _ = client.send(&e.reply(Body::PingResponse {
                request_id: e.message_id,
            }));
        }
        Body::Shutdown { terminal } => {
            control.signal.set(*terminal);
            shutdown_requests.push(e);
        }
        Body::ActionRequest { action, payload } => match actions.get(action) {
            Some(f) => {
                let job = Job {
                    name: action.clone(),
                    action: f.clone(),
                    payload: payload.clone(),
                    request: e,
                };
                let _ = jobs.send(job);
            }
            None => {
                let info = ErrorInfo::new(ErrorKind::UnknownAction, format!("no action named {action:?}"));
                let _ = client.send(&e.reply(Body::ActionResponse {
                    request_id: e.message_id,
                    outcome: Err(info),
                }));
            }
        },
        Body::ActionResponse { .. } | Body::PingResponse { .. } => control.router.deliver(e),
    }
}

fn execute(control: &AgentControl, client: &dyn ExchangeClient, job: Job) {
    control.trace("action-start", Some(&job.name), None);
    let Job {
        name,
        action,
        payload,
        request,
    } = job;
    let outcome = guarded(|| action(payload)).map_err(|e| ErrorInfo::new(ErrorKind::ActionRaised, e));
    control.trace("action-finish", Some(&name), Some(outcome.is_ok()));
    let reply = request.reply(Body::ActionResponse {
        request_id: request.message_id,
        outcome,
    });
    if let Err(e) = client.send(&reply) {
        log::warn!("{}: could not answer {} for {name}: {e}", control.id, request.src);
    }
}

fn run_loop(
    control: &AgentControl,
    name: &str,
    kind: LoopKind,
    f: ErasedLoop,
    policy: LoopErrorPolicy,
    failure: &Mutex<Option<ErrorInfo>>,
) {
    control.trace("loop-start", Some(name), None);
    // true when the loop should stop
    let failed = |e: String| -> bool {
        log::warn!("{}: loop {name} failed: {e}", control.id);
        match policy {
            LoopErrorPolicy::ShutdownOnError => {
                failure
                    .lock()
                    .get_or_insert_with(|| ErrorInfo::new(ErrorKind::ActionRaised, format!("loop {name}: {e}")));
                control.signal.set(false);
                true
            }
            LoopErrorPolicy::SuppressAndContinue => false,
        }
    };
    let mut ok = true;
    match kind {
        LoopKind::Plain => {
            if let Err(e) = guarded(|| f()) {
                ok = false;
                failed(e);
            }
        }
        LoopKind::Timer(interval) => {
            while !control.signal.wait_timeout(interval) {
                if let Err(e) = guarded(|| f()) {
                    ok = false;
                    if failed(e) {
                        break;
                    }
                }
            }
        }
        LoopKind::Event(event) => {
            let rx = control.events.get(&event).expect("event registered at build").1.clone();
            let stop = control.signal.receiver();
            loop {
                select! {
                    recv(rx) -> msg => {
                        if msg.is_err() || control.signal.is_set() {
                            break;
                        }
                        if let Err(e) = guarded(|| f()) {
                            ok = false;
                            if failed(e) {
                                break;
                            }
                        }
                    }
                    recv(stop) -> _ => break,
                }
            }
        }
    }
    control.trace("loop-exit", Some(name), Some(ok));
}

/// Joins threads until the budget runs out; stragglers are abandoned.
fn join_within(handles: Vec<JoinHandle<()>>, budget: Duration, control: &AgentControl, what: &str) {
    let deadline = Instant::now() + budget;
    let mut left = handles;
    while !left.is_empty() {
        let (done, pending): (Vec<_>, Vec<_>) = left.into_iter().partition(|h| h.is_finished());
        for h in done {
            let _ = h.join();
        }
        left = pending;
        if left.is_empty() {
            break;
        }
        if Instant::now() >= deadline {
            log::warn!("{}: abandoning {} {what} thread(s) after {budget:?}", control.id, left.len());
            return;
        }
        thread::sleep(Duration::from_millis(2));
    }
}
