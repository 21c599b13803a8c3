//! In-process exchange backed by in-memory queues.

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;
use std::time::{Duration, Instant};

use agentry_core::{BehaviorSpec, EntityId, Envelope, Role};
use parking_lot::{Condvar, Mutex};

use super::{Exchange, ExchangeClient, ExchangeError, ExchangeResult};
use crate::dataplane::ObjectDepot;

#[derive(Default)]
struct MailboxState {
    open: bool,
    queue: VecDeque<Envelope>,
}

#[derive(Default)]
struct Mailbox {
    state: Mutex<MailboxState>,
    arrived: Condvar,
}

struct Inner {
    mailboxes: Mutex<HashMap<EntityId, Arc<Mailbox>>>,
    specs: Mutex<HashMap<EntityId, BehaviorSpec>>,
    depot: Arc<ObjectDepot>,
}

/// Exchange whose mailboxes live in this process. Cloning shares the same
/// mailboxes.
#[derive(Clone)]
pub struct LocalExchange {
    inner: Arc<Inner>,
}

impl Default for LocalExchange {
    fn default() -> Self {
        Self::new()
    }
}

impl LocalExchange {
    pub fn new() -> Self {
        Self {
            inner: Arc::new(Inner {
                mailboxes: Mutex::new(HashMap::new()),
                specs: Mutex::new(HashMap::new()),
                depot: Arc::new(ObjectDepot::isolated(EntityId::random(Role::Client))),
            }),
        }
    }

    fn mailbox(&self, id: &EntityId) -> ExchangeResult<Arc<Mailbox>> {
        self.inner
            .mailboxes
            .lock()
            .get(id)
            .cloned()
            .ok_or(ExchangeError::UnknownEntity(*id))
    }

    /// Number of envelopes waiting in a mailbox.
    pub fn queued(&self, id: &EntityId) -> ExchangeResult<usize> {
        Ok(self.mailbox(id)?.state.lock().queue.len())
    }

    fn send(&self, e: &Envelope) -> ExchangeResult<()> {
        let mb = self.mailbox(&e.dest)?;
        let mut st = mb.state.lock();
        if !st.open {
            return Err(ExchangeError::MailboxClosed(e.dest));
        }
        st.queue.push_back(e.clone());
        mb.arrived.notify_one();
        Ok(())
    }

    fn discover_inner(&self, behavior: &str) -> Vec<EntityId> {
        let specs = self.inner.specs.lock();
        let mailboxes = self.inner.mailboxes.lock();
        let mut ids: Vec<EntityId> = specs
            .iter()
            .filter(|(id, s)| {
                id.is_agent()
                    && s.is_a(behavior)
                    && mailboxes.get(id).is_some_and(|m| m.state.lock().open)
            })
            .map(|(id, _)| *id)
            .collect();
        ids.sort();
        ids
    }
}

impl Exchange for LocalExchange {
    fn register(&self, role: Role, spec: Option<BehaviorSpec>) -> ExchangeResult<EntityId> {
        let mut mailboxes = self.inner.mailboxes.lock();
        let id = loop {
            let id = EntityId::random(role);
            if !mailboxes.contains_key(&id) {
                break id;
            }
        };
        let mb = Mailbox::default();
        mb.state.lock().open = true;
        mailboxes.insert(id, Arc::new(mb));
        if let Some(spec) = spec {
            self.inner.specs.lock().insert(id, spec);
        }
        Ok(id)
    }

    fn bind(&self, id: EntityId) -> ExchangeResult<Arc<dyn ExchangeClient>> {
        let mailbox = self.mailbox(&id)?;
        Ok(Arc::new(LocalClient {
            id,
            exchange: self.clone(),
            mailbox,
        }))
    }

    fn close(&self, id: EntityId) -> ExchangeResult<()> {
        let mb = self.mailbox(&id)?;
        mb.state.lock().open = false;
        mb.arrived.notify_all();
        Ok(())
    }

    fn discover(&self, behavior: &str) -> ExchangeResult<Vec<EntityId>> {
        Ok(self.discover_inner(behavior))
    }
}

struct LocalClient {
    id: EntityId,
    exchange: LocalExchange,
    mailbox: Arc<Mailbox>,
}

impl ExchangeClient for LocalClient {
    fn id(&self) -> EntityId {
        self.id
    }

    fn send(&self, e: &Envelope) -> ExchangeResult<()> {
        self.exchange.send(e)
    }

    fn recv(&self, timeout: Duration) -> ExchangeResult<Envelope> {
        let deadline = Instant::now() + timeout;
        let mut st = self.mailbox.state.lock();
        loop {
            if let Some(e) = st.queue.pop_front() {
                return Ok(e);
            }
            if !st.open {
                return Err(ExchangeError::MailboxClosed(self.id));
            }
            if self.mailbox.arrived.wait_until(&mut st, deadline).timed_out() {
                return match st.queue.pop_front() {
                    Some(e) => Ok(e),
                    None if !st.open => Err(ExchangeError::MailboxClosed(self.id)),
                    None => Err(ExchangeError::Timeout),
                };
            }
        }
    }

    fn discover(&self, behavior: &str) -> ExchangeResult<Vec<EntityId>> {
        Ok(self.exchange.discover_inner(behavior))
    }

    fn close(&self) -> ExchangeResult<()> {
        self.exchange.close(self.id)
    }

    fn stop(&self) {}

    fn depot(&self) -> Arc<ObjectDepot> {
        self.exchange.inner.depot.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use agentry_core::Body;

    #[test]
    fn send_recv_close_drain() {
        let ex = LocalExchange::new();
        let a = ex.register(Role::Agent, None).unwrap();
        let c = ex.register(Role::Client, None).unwrap();
        let client = ex.bind(a).unwrap();
        let e = Envelope::new(c, a, Body::Ping);
        ex.bind(c).unwrap().send(&e).unwrap();
        assert_eq!(client.recv(Duration::from_millis(10)).unwrap(), e);
        assert_eq!(client.recv(Duration::from_millis(10)), Err(ExchangeError::Timeout));
        ex.bind(c).unwrap().send(&e).unwrap();
        ex.close(a).unwrap();
        assert_eq!(client.recv(Duration::ZERO).unwrap(), e);
        assert_eq!(client.recv(Duration::ZERO), Err(ExchangeError::MailboxClosed(a)));
        assert!(matches!(client.send(&e), Err(ExchangeError::MailboxClosed(_))));
    }

    #[test]
    fn unknown_destination() {
        let ex = LocalExchange::new();
        let c = ex.register(Role::Client, None).unwrap();
        let ghost = EntityId::random(Role::Agent);
        let err = ex.bind(c).unwrap().send(&Envelope::new(c, ghost, Body::Ping));
        assert_eq!(err, Err(ExchangeError::UnknownEntity(ghost)));
    }
}
