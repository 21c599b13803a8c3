//! Randomized check of the mailbox contract against any [`Exchange`].
//!
//! Three senders and three receivers run a seeded random mix of sends,
//! receives, closes, renewals and receiver restarts. A model keeps one FIFO
//! per (sender, receiver) pair; every received envelope must be the head of
//! its sender's queue, and nothing may be lost by the end.

use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use agentry::exchange::{Exchange, ExchangeClient, ExchangeError};
use agentry::{Body, EntityId, Envelope, Payload, Role};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

const SENDERS: usize = 3;
const RECEIVERS: usize = 3;
const WAIT: Duration = Duration::from_secs(5);
const EMPTY_WAIT: Duration = Duration::from_millis(2);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Send { from: usize, to: usize },
    Recv { at: usize },
    Close { at: usize },
    Renew { at: usize },
    Offline { at: usize },
    Online { at: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConformanceStats {
    pub ops: usize,
    pub sent: usize,
    pub refused: usize,
    pub received: usize,
    pub timeouts: usize,
    pub closes: usize,
    pub renewals: usize,
    pub restarts: usize,
}

/// The first operation whose result disagreed with the model.
#[derive(Debug, Clone)]
pub struct Violation {
    pub step: usize,
    pub op: Option<Op>,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.op {
            Some(op) => write!(f, "step {} ({op:?}): {}", self.step, self.detail),
            None => write!(f, "final drain: {}", self.detail),
        }
    }
}

impl std::error::Error for Violation {}

struct Slot {
    id: EntityId,
    client: Option<Arc<dyn ExchangeClient>>,
    open: bool,
    /// Queued envelopes per sender.
    queues: Vec<VecDeque<Envelope>>,
}

impl Slot {
    fn is_empty(&self) -> bool {
        self.queues.iter().all(VecDeque::is_empty)
    }
}

struct Run<'a> {
    x: &'a dyn Exchange,
    senders: Vec<(EntityId, Arc<dyn ExchangeClient>)>,
    slots: Vec<Slot>,
    stats: ConformanceStats,
    seq: u64,
}

fn fail(detail: impl Into<String>) -> Result<(), String> {
    Err(detail.into())
}

impl<'a> Run<'a> {
    fn new(x: &'a dyn Exchange) -> Result<Self, String> {
        let e = |e: ExchangeError| e.to_string();
        let mut senders = Vec::new();
        for _ in 0..SENDERS {
            let id = x.register(Role::Client, None).map_err(e)?;
            senders.push((id, x.bind(id).map_err(e)?));
        }
        let mut slots = Vec::new();
        for _ in 0..RECEIVERS {
            let id = x.register(Role::Agent, None).map_err(e)?;
            slots.push(Slot {
                id,
                client: Some(x.bind(id).map_err(e)?),
                open: true,
                queues: vec![VecDeque::new(); SENDERS],
            });
        }
        Ok(Run {
            x,
            senders,
            slots,
            stats: ConformanceStats::default(),
            seq: 0,
        })
    }

    fn envelope(&mut self, from: usize, to: usize) -> Envelope {
        self.seq += 1;
        let body = Body::ActionRequest {
            action: "seq".into(),
            payload: Payload::Inline(self.seq.to_be_bytes().to_vec()),
        };
        Envelope::new(self.senders[from].0, self.slots[to].id, body)
    }

    fn apply(&mut self, op: Op) -> Result<(), String> {
        match op {
            Op::Send { from, to } => {
                let e = self.envelope(from, to);
                let slot = &self.slots[to];
                match (self.senders[from].1.send(&e), slot.open) {
                    (Ok(()), true) => {
                        self.slots[to].queues[from].push_back(e);
                        self.stats.sent += 1;
                    }
                    (Err(ExchangeError::MailboxClosed(id)), false) if id == slot.id => self.stats.refused += 1,
                    (got, open) => return fail(format!("send to {} mailbox returned {got:?}", state(open))),
                }
            }
            Op::Recv { at } => {
                let slot = &mut self.slots[at];
                let Some(client) = &slot.client else { return Ok(()) };
                let wait = if slot.is_empty() { EMPTY_WAIT } else { WAIT };
                match client.recv(wait) {
                    Ok(e) => {
                        let from = self.senders.iter().position(|(id, _)| *id == e.src);
                        let head = from.and_then(|f| slot.queues[f].front());
                        if head != Some(&e) {
                            return fail(format!("received {:?} but the sender's next envelope is {head:?}", e.message_id));
                        }
                        slot.queues[from.expect("matched head")].pop_front();
                        self.stats.received += 1;
                    }
                    Err(ExchangeError::Timeout) if slot.is_empty() && slot.open => self.stats.timeouts += 1,
                    Err(ExchangeError::MailboxClosed(id)) if slot.is_empty() && !slot.open && id == slot.id => {}
                    got => {
                        let queued: usize = slot.queues.iter().map(VecDeque::len).sum();
                        return fail(format!("recv on {} mailbox with {queued} queued returned {got:?}", state(slot.open)));
                    }
                }
            }
            Op::Close { at } => {
                let slot = &mut self.slots[at];
                let Some(client) = &slot.client else { return Ok(()) };
                if let Err(e) = client.close() {
                    return fail(format!("close failed: {e}"));
                }
                slot.open = false;
                self.stats.closes += 1;
            }
            Op::Renew { at } => {
                let slot = &mut self.slots[at];
                if slot.open || !slot.is_empty() {
                    return Ok(());
                }
                if let Some(c) = slot.client.take() {
                    c.stop();
                    c.join();
                }
                let id = self.x.register(Role::Agent, None).map_err(|e| e.to_string())?;
                slot.client = Some(self.x.bind(id).map_err(|e| e.to_string())?);
                slot.id = id;
                slot.open = true;
                self.stats.renewals += 1;
            }
            Op::Offline { at } => {
                let slot = &mut self.slots[at];
                if !slot.open {
                    return Ok(());
                }
                if let Some(c) = slot.client.take() {
                    c.stop();
                    c.join();
                    self.stats.restarts += 1;
                }
            }
            Op::Online { at } => {
                let slot = &mut self.slots[at];
                if slot.client.is_none() {
                    slot.client = Some(self.x.bind(slot.id).map_err(|e| format!("rebind failed: {e}"))?);
                }
            }
        }
        Ok(())
    }

    /// Brings every receiver online and receives everything still queued.
    fn drain(&mut self) -> Result<(), String> {
        for at in 0..RECEIVERS {
            self.apply(Op::Online { at })?;
            while !self.slots[at].is_empty() {
                self.apply(Op::Recv { at })?;
            }
            self.apply(Op::Recv { at })?;
        }
        Ok(())
    }

    fn finish(&mut self) {
        for c in self.slots.iter_mut().filter_map(|s| s.client.take()) {
            c.stop();
            c.join();
        }
        for (_, c) in &self.senders {
            c.stop();
            c.join();
        }
    }
}

fn state(open: bool) -> &'static str {
    if open {
        "an open"
    } else {
        "a closed"
    }
}

fn random_op(rng: &mut StdRng) -> Op {
    let at = rng.gen_range(0..RECEIVERS);
    match rng.gen_range(0..100) {
        0..=44 => Op::Send {
            from: rng.gen_range(0..SENDERS),
            to: at,
        },
        45..=89 => Op::Recv { at },
        90..=91 => Op::Close { at },
        92..=94 => Op::Renew { at },
        95..=97 => Op::Offline { at },
        _ => Op::Online { at },
    }
}

/// Runs `ops` random operations seeded by `seed`, then drains every mailbox.
pub fn run(exchange: &dyn Exchange, ops: usize, seed: u64) -> Result<ConformanceStats, Violation> {
    let setup = |detail| Violation {
        step: 0,
        op: None,
        detail,
    };
    let mut r = Run::new(exchange).map_err(setup)?;
    let mut rng = StdRng::seed_from_u64(seed);
    let mut outcome = Ok(());
    for step in 0..ops {
        let op = random_op(&mut rng);
        if let Err(detail) = r.apply(op) {
            outcome = Err(Violation { step, op: Some(op), detail });
            break;
        }
        r.stats.ops += 1;
    }
    if outcome.is_ok() {
        outcome = r.drain().map_err(|detail| Violation {
            step: ops,
            op: None,
            detail,
        });
    }
    r.finish();
    outcome.map(|()| r.stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use agentry::exchange::LocalExchange;

    #[test]
    fn local_exchange_conforms() {
        let x = LocalExchange::new();
        let stats = run(&x, 3000, 7).unwrap();
        assert_eq!(stats.ops, 3000);
        assert_eq!(stats.sent, stats.received);
        assert!(stats.closes > 0 && stats.renewals > 0 && stats.restarts > 0);
    }

    /// An exchange that drops every third envelope must be caught.
    #[test]
    fn lossy_exchange_is_caught() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        struct Lossy(LocalExchange, Arc<AtomicUsize>);
        struct LossyClient(Arc<dyn ExchangeClient>, Arc<AtomicUsize>);
        impl Exchange for Lossy {
            fn register(&self, role: Role, spec: Option<agentry::BehaviorSpec>) -> Result<EntityId, ExchangeError> {
                self.0.register(role, spec)
            }
            fn bind(&self, id: EntityId) -> Result<Arc<dyn ExchangeClient>, ExchangeError> {
                Ok(Arc::new(LossyClient(self.0.bind(id)?, self.1.clone())))
            }
            fn close(&self, id: EntityId) -> Result<(), ExchangeError> {
                self.0.close(id)
            }
            fn discover(&self, b: &str) -> Result<Vec<EntityId>, ExchangeError> {
                self.0.discover(b)
            }
        }
        impl ExchangeClient for LossyClient {
            fn id(&self) -> EntityId {
                self.0.id()
            }
            fn send(&self, e: &Envelope) -> Result<(), ExchangeError> {
                if self.1.fetch_add(1, Ordering::Relaxed) % 3 == 2 {
                    return Ok(());
                }
                self.0.send(e)
            }
            fn recv(&self, t: Duration) -> Result<Envelope, ExchangeError> {
                self.0.recv(t)
            }
            fn discover(&self, b: &str) -> Result<Vec<EntityId>, ExchangeError> {
                self.0.discover(b)
            }
            fn close(&self) -> Result<(), ExchangeError> {
                self.0.close()
            }
            fn stop(&self) {
                self.0.stop()
            }
            fn depot(&self) -> Arc<agentry::ObjectDepot> {
                self.0.depot()
            }
        }
        let x = Lossy(LocalExchange::new(), Default::default());
        assert!(run(&x, 500, 1).is_err());
    }
}
