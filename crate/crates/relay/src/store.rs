//! In-memory state of the relay store: entity registry, mailboxes, endpoint
//! directory, discovery index and object store.

use std::collections::{HashMap, VecDeque};
use std::time::{Duration, Instant};

use agentry_core::{BehaviorSpec, EntityId};

use crate::protocol::{ErrorCode, Located, Response, StoreStats};

#[derive(Debug, Clone, Default)]
pub(crate) struct Record {
    pub spec: Option<BehaviorSpec>,
    pub endpoint: Option<String>,
    pub open: bool,
    pub pending: VecDeque<Vec<u8>>,
}

#[derive(Debug)]
struct StoredObject {
    bytes: Vec<u8>,
    expires: Option<Instant>,
}

/// Mutation that must reach the persistence log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Mutation {
    Register {
        entity: EntityId,
        spec: Option<BehaviorSpec>,
    },
    Close {
        entity: EntityId,
    },
    Put {
        dest: EntityId,
        envelope: Vec<u8>,
    },
    Pop {
        entity: EntityId,
        count: u32,
    },
    Requeue {
        entity: EntityId,
        envelopes: Vec<Vec<u8>>,
    },
}

pub(crate) type OpResult<T> = Result<T, (ErrorCode, String)>;

fn unknown(entity: &EntityId) -> (ErrorCode, String) {
    (ErrorCode::UnknownEntity, format!("unknown entity {entity}"))
}

fn closed(entity: &EntityId) -> (ErrorCode, String) {
    (ErrorCode::Closed, format!("mailbox {entity} is closed"))
}

/// Outcome of a non-blocking poll.
pub(crate) enum PollOutcome {
    Messages(Vec<Vec<u8>>),
    Empty,
}

#[derive(Debug, Default)]
pub(crate) struct Store {
    pub(crate) entities: HashMap<EntityId, Record>,
    objects: HashMap<String, StoredObject>,
    pub(crate) stats: StoreStats,
}

impl Store {
    pub fn register(&mut self, entity: EntityId, spec: Option<BehaviorSpec>) -> OpResult<Mutation> {
        self.stats.register += 1;
        if self.entities.contains_key(&entity) {
            return Err((ErrorCode::AlreadyExists, format!("{entity} already registered")));
        }
        self.entities.insert(
            entity,
            Record {
                spec: spec.clone(),
                open: true,
                ..Default::default()
            },
        );
        Ok(Mutation::Register { entity, spec })
    }

    pub fn advertise(&mut self, entity: EntityId, endpoint: String) -> OpResult<()> {
        self.stats.advertise += 1;
        let rec = self.entities.get_mut(&entity).ok_or_else(|| unknown(&entity))?;
        if !rec.open {
            return Err(closed(&entity));
        }
        rec.endpoint = Some(endpoint);
        Ok(())
    }

    pub fn locate(&mut self, entity: EntityId) -> OpResult<Located> {
        self.stats.locate += 1;
        let rec = self.entities.get(&entity).ok_or_else(|| unknown(&entity))?;
        Ok(if !rec.open {
            Located::Closed
        } else {
            match &rec.endpoint {
                Some(e) => Located::Endpoint(e.clone()),
                None => Located::Unadvertised,
            }
        })
    }

    pub fn put_msg(&mut self, dest: EntityId, envelope: Vec<u8>) -> OpResult<Mutation> {
        self.stats.put_msg += 1;
        self.stats.put_msg_bytes += envelope.len() as u64;
        let rec = self.entities.get_mut(&dest).ok_or_else(|| unknown(&dest))?;
        if !rec.open {
            return Err(closed(&dest));
        }
        rec.pending.push_back(envelope.clone());
        Ok(Mutation::Put { dest, envelope })
    }

    /// Dequeues up to `max` messages without blocking.
    pub fn poll_now(&mut self, entity: EntityId, max: u32) -> OpResult<(PollOutcome, Option<Mutation>)> {
        let rec = self.entities.get_mut(&entity).ok_or_else(|| unknown(&entity))?;
        if rec.pending.is_empty() {
            return if rec.open {
                Ok((PollOutcome::Empty, None))
            } else {
                Err(closed(&entity))
            };
        }
        let n = rec.pending.len().min(max.max(1) as usize);
        let msgs: Vec<Vec<u8>> = rec.pending.drain(..n).collect();
        self.stats.polled_msgs += n as u64;
        self.stats.polled_bytes += msgs.iter().map(|m| m.len() as u64).sum::<u64>();
        Ok((
            PollOutcome::Messages(msgs),
            Some(Mutation::Pop {
                entity,
                count: n as u32,
            }),
        ))
    }

    pub fn requeue(&mut self, entity: EntityId, envelopes: Vec<Vec<u8>>) -> OpResult<Mutation> {
        self.stats.requeue += 1;
        let rec = self.entities.get_mut(&entity).ok_or_else(|| unknown(&entity))?;
        if !rec.open {
            return Err(closed(&entity));
        }
        for e in envelopes.iter().rev() {
            rec.pending.push_front(e.clone());
        }
        Ok(Mutation::Requeue { entity, envelopes })
    }

    /// Marks the mailbox closed. Idempotent; queued messages stay drainable.
    pub fn close(&mut self, entity: EntityId) -> OpResult<Option<Mutation>> {
        self.stats.close += 1;
        let rec = self.entities.get_mut(&entity).ok_or_else(|| unknown(&entity))?;
        if !rec.open {
            return Ok(None);
        }
        rec.open = false;
        rec.endpoint = None;
        Ok(Some(Mutation::Close { entity }))
    }

    /// Open agents whose ancestry contains `behavior`, sorted by id.
    pub fn discover(&mut self, behavior: &str) -> Vec<EntityId> {
        self.stats.discover += 1;
        let mut ids: Vec<EntityId> = self
            .entities
            .iter()
            .filter(|(id, r)| {
                id.is_agent() && r.open && r.spec.as_ref().is_some_and(|s| s.is_a(behavior))
            })
            .map(|(id, _)| *id)
            .collect();
        ids.sort();
        ids
    }

    pub fn obj_put(&mut self, key: String, bytes: Vec<u8>, ttl: Option<Duration>, now: Instant) {
        self.stats.obj_put += 1;
        self.stats.obj_put_bytes += bytes.len() as u64;
        self.objects.retain(|_, o| o.expires.is_none_or(|t| t > now));
        self.objects.insert(
            key,
            StoredObject {
                bytes,
                expires: ttl.map(|t| now + t),
            },
        );
    }

    pub fn obj_get(&mut self, key: &str, now: Instant) -> OpResult<Vec<u8>> {
        self.stats.obj_get += 1;
        match self.objects.get(key) {
            Some(o) if o.expires.is_none_or(|t| t > now) => {
                self.stats.obj_get_bytes += o.bytes.len() as u64;
                Ok(o.bytes.clone())
            }
            Some(_) => {
                self.objects.remove(key);
                Err((ErrorCode::NotFound, format!("object {key:?} expired")))
            }
            None => Err((ErrorCode::NotFound, format!("no object {key:?}"))),
        }
    }

    pub fn obj_del(&mut self, key: &str) -> OpResult<()> {
        self.stats.obj_del += 1;
        self.objects
            .remove(key)
            .map(|_| ())
            .ok_or_else(|| (ErrorCode::NotFound, format!("no object {key:?}")))
    }

    /// Re-applies a logged mutation during recovery.
    pub fn replay(&mut self, m: Mutation) {
        match m {
            Mutation::Register { entity, spec } => {
                self.entities.entry(entity).or_insert(Record {
                    spec,
                    open: true,
                    ..Default::default()
                });
            }
            Mutation::Close { entity } => {
                if let Some(r) = self.entities.get_mut(&entity) {
                    r.open = false;
                }
            }
            Mutation::Put { dest, envelope } => {
                if let Some(r) = self.entities.get_mut(&dest) {
                    r.pending.push_back(envelope);
                }
            }
            Mutation::Pop { entity, count } => {
                if let Some(r) = self.entities.get_mut(&entity) {
                    let n = (count as usize).min(r.pending.len());
                    r.pending.drain(..n);
                }
            }
            Mutation::Requeue { entity, envelopes } => {
                if let Some(r) = self.entities.get_mut(&entity) {
                    for e in envelopes.into_iter().rev() {
                        r.pending.push_front(e);
                    }
                }
            }
        }
    }
}

pub(crate) fn error_response((code, detail): (ErrorCode, String)) -> Response {
    Response::Error { code, detail }
}

#[cfg(test)]
mod tests {
    use super::*;
    use agentry_core::Role;

    fn agent(store: &mut Store, name: &str, parents: &[&str]) -> EntityId {
        let id = EntityId::random(Role::Agent);
        let spec = BehaviorSpec::new(name, parents.iter().copied(), ["run"], Vec::<String>::new(), None).unwrap();
        store.register(id, Some(spec)).unwrap();
        id
    }

    #[test]
    fn duplicate_register() {
        let mut s = Store::default();
        let id = EntityId::random(Role::Client);
        s.register(id, None).unwrap();
        assert_eq!(s.register(id, None).unwrap_err().0, ErrorCode::AlreadyExists);
    }

    #[test]
    fn locate_lifecycle() {
        let mut s = Store::default();
        let id = agent(&mut s, "A", &[]);
        assert_eq!(s.locate(id).unwrap(), Located::Unadvertised);
        s.advertise(id, "h:1".into()).unwrap();
        s.advertise(id, "h:2".into()).unwrap();
        assert_eq!(s.locate(id).unwrap(), Located::Endpoint("h:2".into()));
        s.close(id).unwrap();
        assert_eq!(s.locate(id).unwrap(), Located::Closed);
        let stranger = EntityId::random(Role::Agent);
        assert_eq!(s.advertise(stranger, "x:1".into()).unwrap_err().0, ErrorCode::UnknownEntity);
    }

    #[test]
    fn fifo_and_close_drain() {
        let mut s = Store::default();
        let id = agent(&mut s, "A", &[]);
        for i in 0..100u8 {
            s.put_msg(id, vec![i]).unwrap();
        }
        let (PollOutcome::Messages(first), _) = s.poll_now(id, 1).unwrap() else { panic!() };
        assert_eq!(first, vec![vec![0]]);
        s.close(id).unwrap();
        assert_eq!(s.put_msg(id, vec![1]).unwrap_err().0, ErrorCode::Closed);
        let (PollOutcome::Messages(rest), _) = s.poll_now(id, 1000).unwrap() else { panic!() };
        assert_eq!(rest, (1..100u8).map(|i| vec![i]).collect::<Vec<_>>());
        assert_eq!(s.poll_now(id, 1).err().unwrap().0, ErrorCode::Closed);
    }

    #[test]
    fn requeue_goes_to_head() {
        let mut s = Store::default();
        let id = agent(&mut s, "A", &[]);
        s.put_msg(id, vec![3]).unwrap();
        s.requeue(id, vec![vec![1], vec![2]]).unwrap();
        let (PollOutcome::Messages(all), _) = s.poll_now(id, 10).unwrap() else { panic!() };
        assert_eq!(all, vec![vec![1], vec![2], vec![3]]);
    }

    #[test]
    fn discover_subtypes() {
        let mut s = Store::default();
        let open = agent(&mut s, "OpenProteinFolder", &["ProteinFolder"]);
        let base = agent(&mut s, "ProteinFolder", &[]);
        let mut both = vec![open, base];
        both.sort();
        assert_eq!(s.discover("ProteinFolder"), both);
        assert_eq!(s.discover("OpenProteinFolder"), vec![open]);
        assert!(s.discover("Nothing").is_empty());
    }

    #[test]
    fn objects_expire() {
        let mut s = Store::default();
        let t0 = Instant::now();
        s.obj_put("k".into(), vec![1, 2], Some(Duration::from_millis(10)), t0);
        assert_eq!(s.obj_get("k", t0).unwrap(), vec![1, 2]);
        assert_eq!(s.obj_get("k", t0 + Duration::from_millis(11)).unwrap_err().0, ErrorCode::NotFound);
        assert_eq!(s.obj_get("missing", t0).unwrap_err().0, ErrorCode::NotFound);
        s.obj_put("j".into(), vec![], None, t0);
        s.obj_del("j").unwrap();
        assert!(s.obj_del("j").is_err());
    }
}
