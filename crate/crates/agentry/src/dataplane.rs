//! Pass-by-reference payloads.
//!
//! Large values are pinned in the owner's depot and replaced by a small
//! [`ProxyRef`]. Consumers resolve the reference by fetching from the owner's
//! peer endpoint, falling back to a copy in the relay store. Forwarding a
//! reference never touches the bytes.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use agentry_core::{EntityId, ErrorInfo, ErrorKind, Location, ObjectId, Payload, ProxyRef};
use agentry_relay::RelayClient;
use parking_lot::Mutex;
use sha2::{Digest, Sha256};

use crate::completion::Completion;
use crate::exchange::direct;

pub const DEFAULT_THRESHOLD: usize = 100_000;
pub const DEFAULT_PIN_TTL: Duration = Duration::from_secs(3600);

/// When a proxied object is also copied to the relay store.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PublishPolicy {
    /// Only when the owner has no peer endpoint.
    WhenUnreachable,
    Always,
    Never,
}

#[derive(Debug, Clone)]
pub struct DepotConfig {
    /// Payloads of at least this many bytes go by reference.
    pub threshold: usize,
    pub pin_ttl: Duration,
    /// Byte budget of the cache of resolved foreign objects.
    pub cache_budget: usize,
    pub fetch_timeout: Duration,
    pub publish: PublishPolicy,
}

impl Default for DepotConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            pin_ttl: DEFAULT_PIN_TTL,
            cache_budget: 256 << 20,
            fetch_timeout: Duration::from_secs(30),
            publish: PublishPolicy::WhenUnreachable,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DataError {
    #[error("object {object} unavailable: {detail}")]
    Unavailable { object: ObjectId, detail: String },
    #[error("object {object} failed its checksum")]
    Integrity { object: ObjectId },
    #[error("cannot publish object: {0}")]
    Publish(String),
}

impl From<DataError> for ErrorInfo {
    fn from(e: DataError) -> Self {
        ErrorInfo::new(ErrorKind::TransportFailure, e.to_string())
    }
}

/// Snapshot of depot counters.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct DepotStats {
    pub proxies: u64,
    pub published: u64,
    pub published_bytes: u64,
    pub peer_fetches: u64,
    pub store_fetches: u64,
    pub fetched_bytes: u64,
    pub served: u64,
    pub served_bytes: u64,
    pub local_hits: u64,
}

impl DepotStats {
    /// Objects moved over the network to this depot.
    pub fn transfers(&self) -> u64 {
        self.peer_fetches + self.store_fetches
    }
}

#[derive(Default)]
struct Counters {
    proxies: AtomicU64,
    published: AtomicU64,
    published_bytes: AtomicU64,
    peer_fetches: AtomicU64,
    store_fetches: AtomicU64,
    fetched_bytes: AtomicU64,
    served: AtomicU64,
    served_bytes: AtomicU64,
    local_hits: AtomicU64,
}

fn bump(c: &AtomicU64, by: u64) {
    c.fetch_add(by, Ordering::Relaxed);
}

struct Pin {
    bytes: Arc<Vec<u8>>,
    expires: Instant,
    store_key: Option<String>,
}

#[derive(Default)]
struct Lru {
    budget: usize,
    used: usize,
    tick: u64,
    map: HashMap<ObjectId, (Arc<Vec<u8>>, u64)>,
    order: BTreeMap<u64, ObjectId>,
}

impl Lru {
    fn get(&mut self, id: &ObjectId) -> Option<Arc<Vec<u8>>> {
        self.tick += 1;
        let tick = self.tick;
        let (bytes, t) = self.map.get_mut(id)?;
        self.order.remove(t);
        *t = tick;
        self.order.insert(tick, *id);
        Some(bytes.clone())
    }

    fn insert(&mut self, id: ObjectId, bytes: Arc<Vec<u8>>) {
        if bytes.len() > self.budget || self.map.contains_key(&id) {
            return;
        }
        while self.used + bytes.len() > self.budget {
            let Some((_, victim)) = self.order.pop_first() else { break };
            if let Some((b, _)) = self.map.remove(&victim) {
                self.used -= b.len();
            }
        }
        self.tick += 1;
        self.used += bytes.len();
        self.order.insert(self.tick, id);
        self.map.insert(id, (bytes, self.tick));
    }
}

type Resolution = Result<Arc<Vec<u8>>, DataError>;

/// Result of [`ObjectDepot::resolve_async`].
#[derive(Clone)]
pub struct PendingObject(Arc<Completion<Resolution>>);

impl PendingObject {
    pub fn wait(&self) -> Resolution {
        self.0.wait()
    }

    pub fn is_done(&self) -> bool {
        self.0.is_done()
    }
}

pub struct ObjectDepot {
    origin: EntityId,
    config: DepotConfig,
    peer_endpoint: Option<String>,
    store: Option<Arc<RelayClient>>,
    pins: Mutex<HashMap<ObjectId, Pin>>,
    cache: Mutex<Lru>,
    inflight: Mutex<HashMap<ObjectId, Arc<Completion<Resolution>>>>,
    counters: Counters,
}

pub fn checksum(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

impl ObjectDepot {
    pub fn new(
        origin: EntityId,
        config: DepotConfig,
        peer_endpoint: Option<String>,
        store: Option<Arc<RelayClient>>,
    ) -> Self {
        let cache = Lru {
            budget: config.cache_budget,
            ..Default::default()
        };
        Self {
            origin,
            config,
            peer_endpoint,
            store,
            pins: Mutex::new(HashMap::new()),
            cache: Mutex::new(cache),
            inflight: Mutex::new(HashMap::new()),
            counters: Counters::default(),
        }
    }

    /// Depot with no network presence: references it creates resolve only
    /// through itself.
    pub fn isolated(origin: EntityId) -> Self {
        Self::new(origin, DepotConfig::default(), None, None)
    }

    pub fn config(&self) -> &DepotConfig {
        &self.config
    }

    pub fn peer_endpoint(&self) -> Option<&str> {
        self.peer_endpoint.as_deref()
    }

    /// Pins `bytes` and returns a reference to them.
    pub fn proxy(&self, bytes: Vec<u8>) -> Result<ProxyRef, DataError> {
        let now = Instant::now();
        let object_id = ObjectId::random();
        let sum = checksum(&bytes);
        let size = bytes.len() as u64;
        let bytes = Arc::new(bytes);
        let mut locations = Vec::new();
        if let Some(ep) = &self.peer_endpoint {
            locations.push(Location::Peer(ep.clone()));
        }
        let publish = match self.config.publish {
            PublishPolicy::Always => true,
            PublishPolicy::WhenUnreachable => self.peer_endpoint.is_none(),
            PublishPolicy::Never => false,
        };
        let mut store_key = None;
        if let (true, Some(store)) = (publish, &self.store) {
            let key = format!("obj/{object_id}");
            store
                .obj_put(&key, bytes.to_vec(), Some(self.config.pin_ttl))
                .map_err(|e| DataError::Publish(e.to_string()))?;
            bump(&self.counters.published, 1);
            bump(&self.counters.published_bytes, size);
            locations.push(Location::StoreKey(key.clone()));
            store_key = Some(key);
        }
        let mut pins = self.pins.lock();
        pins.retain(|_, p| p.expires > now);
        pins.insert(
            object_id,
            Pin {
                bytes,
                expires: now + self.config.pin_ttl,
                store_key,
            },
        );
        bump(&self.counters.proxies, 1);
        Ok(ProxyRef {
            object_id,
            size,
            origin: self.origin,
            locations,
            checksum: sum,
        })
    }

    /// Unpins an object before its TTL runs out.
    pub fn release(&self, id: &ObjectId) {
        let pin = self.pins.lock().remove(id);
        if let (Some(Pin { store_key: Some(key), .. }), Some(store)) = (pin, &self.store) {
            let _ = store.obj_del(&key);
        }
    }

    /// Bytes of a locally pinned object, for serving to peers.
    pub(crate) fn serve(&self, id: &ObjectId) -> Option<Arc<Vec<u8>>> {
        let now = Instant::now();
        let pins = self.pins.lock();
        let pin = pins.get(id).filter(|p| p.expires > now)?;
        bump(&self.counters.served, 1);
        bump(&self.counters.served_bytes, pin.bytes.len() as u64);
        Some(pin.bytes.clone())
    }

    fn local(&self, id: &ObjectId) -> Option<Arc<Vec<u8>>> {
        let now = Instant::now();
        let hit = self
            .pins
            .lock()
            .get(id)
            .filter(|p| p.expires > now)
            .map(|p| p.bytes.clone())
            .or_else(|| self.cache.lock().get(id));
        if hit.is_some() {
            bump(&self.counters.local_hits, 1);
        }
        hit
    }

    /// Materializes a reference, fetching it if needed. Concurrent resolves
    /// of one object share a single fetch.
    pub fn resolve(&self, r: &ProxyRef) -> Resolution {
        if let Some(b) = self.local(&r.object_id) {
            return Ok(b);
        }
        let (cell, leader) = {
            let mut inflight = self.inflight.lock();
            match inflight.get(&r.object_id) {
                Some(c) => (c.clone(), false),
                None => {
                    let c = Completion::new();
                    inflight.insert(r.object_id, c.clone());
                    (c, true)
                }
            }
        };
        if !leader {
            return cell.wait();
        }
        // the cache may have been filled between the first check and here
        let result = match self.local(&r.object_id) {
            Some(b) => Ok(b),
            None => self.fetch(r),
        };
        if let Ok(b) = &result {
            self.cache.lock().insert(r.object_id, b.clone());
        }
        cell.complete(result.clone());
        self.inflight.lock().remove(&r.object_id);
        result
    }

    fn fetch(&self, r: &ProxyRef) -> Resolution {
        let mut failures = Vec::new();
        let mut corrupt = false;
        for loc in &r.locations {
            let got = match loc {
                Location::Peer(ep) => direct::fetch(ep, &r.object_id, self.config.fetch_timeout)
                    .map_err(|e| e.to_string())
                    .and_then(|o| o.ok_or_else(|| "peer does not hold it".to_string()))
                    .map(|b| (b, &self.counters.peer_fetches)),
                Location::StoreKey(key) => match &self.store {
                    Some(store) => store
                        .obj_get(key)
                        .map_err(|e| e.to_string())
                        .map(|b| (b, &self.counters.store_fetches)),
                    None => Err("no relay store attached".to_string()),
                },
            };
            match got {
                Ok((bytes, counter)) => {
                    bump(counter, 1);
                    bump(&self.counters.fetched_bytes, bytes.len() as u64);
                    if bytes.len() as u64 == r.size && checksum(&bytes) == r.checksum {
                        return Ok(Arc::new(bytes));
                    }
                    corrupt = true;
                    failures.push(format!("{loc:?}: checksum mismatch"));
                }
                Err(e) => failures.push(format!("{loc:?}: {e}")),
            }
        }
        if corrupt {
            return Err(DataError::Integrity { object: r.object_id });
        }
        if failures.is_empty() {
            failures.push("no locations".into());
        }
        Err(DataError::Unavailable {
            object: r.object_id,
            detail: failures.join("; "),
        })
    }

    /// Starts resolving in the background.
    pub fn resolve_async(self: &Arc<Self>, r: &ProxyRef) -> PendingObject {
        if let Some(b) = self.local(&r.object_id) {
            return PendingObject(Completion::completed(Ok(b)));
        }
        let cell = Completion::new();
        let object = r.object_id;
        let depot = self.clone();
        let r = r.clone();
        let out = cell.clone();
        let spawned = thread::Builder::new()
            .name("resolve".into())
            .spawn(move || {
                out.complete(depot.resolve(&r));
            });
        if let Err(e) = spawned {
            cell.complete(Err(DataError::Unavailable {
                object,
                detail: format!("cannot spawn resolver: {e}"),
            }));
        }
        PendingObject(cell)
    }

    /// Inline below the threshold, by reference at or above it.
    pub fn auto_payload(&self, bytes: Vec<u8>) -> Result<Payload, DataError> {
        if bytes.len() < self.config.threshold {
            Ok(Payload::Inline(bytes))
        } else {
            Ok(Payload::Reference(self.proxy(bytes)?))
        }
    }

    /// Bytes of a payload, resolving references.
    pub fn materialize(&self, p: Payload) -> Resolution {
        match p {
            Payload::Inline(b) => Ok(Arc::new(b)),
            Payload::Reference(r) => self.resolve(&r),
        }
    }

    pub fn stats(&self) -> DepotStats {
        let c = &self.counters;
        let l = |a: &AtomicU64| a.load(Ordering::Relaxed);
        DepotStats {
            proxies: l(&c.proxies),
            published: l(&c.published),
            published_bytes: l(&c.published_bytes),
            peer_fetches: l(&c.peer_fetches),
            store_fetches: l(&c.store_fetches),
            fetched_bytes: l(&c.fetched_bytes),
            served: l(&c.served),
            served_bytes: l(&c.served_bytes),
            local_hits: l(&c.local_hits),
        }
    }
}
