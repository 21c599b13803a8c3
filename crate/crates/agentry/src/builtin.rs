//! Behaviors shipped with the library. They back the examples, the tests and
//! the benchmark scenarios, and are all available by name from
//! [`registry`].

use std::collections::BTreeSet;
use std::thread;
use std::time::{Duration, Instant};

use agentry_core::{EntityId, Payload, ProxyRef};

use crate::behavior::{AgentBehavior, Behavior, BoxError};
use crate::launch::BehaviorRegistry;

fn u64_arg(b: &[u8]) -> Result<u64, BoxError> {
    let a: [u8; 8] = b.try_into().map_err(|_| format!("expected 8 bytes, got {}", b.len()))?;
    Ok(u64::from_be_bytes(a))
}

fn u32_arg(b: &[u8]) -> Result<u32, BoxError> {
    let a: [u8; 4] = b.try_into().map_err(|_| format!("expected 4 bytes, got {}", b.len()))?;
    Ok(u32::from_be_bytes(a))
}

fn text_args(args: &[u8]) -> Result<Vec<String>, BoxError> {
    Ok(std::str::from_utf8(args)?.split_whitespace().map(str::to_string).collect())
}

fn concurrency_arg(args: &[u8]) -> Result<Option<usize>, BoxError> {
    match text_args(args)?.first() {
        Some(s) => Ok(Some(s.parse()?)),
        None => Ok(None),
    }
}

fn peer_arg(s: Option<&String>) -> Result<Option<EntityId>, BoxError> {
    s.map(|s| s.parse().map_err(|e| Box::new(e) as BoxError)).transpose()
}

/// `square(i64) -> i64`, big-endian.
pub fn example() -> AgentBehavior {
    Behavior::new("Example", ())
        .action_bytes("square", |_, args| {
            let x = u64_arg(args)? as i64;
            let sq = x.checked_mul(x).ok_or("overflow")?;
            Ok(sq.to_be_bytes().to_vec())
        })
        .build()
        .expect("valid behavior")
}

/// `noop` ignores its argument; `consume` resolves it and returns its length
/// as a big-endian u64; `echo` returns its argument untouched.
pub fn noop(concurrency: Option<usize>) -> AgentBehavior {
    let mut b = Behavior::new("Noop", ())
        .extends(["Worker"])
        .action("noop", |_, _| Ok(Payload::empty()))
        .action("consume", |ctx, p| {
            let bytes = ctx.resolve(p)?;
            Ok(Payload::Inline((bytes.len() as u64).to_be_bytes().to_vec()))
        })
        .action("echo", |_, p| Ok(p));
    if let Some(n) = concurrency {
        b = b.max_concurrency(n);
    }
    b.build().expect("valid behavior")
}

/// `sleep(ms: u64)`.
pub fn sleeper(concurrency: usize) -> AgentBehavior {
    Behavior::new("Sleeper", ())
        .extends(["Worker"])
        .action_bytes("sleep", |_, args| {
            thread::sleep(Duration::from_millis(u64_arg(args)?));
            Ok(Vec::new())
        })
        .max_concurrency(concurrency)
        .build()
        .expect("valid behavior")
}

const COUNT_KEY: &str = "count";

/// `incr() -> u64` and `get() -> u64`. The count is checkpointed after
/// every increment and restored at startup when a state store is attached.
pub fn counter() -> AgentBehavior {
    Behavior::new("Counter", 0u64)
        .on_setup(|ctx| {
            if let Some(store) = ctx.state_store() {
                match store.get(COUNT_KEY) {
                    Ok(b) => {
                        let n = u64_arg(&b)?;
                        ctx.with_state(|c| *c = n);
                    }
                    Err(crate::launch::StateError::NotFound(_)) => {}
                    Err(e) => return Err(e.into()),
                }
            }
            Ok(())
        })
        .action_bytes("incr", |ctx, _| {
            let n = ctx.with_state(|c| -> Result<u64, BoxError> {
                *c += 1;
                if let Some(store) = ctx.state_store() {
                    store.set(COUNT_KEY, &c.to_be_bytes())?;
                }
                Ok(*c)
            })?;
            Ok(n.to_be_bytes().to_vec())
        })
        .action_bytes("get", |ctx, _| Ok(ctx.with_state(|c| *c).to_be_bytes().to_vec()))
        .max_concurrency(1)
        .build()
        .expect("valid behavior")
}

/// `forward(payload)`: passes the payload unchanged to the next link, or,
/// at the end of the chain, resolves it and returns its length.
pub fn chain_link(next: Option<EntityId>) -> AgentBehavior {
    Behavior::new("ChainLink", next)
        .action("forward", |ctx, p| {
            match ctx.with_state(|n| *n) {
                Some(next) => Ok(ctx.handle(next).call("forward", p)?),
                None => {
                    let bytes = ctx.resolve(p)?;
                    Ok(Payload::Inline((bytes.len() as u64).to_be_bytes().to_vec()))
                }
            }
        })
        .build()
        .expect("valid behavior")
}

/// Argument of the `talk` action.
pub fn talk_args(peer: EntityId, rounds: u32, size: u32) -> Vec<u8> {
    let mut v = Vec::new();
    v.extend_from_slice(&rounds.to_be_bytes());
    v.extend_from_slice(&size.to_be_bytes());
    v.extend_from_slice(peer.to_string().as_bytes());
    v
}

/// `talk(peer, rounds, size) -> elapsed ns`: sends `rounds` inline messages
/// of `size` bytes to the peer's `echo` action, one after the other.
pub fn talker() -> AgentBehavior {
    Behavior::new("Talker", ())
        .action_bytes("talk", |ctx, args| {
            if args.len() < 8 {
                return Err("talk needs rounds, size and peer".into());
            }
            let rounds = u32_arg(&args[..4])?;
            let size = u32_arg(&args[4..8])? as usize;
            if rounds == 0 {
                return Err("rounds must be positive".into());
            }
            let peer: EntityId = std::str::from_utf8(&args[8..])?.parse()?;
            let h = ctx.handle(peer);
            let msg = vec![0xa5u8; size];
            let t0 = Instant::now();
            for _ in 0..rounds {
                let back = h.call("echo", Payload::Inline(msg.clone()))?;
                if back.as_inline().map(<[u8]>::len) != Some(size) {
                    return Err("echo changed the message".into());
                }
            }
            Ok((t0.elapsed().as_nanos() as u64).to_be_bytes().to_vec())
        })
        .build()
        .expect("valid behavior")
}

/// Synthetic pipeline item contents: the id followed by a fill pattern.
pub fn item_data(id: u32, size: usize) -> Vec<u8> {
    let mut v = Vec::with_capacity(size.max(4));
    v.extend_from_slice(&id.to_be_bytes());
    v.extend((4..size).map(|i| (i as u32).wrapping_mul(31).wrapping_add(id) as u8));
    v
}

fn assemble(data: &[u8]) -> Vec<u8> {
    let mut out = data.to_vec();
    for b in &mut out[4..] {
        *b ^= 0x5a;
    }
    out
}

fn check_assembled(id: u32, data: &[u8]) -> bool {
    data.len() >= 4 && data[..4] == id.to_be_bytes() && assemble(data) == item_data(id, data.len())
}

/// Pipeline message: item id, then the data inline or by reference.
pub fn encode_item(id: u32, p: &Payload) -> Result<Vec<u8>, BoxError> {
    let mut v = id.to_be_bytes().to_vec();
    match p {
        Payload::Inline(b) => {
            v.push(0);
            v.extend_from_slice(b);
        }
        Payload::Reference(r) => {
            v.push(1);
            v.extend_from_slice(&r.encode()?);
        }
    }
    Ok(v)
}

pub fn decode_item(b: &[u8]) -> Result<(u32, Payload), BoxError> {
    if b.len() < 5 {
        return Err("item too short".into());
    }
    let id = u32_arg(&b[..4])?;
    let p = match b[4] {
        0 => Payload::Inline(b[5..].to_vec()),
        1 => Payload::Reference(ProxyRef::decode(&b[5..])?),
        t => return Err(format!("bad item tag {t}").into()),
    };
    Ok((id, p))
}

const STAGE_TIMEOUT: Duration = Duration::from_secs(10);
const GENERATE_ATTEMPTS: u32 = 20;

/// First stage. `generate(count: u32) -> u32` pushes items `0..count`
/// downstream, retrying each until the rest of the pipeline acknowledges it.
pub fn generator(next: EntityId, item_size: usize) -> AgentBehavior {
    Behavior::new("Generator", ())
        .extends(["Stage"])
        .action_bytes("generate", move |ctx, args| {
            let count = u32_arg(args)?;
            let h = ctx.handle(next).with_timeout(STAGE_TIMEOUT);
            let mut done = 0u32;
            for id in 0..count {
                let data = ctx.payload(item_data(id, item_size))?;
                let item = encode_item(id, &data)?;
                let mut attempt = 0;
                loop {
                    attempt += 1;
                    match h.call("process", Payload::Inline(item.clone())) {
                        Ok(_) => break,
                        Err(e) if attempt < GENERATE_ATTEMPTS => {
                            log::warn!("item {id} attempt {attempt} failed: {e}");
                            thread::sleep(Duration::from_millis(200));
                        }
                        Err(e) => return Err(e.into()),
                    }
                }
                done += 1;
            }
            Ok(done.to_be_bytes().to_vec())
        })
        .build()
        .expect("valid behavior")
}

/// Second stage: transforms the item data into a new object.
pub fn assembler(next: EntityId) -> AgentBehavior {
    Behavior::new("Assembler", ())
        .extends(["Stage"])
        .action_bytes("process", move |ctx, args| {
            let (id, p) = decode_item(args)?;
            let data = ctx.resolve(p)?;
            if data.len() < 4 || data[..4] != id.to_be_bytes() {
                return Err(format!("item {id}: corrupt input").into());
            }
            let out = ctx.payload(assemble(&data))?;
            let h = ctx.handle(next).with_timeout(STAGE_TIMEOUT);
            Ok(ctx.resolve(h.call("process", Payload::Inline(encode_item(id, &out)?))?)?.to_vec())
        })
        .build()
        .expect("valid behavior")
}

/// Third stage: checks the assembled data and hands the same reference to
/// the recorder.
pub fn validator(next: EntityId) -> AgentBehavior {
    Behavior::new("Validator", ())
        .extends(["Stage"])
        .action_bytes("process", move |ctx, args| {
            let (id, p) = decode_item(args)?;
            let data = ctx.resolve(p.clone())?;
            if !check_assembled(id, &data) {
                return Err(format!("item {id}: validation failed").into());
            }
            let h = ctx.handle(next).with_timeout(STAGE_TIMEOUT);
            Ok(ctx.resolve(h.call("record", Payload::Inline(encode_item(id, &p)?))?)?.to_vec())
        })
        .build()
        .expect("valid behavior")
}

/// Sink. `record(item) -> [1]` for a new id, `[0]` for a duplicate;
/// `count() -> u64`; `ids() -> [u32]`.
pub fn recorder() -> AgentBehavior {
    Behavior::new("Recorder", BTreeSet::<u32>::new())
        .extends(["Stage"])
        .action_bytes("record", |ctx, args| {
            let (id, _) = decode_item(args)?;
            let fresh = ctx.with_state(|s| s.insert(id));
            Ok(vec![fresh as u8])
        })
        .action_bytes("count", |ctx, _| Ok((ctx.with_state(|s| s.len()) as u64).to_be_bytes().to_vec()))
        .action_bytes("ids", |ctx, _| {
            Ok(ctx.with_state(|s| s.iter().flat_map(|i| i.to_be_bytes()).collect()))
        })
        .max_concurrency(1)
        .build()
        .expect("valid behavior")
}

/// Every behavior in this module, by name. Arguments are whitespace
/// separated text: a concurrency for `Noop` and `Sleeper`, the next agent
/// for `ChainLink`, `Assembler` and `Validator`, and the next agent plus
/// the item size for `Generator`.
pub fn registry() -> BehaviorRegistry {
    let mut r = BehaviorRegistry::new();
    r.register("Example", |_| Ok(example()))
        .register("Noop", |a| Ok(noop(concurrency_arg(a)?)))
        .register("Sleeper", |a| Ok(sleeper(concurrency_arg(a)?.unwrap_or(1))))
        .register("Counter", |_| Ok(counter()))
        .register("ChainLink", |a| Ok(chain_link(peer_arg(text_args(a)?.first())?)))
        .register("Talker", |_| Ok(talker()))
        .register("Generator", |a| {
            let t = text_args(a)?;
            let next = peer_arg(t.first())?.ok_or("Generator needs the next stage")?;
            let size = t.get(1).map(|s| s.parse()).transpose()?.unwrap_or(4096);
            Ok(generator(next, size))
        })
        .register("Assembler", |a| {
            Ok(assembler(peer_arg(text_args(a)?.first())?.ok_or("Assembler needs the next stage")?))
        })
        .register("Validator", |a| {
            Ok(validator(peer_arg(text_args(a)?.first())?.ok_or("Validator needs the next stage")?))
        })
        .register("Recorder", |_| Ok(recorder()));
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn item_round_trip() {
        let p = Payload::Inline(item_data(7, 64));
        let (id, back) = decode_item(&encode_item(7, &p).unwrap()).unwrap();
        assert_eq!(id, 7);
        assert_eq!(back, p);
        assert!(check_assembled(7, &assemble(&item_data(7, 64))));
        assert!(!check_assembled(8, &assemble(&item_data(7, 64))));
    }

    #[test]
    fn registry_builds_everything() {
        let r = registry();
        let next = EntityId::random(agentry_core::Role::Agent).to_string();
        for (name, args) in [
            ("Example", String::new()),
            ("Noop", "8".into()),
            ("Sleeper", String::new()),
            ("Counter", String::new()),
            ("ChainLink", next.clone()),
            ("ChainLink", String::new()),
            ("Talker", String::new()),
            ("Generator", format!("{next} 1000")),
            ("Assembler", next.clone()),
            ("Validator", next.clone()),
            ("Recorder", String::new()),
        ] {
            let b = r.create(name, args.as_bytes()).unwrap();
            assert_eq!(b.spec().name(), name);
        }
        assert!(r.create("Assembler", b"").is_err());
        assert!(r.create("Nope", b"").is_err());
    }
}
