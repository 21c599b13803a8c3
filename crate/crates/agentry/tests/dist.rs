//! Hybrid routing over the relay store.

mod common;

use std::sync::Arc;
use std::thread;
use std::time::Duration;

use agentry::exchange::{DistConfig, DistExchange, Exchange, ExchangeClient, ExchangeError};
use agentry::handle::MailboxRouter;
use agentry::runtime::{AgentRuntime, RuntimeConfig};
use agentry::{builtin, AgentBehavior, Body, EntityId, Envelope, ErrorKind, Payload, Role};
use agentry_relay::RelayServer;
use proptest::prelude::*;

const WAIT: Duration = Duration::from_secs(5);

fn exchange(server: &RelayServer, config: DistConfig) -> DistExchange {
    DistExchange::connect(server.addr(), config).unwrap()
}

fn spawn(x: &DistExchange, b: AgentBehavior) -> EntityId {
    let id = x.register(Role::Agent, Some(b.spec().clone())).unwrap();
    let rt = AgentRuntime::new(b, x.bind(id).unwrap(), RuntimeConfig::default());
    thread::spawn(move || rt.run());
    id
}

fn median(mut v: Vec<Duration>) -> Duration {
    v.sort();
    v[v.len() / 2]
}

#[test]
fn listeners_on_both_sides_bypass_the_relay() {
    let server = common::relay();
    let x = exchange(&server, DistConfig::default());
    let agent = spawn(&x, builtin::noop(None));
    let router = MailboxRouter::open(&x).unwrap();
    let h = router.handle(agent);
    h.ping().unwrap();
    let before = server.stats();
    for _ in 0..50 {
        h.call("noop", Payload::empty()).unwrap();
    }
    let after = server.stats();
    assert_eq!(after.put_msg, before.put_msg);
    assert_eq!(after.put_msg, 0);
}

#[test]
fn agent_without_listener_is_reached_through_relay() {
    let server = common::relay();
    let hybrid = exchange(&server, DistConfig::default());
    let natted = hybrid.with_config(DistConfig {
        listen: false,
        ..DistConfig::default()
    });
    let agent = spawn(&natted, builtin::example());
    assert_eq!(
        hybrid.store().locate(agent).unwrap(),
        agentry_relay::Located::Unadvertised
    );
    let router = MailboxRouter::open(&hybrid).unwrap();
    let out = router.handle(agent).call_bytes("square", 5i64.to_be_bytes().to_vec()).unwrap();
    assert_eq!(out, 25i64.to_be_bytes());
    assert!(server.stats().put_msg >= 1);
}

#[test]
fn losing_the_direct_path_mid_run_loses_nothing() {
    let server = common::relay();
    let x = exchange(&server, DistConfig::default());
    let rx_id = x.register(Role::Agent, None).unwrap();
    let rx = x.bind_client(rx_id).unwrap();
    let tx_id = x.register(Role::Client, None).unwrap();
    let tx = x.bind(tx_id).unwrap();
    let sent: Vec<_> = (0..100).map(|_| Envelope::new(tx_id, rx_id, Body::Ping)).collect();
    for (i, e) in sent.iter().enumerate() {
        if i == 50 {
            rx.stop_listener();
        }
        tx.send(e).unwrap();
    }
    let stats = server.stats();
    assert!(stats.put_msg >= 50, "{stats:?}");
    for e in &sent {
        assert_eq!(&rx.recv(WAIT).unwrap(), e);
    }
    assert_eq!(rx.recv(Duration::from_millis(100)), Err(ExchangeError::Timeout));
}

#[test]
fn pending_messages_survive_a_crashed_consumer() {
    let server = common::relay();
    let x = exchange(&server, DistConfig::relay_only());
    let id = x.register(Role::Agent, None).unwrap();
    let me = x.register(Role::Client, None).unwrap();
    let tx = x.bind(me).unwrap();
    let first = x.bind(id).unwrap();
    let sent: Vec<_> = (0..20).map(|_| Envelope::new(me, id, Body::Ping)).collect();
    for e in &sent[..10] {
        tx.send(e).unwrap();
    }
    assert_eq!(first.recv(WAIT).unwrap(), sent[0]);
    // consumer goes away with envelopes still buffered
    first.stop();
    first.join();
    drop(first);
    for e in &sent[10..] {
        tx.send(e).unwrap();
    }
    let second = x.bind(id).unwrap();
    for e in &sent[1..] {
        assert_eq!(&second.recv(WAIT).unwrap(), e);
    }
}

#[test]
fn terminal_shutdown_reaches_remote_senders() {
    let server = common::relay();
    let x = exchange(&server, DistConfig::default());
    let agent = spawn(&x, builtin::noop(None));
    let router = MailboxRouter::open(&x).unwrap();
    let h = router.handle(agent);
    h.call("noop", Payload::empty()).unwrap();
    h.shutdown(true, true).unwrap();
    assert_eq!(h.call("noop", Payload::empty()).unwrap_err().kind, ErrorKind::MailboxClosed);
    assert_eq!(h.ping().unwrap_err().kind, ErrorKind::MailboxClosed);
}

#[test]
fn duplicates_are_suppressed() {
    let server = common::relay();
    let x = exchange(&server, DistConfig::default());
    let rx_id = x.register(Role::Agent, None).unwrap();
    let rx = x.bind(rx_id).unwrap();
    let me = x.register(Role::Client, None).unwrap();
    let tx = x.bind(me).unwrap();
    let e = Envelope::new(me, rx_id, Body::Ping);
    tx.send(&e).unwrap();
    tx.send(&e).unwrap();
    // and once more through the relay
    x.store().put_msg(rx_id, agentry::core::encode_envelope(&e).unwrap()).unwrap();
    assert_eq!(rx.recv(WAIT).unwrap(), e);
    assert_eq!(rx.recv(Duration::from_millis(1500)), Err(ExchangeError::Timeout));
}

#[test]
fn discovery_goes_through_the_store() {
    let server = common::relay();
    let x = exchange(&server, DistConfig::default());
    let a = spawn(&x, builtin::sleeper(1));
    let b = spawn(&x, builtin::noop(None));
    let mut workers = vec![a, b];
    workers.sort();
    assert_eq!(x.discover("Worker").unwrap(), workers);
    let other = exchange(&server, DistConfig::relay_only());
    let c = other.connect_entity(Role::Client, None).unwrap();
    assert_eq!(c.discover("Sleeper").unwrap(), vec![a]);
}

#[test]
fn direct_round_trip_ignores_store_latency() {
    let latency = Duration::from_millis(30);
    let server = common::relay_with_latency(latency);
    let hybrid = exchange(&server, DistConfig::default());
    let relayed = hybrid.with_config(DistConfig::relay_only());

    let direct_agent = spawn(&hybrid, builtin::noop(None));
    let router = MailboxRouter::open(&hybrid).unwrap();
    let h = router.handle(direct_agent);
    h.ping().unwrap();
    let direct = median((0..20).map(|_| h.ping().unwrap()).collect());

    let relay_agent = spawn(&relayed, builtin::noop(None));
    let router = MailboxRouter::open(&relayed).unwrap();
    let h = router.handle(relay_agent);
    h.ping().unwrap();
    let relay = median((0..10).map(|_| h.ping().unwrap()).collect());

    assert!(direct < Duration::from_millis(10), "direct {direct:?}");
    // request and response each cross the store
    assert!(relay >= 2 * latency, "relay {relay:?}");
}

/// Per receiver, the sorted payload numbers it was delivered.
#[test]
fn switching_to_direct_keeps_sender_order() {
    let server = common::relay_with_latency(Duration::from_millis(30));
    let x = exchange(
        &server,
        DistConfig {
            reprobe_after: Duration::ZERO,
            ..DistConfig::default()
        },
    );
    let a = x.register(Role::Client, None).unwrap();
    let b = x.register(Role::Agent, None).unwrap();
    let sender = x.bind(a).unwrap();
    // b is offline: these go through the store, large enough that fetching
    // them takes several emulated round trips
    let bulky = || Body::ActionRequest {
        action: "noop".into(),
        payload: Payload::Inline(vec![0; 1 << 20]),
    };
    let mut sent: Vec<_> = (0..12).map(|_| Envelope::new(a, b, bulky())).collect();
    for e in &sent {
        sender.send(e).unwrap();
    }
    let rx = x.bind(b).unwrap();
    // b now listens; this one goes direct while the store still holds the rest
    let last = Envelope::new(a, b, Body::Ping);
    sender.send(&last).unwrap();
    sent.push(last);
    let got: Vec<_> = (0..sent.len()).map(|_| rx.recv(Duration::from_secs(5)).unwrap()).collect();
    assert_eq!(got, sent);
}

fn deliver_all(config: DistConfig, plan: &[(usize, usize)]) -> Vec<Vec<u32>> {
    let server = common::relay();
    let x = exchange(&server, config);
    let senders: Vec<Arc<dyn ExchangeClient>> =
        (0..2).map(|_| x.connect_entity(Role::Client, None).unwrap()).collect();
    let receivers: Vec<Arc<dyn ExchangeClient>> =
        (0..2).map(|_| x.connect_entity(Role::Agent, None).unwrap()).collect();
    for (n, &(s, r)) in plan.iter().enumerate() {
        let e = Envelope::new(
            senders[s].id(),
            receivers[r].id(),
            Body::ActionRequest {
                action: "n".into(),
                payload: Payload::Inline((n as u32).to_be_bytes().to_vec()),
            },
        );
        senders[s].send(&e).unwrap();
    }
    receivers
        .iter()
        .enumerate()
        .map(|(r, rx)| {
            let want = plan.iter().filter(|p| p.1 == r).count();
            let mut got: Vec<u32> = (0..want)
                .map(|_| match rx.recv(WAIT).unwrap().body {
                    Body::ActionRequest { payload, .. } => {
                        u32::from_be_bytes(payload.into_inline().unwrap().try_into().unwrap())
                    }
                    other => panic!("unexpected {other:?}"),
                })
                .collect();
            assert_eq!(rx.recv(Duration::from_millis(20)), Err(ExchangeError::Timeout));
            got.sort();
            got
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    // Routing changes the path, never what gets delivered.
    #[test]
    fn hybrid_and_relay_deliver_the_same(plan in proptest::collection::vec((0..2usize, 0..2usize), 0..60)) {
        let direct = deliver_all(DistConfig::default(), &plan);
        let relayed = deliver_all(DistConfig::relay_only(), &plan);
        prop_assert_eq!(direct, relayed);
    }
}
