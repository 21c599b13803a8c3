use std::thread;
use std::time::{Duration, Instant};

use agentry_core::{BehaviorSpec, EntityId, Role};
use agentry_relay::protocol::encode_request;
use agentry_relay::{ClientError, Located, RelayClient, RelayConfig, RelayServer, Request};

fn server() -> RelayServer {
    RelayServer::start(RelayConfig::default()).unwrap()
}

fn spec(name: &str, parents: &[&str]) -> BehaviorSpec {
    BehaviorSpec::new(name, parents.iter().copied(), ["run"], Vec::<String>::new(), None).unwrap()
}

#[test]
fn register_locate_advertise() {
    let s = server();
    let c = RelayClient::connect(s.addr()).unwrap();
    let a = EntityId::random(Role::Agent);
    c.register(a, None).unwrap();
    assert!(matches!(c.register(a, None), Err(ClientError::AlreadyExists(_))));
    assert_eq!(c.locate(a).unwrap(), Located::Unadvertised);
    c.advertise(a, "127.0.0.1:1").unwrap();
    assert_eq!(c.locate(a).unwrap(), Located::Endpoint("127.0.0.1:1".into()));
    c.advertise(a, "127.0.0.1:2").unwrap();
    assert_eq!(c.locate(a).unwrap(), Located::Endpoint("127.0.0.1:2".into()));
    let ghost = EntityId::random(Role::Agent);
    assert!(matches!(c.advertise(ghost, "x:1"), Err(ClientError::UnknownEntity(_))));
    c.close(a).unwrap();
    assert_eq!(c.locate(a).unwrap(), Located::Closed);
}

#[test]
fn mailbox_fifo_and_closed() {
    let s = server();
    let c = RelayClient::connect(s.addr()).unwrap();
    let a = EntityId::random(Role::Client);
    c.register(a, None).unwrap();
    assert!(c.poll_msgs(a, 10, Duration::ZERO).unwrap().is_empty());
    for i in 0..100u32 {
        c.put_msg(a, i.to_be_bytes().to_vec()).unwrap();
    }
    assert_eq!(c.poll_msgs(a, 1, Duration::ZERO).unwrap(), vec![0u32.to_be_bytes().to_vec()]);
    assert_eq!(c.poll_msgs(a, 1, Duration::ZERO).unwrap(), vec![1u32.to_be_bytes().to_vec()]);
    let rest = c.poll_msgs(a, 1000, Duration::ZERO).unwrap();
    let expect: Vec<Vec<u8>> = (2..100u32).map(|i| i.to_be_bytes().to_vec()).collect();
    assert_eq!(rest, expect);

    c.put_msg(a, b"last".to_vec()).unwrap();
    c.close(a).unwrap();
    c.close(a).unwrap();
    assert!(matches!(c.put_msg(a, b"x".to_vec()), Err(ClientError::Closed(_))));
    assert_eq!(c.poll_msgs(a, 10, Duration::ZERO).unwrap(), vec![b"last".to_vec()]);
    assert!(matches!(c.poll_msgs(a, 10, Duration::ZERO), Err(ClientError::Closed(_))));
}

#[test]
fn requeue_goes_to_head() {
    let s = server();
    let c = RelayClient::connect(s.addr()).unwrap();
    let a = EntityId::random(Role::Agent);
    c.register(a, None).unwrap();
    c.put_msg(a, vec![3]).unwrap();
    c.requeue(a, vec![vec![1], vec![2]]).unwrap();
    assert_eq!(c.poll_msgs(a, 10, Duration::ZERO).unwrap(), vec![vec![1], vec![2], vec![3]]);
}

#[test]
fn long_poll_returns_on_arrival() {
    let s = server();
    let c = RelayClient::connect(s.addr()).unwrap();
    let a = EntityId::random(Role::Agent);
    c.register(a, None).unwrap();
    let addr = s.addr();
    let writer = thread::spawn(move || {
        thread::sleep(Duration::from_millis(200));
        RelayClient::connect(addr).unwrap().put_msg(a, b"hi".to_vec()).unwrap();
    });
    let t0 = Instant::now();
    let got = c.poll_msgs(a, 10, Duration::from_secs(5)).unwrap();
    let waited = t0.elapsed();
    writer.join().unwrap();
    assert_eq!(got, vec![b"hi".to_vec()]);
    assert!(waited >= Duration::from_millis(150), "{waited:?}");
    assert!(waited < Duration::from_secs(2), "{waited:?}");
}

#[test]
fn abandoned_poll_keeps_messages() {
    let s = server();
    let c = RelayClient::connect(s.addr()).unwrap();
    let a = EntityId::random(Role::Agent);
    c.register(a, None).unwrap();
    let mut raw = std::net::TcpStream::connect(s.addr()).unwrap();
    let req = Request::PollMsgs { entity: a, max: 10, wait_ms: 5000 };
    agentry_core::wire::write_frame(&mut raw, &encode_request(&req).unwrap()).unwrap();
    thread::sleep(Duration::from_millis(100));
    drop(raw);
    thread::sleep(Duration::from_millis(100));
    c.put_msg(a, b"kept".to_vec()).unwrap();
    thread::sleep(Duration::from_millis(100));
    assert_eq!(c.poll_msgs(a, 10, Duration::ZERO).unwrap(), vec![b"kept".to_vec()]);
}

#[test]
fn release_ends_a_long_poll_without_taking_messages() {
    let s = server();
    let c = RelayClient::connect(s.addr()).unwrap();
    let a = EntityId::random(Role::Agent);
    c.register(a, None).unwrap();
    let addr = s.addr();
    let releaser = thread::spawn(move || {
        thread::sleep(Duration::from_millis(100));
        RelayClient::connect(addr).unwrap().release(a).unwrap();
    });
    let t0 = Instant::now();
    assert!(c.poll_msgs(a, 10, Duration::from_secs(5)).unwrap().is_empty());
    assert!(t0.elapsed() < Duration::from_secs(2));
    releaser.join().unwrap();
    // a release only affects polls already waiting
    c.put_msg(a, b"m".to_vec()).unwrap();
    assert_eq!(c.poll_msgs(a, 10, Duration::from_secs(1)).unwrap(), vec![b"m".to_vec()]);
}

#[test]
fn long_poll_times_out_empty() {
    let s = server();
    let c = RelayClient::connect(s.addr()).unwrap();
    let a = EntityId::random(Role::Agent);
    c.register(a, None).unwrap();
    let t0 = Instant::now();
    assert!(c.poll_msgs(a, 10, Duration::from_millis(300)).unwrap().is_empty());
    assert!(t0.elapsed() >= Duration::from_millis(290));
}

#[test]
fn long_poll_wakes_on_close() {
    let s = server();
    let c = RelayClient::connect(s.addr()).unwrap();
    let a = EntityId::random(Role::Agent);
    c.register(a, None).unwrap();
    let addr = s.addr();
    let closer = thread::spawn(move || {
        thread::sleep(Duration::from_millis(100));
        RelayClient::connect(addr).unwrap().close(a).unwrap();
    });
    let t0 = Instant::now();
    assert!(matches!(c.poll_msgs(a, 1, Duration::from_secs(5)), Err(ClientError::Closed(_))));
    assert!(t0.elapsed() < Duration::from_secs(2));
    closer.join().unwrap();
}

#[test]
fn discovery_follows_ancestry() {
    let s = server();
    let c = RelayClient::connect(s.addr()).unwrap();
    let open = EntityId::random(Role::Agent);
    let plain = EntityId::random(Role::Agent);
    c.register(open, Some(spec("OpenProteinFolder", &["ProteinFolder"]))).unwrap();
    c.register(plain, Some(spec("ProteinFolder", &[]))).unwrap();
    let mut both = vec![open, plain];
    both.sort();
    assert_eq!(c.discover("ProteinFolder").unwrap(), both);
    assert_eq!(c.discover("OpenProteinFolder").unwrap(), vec![open]);
    assert!(c.discover("Nothing").unwrap().is_empty());
}

#[test]
fn objects_round_trip_and_expire() {
    let s = server();
    let c = RelayClient::connect(s.addr()).unwrap();
    c.obj_put("k", vec![1, 2, 3], None).unwrap();
    assert_eq!(c.obj_get("k").unwrap(), vec![1, 2, 3]);
    c.obj_del("k").unwrap();
    assert!(matches!(c.obj_get("k"), Err(ClientError::NotFound(_))));
    c.obj_put("t", vec![9], Some(Duration::from_millis(50))).unwrap();
    thread::sleep(Duration::from_millis(100));
    assert!(matches!(c.obj_get("t"), Err(ClientError::NotFound(_))));
    let big = vec![0xab; 6 << 20];
    c.obj_put("big", big.clone(), None).unwrap();
    assert_eq!(c.obj_get("big").unwrap(), big);
}

#[test]
fn restart_keeps_registry_and_pending() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RelayConfig {
        data_dir: Some(dir.path().to_path_buf()),
        ..Default::default()
    };
    let a = EntityId::random(Role::Agent);
    let gone = EntityId::random(Role::Agent);
    {
        let s = RelayServer::start(cfg.clone()).unwrap();
        let c = RelayClient::connect(s.addr()).unwrap();
        c.register(a, Some(spec("Worker", &[]))).unwrap();
        c.register(gone, None).unwrap();
        c.close(gone).unwrap();
        c.advertise(a, "127.0.0.1:9").unwrap();
        c.put_msg(a, b"one".to_vec()).unwrap();
        c.put_msg(a, b"two".to_vec()).unwrap();
        c.poll_msgs(a, 1, Duration::ZERO).unwrap();
        s.stop();
    }
    let s = RelayServer::start(cfg).unwrap();
    let c = RelayClient::connect(s.addr()).unwrap();
    assert_eq!(c.locate(a).unwrap(), Located::Unadvertised);
    assert_eq!(c.locate(gone).unwrap(), Located::Closed);
    assert_eq!(c.discover("Worker").unwrap(), vec![a]);
    assert_eq!(c.poll_msgs(a, 10, Duration::ZERO).unwrap(), vec![b"two".to_vec()]);
}

#[test]
fn injected_latency_and_windows() {
    let s = RelayServer::start(RelayConfig {
        inject_latency: Duration::from_millis(30),
        inject_window: 1 << 20,
        ..Default::default()
    })
    .unwrap();
    let c = RelayClient::connect(s.addr()).unwrap();
    let t0 = Instant::now();
    c.stats().unwrap();
    let small = t0.elapsed();
    assert!(small >= Duration::from_millis(30) && small < Duration::from_millis(200), "{small:?}");
    let t0 = Instant::now();
    c.obj_put("x", vec![0; 3 << 20], None).unwrap();
    let big = t0.elapsed();
    // 3 MiB + header spans four 1 MiB windows: three extra round trips
    assert!(big >= Duration::from_millis(120), "{big:?}");
}

#[test]
fn stats_count_operations() {
    let s = server();
    let c = RelayClient::connect(s.addr()).unwrap();
    let a = EntityId::random(Role::Agent);
    let before = c.stats().unwrap();
    c.register(a, None).unwrap();
    c.put_msg(a, vec![0; 10]).unwrap();
    let d = c.stats().unwrap().since(&before);
    assert_eq!(d.register, 1);
    assert_eq!(d.put_msg, 1);
    assert_eq!(d.put_msg_bytes, 10);
    assert_eq!(s.stats().put_msg, 1);
}
