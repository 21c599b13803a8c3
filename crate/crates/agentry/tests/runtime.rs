//! Agent lifecycle on the local exchange.

mod common;

use std::sync::atomic::{AtomicU32, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use agentry::behavior::LoopKind;
use agentry::exchange::{Exchange, LocalExchange};
use agentry::handle::MailboxRouter;
use agentry::runtime::{AgentControl, AgentRuntime, LoopErrorPolicy, RunStatus, RuntimeConfig};
use agentry::trace::{TraceEvent, TraceSink};
use agentry::{builtin, AgentBehavior, Behavior, ErrorKind, Handle, Payload, Role};
use parking_lot::Mutex;

struct Running {
    handle: Handle,
    control: Arc<AgentControl>,
    run: JoinHandle<RunStatus>,
    exchange: LocalExchange,
}

fn start_on(exchange: &LocalExchange, behavior: AgentBehavior, config: RuntimeConfig) -> Running {
    let id = exchange.register(Role::Agent, Some(behavior.spec().clone())).unwrap();
    let rt = AgentRuntime::new(behavior, exchange.bind(id).unwrap(), config);
    let control = rt.control();
    let run = thread::spawn(move || rt.run());
    let router = MailboxRouter::open(exchange).unwrap();
    Running {
        handle: router.handle(id).with_timeout(Duration::from_secs(10)),
        control,
        run,
        exchange: exchange.clone(),
    }
}

fn start(behavior: AgentBehavior, config: RuntimeConfig) -> Running {
    start_on(&LocalExchange::new(), behavior, config)
}

fn i64_bytes(x: i64) -> Vec<u8> {
    x.to_be_bytes().to_vec()
}

#[test]
fn actor_serves_actions_until_shutdown() {
    let a = start(builtin::example(), RuntimeConfig::default());
    for x in [2i64, -3, 0] {
        assert_eq!(a.handle.call_bytes("square", i64_bytes(x)).unwrap(), i64_bytes(x * x));
    }
    a.handle.shutdown(true, true).unwrap();
    assert_eq!(a.run.join().unwrap(), RunStatus::CleanShutdown);
    assert_eq!(a.handle.ping().unwrap_err().kind, ErrorKind::MailboxClosed);
}

#[test]
fn unknown_action_and_raising_action() {
    let b = Behavior::new("Raiser", ())
        .action("boom", |_, _| Err("kaboom".into()))
        .action("panic", |_, _| panic!("oops"))
        .build()
        .unwrap();
    let a = start(b, RuntimeConfig::default());
    let e = a.handle.call("nope", Payload::empty()).unwrap_err();
    assert_eq!(e.kind, ErrorKind::UnknownAction);
    let e = a.handle.call("boom", Payload::empty()).unwrap_err();
    assert_eq!(e.kind, ErrorKind::ActionRaised);
    assert!(e.detail.contains("kaboom"));
    let e = a.handle.call("panic", Payload::empty()).unwrap_err();
    assert_eq!(e.kind, ErrorKind::ActionRaised);
    // the agent survives both
    a.handle.ping().unwrap();
    a.handle.shutdown(true, true).unwrap();
    assert_eq!(a.run.join().unwrap(), RunStatus::CleanShutdown);
}

#[test]
fn failing_loop_shuts_agent_down_by_default() {
    let b = Behavior::new("Fragile", ())
        .control_loop("bad", LoopKind::Plain, |_| Err("loop broke".into()))
        .build()
        .unwrap();
    let a = start(b, RuntimeConfig::default());
    let t0 = Instant::now();
    match a.run.join().unwrap() {
        RunStatus::LoopFailure(info) => assert!(info.detail.contains("loop broke")),
        other => panic!("unexpected {other:?}"),
    }
    assert!(t0.elapsed() < Duration::from_secs(5));
    // non-terminal: the mailbox stays open for a restart
    assert!(a.exchange.queued(&a.handle.target()).is_ok());
    a.handle.router().client().send(&agentry::Envelope::new(
        a.handle.router().id(),
        a.handle.target(),
        agentry::Body::Ping,
    ))
    .unwrap();
}

#[test]
fn suppressed_loop_errors_keep_agent_alive() {
    let hits = Arc::new(AtomicU32::new(0));
    let h = hits.clone();
    let b = Behavior::new("Stubborn", ())
        .control_loop("bad", LoopKind::Timer(Duration::from_millis(10)), move |_| {
            h.fetch_add(1, Ordering::SeqCst);
            Err("again".into())
        })
        .build()
        .unwrap();
    let a = start(
        b,
        RuntimeConfig {
            loop_error_policy: LoopErrorPolicy::SuppressAndContinue,
            ..RuntimeConfig::default()
        },
    );
    assert!(common::eventually(Duration::from_secs(5), || hits.load(Ordering::SeqCst) >= 5));
    a.handle.ping().unwrap();
    a.handle.shutdown(true, true).unwrap();
    assert_eq!(a.run.join().unwrap(), RunStatus::CleanShutdown);
}

#[test]
fn pool_of_one_serializes_actions() {
    let a = start(builtin::sleeper(1), RuntimeConfig::default());
    let ms = 1000u64.to_be_bytes().to_vec();
    let t0 = Instant::now();
    let f1 = a.handle.invoke("sleep", Payload::Inline(ms.clone()));
    let f2 = a.handle.invoke("sleep", Payload::Inline(ms));
    f1.wait().unwrap();
    let first = t0.elapsed();
    f2.wait().unwrap();
    let second = t0.elapsed();
    assert!(first >= Duration::from_millis(1000), "{first:?}");
    assert!(second - first >= Duration::from_millis(950), "{first:?} {second:?}");
    a.handle.shutdown(true, true).unwrap();
}

#[test]
fn pool_bounds_completion_time() {
    // 8 actions of 200 ms on 4 workers take two rounds
    let a = start(builtin::sleeper(4), RuntimeConfig::default());
    let ms = 200u64.to_be_bytes().to_vec();
    let t0 = Instant::now();
    let fs: Vec<_> = (0..8).map(|_| a.handle.invoke("sleep", Payload::Inline(ms.clone()))).collect();
    for f in fs {
        f.wait().unwrap();
    }
    let took = t0.elapsed();
    assert!(took >= Duration::from_millis(400), "{took:?}");
    assert!(took < Duration::from_millis(900), "{took:?}");
    a.handle.shutdown(true, true).unwrap();
}

#[test]
fn self_shutdown_after_three_iterations() {
    let b = Behavior::new("Quitter", 0u32)
        .control_loop("count", LoopKind::Timer(Duration::from_millis(5)), |ctx| {
            let n = ctx.with_state(|n| {
                *n += 1;
                *n
            });
            if n >= 3 {
                ctx.self_shutdown();
                ctx.self_shutdown();
            }
            Ok(())
        })
        .build()
        .unwrap();
    let a = start(b, RuntimeConfig::default());
    assert_eq!(a.run.join().unwrap(), RunStatus::CleanShutdown);
    assert!(a.control.is_shutting_down());
}

#[test]
fn self_shutdown_during_setup_skips_to_teardown() {
    let ran = Arc::new(AtomicU32::new(0));
    let r = ran.clone();
    let down = Arc::new(AtomicU32::new(0));
    let d = down.clone();
    let b = Behavior::new("Brief", ())
        .on_setup(|ctx| {
            ctx.self_shutdown();
            Ok(())
        })
        .control_loop("tick", LoopKind::Timer(Duration::from_millis(1)), move |_| {
            r.fetch_add(1, Ordering::SeqCst);
            Ok(())
        })
        .on_shutdown(move |_| {
            d.fetch_add(1, Ordering::SeqCst);
            Ok(())
        })
        .build()
        .unwrap();
    let a = start(b, RuntimeConfig::default());
    assert_eq!(a.run.join().unwrap(), RunStatus::CleanShutdown);
    assert_eq!(ran.load(Ordering::SeqCst), 0);
    assert_eq!(down.load(Ordering::SeqCst), 1);
}

#[test]
fn setup_failure_closes_mailbox() {
    let b = Behavior::new("Broken", ())
        .on_setup(|_| Err("no config".into()))
        .action("x", |_, p| Ok(p))
        .build()
        .unwrap();
    let a = start(b, RuntimeConfig::default());
    assert!(matches!(a.run.join().unwrap(), RunStatus::SetupFailure(_)));
    assert_eq!(a.handle.ping().unwrap_err().kind, ErrorKind::MailboxClosed);
}

#[test]
fn events_fire_once_per_call() {
    let hits = Arc::new(AtomicU32::new(0));
    let h = hits.clone();
    let b = Behavior::new("Reactive", ())
        .control_loop("on_data", LoopKind::Event("data".into()), move |_| {
            h.fetch_add(1, Ordering::SeqCst);
            Ok(())
        })
        .build()
        .unwrap();
    let a = start(b, RuntimeConfig::default());
    a.control.fire_event("data").unwrap();
    a.control.fire_event("data").unwrap();
    assert!(common::eventually(Duration::from_secs(2), || hits.load(Ordering::SeqCst) == 2));
    thread::sleep(Duration::from_millis(50));
    assert_eq!(hits.load(Ordering::SeqCst), 2);
    assert!(a.control.fire_event("other").is_err());
    a.handle.shutdown(true, true).unwrap();
    a.run.join().unwrap();
    a.control.fire_event("data").unwrap();
    thread::sleep(Duration::from_millis(20));
    assert_eq!(hits.load(Ordering::SeqCst), 2);
}

#[test]
fn timer_ticks_at_its_interval() {
    let hits = Arc::new(AtomicU32::new(0));
    let h = hits.clone();
    let b = Behavior::new("Ticker", ())
        .control_loop("tick", LoopKind::Timer(Duration::from_millis(100)), move |_| {
            h.fetch_add(1, Ordering::SeqCst);
            Ok(())
        })
        .build()
        .unwrap();
    let a = start(b, RuntimeConfig::default());
    thread::sleep(Duration::from_millis(1050));
    let n = hits.load(Ordering::SeqCst);
    assert!((9..=11).contains(&n), "{n} ticks");
    a.handle.shutdown(true, true).unwrap();
}

#[test]
fn setup_precedes_everything_and_shutdown_follows_loops() {
    let log = Arc::new(Mutex::new(Vec::<String>::new()));
    let (l1, l2, l3, l4) = (log.clone(), log.clone(), log.clone(), log.clone());
    let b = Behavior::new("Ordered", ())
        .on_setup(move |_| {
            thread::sleep(Duration::from_millis(100));
            l1.lock().push("setup".into());
            Ok(())
        })
        .control_loop("main", LoopKind::Plain, move |ctx| {
            l2.lock().push("loop".into());
            ctx.wait_shutdown(Duration::from_secs(30));
            thread::sleep(Duration::from_millis(50));
            l2.lock().push("loop-exit".into());
            Ok(())
        })
        .action("work", move |_, p| {
            l3.lock().push("action".into());
            Ok(p)
        })
        .on_shutdown(move |_| {
            l4.lock().push("shutdown".into());
            Ok(())
        })
        .build()
        .unwrap();
    let exchange = LocalExchange::new();
    let id = exchange.register(Role::Agent, Some(b.spec().clone())).unwrap();
    // the request is queued before the agent even starts
    let router = MailboxRouter::open(&exchange).unwrap();
    let f = router.handle(id).invoke("work", Payload::empty());
    let rt = AgentRuntime::new(b, exchange.bind(id).unwrap(), RuntimeConfig::default());
    let run = thread::spawn(move || rt.run());
    f.wait().unwrap();
    router.handle(id).shutdown(true, true).unwrap();
    run.join().unwrap();
    let log = log.lock().clone();
    assert_eq!(log[0], "setup");
    assert_eq!(log.last().unwrap(), "shutdown");
    let exit = log.iter().position(|s| s == "loop-exit").unwrap();
    assert_eq!(exit, log.len() - 2);
}

#[test]
fn per_sender_fifo() {
    let seen = Arc::new(Mutex::new(Vec::<u32>::new()));
    let s = seen.clone();
    let b = Behavior::new("Log", ())
        .action_bytes("push", move |_, args| {
            s.lock().push(u32::from_be_bytes(args.try_into()?));
            Ok(Vec::new())
        })
        .max_concurrency(1)
        .build()
        .unwrap();
    let a = start(b, RuntimeConfig::default());
    let fs: Vec<_> = (0..200u32)
        .map(|i| a.handle.invoke("push", Payload::Inline(i.to_be_bytes().to_vec())))
        .collect();
    for f in fs {
        f.wait().unwrap();
    }
    assert_eq!(*seen.lock(), (0..200).collect::<Vec<_>>());
    a.handle.shutdown(true, true).unwrap();
}

#[test]
fn state_is_shared_between_loops_and_actions() {
    let b = Behavior::new("Shared", 0u64)
        .control_loop("inc", LoopKind::Timer(Duration::from_millis(1)), |ctx| {
            ctx.with_state(|n| *n += 1);
            Ok(())
        })
        .action_bytes("read", |ctx, _| Ok(ctx.with_state(|n| *n).to_be_bytes().to_vec()))
        .build()
        .unwrap();
    let a = start(b, RuntimeConfig::default());
    thread::sleep(Duration::from_millis(100));
    let n = u64::from_be_bytes(a.handle.call_bytes("read", Vec::new()).unwrap().try_into().unwrap());
    assert!(n > 0);
    a.handle.shutdown(true, true).unwrap();
}

#[test]
fn non_terminal_shutdown_keeps_messages_for_the_next_run() {
    let exchange = LocalExchange::new();
    let a = start_on(&exchange, builtin::counter(), RuntimeConfig::default());
    let id = a.handle.target();
    a.handle.call_bytes("incr", Vec::new()).unwrap();
    a.handle.shutdown(false, true).unwrap();
    assert_eq!(a.run.join().unwrap(), RunStatus::CleanShutdown);
    // sent while nobody is listening
    let f = a.handle.invoke("get", Payload::empty());
    thread::sleep(Duration::from_millis(50));
    assert!(!f.is_done());
    let rt = AgentRuntime::new(builtin::counter(), exchange.bind(id).unwrap(), RuntimeConfig::default());
    let run = thread::spawn(move || rt.run());
    assert!(f.wait().is_ok());
    a.handle.shutdown(true, true).unwrap();
    run.join().unwrap();
}

#[test]
fn double_shutdown_is_harmless() {
    let a = start(builtin::noop(None), RuntimeConfig::default());
    a.handle.shutdown(true, true).unwrap();
    a.handle.shutdown(true, true).unwrap();
    a.handle.shutdown(true, false).unwrap();
    assert_eq!(a.run.join().unwrap(), RunStatus::CleanShutdown);
}

#[test]
fn loops_ignoring_shutdown_are_abandoned_after_budget() {
    let b = Behavior::new("Deaf", ())
        .control_loop("deaf", LoopKind::Plain, |_| {
            thread::sleep(Duration::from_secs(3));
            Ok(())
        })
        .build()
        .unwrap();
    let a = start(
        b,
        RuntimeConfig {
            join_budget: Duration::from_millis(200),
            ..RuntimeConfig::default()
        },
    );
    let t0 = Instant::now();
    a.handle.shutdown(true, true).unwrap();
    a.run.join().unwrap();
    assert!(t0.elapsed() < Duration::from_secs(2));
}

#[test]
fn trace_lines_are_parseable() {
    let (sink, lines) = TraceSink::memory();
    let count = Arc::new(AtomicUsize::new(0));
    let c = count.clone();
    let b = Behavior::new("Traced", ())
        .control_loop("once", LoopKind::Plain, move |_| {
            c.fetch_add(1, Ordering::SeqCst);
            Ok(())
        })
        .action("go", |_, p| Ok(p))
        .build()
        .unwrap();
    let a = start(
        b,
        RuntimeConfig {
            trace: sink,
            ..RuntimeConfig::default()
        },
    );
    a.handle.call("go", Payload::empty()).unwrap();
    a.handle.shutdown(true, true).unwrap();
    a.run.join().unwrap();
    let events: Vec<TraceEvent> = lines.lock().iter().map(|l| TraceEvent::parse(l).unwrap()).collect();
    let kinds: Vec<&str> = events.iter().map(|e| e.event.as_str()).collect();
    for k in ["setup", "loop-start", "loop-exit", "action-start", "action-finish", "shutdown"] {
        assert!(kinds.contains(&k), "missing {k} in {kinds:?}");
    }
    assert_eq!(kinds[0], "setup");
    assert_eq!(*kinds.last().unwrap(), "shutdown");
    assert!(events.iter().all(|e| e.agent == a.handle.target().to_string()));
}
