//! Manager lifecycle, in-process and as supervised child processes.

mod common;

use std::sync::Arc;
use std::time::Duration;

use agentry::exchange::{DistConfig, DistExchange, Exchange, LocalExchange};
use agentry::launch::{
    AgentBlueprint, AgentStatus, LaunchError, Manager, RestartPolicy, SubprocessConfig,
    SubprocessLauncher,
};
use agentry::{builtin, ErrorKind, Handle, Payload};
use agentry_relay::RelayServer;

const AGENT_BIN: &str = env!("CARGO_BIN_EXE_agentry-agent");
const LONG: Duration = Duration::from_secs(20);

fn square(h: &Handle, x: i64) -> i64 {
    let out = h.call_bytes("square", x.to_be_bytes().to_vec()).unwrap();
    i64::from_be_bytes(out.try_into().unwrap())
}

fn local_manager() -> Manager {
    Manager::new(Arc::new(LocalExchange::new()), builtin::registry()).unwrap()
}

#[test]
fn launch_and_invoke() {
    let m = local_manager();
    let h = m.launch(builtin::example()).unwrap();
    assert_eq!(square(&h, 2), 4);
    let r = m.launch(AgentBlueprint::registered("Example", "")).unwrap();
    assert_eq!(square(&r, -7), 49);
    assert_eq!(m.launcher_of(h.target()).as_deref(), Some("local"));
    assert_eq!(m.agents().len(), 2);
}

#[test]
fn many_agents_answer_pings() {
    let m = local_manager();
    let handles: Vec<_> = (0..64).map(|_| m.launch(builtin::noop(None)).unwrap()).collect();
    for h in &handles {
        h.ping().unwrap();
    }
    m.close();
    for h in &handles {
        assert!(m.status(h.target()).unwrap().is_terminal());
    }
}

#[test]
fn unknown_names_are_errors() {
    let m = local_manager();
    assert!(matches!(
        m.launch_with(builtin::example(), "cluster"),
        Err(LaunchError::UnknownLauncher(_))
    ));
    assert!(matches!(
        m.launch(AgentBlueprint::registered("Nope", "")),
        Err(LaunchError::UnknownBehavior(_))
    ));
    let ghost = agentry::EntityId::random(agentry::Role::Agent);
    assert!(matches!(m.shutdown(ghost, true), Err(LaunchError::UnknownAgent(_))));
}

#[test]
fn blocking_shutdown_closes_mailbox() {
    let m = local_manager();
    let h = m.launch(builtin::example()).unwrap();
    m.shutdown(h.target(), true).unwrap();
    assert!(m.status(h.target()).unwrap().is_terminal());
    let err = h.with_timeout(Duration::from_secs(2)).ping().unwrap_err();
    assert_eq!(err.kind, ErrorKind::MailboxClosed);
}

#[test]
fn close_stops_everything() {
    let m = local_manager();
    let ids: Vec<_> = (0..10).map(|_| m.launch(builtin::sleeper(1)).unwrap().target()).collect();
    m.close();
    m.close();
    for id in ids {
        assert!(matches!(m.status(id), Some(AgentStatus::Stopped(_))));
    }
}

#[test]
fn relaunch_after_pause() {
    let m = local_manager();
    let h = m.launch(builtin::counter()).unwrap();
    h.call_bytes("incr", vec![]).unwrap();
    m.shutdown_with(h.target(), false, true).unwrap();
    assert!(m.status(h.target()).unwrap().is_terminal());
    // queued while nobody runs the mailbox
    let pending = h.invoke("incr", Payload::empty());
    assert!(m.relaunch(h.target(), builtin::example(), "local").is_err());
    m.relaunch(h.target(), builtin::counter(), "local").unwrap();
    let out = pending.wait().unwrap().into_inline().unwrap();
    assert_eq!(u64::from_be_bytes(out.try_into().unwrap()), 1);
    assert!(matches!(m.status(h.target()), Some(AgentStatus::Running)));
}

// fields drop in order: children stop before the store goes away
struct Cluster {
    manager: Manager,
    _state: tempfile::TempDir,
    _server: RelayServer,
}

fn cluster(max_restarts: u32) -> Cluster {
    let server = common::relay();
    let state = tempfile::tempdir().unwrap();
    let exchange: Arc<dyn Exchange> =
        Arc::new(DistExchange::connect(server.addr(), DistConfig::default()).unwrap());
    let manager = Manager::new(exchange.clone(), builtin::registry()).unwrap();
    let mut config = SubprocessConfig::new(AGENT_BIN, server.addr().to_string());
    config.state_root = Some(state.path().to_path_buf());
    config.restart = RestartPolicy {
        max_restarts,
        initial_backoff: Duration::from_millis(50),
        max_backoff: Duration::from_millis(200),
    };
    manager.add_launcher("proc", Arc::new(SubprocessLauncher::new(config, exchange)));
    manager.set_default_launcher("proc").unwrap();
    Cluster {
        manager,
        _state: state,
        _server: server,
    }
}

fn kill_and_wait_restart(m: &Manager, h: &Handle, expected: u32) {
    let inst = m.instance(h.target()).unwrap();
    assert!(inst.kill().unwrap());
    assert!(common::eventually(LONG, || inst.restarts() >= expected));
}

#[test]
fn subprocess_rejects_instances() {
    let c = cluster(0);
    assert!(matches!(
        c.manager.launch(builtin::example()),
        Err(LaunchError::NeedsRegistered(_))
    ));
}

#[test]
fn crashed_child_is_restarted() {
    let c = cluster(3);
    let m = &c.manager;
    let h = m.launch(AgentBlueprint::registered("Example", "")).unwrap().with_timeout(LONG);
    assert_eq!(square(&h, 3), 9);
    let inst = m.instance(h.target()).unwrap();
    assert!(inst.pid().is_some());
    assert!(inst.kill().unwrap());
    inst.wait_for(LONG, |s| matches!(s, AgentStatus::Restarting { .. })).unwrap();
    // sent while the child is down; the restarted child picks it up
    let pending = h.invoke("square", Payload::Inline(5i64.to_be_bytes().to_vec()));
    let out = pending.wait().unwrap().into_inline().unwrap();
    assert_eq!(i64::from_be_bytes(out.try_into().unwrap()), 25);
    assert_eq!(inst.restarts(), 1);
    assert!(matches!(inst.status(), AgentStatus::Running));
}

#[test]
fn exhausted_restarts_fail_the_agent() {
    let c = cluster(3);
    let m = &c.manager;
    let h = m.launch(AgentBlueprint::registered("Example", "")).unwrap().with_timeout(LONG);
    for i in 1..=3 {
        h.ping().unwrap();
        kill_and_wait_restart(m, &h, i);
    }
    h.ping().unwrap();
    let inst = m.instance(h.target()).unwrap();
    assert!(inst.kill().unwrap());
    let last = inst.wait_terminal(LONG).unwrap();
    assert!(matches!(last, AgentStatus::Failed(_)), "{last:?}");
    assert_eq!(inst.restarts(), 3);
    let err = h.with_timeout(Duration::from_secs(5)).ping().unwrap_err();
    assert_eq!(err.kind, ErrorKind::MailboxClosed);
}

#[test]
fn clean_exit_is_not_restarted() {
    let c = cluster(3);
    let m = &c.manager;
    let h = m.launch(AgentBlueprint::registered("Example", "")).unwrap().with_timeout(LONG);
    h.ping().unwrap();
    h.shutdown(true, true).unwrap();
    let inst = m.instance(h.target()).unwrap();
    let last = inst.wait_terminal(LONG).unwrap();
    assert!(matches!(last, AgentStatus::Stopped(_)), "{last:?}");
    std::thread::sleep(Duration::from_millis(300));
    assert_eq!(inst.restarts(), 0);
}

#[test]
fn checkpoint_survives_a_crash() {
    let c = cluster(3);
    let m = &c.manager;
    let h = m.launch(AgentBlueprint::registered("Counter", "")).unwrap().with_timeout(LONG);
    for _ in 0..3 {
        h.call_bytes("incr", vec![]).unwrap();
    }
    kill_and_wait_restart(m, &h, 1);
    let out = h.call_bytes("get", vec![]).unwrap();
    assert_eq!(u64::from_be_bytes(out.try_into().unwrap()), 3);
}

#[test]
fn manager_close_stops_children() {
    let c = cluster(3);
    let m = &c.manager;
    let hs: Vec<_> = (0..3)
        .map(|_| m.launch(AgentBlueprint::registered("Noop", "")).unwrap().with_timeout(LONG))
        .collect();
    for h in &hs {
        h.ping().unwrap();
    }
    m.close();
    for h in &hs {
        let inst = m.instance(h.target()).unwrap();
        assert!(inst.status().is_terminal());
        assert_eq!(inst.pid(), None);
    }
}
