//! Supervision under load: an agent in a child process is killed while a
//! submitter keeps invoking it. It must come back after the policy backoff,
//! an invoke sent while it is down must resolve, and once its restarts are
//! used up its mailbox must be closed.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use agentry::launch::{AgentBlueprint, AgentStatus, RestartPolicy};
use agentry::{ErrorKind, Payload};

use crate::deploy::PROC;
use crate::record::ms;
use crate::{BenchConfig, BenchError, BenchResult, Deployment, DeploySpec, Report};

const LONG: Duration = Duration::from_secs(30);
/// Time allowed beyond the backoff for a child to exec and reconnect.
const RESTART_SLACK: Duration = Duration::from_secs(3);

pub fn run(c: &BenchConfig) -> BenchResult<Report> {
    let policy = RestartPolicy {
        max_restarts: c.max_restarts,
        ..RestartPolicy::default()
    };
    let spec = DeploySpec {
        restart: policy,
        ..DeploySpec::for_mode(c.mode)
    }
    .latency(c.inject_latency)
    .program(Some(super::program(c)?));
    let d = Deployment::start(spec)?;
    let h = d
        .manager
        .launch_with(AgentBlueprint::registered("Noop", ""), PROC)?
        .with_timeout(LONG);
    h.ping()?;
    let inst = d.instance(&h)?;

    let stop = Arc::new(AtomicBool::new(false));
    let ok = Arc::new(AtomicU64::new(0));
    let failed = Arc::new(AtomicU64::new(0));
    let load = {
        let (h, stop, ok, failed) = (h.clone().with_timeout(Duration::from_secs(5)), stop.clone(), ok.clone(), failed.clone());
        thread::spawn(move || {
            while !stop.load(Ordering::Relaxed) {
                match h.call("noop", Payload::empty()) {
                    Ok(_) => ok.fetch_add(1, Ordering::Relaxed),
                    Err(_) => failed.fetch_add(1, Ordering::Relaxed),
                };
            }
        })
    };
    thread::sleep(Duration::from_millis(300));

    let params = c.params(&[("max_restarts", c.max_restarts.to_string())]);
    let mut report = Report::default();
    let mut restart_times = Vec::new();
    let mut pending_times = Vec::new();
    let mut within_backoff = true;
    for attempt in 1..=c.max_restarts {
        let killed = Instant::now();
        inst.kill()?;
        inst.wait_for(LONG, |s| matches!(s, AgentStatus::Restarting { .. }))
            .ok_or_else(|| BenchError::Scenario("agent death went unnoticed".into()))?;
        let pending = h.invoke("noop", Payload::empty());
        inst.wait_for(LONG, |s| matches!(s, AgentStatus::Running) && inst.restarts() == attempt)
            .ok_or_else(|| BenchError::Scenario(format!("restart {attempt} did not happen")))?;
        let restarted = killed.elapsed();
        pending.wait()?;
        pending_times.push(ms(killed.elapsed()));
        restart_times.push(ms(restarted));
        let backoff = policy.backoff(attempt);
        within_backoff &= restarted >= backoff && restarted <= backoff + RESTART_SLACK;
    }
    report.summary("supervision", &params, "restart_time", "ms", &restart_times);
    report.summary("supervision", &params, "pending_invoke_time", "ms", &pending_times);
    report.check(
        "killed agent restarts after its policy backoff",
        within_backoff,
        format!("restart times {restart_times:.0?} ms"),
    );
    report.check(
        "invokes sent while the agent was down resolve",
        pending_times.len() == c.max_restarts as usize,
        format!("{} of {} resolved", pending_times.len(), c.max_restarts),
    );

    inst.kill()?;
    let last = inst.wait_terminal(LONG);
    stop.store(true, Ordering::Relaxed);
    let _ = load.join();
    let after = h.with_timeout(Duration::from_secs(5)).ping();
    let closed = matches!(&after, Err(e) if e.kind == ErrorKind::MailboxClosed);
    report.record("supervision", &params, "load_ok", ok.load(Ordering::Relaxed) as f64, "count");
    report.record("supervision", &params, "load_failed", failed.load(Ordering::Relaxed) as f64, "count");
    report.check(
        "restarts beyond the limit close the mailbox",
        matches!(last, Some(AgentStatus::Failed(_))) && closed,
        format!("status {last:?}, ping after: {after:?}"),
    );
    Ok(report)
}
