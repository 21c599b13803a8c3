//! Scenario implementations. Every scenario reports median and MAD over its
//! samples and checks the bounds that apply to the parameters it ran with.

use std::time::{Duration, Instant};

use agentry::{ActionFuture, Handle, Payload};

use crate::{BenchConfig, BenchError, BenchResult, Report};

pub mod chain;
pub mod conversation;
pub mod latency;
pub mod memory;
pub mod pipeline;
pub mod startup;
pub mod supervision;
pub mod throughput;
pub mod weak_scaling;

pub fn run(config: &BenchConfig) -> BenchResult<Report> {
    config.validate()?;
    match config.scenario.as_str() {
        "startup" => startup::run(config),
        "weak-scaling" => weak_scaling::run(config),
        "latency" => latency::run(config),
        "throughput" => throughput::run(config),
        "chain" => chain::run(config),
        "conversation" => conversation::run(config),
        "memory" => memory::run(config),
        "pipeline" => pipeline::run(config),
        "supervision" => supervision::run(config),
        other => Err(BenchError::Config(format!("unknown scenario {other:?}"))),
    }
}

fn program(config: &BenchConfig) -> BenchResult<crate::AgentProgram> {
    config.program.clone().ok_or_else(|| {
        BenchError::Config(format!("{} runs agents in child processes and needs an agent program", config.scenario))
    })
}

fn wait_all(futures: Vec<ActionFuture>) -> BenchResult<Vec<Payload>> {
    futures.into_iter().map(|f| Ok(f.wait()?)).collect()
}

fn u64_of(p: &[u8]) -> BenchResult<u64> {
    let a: [u8; 8] = p
        .try_into()
        .map_err(|_| BenchError::Scenario(format!("expected a u64, got {} bytes", p.len())))?;
    Ok(u64::from_be_bytes(a))
}

fn ping_all(handles: &[Handle]) -> BenchResult<()> {
    for h in handles {
        h.ping()?;
    }
    Ok(())
}

/// Polls `f` every 20 ms until it returns true or `timeout` passes.
fn poll_until(timeout: Duration, mut f: impl FnMut() -> bool) -> bool {
    let deadline = Instant::now() + timeout;
    loop {
        if f() {
            return true;
        }
        if Instant::now() >= deadline {
            return false;
        }
        std::thread::sleep(Duration::from_millis(20));
    }
}
