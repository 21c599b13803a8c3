//! Two agents exchanging messages back and forth: a talker calls its peer's
//! `echo` action `rounds` times.

use std::time::Duration;

use agentry::builtin::{self, talk_args};

use super::u64_of;
use crate::{BenchConfig, BenchError, BenchResult, Deployment, DeploySpec, Report};

pub fn run(c: &BenchConfig) -> BenchResult<Report> {
    if c.rounds == 0 {
        return Err(BenchError::Config("conversation needs at least one round".into()));
    }
    let d = Deployment::start(DeploySpec::for_mode(c.mode).latency(c.inject_latency))?;
    let talker = d.manager.launch(builtin::talker())?.with_timeout(Duration::from_secs(300));
    let peer = d.manager.launch(builtin::noop(None))?;
    talker.ping()?;
    peer.ping()?;

    let mut report = Report::default();
    for &size in &c.sizes {
        let rounds = u32::try_from(c.rounds).map_err(|_| BenchError::Config("too many rounds".into()))?;
        let size32 = u32::try_from(size).map_err(|_| BenchError::Config("message too large".into()))?;
        let mut total = Vec::with_capacity(c.repetitions);
        for _ in 0..c.repetitions {
            let ns = u64_of(&talker.call_bytes("talk", talk_args(peer.target(), rounds, size32))?)?;
            total.push(ns as f64 / 1e6);
        }
        let params = c.params(&[("rounds", c.rounds.to_string()), ("size", size.to_string())]);
        let median = report.summary("conversation", &params, "conversation_time", "ms", &total);
        // each round is one message each way
        report.record("conversation", &params, "one_way.median", median / (2 * c.rounds) as f64, "ms");
    }
    Ok(report)
}
