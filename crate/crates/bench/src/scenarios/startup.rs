//! Warm start: time from submitting the first agent to a ping answered by
//! every agent, with the exchange and manager already running.

use std::time::{Duration, Instant};

use agentry::{builtin, Handle};

use super::ping_all;
use crate::record::ms;
use crate::{BenchConfig, BenchResult, Deployment, DeploySpec, Report};

pub fn run(c: &BenchConfig) -> BenchResult<Report> {
    let d = Deployment::start(DeploySpec::for_mode(c.mode).latency(c.inject_latency))?;
    let m = &d.manager;
    let warm = m.launch(builtin::noop(None))?;
    warm.ping()?;
    m.shutdown(warm.target(), true)?;

    let mut report = Report::default();
    for &n in &c.agents {
        let mut samples = Vec::with_capacity(c.repetitions);
        for _ in 0..c.repetitions {
            let t0 = Instant::now();
            let handles = (0..n)
                .map(|_| m.launch(builtin::noop(None)))
                .collect::<Result<Vec<Handle>, _>>()?;
            ping_all(&handles)?;
            samples.push(ms(t0.elapsed()));
            for h in &handles {
                m.shutdown(h.target(), false)?;
            }
            for h in &handles {
                if let Some(i) = m.instance(h.target()) {
                    i.wait_terminal(Duration::from_secs(10));
                }
            }
        }
        let params = c.params(&[("n", n.to_string())]);
        let median = report.summary("startup", &params, "warm_start", "ms", &samples);
        let bound = match n {
            1 => Some(10.0),
            64 => Some(2000.0),
            _ => None,
        };
        if let Some(b) = bound {
            report.check(
                format!("warm start of {n} agent(s) under {b} ms"),
                median < b,
                format!("median {median:.2} ms over {} runs", samples.len()),
            );
        }
    }
    Ok(report)
}
