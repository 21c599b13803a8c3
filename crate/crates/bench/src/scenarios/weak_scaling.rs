//! Weak scaling: k agents, each running the same fixed number of sleep
//! actions one at a time. Completion time should not depend on k.

use std::time::Instant;

use agentry::{builtin, Handle, Payload};

use super::{ping_all, wait_all};
use crate::{BenchConfig, BenchResult, Deployment, DeploySpec, Report};

pub fn run(c: &BenchConfig) -> BenchResult<Report> {
    let d = Deployment::start(DeploySpec::for_mode(c.mode).latency(c.inject_latency))?;
    let m = &d.manager;
    let ideal = c.action_time.as_secs_f64() * c.actions as f64;
    let timeout = c.action_time * (2 * c.actions as u32) + std::time::Duration::from_secs(30);
    let arg = (c.action_time.as_millis() as u64).to_be_bytes().to_vec();

    let mut report = Report::default();
    let mut times = Vec::new();
    for &k in &c.agents {
        let handles = (0..k)
            .map(|_| m.launch(builtin::sleeper(1)).map(|h| h.with_timeout(timeout)))
            .collect::<Result<Vec<Handle>, _>>()?;
        ping_all(&handles)?;
        let t0 = Instant::now();
        let mut futures = Vec::with_capacity(k * c.actions);
        for _ in 0..c.actions {
            for h in &handles {
                futures.push(h.invoke("sleep", Payload::Inline(arg.clone())));
            }
        }
        wait_all(futures)?;
        let secs = t0.elapsed().as_secs_f64();
        for h in &handles {
            m.shutdown(h.target(), false)?;
        }
        let params = c.params(&[("k", k.to_string()), ("actions", c.actions.to_string())]);
        report.record("weak-scaling", &params, "completion_time", secs, "s");
        report.record("weak-scaling", &params, "efficiency", ideal / secs, "ratio");
        report.check(
            format!("k={k} completes within [{ideal:.1}, {:.1}] s", ideal * 1.1),
            secs >= ideal && secs <= ideal * 1.1,
            format!("{secs:.2} s"),
        );
        times.push(secs);
    }
    if times.len() > 1 {
        let max = times.iter().copied().fold(f64::MIN, f64::max);
        let min = times.iter().copied().fold(f64::MAX, f64::min);
        let ratio = max / min;
        report.record("weak-scaling", &c.params(&[]), "max_over_min", ratio, "ratio");
        report.check("completion time flat across k (max/min < 1.15)", ratio < 1.15, format!("{ratio:.3}"));
    }
    Ok(report)
}
