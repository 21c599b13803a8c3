//! Round trip of a no-op action against an agent in another process, per
//! payload size.

use std::time::Instant;

use agentry::launch::AgentBlueprint;
use agentry::{builtin, Payload};

use crate::deploy::PROC;
use crate::record::us;
use crate::stats::percentile;
use crate::{BenchConfig, BenchResult, Deployment, DeploySpec, Mode, Report};

const WARMUP: usize = 50;

pub fn run(c: &BenchConfig) -> BenchResult<Report> {
    let remote = c.mode != Mode::Local;
    let program = if remote { Some(super::program(c)?) } else { None };
    let d = Deployment::start(DeploySpec::for_mode(c.mode).latency(c.inject_latency).program(program))?;
    let h = if remote {
        d.manager.launch_with(AgentBlueprint::registered("Noop", ""), PROC)?
    } else {
        d.manager.launch(builtin::noop(None))?
    };
    for _ in 0..WARMUP {
        h.call("noop", Payload::empty())?;
    }

    let mut report = Report::default();
    let mut medians = Vec::new();
    for &size in &c.sizes {
        let body = vec![0x5a; size];
        let mut samples = Vec::with_capacity(c.trials);
        for _ in 0..c.trials {
            let p = Payload::Inline(body.clone());
            let t0 = Instant::now();
            h.call("noop", p)?;
            samples.push(us(t0.elapsed()));
        }
        let params = c.params(&[("size", size.to_string())]);
        let median = report.summary("latency", &params, "rtt", "us", &samples);
        report.record("latency", &params, "rtt.p95", percentile(&samples, 95.0), "us");
        if c.mode == Mode::DistDirect && size == 10 * 1024 && c.inject_latency.is_zero() {
            report.check(
                "direct 10 KiB no-op median round trip under 2 ms",
                median < 2000.0,
                format!("median {:.0} us over {} trials", median, samples.len()),
            );
        }
        let l = us(c.inject_latency);
        if c.mode == Mode::DistRelay && l > 0.0 && size <= 1024 {
            report.check(
                format!("relayed {size} B no-op costs about two store round trips"),
                (2.0 * l..2.5 * l).contains(&median),
                format!("median {:.1} ms against {:.0} ms of injected latency", median / 1e3, l / 1e3),
            );
        }
        medians.push(median);
    }
    let monotone = medians.windows(2).all(|w| w[1] >= w[0]);
    report.record("latency", &c.params(&[]), "monotone_in_size", monotone as u8 as f64, "bool");
    Ok(report)
}
