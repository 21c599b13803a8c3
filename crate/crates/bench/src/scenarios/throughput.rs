//! Throughput: one submitter spreads a bag of no-op actions round-robin over
//! a pool of workers. With `Multiplex::Compare` the same run is repeated
//! with one mailbox and listener per handle.

use std::time::Instant;

use agentry::{builtin, Handle, Payload};

use super::{ping_all, wait_all};
use crate::{BenchConfig, BenchResult, Deployment, DeploySpec, Mode, Multiplex, Report};

fn one_run(c: &BenchConfig, workers: usize, multiplex: bool) -> BenchResult<Vec<f64>> {
    let d = Deployment::start(DeploySpec::for_mode(c.mode).latency(c.inject_latency))?;
    let m = &d.manager;
    let mut handles = Vec::with_capacity(workers);
    for _ in 0..workers {
        let h = m.launch(builtin::noop(None))?;
        handles.push(if multiplex {
            h
        } else {
            Handle::dedicated(m.exchange().as_ref(), h.target())?
        });
    }
    ping_all(&handles)?;
    let mut rates = Vec::with_capacity(c.repetitions);
    for _ in 0..c.repetitions {
        let t0 = Instant::now();
        let futures = (0..c.actions)
            .map(|i| handles[i % workers].invoke("noop", Payload::empty()))
            .collect();
        wait_all(futures)?;
        rates.push(c.actions as f64 / t0.elapsed().as_secs_f64());
    }
    Ok(rates)
}

pub fn run(c: &BenchConfig) -> BenchResult<Report> {
    let mut report = Report::default();
    for &w in &c.agents {
        let mut medians = Vec::new();
        for mux in c.multiplex.variants() {
            let rates = one_run(c, w, mux)?;
            let params = c.params(&[("workers", w.to_string()), ("multiplex", mux.to_string())]);
            let median = report.summary("throughput", &params, "throughput", "actions/s", &rates);
            if mux && w == 8 && c.mode == Mode::Local {
                report.check(
                    "8 local workers sustain 1000 actions/s",
                    median >= 1000.0,
                    format!("median {median:.0} actions/s"),
                );
            }
            medians.push(median);
        }
        if c.multiplex == Multiplex::Compare {
            let gain = medians[0] / medians[1] - 1.0;
            report.record("throughput", &c.params(&[("workers", w.to_string())]), "multiplex_gain", gain, "ratio");
            report.check(
                format!("multiplexing {w} handles gains at least 10%"),
                gain >= 0.10,
                format!("{:+.1}% ({:.0} vs {:.0} actions/s)", gain * 100.0, medians[0], medians[1]),
            );
        }
    }
    Ok(report)
}
