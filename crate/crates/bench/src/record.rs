use std::path::Path;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::stats;

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub scenario: String,
    pub params: String,
    pub metric: String,
    pub value: f64,
    pub unit: String,
    /// Seconds since the Unix epoch.
    pub timestamp: f64,
}

impl BenchRecord {
    pub fn new(scenario: &str, params: &str, metric: &str, value: f64, unit: &str) -> Self {
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        BenchRecord {
            scenario: scenario.to_string(),
            params: params.to_string(),
            metric: metric.to_string(),
            value,
            unit: unit.to_string(),
            timestamp,
        }
    }
}

/// A bound a scenario checks against its own measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub records: Vec<BenchRecord>,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn record(&mut self, scenario: &str, params: &str, metric: &str, value: f64, unit: &str) {
        self.records.push(BenchRecord::new(scenario, params, metric, value, unit));
    }

    /// Adds `<metric>.median`, `<metric>.mad` and `<metric>.n`; returns the median.
    pub fn summary(&mut self, scenario: &str, params: &str, metric: &str, unit: &str, samples: &[f64]) -> f64 {
        let m = stats::median(samples);
        self.record(scenario, params, &format!("{metric}.median"), m, unit);
        self.record(scenario, params, &format!("{metric}.mad"), stats::mad(samples), unit);
        self.record(scenario, params, &format!("{metric}.n"), samples.len() as f64, "count");
        m
    }

    pub fn check(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn merge(&mut self, other: Report) {
        self.records.extend(other.records);
        self.checks.extend(other.checks);
    }

    /// Value of the first record whose params contain every `key=value`
    /// pair in `params`.
    pub fn value(&self, params: &[&str], metric: &str) -> Option<f64> {
        self.records
            .iter()
            .find(|r| {
                r.metric == metric && params.iter().all(|p| r.params.split(';').any(|kv| kv == *p))
            })
            .map(|r| r.value)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

pub fn us(d: Duration) -> f64 {
    d.as_secs_f64() * 1e6
}
