//! Result envelope shared by all commands.

use std::time::Instant;

use clap::ValueEnum;
use covfk_core::geometry::Fault;
use covfk_core::mc::Estimate;
use serde::Serialize;
use serde_json::Value;

pub const SCHEMA: &str = "covfk.result/1";

/// Deliberate defects for exercising the failure paths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum FaultFlag {
    /// Negate the Christoffel symbols of the base geometry.
    ChristoffelSignFlip,
    /// Corrupt the Grassmann/Duhamel preflight of `trace`.
    IdentityCheck,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub timing: bool,
    pub fault: Option<FaultFlag>,
}

impl RunOptions {
    pub fn geometry_fault(&self) -> Fault {
        match self.fault {
            Some(FaultFlag::ChristoffelSignFlip) => Fault::ChristoffelSignFlip,
            _ => Fault::None,
        }
    }

    /// Drops wall time unless timing output was requested.
    pub fn estimate(&self, est: Estimate) -> Estimate {
        if self.timing {
            est
        } else {
            est.without_timing()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    /// Passes when `value ≤ tolerance`.
    pub fn at_most(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance,
            pass: value <= tolerance,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Timing {
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunResult {
    pub schema: &'static str,
    pub command: &'static str,
    pub version: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fault: Option<FaultFlag>,
    pub config: Value,
    pub results: Value,
    pub checks: Vec<Check>,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing: Option<Timing>,
}

impl RunResult {
    pub fn new(
        command: &'static str,
        config: impl Serialize,
        results: impl Serialize,
        checks: Vec<Check>,
        opts: &RunOptions,
        started: Instant,
    ) -> Self {
        let pass = checks.iter().all(|c| c.pass);
        Self {
            schema: SCHEMA,
            command,
            version: env!("CARGO_PKG_VERSION"),
            fault: opts.fault,
            config: serde_json::to_value(config).expect("configs serialize"),
            results: serde_json::to_value(results).expect("results serialize"),
            checks,
            pass,
            timing: opts.timing.then(|| Timing {
                wall_time_s: started.elapsed().as_secs_f64(),
            }),
        }
    }
}

/// `max |mean - target|` against `k·max stderr + slack`.
pub fn agreement(
    name: &str,
    est: &Estimate,
    target: &[num_complex::Complex64],
    k: f64,
    slack: f64,
) -> Check {
    Check::at_most(name, est.max_error(target), k * est.max_stderr() + slack)
}
