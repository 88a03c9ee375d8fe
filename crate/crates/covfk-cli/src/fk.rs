//! `covfk fk`: semigroup or heat-kernel estimate with an optional spectral
//! comparison.

use std::time::Instant;

use covfk_core::fk::{fk_estimate, kernel_estimate, kernel_estimate_extrapolated};
use covfk_core::geometry::ManifoldKind;
use covfk_core::mc::Estimate;
use covfk_core::paths::default_delta;
use covfk_core::spectral::assemble_h;
use covfk_core::Error;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::config::Loaded;
use crate::error::{CliError, CliResult};
use crate::report::{agreement, Check, RunOptions, RunResult};
use crate::spec::{
    geometry, BundlePreset, McSpec, OperatorSpec, PointSpec, SectionSpec, SpecError,
};

fn default_cutoff() -> usize {
    16
}

fn default_k() -> f64 {
    3.0
}

/// Tolerance `k·stderr + dt_constant·dt + delta_constant·δ` against the
/// Galerkin truncation at `cutoff`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSpec {
    #[serde(default = "default_cutoff")]
    pub cutoff: usize,
    #[serde(default = "default_k")]
    pub k: f64,
    #[serde(default)]
    pub dt_constant: f64,
    #[serde(default)]
    pub delta_constant: f64,
}

impl Default for OracleSpec {
    fn default() -> Self {
        Self {
            cutoff: default_cutoff(),
            k: default_k(),
            dt_constant: 0.0,
            delta_constant: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FkConfig {
    pub geometry: ManifoldKind,
    pub bundle: BundlePreset,
    #[serde(default)]
    pub operator: OperatorSpec,
    /// Initial section; selects the semigroup estimate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi: Option<SectionSpec>,
    pub x: PointSpec,
    /// Kernel target point; selects the heat-kernel estimate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<PointSpec>,
    pub t: f64,
    pub mc: McSpec,
    /// Two-point bridge-delta extrapolation for kernels.
    #[serde(default)]
    pub extrapolate: bool,
    #[serde(default)]
    pub oracle: OracleSpec,
}

#[derive(Serialize)]
struct FkResults {
    mode: &'static str,
    estimate: Estimate,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle: Option<Vec<Complex64>>,
}

pub fn run(loaded: Loaded<FkConfig>, opts: &RunOptions) -> CliResult<RunResult> {
    let started = Instant::now();
    let mut cfg = loaded.value.clone();
    if let Some(seed) = opts.seed {
        cfg.mc.seed = seed;
    }
    let spec_err = |e: SpecError| loaded.invalid(&e.at, e.message);
    let model = geometry(&cfg.geometry, opts.geometry_fault()).map_err(spec_err)?;
    let bundle = cfg.bundle.build(&model).map_err(spec_err)?;
    let op = cfg
        .operator
        .build(&model, bundle.rank(), "operator")
        .map_err(spec_err)?;
    let mc = cfg.mc.build(opts.workers).map_err(spec_err)?;
    let x = cfg.x.build(&model, "x").map_err(spec_err)?;

    let (mode, estimate, oracle, slack) = match (&cfg.psi, &cfg.y) {
        (Some(psi), None) => {
            let psi = psi.build(&model, bundle.rank(), "psi").map_err(spec_err)?;
            let est = fk_estimate(&bundle, &op, &psi, &x, cfg.t, &mc)?;
            let oracle = spectral(|| {
                let h = assemble_h(&bundle, &op, cfg.oracle.cutoff)?;
                Ok(h.semigroup_at(cfg.t, &psi, &x)?.as_slice().to_vec())
            })?;
            ("semigroup", est, oracle, cfg.oracle.dt_constant * mc.dt)
        }
        (None, Some(y)) => {
            let y = y.build(&model, "y").map_err(spec_err)?;
            let est = if cfg.extrapolate {
                kernel_estimate_extrapolated(&bundle, &op, &x, &y, cfg.t, &mc)?
            } else {
                kernel_estimate(&bundle, &op, &x, &y, cfg.t, &mc)?
            };
            let oracle = spectral(|| {
                let h = assemble_h(&bundle, &op, cfg.oracle.cutoff)?;
                Ok(h.kernel_at(cfg.t, &x, &y)?.entries().to_vec())
            })?;
            let delta = mc
                .bridge_delta
                .unwrap_or_else(|| default_delta(cfg.t, mc.dt));
            (
                "kernel",
                est,
                oracle,
                cfg.oracle.dt_constant * mc.dt + cfg.oracle.delta_constant * delta,
            )
        }
        _ => {
            return Err(loaded.invalid(
                "psi/y",
                "exactly one of `psi` (semigroup) and `y` (kernel) is required",
            ))
        }
    };

    let mut checks = vec![Check::at_most(
        "finite",
        if estimate.mean.iter().all(|z| z.is_finite()) {
            0.0
        } else {
            1.0
        },
        0.0,
    )];
    if let Some(target) = &oracle {
        checks.push(agreement(
            "oracle_agreement",
            &estimate,
            target,
            cfg.oracle.k,
            slack,
        ));
    }
    let results = FkResults {
        mode,
        estimate: opts.estimate(estimate),
        oracle,
    };
    Ok(RunResult::new("fk", &cfg, results, checks, opts, started))
}

/// Runs a spectral comparison; `None` when the input has no Galerkin form.
pub fn spectral<T>(f: impl FnOnce() -> covfk_core::Result<T>) -> CliResult<Option<T>> {
    match f() {
        Ok(v) => Ok(Some(v)),
        Err(Error::Unsupported(_)) => Ok(None),
        Err(e) => Err(CliError::Core(e)),
    }
}
