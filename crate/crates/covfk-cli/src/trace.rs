//! `covfk trace`: Monte Carlo trace formula with a Grassmann/Duhamel
//! preflight and a spectral comparison.

use std::time::Instant;

use covfk_core::berezin::{
    berezin_integral, trace_formula_mc, trace_formula_spectral, GrassmannMatrix, TraceProblem,
};
use covfk_core::fk::FirstOrderOp;
use covfk_core::geometry::ManifoldKind;
use covfk_core::mc::Estimate;
use covfk_core::paths::default_delta;
use covfk_core::spectral::{assemble_h, assemble_operator, duhamel};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::config::Loaded;
use crate::error::{CliError, CliResult};
use crate::fk::spectral;
use crate::report::{agreement, Check, FaultFlag, RunOptions, RunResult};
use crate::spec::{
    geometry, BundlePreset, ComplexLit, FieldSpec, GridSpec, MatrixLit, McSpec, OperatorSpec,
    SpecError,
};

fn default_cutoff() -> usize {
    32
}

fn default_k() -> f64 {
    3.0
}

fn default_preflight_cutoff() -> usize {
    8
}

fn default_preflight_tolerance() -> f64 {
    1e-9
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceOracleSpec {
    #[serde(default = "default_cutoff")]
    pub cutoff: usize,
    #[serde(default = "default_k")]
    pub k: f64,
    #[serde(default)]
    pub dt_constant: f64,
    #[serde(default)]
    pub delta_constant: f64,
}

impl Default for TraceOracleSpec {
    fn default() -> Self {
        Self {
            cutoff: default_cutoff(),
            k: default_k(),
            dt_constant: 0.0,
            delta_constant: 0.0,
        }
    }
}

/// `‖B + D‖ ≤ tolerance` on the Galerkin matrices at `cutoff`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreflightSpec {
    #[serde(default = "default_preflight_cutoff")]
    pub cutoff: usize,
    #[serde(default = "default_preflight_tolerance")]
    pub tolerance: f64,
}

impl Default for PreflightSpec {
    fn default() -> Self {
        Self {
            cutoff: default_preflight_cutoff(),
            tolerance: default_preflight_tolerance(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceConfig {
    pub geometry: ManifoldKind,
    pub bundle: BundlePreset,
    /// `V` in `H = ∇†∇/2 + V`; zero when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential: Option<FieldSpec>,
    /// The first-order perturbation `P`.
    pub perturbation: OperatorSpec,
    /// The outer weight `Ṽ`; the identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<FieldSpec>,
    pub t: f64,
    pub grid: GridSpec,
    pub mc: McSpec,
    #[serde(default)]
    pub oracle: TraceOracleSpec,
    #[serde(default)]
    pub preflight: PreflightSpec,
}

#[derive(Serialize)]
struct Preflight {
    cutoff: usize,
    defect: f64,
}

#[derive(Serialize)]
struct TraceResults {
    estimate: Estimate,
    #[serde(skip_serializing_if = "Option::is_none")]
    spectral: Option<Complex64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    preflight: Option<Preflight>,
}

pub fn run(loaded: Loaded<TraceConfig>, opts: &RunOptions) -> CliResult<RunResult> {
    let started = Instant::now();
    let mut cfg = loaded.value.clone();
    if let Some(seed) = opts.seed {
        cfg.mc.seed = seed;
    }
    let spec_err = |e: SpecError| loaded.invalid(&e.at, e.message);
    let model = geometry(&cfg.geometry, opts.geometry_fault()).map_err(spec_err)?;
    let bundle = cfg.bundle.build(&model).map_err(spec_err)?;
    let rank = bundle.rank();
    let potential = cfg
        .potential
        .clone()
        .unwrap_or_else(FieldSpec::zero)
        .build(&model, rank, "potential")
        .map_err(spec_err)?;
    let weight = cfg
        .weight
        .clone()
        .unwrap_or(FieldSpec::Constant(MatrixLit::Scalar(ComplexLit::Real(
            1.0,
        ))))
        .build(&model, rank, "weight")
        .map_err(spec_err)?;
    let op = cfg
        .perturbation
        .build(&model, rank, "perturbation")
        .map_err(spec_err)?;
    let grid = cfg.grid.build(&model).map_err(spec_err)?;
    let mc = cfg.mc.build(opts.workers).map_err(spec_err)?;
    let problem = TraceProblem {
        bundle: &bundle,
        potential: potential.clone(),
        perturbation: &op,
        weight,
        t: cfg.t,
    };

    let corrupt = opts.fault == Some(FaultFlag::IdentityCheck);
    let preflight = spectral(|| {
        let v = FirstOrderOp::potential(&model, potential.clone())?;
        let h = assemble_h(&bundle, &v, cfg.preflight.cutoff)?;
        let p = assemble_operator(&bundle, &op, &h)?;
        let b = berezin_integral(&GrassmannMatrix::semigroup(h.matrix(), &p, cfg.t)?);
        let d = duhamel(h.matrix(), &p, cfg.t)?;
        let defect = if corrupt {
            (b - d).norm()
        } else {
            (b + d).norm()
        };
        Ok(Preflight {
            cutoff: cfg.preflight.cutoff,
            defect,
        })
    })?;
    if let Some(p) = &preflight {
        if !(p.defect <= cfg.preflight.tolerance) {
            return Err(CliError::Failed(format!(
                "perturbation identity preflight failed: defect {:e} exceeds {:e}",
                p.defect, cfg.preflight.tolerance
            )));
        }
    }

    let estimate = trace_formula_mc(&problem, &grid, &mc)?;
    let spectral_value = spectral(|| trace_formula_spectral(&problem, cfg.oracle.cutoff))?;
    let mut checks = Vec::new();
    if let Some(p) = &preflight {
        checks.push(Check::at_most(
            "perturbation_identity",
            p.defect,
            cfg.preflight.tolerance,
        ));
    }
    if let Some(target) = spectral_value {
        let delta = mc
            .bridge_delta
            .unwrap_or_else(|| default_delta(cfg.t, mc.dt));
        let slack = cfg.oracle.dt_constant * mc.dt + cfg.oracle.delta_constant * delta;
        checks.push(agreement(
            "spectral_agreement",
            &estimate,
            &[target],
            cfg.oracle.k,
            slack,
        ));
    }
    let results = TraceResults {
        estimate: opts.estimate(estimate),
        spectral: spectral_value,
        preflight,
    };
    Ok(RunResult::new(
        "trace", &cfg, results, checks, opts, started,
    ))
}
