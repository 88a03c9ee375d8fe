//! `covfk chern`: the N = 0 and N = 1 Chern character components on the
//! round sphere, with the Dirac truncation and the trace formula as
//! independent references.

use std::time::Instant;

use covfk_core::geometry::ManifoldModel;
use covfk_core::mc::Estimate;
use covfk_core::paths::default_delta;
use covfk_core::spin::chern::CHERN_TIME;
use covfk_core::spin::forms::FormDegree;
use covfk_core::spin::{
    chern_n0, chern_n1, chern_n1_trace_formula, ChernSetup, CliffordConvention, DiracTruncation,
    IntegralForm, LoopForm, LoopFormSpec,
};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::config::Loaded;
use crate::error::CliResult;
use crate::fk::spectral;
use crate::report::{agreement, Check, RunOptions, RunResult};
use crate::spec::{GridSpec, McSpec, SpecError, SphereGrid};

fn default_radius() -> f64 {
    1.0
}

fn default_grid() -> SphereGrid {
    SphereGrid {
        n_polar: 6,
        n_azimuth: 8,
    }
}

fn default_order() -> usize {
    6
}

fn default_k() -> f64 {
    3.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChernTolerance {
    #[serde(default = "default_k")]
    pub k: f64,
    /// Multiplies `|reference|·(dt + δ)`.
    #[serde(default)]
    pub relative_bias: f64,
}

impl Default for ChernTolerance {
    fn default() -> Self {
        Self {
            k: default_k(),
            relative_bias: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChernConfig {
    #[serde(rename = "N")]
    pub order: u32,
    #[serde(default = "default_radius")]
    pub radius: f64,
    pub alpha0: LoopFormSpec,
    #[serde(default)]
    pub alpha1: LoopFormSpec,
    pub mc: McSpec,
    #[serde(default = "default_grid")]
    pub grid: SphereGrid,
    #[serde(default)]
    pub integral: IntegralForm,
    #[serde(default)]
    pub convention: CliffordConvention,
    /// Also evaluate N = 1 through the generic trace formula.
    #[serde(default)]
    pub cross_check: bool,
    /// Order of the exact Dirac truncation used as spectral reference.
    #[serde(default = "default_order")]
    pub spectral_order: usize,
    #[serde(default)]
    pub tolerance: ChernTolerance,
}

#[derive(Serialize)]
struct CrossCheck {
    trace_formula: Estimate,
    difference: Complex64,
}

#[derive(Serialize)]
struct ChernResults {
    estimate: Estimate,
    #[serde(skip_serializing_if = "Option::is_none")]
    spectral: Option<Complex64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cross_check: Option<CrossCheck>,
}

/// Truncation value when the forms have a spectral counterpart: `α_0'` of
/// degree 0 or 2 and, for N = 1, `α_1 = f dt` with `f` a function.
fn reference(
    order: u32,
    truncation: &DiracTruncation,
    alpha0: &LoopForm,
    alpha1: &LoopForm,
) -> covfk_core::Result<Complex64> {
    if order == 0 {
        return truncation.chern_n0(&alpha0.spatial);
    }
    let temporal = &alpha1.temporal;
    if !alpha1.spatial.is_zero() || temporal.degrees().iter().any(|d| *d != FormDegree::Zero) {
        return Err(covfk_core::Error::Unsupported(
            "the spectral reference needs α_1 = f dt".into(),
        ));
    }
    truncation.chern_n1_temporal(&alpha0.spatial, &temporal.function)
}

pub fn run(loaded: Loaded<ChernConfig>, opts: &RunOptions) -> CliResult<RunResult> {
    let started = Instant::now();
    let mut cfg = loaded.value.clone();
    if let Some(seed) = opts.seed {
        cfg.mc.seed = seed;
    }
    if cfg.order > 1 {
        return Err(loaded.invalid(
            "N",
            format!("only N = 0 and N = 1 are available, got {}", cfg.order),
        ));
    }
    if cfg.order == 0 && cfg.alpha1 != LoopFormSpec::default() {
        return Err(loaded.invalid("alpha1", "N = 0 takes a single form"));
    }
    let spec_err = |e: SpecError| loaded.invalid(&e.at, e.message);
    let model = ManifoldModel::sphere2(cfg.radius)
        .map_err(|e| loaded.invalid("radius", e))?
        .with_fault(opts.geometry_fault());
    let grid = GridSpec::Sphere(cfg.grid.clone())
        .build(&model)
        .map_err(spec_err)?;
    let mc = cfg.mc.build(opts.workers).map_err(spec_err)?;
    let alpha0 = cfg.alpha0.to_form();
    let alpha1 = cfg.alpha1.to_form();
    let setup = ChernSetup {
        model: &model,
        grid: &grid,
        mc: &mc,
        convention: cfg.convention,
    };

    let estimate = match cfg.order {
        0 => chern_n0(&setup, &alpha0)?,
        _ => chern_n1(&setup, &alpha0, &alpha1, cfg.integral)?,
    };
    let truncation = DiracTruncation::new(cfg.radius, cfg.spectral_order)
        .map_err(|e| loaded.invalid("spectral_order", e))?;
    let spectral_value = spectral(|| reference(cfg.order, &truncation, &alpha0, &alpha1))?;
    let cross = if cfg.cross_check && cfg.order == 1 {
        Some(chern_n1_trace_formula(&setup, &alpha0, &alpha1)?)
    } else {
        None
    };

    let delta = mc
        .bridge_delta
        .unwrap_or_else(|| default_delta(CHERN_TIME, mc.dt));
    let bias =
        |reference: Complex64| cfg.tolerance.relative_bias * reference.norm() * (mc.dt + delta);
    let mut checks = Vec::new();
    if cfg.order == 1 && alpha1.spatial.is_zero() && alpha1.temporal.is_zero() {
        checks.push(Check::at_most(
            "alpha1_zero_exact",
            estimate.scalar().norm(),
            0.0,
        ));
    }
    if let Some(target) = spectral_value {
        checks.push(agreement(
            "spectral_agreement",
            &estimate,
            &[target],
            cfg.tolerance.k,
            bias(target),
        ));
    }
    if let Some(other) = &cross {
        let combined = (estimate.stderr[0].powi(2) + other.stderr[0].powi(2)).sqrt();
        checks.push(Check::at_most(
            "trace_formula_agreement",
            (estimate.scalar() - other.scalar()).norm(),
            cfg.tolerance.k * combined + bias(estimate.scalar()),
        ));
    }
    let results = ChernResults {
        cross_check: cross.map(|other| CrossCheck {
            difference: estimate.scalar() - other.scalar(),
            trace_formula: opts.estimate(other),
        }),
        estimate: opts.estimate(estimate),
        spectral: spectral_value,
    };
    Ok(RunResult::new(
        "chern", &cfg, results, checks, opts, started,
    ))
}
