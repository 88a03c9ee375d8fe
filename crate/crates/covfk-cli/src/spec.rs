//! Config grammar shared by the commands and its translation into core
//! types.
//!
//! Coefficients are constants, matrix literals, or sums of Fourier modes
//! `c_k e^{2πi k·x/L}` in the chart angles of a circle or torus. On the
//! sphere only constants are accepted.

use std::sync::Arc;

use covfk_core::fields::{ConstField, Field, Mode, SectionFn, TrigField};
use covfk_core::fk::FirstOrderOp;
use covfk_core::geometry::{Fault, ManifoldKind, ManifoldModel, Point, MAX_DIM};
use covfk_core::linalg::{FiberMat, FiberVec};
use covfk_core::mc::McConfig;
use covfk_core::quadrature::QuadratureGrid;
use covfk_core::spin::spinor_bundle;
use covfk_core::transport::BundleSpec;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Error text tagged with the config location it refers to.
#[derive(Debug)]
pub struct SpecError {
    pub at: String,
    pub message: String,
}

impl SpecError {
    fn new(at: &str, message: impl std::fmt::Display) -> Self {
        Self {
            at: at.to_string(),
            message: message.to_string(),
        }
    }
}

pub type SpecResult<T> = std::result::Result<T, SpecError>;

trait At<T> {
    fn at(self, at: &str) -> SpecResult<T>;
}

impl<T> At<T> for covfk_core::Result<T> {
    fn at(self, at: &str) -> SpecResult<T> {
        self.map_err(|e| SpecError::new(at, e))
    }
}

/// `1.5` or `[re, im]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ComplexLit {
    Real(f64),
    Pair([f64; 2]),
}

impl ComplexLit {
    pub fn value(self) -> Complex64 {
        match self {
            ComplexLit::Real(x) => Complex64::new(x, 0.0),
            ComplexLit::Pair([re, im]) => Complex64::new(re, im),
        }
    }
}

/// A scalar (times the identity) or a row-major matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixLit {
    Scalar(ComplexLit),
    Rows(Vec<Vec<ComplexLit>>),
}

impl MatrixLit {
    pub fn to_matrix(&self, rank: usize, at: &str) -> SpecResult<FiberMat> {
        match self {
            MatrixLit::Scalar(c) => Ok(FiberMat::scalar(rank, c.value())),
            MatrixLit::Rows(rows) => {
                if rows.len() != rank || rows.iter().any(|r| r.len() != rank) {
                    return Err(SpecError::new(
                        at,
                        format!("expected a {rank}x{rank} matrix"),
                    ));
                }
                let rows: Vec<Vec<Complex64>> = rows
                    .iter()
                    .map(|r| r.iter().map(|c| c.value()).collect())
                    .collect();
                FiberMat::from_rows(&rows).at(at)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldTerm {
    pub mode: Vec<i32>,
    pub coeff: MatrixLit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigFieldSpec {
    pub terms: Vec<FieldTerm>,
}

/// Matrix-valued coefficient field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldSpec {
    Constant(MatrixLit),
    Trig(TrigFieldSpec),
}

impl FieldSpec {
    pub fn zero() -> Self {
        FieldSpec::Constant(MatrixLit::Scalar(ComplexLit::Real(0.0)))
    }

    fn terms(&self) -> Vec<FieldTerm> {
        match self {
            FieldSpec::Constant(m) => vec![FieldTerm {
                mode: Vec::new(),
                coeff: m.clone(),
            }],
            FieldSpec::Trig(t) => t.terms.clone(),
        }
    }

    fn mode_terms(
        &self,
        model: &ManifoldModel,
        rank: usize,
        at: &str,
    ) -> SpecResult<Vec<(Mode, FiberMat)>> {
        self.terms()
            .iter()
            .enumerate()
            .map(|(i, term)| {
                let here = format!("{at}.terms[{i}]");
                Ok((
                    mode(model, &term.mode, &here)?,
                    term.coeff.to_matrix(rank, &here)?,
                ))
            })
            .collect()
    }

    pub fn build(&self, model: &ManifoldModel, rank: usize, at: &str) -> SpecResult<Field> {
        let terms = self.mode_terms(model, rank, at)?;
        if model.periods().is_some() {
            return Ok(Arc::new(TrigField::new(model, rank, terms).at(at)?));
        }
        let mut sum = FiberMat::zeros(rank);
        for (m, c) in terms {
            if m.iter().any(|&k| k != 0) {
                return Err(SpecError::new(
                    at,
                    "Fourier modes are only available on circles and tori",
                ));
            }
            sum += c;
        }
        Ok(Arc::new(ConstField(sum)))
    }
}

fn mode(model: &ManifoldModel, k: &[i32], at: &str) -> SpecResult<Mode> {
    let axes = model.periods().map_or(0, |p| p.dim());
    if k.len() > MAX_DIM || k.iter().skip(axes).any(|&x| x != 0) {
        return Err(SpecError::new(
            at,
            format!("mode {k:?} does not fit a geometry with {axes} periodic axes"),
        ));
    }
    let mut out = [0; MAX_DIM];
    out[..k.len()].copy_from_slice(k);
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorSpec {
    /// One coefficient per chart direction; empty means no first-order part.
    #[serde(default)]
    pub sigma1: Vec<FieldSpec>,
    #[serde(default)]
    pub q0: Option<FieldSpec>,
}

impl OperatorSpec {
    pub fn build(&self, model: &ManifoldModel, rank: usize, at: &str) -> SpecResult<FirstOrderOp> {
        let dim = model.dim();
        let sigma1 = if self.sigma1.is_empty() {
            vec![FieldSpec::zero(); dim]
        } else if self.sigma1.len() == dim {
            self.sigma1.clone()
        } else {
            return Err(SpecError::new(
                &format!("{at}.sigma1"),
                format!("expected {dim} coefficients, got {}", self.sigma1.len()),
            ));
        };
        let sigma1 = sigma1
            .iter()
            .enumerate()
            .map(|(k, f)| f.build(model, rank, &format!("{at}.sigma1[{k}]")))
            .collect::<SpecResult<Vec<_>>>()?;
        let q0 = self.q0.clone().unwrap_or_else(FieldSpec::zero).build(
            model,
            rank,
            &format!("{at}.q0"),
        )?;
        FirstOrderOp::new(rank, sigma1, q0).at(at)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case", deny_unknown_fields)]
pub enum BundlePreset {
    Trivial {
        rank: usize,
    },
    /// `A = i Σ a_k dx^k`.
    U1Flat {
        potential: Vec<f64>,
    },
    /// Anti-Hermitian connection coefficients, one per axis.
    Trig {
        rank: usize,
        components: Vec<FieldSpec>,
    },
    TangentS2,
    SpinorS2,
}

impl BundlePreset {
    pub fn build(&self, model: &ManifoldModel) -> SpecResult<BundleSpec> {
        let at = "bundle";
        match self {
            BundlePreset::Trivial { rank } => BundleSpec::trivial(model, *rank).at(at),
            BundlePreset::U1Flat { potential } => BundleSpec::u1_flat(model, potential).at(at),
            BundlePreset::Trig { rank, components } => {
                let fields = components
                    .iter()
                    .enumerate()
                    .map(|(k, c)| {
                        let here = format!("{at}.components[{k}]");
                        TrigField::new(model, *rank, c.mode_terms(model, *rank, &here)?).at(&here)
                    })
                    .collect::<SpecResult<Vec<_>>>()?;
                BundleSpec::trig(model, fields).at(at)
            }
            BundlePreset::TangentS2 => BundleSpec::tangent_s2(model).at(at),
            BundlePreset::SpinorS2 => spinor_bundle(model).at(at),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectionTerm {
    pub mode: Vec<i32>,
    pub vector: Vec<ComplexLit>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigSectionSpec {
    pub terms: Vec<SectionTerm>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SectionSpec {
    Constant(Vec<ComplexLit>),
    Trig(TrigSectionSpec),
}

impl SectionSpec {
    pub fn build(&self, model: &ManifoldModel, rank: usize, at: &str) -> SpecResult<SectionFn> {
        let terms: Vec<SectionTerm> = match self {
            SectionSpec::Constant(v) => vec![SectionTerm {
                mode: Vec::new(),
                vector: v.clone(),
            }],
            SectionSpec::Trig(t) => t.terms.clone(),
        };
        let mut built = Vec::with_capacity(terms.len());
        for (i, term) in terms.iter().enumerate() {
            let here = format!("{at}.terms[{i}]");
            if term.vector.len() != rank {
                return Err(SpecError::new(&here, format!("expected {rank} components")));
            }
            let v: Vec<Complex64> = term.vector.iter().map(|c| c.value()).collect();
            built.push((mode(model, &term.mode, &here)?, v));
        }
        if model.periods().is_some() {
            return SectionFn::trig(model, built).at(at);
        }
        let mut sum = vec![Complex64::new(0.0, 0.0); rank];
        for (m, v) in built {
            if m.iter().any(|&k| k != 0) {
                return Err(SpecError::new(
                    at,
                    "Fourier modes are only available on circles and tori",
                ));
            }
            for (s, x) in sum.iter_mut().zip(v) {
                *s += x;
            }
        }
        Ok(SectionFn::constant(FiberVec::from_slice(&sum).at(at)?))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolarPoint {
    pub polar: f64,
    pub azimuth: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddedPoint {
    pub embedded: [f64; 3],
}

/// Chart coordinates on a circle or torus; polar angles or an embedded
/// vector on the sphere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PointSpec {
    Coords(Vec<f64>),
    Polar(PolarPoint),
    Embedded(EmbeddedPoint),
}

impl PointSpec {
    pub fn build(&self, model: &ManifoldModel, at: &str) -> SpecResult<Point> {
        match self {
            PointSpec::Coords(c) => model.flat_point(c).at(at),
            PointSpec::Polar(p) => model.sphere_point_polar(p.polar, p.azimuth).at(at),
            PointSpec::Embedded(e) => model.sphere_point(e.embedded).at(at),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniformGrid {
    pub per_axis: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphereGrid {
    pub n_polar: usize,
    pub n_azimuth: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Uniform(UniformGrid),
    Sphere(SphereGrid),
}

impl GridSpec {
    pub fn build(&self, model: &ManifoldModel) -> SpecResult<QuadratureGrid> {
        match self {
            GridSpec::Uniform(g) => QuadratureGrid::uniform(model, g.per_axis).at("grid"),
            GridSpec::Sphere(g) => QuadratureGrid::sphere(model, g.n_polar, g.n_azimuth).at("grid"),
        }
    }
}

/// Monte Carlo parameters. Worker count is a command-line flag only, so
/// results never depend on it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSpec {
    pub n_paths: usize,
    pub dt: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bridge_delta: Option<f64>,
}

impl McSpec {
    pub fn build(&self, workers: Option<usize>) -> SpecResult<McConfig> {
        let mut mc = McConfig::new(self.n_paths, self.dt, self.seed).at("mc")?;
        if let Some(d) = self.bridge_delta {
            mc = mc.with_delta(d);
        }
        let mc = mc.with_workers(workers);
        mc.validate().at("mc")?;
        Ok(mc)
    }
}

pub fn geometry(kind: &ManifoldKind, fault: Fault) -> SpecResult<ManifoldModel> {
    Ok(ManifoldModel::from_kind(kind.clone())
        .at("geometry")?
        .with_fault(fault))
}
