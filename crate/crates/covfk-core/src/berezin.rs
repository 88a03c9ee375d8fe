//! Matrices over the Grassmann algebra `ℂ[θ]/(θ²)` and the Monte Carlo
//! trace formula for Duhamel integrals.
//!
//! The θ-coefficient of `e^{-t(H + θP)}` is `-∫_0^t e^{-sH} P e^{-(t-s)H} ds`.

use std::ops::{Add, Mul};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{domain, Error, Result};
use crate::fields::Field;
use crate::fk::FirstOrderOp;
use crate::linalg::FiberMat;
use crate::mc::{map_blocks, run_paths, timed, Estimate, McConfig};
use crate::paths::{bridge_schedule, default_delta, Walker};
use crate::quadrature::QuadratureGrid;
use crate::spectral::{assemble_h, assemble_operator, duhamel, FourierTruncation};
use crate::transport::{close_transport, BundleSpec, TransportRule, TransportState};

type CMat = DMatrix<Complex64>;

/// `body + theta·θ` with `θ² = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrassmannMatrix {
    pub body: CMat,
    pub theta: CMat,
}

impl GrassmannMatrix {
    pub fn new(body: CMat, theta: CMat) -> Result<Self> {
        if body.shape() != theta.shape() || body.nrows() != body.ncols() {
            return Err(Error::Dimension(
                "Grassmann parts must be square and of equal size".into(),
            ));
        }
        Ok(Self { body, theta })
    }

    pub fn even(body: CMat) -> Self {
        let theta = CMat::zeros(body.nrows(), body.ncols());
        Self { body, theta }
    }

    pub fn odd(theta: CMat) -> Self {
        let body = CMat::zeros(theta.nrows(), theta.ncols());
        Self { body, theta }
    }

    pub fn identity(n: usize) -> Self {
        Self::even(CMat::identity(n, n))
    }

    pub fn dim(&self) -> usize {
        self.body.nrows()
    }

    /// `(a + bθ)(c + dθ) = ac + (ad + bc)θ`.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::Dimension(format!(
                "cannot multiply Grassmann matrices of sizes {} and {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(Self {
            body: &self.body * &other.body,
            theta: &self.body * &other.theta + &self.theta * &other.body,
        })
    }

    /// `e^{-t(H + θP)}` through the block matrix `[[H, 0], [P, H]]`.
    pub fn semigroup(h: &CMat, p: &CMat, t: f64) -> Result<Self> {
        let n = h.nrows();
        if h.shape() != p.shape() || n != h.ncols() {
            return Err(Error::Dimension(
                "H and P must be square and of equal size".into(),
            ));
        }
        let mut block = CMat::zeros(2 * n, 2 * n);
        block.view_mut((0, 0), (n, n)).copy_from(h);
        block.view_mut((n, n), (n, n)).copy_from(h);
        block.view_mut((n, 0), (n, n)).copy_from(p);
        let e = (block * Complex64::new(-t, 0.0)).exp();
        Ok(Self {
            body: e.view((0, 0), (n, n)).into_owned(),
            theta: e.view((n, 0), (n, n)).into_owned(),
        })
    }
}

impl Add for &GrassmannMatrix {
    type Output = GrassmannMatrix;

    fn add(self, rhs: Self) -> GrassmannMatrix {
        GrassmannMatrix {
            body: &self.body + &rhs.body,
            theta: &self.theta + &rhs.theta,
        }
    }
}

impl Mul for &GrassmannMatrix {
    type Output = GrassmannMatrix;

    fn mul(self, rhs: Self) -> GrassmannMatrix {
        GrassmannMatrix::mul(self, rhs).expect("Grassmann dimensions agree")
    }
}

pub fn grassmann_mul(x: &GrassmannMatrix, y: &GrassmannMatrix) -> Result<GrassmannMatrix> {
    x.mul(y)
}

/// The θ-coefficient.
pub fn berezin_integral(x: &GrassmannMatrix) -> CMat {
    x.theta.clone()
}

/// `‖B + D‖` where `B` is the θ-part of the block exponential and `D` the
/// eigenbasis Duhamel integral; the two routes are independent.
pub fn perturbation_identity_check(
    truncation: &FourierTruncation,
    p: &CMat,
    t: f64,
) -> Result<f64> {
    perturbation_identity_check_matrices(truncation.matrix(), p, t)
}

pub fn perturbation_identity_check_matrices(h: &CMat, p: &CMat, t: f64) -> Result<f64> {
    let b = berezin_integral(&GrassmannMatrix::semigroup(h, p, t)?);
    let d = duhamel(h, p, t)?;
    Ok((b + d).norm())
}

/// A fiber matrix pair `a + bθ` for path functionals.
#[derive(Clone, Copy, Debug, PartialEq)]
struct FiberGrassmann {
    body: FiberMat,
    theta: FiberMat,
}

/// Inputs of the trace formula
/// `Tr(Ṽ ∫_0^t e^{-sH} P e^{-(t-s)H} ds)` with `H = ∇†∇/2 + V`.
#[derive(Clone, Debug)]
pub struct TraceProblem<'a> {
    pub bundle: &'a BundleSpec,
    pub potential: Field,
    pub perturbation: &'a FirstOrderOp,
    pub weight: Field,
    pub t: f64,
}

impl TraceProblem<'_> {
    fn check(&self) -> Result<()> {
        let d = self.bundle.rank();
        if self.potential.rank() != d || self.perturbation.rank() != d || self.weight.rank() != d {
            return Err(Error::Dimension(
                "trace formula inputs must share the bundle rank".into(),
            ));
        }
        if self.perturbation.sigma1_fields().len() != self.bundle.base().dim() {
            return Err(Error::Dimension(
                "one sigma1 coefficient per chart direction is required".into(),
            ));
        }
        if !(self.t.is_finite() && self.t > 0.0) {
            return domain(format!("time must be positive, got {}", self.t));
        }
        Ok(())
    }
}

/// Monte Carlo estimate of the trace formula.
///
/// For each quadrature node `x` the bridge expectation is estimated
/// without normalization as `mean(F · p(δ, 𝖻_{t-δ}, x))`, where `F` is the
/// θ-part of the Grassmann weight
/// `𝒲 ← 𝒲 (I - //^{-1}V// dt - θ //^{-1}(σ_P(d𝖻) + P_∇ dt)//)`
/// times the closed transport `//(t)^{-1}`; the weight is frozen on the final
/// interval. Node `j` uses stream family `j` and `ceil(n_paths / nodes)`
/// paths.
pub fn trace_formula_mc(
    problem: &TraceProblem<'_>,
    grid: &QuadratureGrid,
    mc: &McConfig,
) -> Result<Estimate> {
    problem.check()?;
    mc.validate()?;
    if grid.is_empty() {
        return domain("trace formula needs a nonempty quadrature grid");
    }
    let bundle = problem.bundle;
    let model = bundle.base();
    let t = problem.t;
    let delta = mc.bridge_delta.unwrap_or_else(|| default_delta(t, mc.dt));
    let n = bridge_schedule(t, mc.dt, delta)?;
    let per_node = mc.n_paths.div_ceil(grid.len());
    let d = bundle.rank();
    let op = problem.perturbation;
    let (nodes, secs) = timed(|| {
        let per = map_blocks(grid.len(), mc.workers, |j| -> Result<(Complex64, f64)> {
            let (x, _) = &grid.nodes()[j];
            let streams = mc.streams(j as u64);
            let vt = problem.weight.eval(x);
            let m = run_paths(per_node, 1, Some(1), |i, out| {
                let mut walker = Walker::new(model, x, streams.get(i))?;
                let mut transport = TransportState::start(bundle, x);
                let mut w = FiberGrassmann {
                    body: FiberMat::identity(d),
                    theta: FiberMat::zeros(d),
                };
                for _ in 0..n {
                    let step = walker.step(mc.dt);
                    let v = transport
                        .conjugate(&problem.potential.eval(&step.from))
                        .scale_re(mc.dt);
                    let mut xp = op.sigma1(&step.from, &step.tangent);
                    xp += op.q0(&step.from).scale_re(mc.dt);
                    let xp = transport.conjugate(&xp);
                    w = FiberGrassmann {
                        body: w.body - w.body * v,
                        theta: w.theta - w.theta * v - w.body * xp,
                    };
                    transport.advance(bundle, &step, TransportRule::Midpoint);
                }
                let end = walker.current();
                let closed = close_transport(bundle, &transport, &end, x)?;
                let kernel = model.heat_kernel(&end, x, delta)?;
                let f = w.theta * closed.adjoint();
                out[0] = -(vt * f).trace() * kernel;
                Ok(())
            })?;
            Ok((m.mean(0), m.variance(0)))
        })?;
        per.into_iter().collect::<Result<Vec<_>>>()
    })?;
    let mut total = Complex64::new(0.0, 0.0);
    let mut var = 0.0;
    for ((mean, v), (_, weight)) in nodes.iter().zip(grid.iter()) {
        total += mean * weight;
        var += weight * weight * v / per_node as f64;
    }
    Ok(Estimate {
        rows: 1,
        cols: 1,
        mean: vec![total],
        stderr: vec![var.sqrt()],
        n_paths: per_node * grid.len(),
        dt: mc.dt,
        seed: mc.seed,
        wall_time_s: Some(secs),
    })
}

/// Spectral value of the trace formula on a circle or torus at mode cutoff
/// `cutoff`: `Tr(Ṽ D)` with `D` the eigenbasis Duhamel integral.
pub fn trace_formula_spectral(problem: &TraceProblem<'_>, cutoff: usize) -> Result<Complex64> {
    problem.check()?;
    let model = problem.bundle.base();
    let v = FirstOrderOp::potential(model, problem.potential.clone())?;
    let h = assemble_h(problem.bundle, &v, cutoff)?;
    let p = assemble_operator(problem.bundle, problem.perturbation, &h)?;
    let vt = assemble_operator(
        problem.bundle,
        &FirstOrderOp::potential(model, problem.weight.clone())?,
        &h,
    )?;
    let dm = h.duhamel_quadrature(&p, problem.t)?;
    Ok((vt * dm).trace())
}
