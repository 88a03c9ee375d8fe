//! Feynman-Kac estimators for `e^{-tH}` with `H = ∇†∇/2 + Q` and `Q` of
//! order at most one.
//!
//! The weight process solves the covariant Itô equation
//! `d𝒬 = -𝒬 //^{-1}(σ(d𝖻) + q0 dt) //` by left-point Euler steps.

use std::sync::Arc;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::fields::{ConstField, Field, SectionFn, TrigField};
use crate::geometry::{Coords, ManifoldModel, Point};
use crate::linalg::{FiberMat, FiberVec};
use crate::mc::{run_paths, timed, Estimate, McConfig};
use crate::paths::{bridge_schedule, default_delta, step_schedule, PathSample, Step, Walker};
use crate::rng::RngConfig;
use crate::transport::{
    close_transport, BundleSpec, TransportRule, TransportSequence, TransportState,
};

pub type ScalarFn = Arc<dyn Fn(&Point) -> f64 + Send + Sync>;

/// `Q = σ∇ + q0`: `sigma1[j]` is the coefficient of the chart direction
/// `j`, so `σ(p, X) = Σ_j X^j sigma1[j](p)`.
#[derive(Clone, Debug)]
pub struct FirstOrderOp {
    rank: usize,
    sigma1: Vec<Field>,
    q0: Field,
    sigma1_zero: bool,
    q0_zero: bool,
    sigma1_const: Option<Vec<FiberMat>>,
    q0_const: Option<FiberMat>,
}

fn field_is_zero(f: &Field) -> bool {
    f.trig().is_some_and(TrigField::is_zero)
        || f.constant().is_some_and(|c| c.frobenius_norm() == 0.0)
}

impl FirstOrderOp {
    pub fn new(rank: usize, sigma1: Vec<Field>, q0: Field) -> Result<Self> {
        if sigma1.iter().any(|f| f.rank() != rank) || q0.rank() != rank {
            return Err(Error::Dimension(format!(
                "operator coefficients must all have rank {rank}"
            )));
        }
        let mut op = Self {
            rank,
            sigma1,
            q0,
            sigma1_zero: false,
            q0_zero: false,
            sigma1_const: None,
            q0_const: None,
        };
        op.refresh();
        Ok(op)
    }

    fn refresh(&mut self) {
        self.sigma1_zero = self.sigma1.iter().all(field_is_zero);
        self.q0_zero = field_is_zero(&self.q0);
        self.sigma1_const = self.sigma1.iter().map(|f| f.constant()).collect();
        self.q0_const = self.q0.constant();
    }

    /// `Q ≡ 0`.
    pub fn zero(model: &ManifoldModel, rank: usize) -> Result<Self> {
        let zero = |m: &ManifoldModel| -> Result<Field> {
            Ok(match m.periods() {
                Some(_) => Arc::new(TrigField::zero(m, rank)?),
                None => Arc::new(ConstField(FiberMat::zeros(rank))),
            })
        };
        let sigma1 = (0..model.dim())
            .map(|_| zero(model))
            .collect::<Result<Vec<_>>>()?;
        Self::new(rank, sigma1, zero(model)?)
    }

    /// Zeroth-order operator `Q = q0`.
    pub fn potential(model: &ManifoldModel, q0: Field) -> Result<Self> {
        let mut op = Self::zero(model, q0.rank())?;
        op.q0 = q0;
        op.refresh();
        Ok(op)
    }

    /// `Q = a ∂_θ + V` on a circle, both constant multiples of the identity.
    pub fn circle_scalar(
        model: &ManifoldModel,
        rank: usize,
        a: Complex64,
        v: Complex64,
    ) -> Result<Self> {
        if model.dim() != 1 || model.periods().is_none() {
            return Err(Error::Unsupported("circle_scalar needs a circle".into()));
        }
        let sigma: Field = Arc::new(TrigField::constant(model, FiberMat::scalar(rank, a))?);
        let q0: Field = Arc::new(TrigField::constant(model, FiberMat::scalar(rank, v))?);
        Self::new(rank, vec![sigma], q0)
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn sigma1_fields(&self) -> &[Field] {
        &self.sigma1
    }

    pub fn q0_field(&self) -> &Field {
        &self.q0
    }

    pub fn has_first_order_part(&self) -> bool {
        !self.sigma1_zero
    }

    /// `σ(p, v)`, linear in `v`.
    #[inline]
    pub fn sigma1(&self, p: &Point, v: &Coords) -> FiberMat {
        let mut out = FiberMat::zeros(self.rank);
        if self.sigma1_zero {
            return out;
        }
        if let Some(values) = &self.sigma1_const {
            for (j, c) in values.iter().enumerate().take(v.dim()) {
                if v[j] != 0.0 {
                    out += c.scale_re(v[j]);
                }
            }
            return out;
        }
        for (j, f) in self.sigma1.iter().enumerate().take(v.dim()) {
            if v[j] != 0.0 {
                out += f.eval(p).scale_re(v[j]);
            }
        }
        out
    }

    #[inline]
    pub fn q0(&self, p: &Point) -> FiberMat {
        if self.q0_zero {
            FiberMat::zeros(self.rank)
        } else if let Some(c) = self.q0_const {
            c
        } else {
            self.q0.eval(p)
        }
    }

    /// The operator with only its first-order part.
    pub fn first_order_part(&self, model: &ManifoldModel) -> Result<Self> {
        let mut op = Self::zero(model, self.rank)?;
        op.sigma1 = self.sigma1.clone();
        op.refresh();
        Ok(op)
    }

    /// The operator with only its zeroth-order part.
    pub fn zeroth_order_part(&self, model: &ManifoldModel) -> Result<Self> {
        Self::potential(model, self.q0.clone())
    }
}

fn check_inputs(bundle: &BundleSpec, op: &FirstOrderOp, t: f64, mc: &McConfig) -> Result<()> {
    mc.validate()?;
    if !(t.is_finite() && t > 0.0) {
        return domain(format!("time must be positive, got {t}"));
    }
    if op.rank() != bundle.rank() {
        return Err(Error::Dimension(format!(
            "operator rank {} differs from bundle rank {}",
            op.rank(),
            bundle.rank()
        )));
    }
    if op.sigma1_fields().len() != bundle.base().dim() {
        return Err(Error::Dimension(
            "one sigma1 coefficient per chart direction is required".into(),
        ));
    }
    Ok(())
}

/// A path together with its transport and weight process, advanced in step.
pub struct QWalk<'a> {
    bundle: &'a BundleSpec,
    op: &'a FirstOrderOp,
    walker: Walker<'a>,
    flat_connection: bool,
    pub transport: TransportState,
    pub q: FiberMat,
}

impl<'a> QWalk<'a> {
    pub fn new(
        bundle: &'a BundleSpec,
        op: &'a FirstOrderOp,
        start: &Point,
        rng: RngConfig,
    ) -> Result<Self> {
        Ok(Self {
            bundle,
            op,
            walker: Walker::new(bundle.base(), start, rng)?,
            flat_connection: bundle.connection().is_zero(),
            transport: TransportState::start(bundle, start),
            q: FiberMat::identity(op.rank()),
        })
    }

    #[inline]
    pub fn step(&mut self, dt: f64) -> Step {
        let step = self.walker.step(dt);
        let transport = (!self.flat_connection).then_some(&self.transport);
        q_update(&mut self.q, self.op, transport, &step);
        self.transport
            .advance(self.bundle, &step, TransportRule::Midpoint);
        step
    }

    pub fn current(&self) -> Point {
        self.walker.current()
    }

    /// Run `n` steps of `dt` with the last one of length `last`.
    pub fn run(&mut self, n: usize, dt: f64, last: f64) {
        for i in 0..n {
            self.step(if i + 1 == n { last } else { dt });
        }
    }
}

#[inline]
fn q_update(q: &mut FiberMat, op: &FirstOrderOp, transport: Option<&TransportState>, step: &Step) {
    if op.sigma1_zero && op.q0_zero {
        return;
    }
    let mut x = op.sigma1(&step.from, &step.tangent);
    if !op.q0_zero {
        x += op.q0(&step.from).scale_re(step.dt);
    }
    let conj = transport.map_or(x, |tr| tr.conjugate(&x));
    *q = *q - *q * conj;
}

/// Euler solution `𝒬_n` of the Itô equation along a stored path.
pub fn solve_q_process(
    bundle: &BundleSpec,
    op: &FirstOrderOp,
    path: &PathSample,
    transport: &TransportSequence,
) -> Result<FiberMat> {
    Ok(*q_history(bundle, op, path, transport)?
        .last()
        .expect("at least one entry"))
}

fn q_history(
    bundle: &BundleSpec,
    op: &FirstOrderOp,
    path: &PathSample,
    transport: &TransportSequence,
) -> Result<Vec<FiberMat>> {
    if transport.matrices.len() != path.points.len() {
        return domain("transport is not aligned with the path");
    }
    if op.rank() != bundle.rank() {
        return Err(Error::Dimension("operator and bundle ranks differ".into()));
    }
    let mut q = FiberMat::identity(op.rank());
    let mut out = Vec::with_capacity(path.points.len());
    out.push(q);
    for i in 0..path.n_steps() {
        let step = path.step(bundle.base(), i)?;
        let state = TransportState {
            matrix: transport.matrices[i],
            chart: transport.charts[i],
        };
        q_update(&mut q, op, Some(&state), &step);
        out.push(q);
    }
    Ok(out)
}

/// `𝒬_n` for one path started at `x`, with the final transport and end point.
pub fn q_sample(
    bundle: &BundleSpec,
    op: &FirstOrderOp,
    x: &Point,
    t: f64,
    dt: f64,
    rng: RngConfig,
) -> Result<(FiberMat, TransportState, Point)> {
    let (n, last) = step_schedule(t, dt)?;
    let mut walk = QWalk::new(bundle, op, x, rng)?;
    walk.run(n, dt, last);
    Ok((walk.q, walk.transport, walk.current()))
}

/// Monte Carlo estimate of `(e^{-tH} Ψ)(x) = E[𝒬(t) //(t)^{-1} Ψ(𝖻_t)]`.
pub fn fk_estimate(
    bundle: &BundleSpec,
    op: &FirstOrderOp,
    psi: &SectionFn,
    x: &Point,
    t: f64,
    mc: &McConfig,
) -> Result<Estimate> {
    check_inputs(bundle, op, t, mc)?;
    if psi.rank() != bundle.rank() {
        return Err(Error::Dimension(
            "section rank differs from bundle rank".into(),
        ));
    }
    bundle.base().validate_point(x)?;
    let (n, last) = step_schedule(t, mc.dt)?;
    let d = bundle.rank();
    let streams = mc.streams(0);
    let (moments, secs) = timed(|| {
        run_paths(mc.n_paths, d, mc.workers, |i, out| {
            let mut walk = QWalk::new(bundle, op, x, streams.get(i))?;
            walk.run(n, mc.dt, last);
            let v = psi.eval(&walk.current());
            let pulled = walk.transport.matrix.adjoint().apply(&v);
            let v = walk.q.apply(&pulled);
            out.copy_from_slice(v.as_slice());
            Ok(())
        })
    })?;
    let mut est = moments.estimate(d, 1, mc);
    est.wall_time_s = Some(secs);
    Ok(est)
}

/// Bridge-weighted estimate of the kernel `e^{-tH}(x, y)`, a map from the
/// fiber over `y` to the fiber over `x`.
///
/// Paths run on `[0, t - δ]`; over the final interval `𝒬` is frozen and the
/// transport is closed by one midpoint step from `𝖻_{t-δ}` to `y`.
pub fn kernel_estimate(
    bundle: &BundleSpec,
    op: &FirstOrderOp,
    x: &Point,
    y: &Point,
    t: f64,
    mc: &McConfig,
) -> Result<Estimate> {
    kernel_estimate_in(bundle, op, x, y, t, mc, 0)
}

fn kernel_estimate_in(
    bundle: &BundleSpec,
    op: &FirstOrderOp,
    x: &Point,
    y: &Point,
    t: f64,
    mc: &McConfig,
    family: u64,
) -> Result<Estimate> {
    check_inputs(bundle, op, t, mc)?;
    let model = bundle.base();
    model.validate_point(x)?;
    model.validate_point(y)?;
    let delta = mc.bridge_delta.unwrap_or_else(|| default_delta(t, mc.dt));
    let n = bridge_schedule(t, mc.dt, delta)?;
    let p_t = model.heat_kernel(x, y, t)?;
    if !(p_t > 0.0) {
        return Err(Error::Domain(
            "heat kernel vanishes at the requested points".into(),
        ));
    }
    let d = bundle.rank();
    let streams = mc.streams(family);
    let (moments, secs) = timed(|| {
        run_paths(mc.n_paths, d * d + 1, mc.workers, |i, out| {
            let mut walk = QWalk::new(bundle, op, x, streams.get(i))?;
            walk.run(n, mc.dt, mc.dt);
            let end = walk.current();
            let w = model.heat_kernel(&end, y, delta)? / p_t;
            let closed = close_transport(bundle, &walk.transport, &end, y)?;
            let f = walk.q * closed.adjoint();
            for (o, z) in out.iter_mut().zip(f.entries()) {
                *o = z * w;
            }
            out[d * d] = Complex64::new(w, 0.0);
            Ok(())
        })
    })?;
    let mut est = moments.ratio_estimate(d, d, p_t, mc)?;
    est.wall_time_s = Some(secs);
    Ok(est)
}

/// Two-point extrapolation `2 K(δ/2) - K(δ)` removing the leading `O(δ)`
/// bias of [`kernel_estimate`]; `δ` must be an even multiple of `dt`.
pub fn kernel_estimate_extrapolated(
    bundle: &BundleSpec,
    op: &FirstOrderOp,
    x: &Point,
    y: &Point,
    t: f64,
    mc: &McConfig,
) -> Result<Estimate> {
    let delta = match mc.bridge_delta {
        Some(d) => d,
        None => {
            let d = default_delta(t, mc.dt);
            ((d / (2.0 * mc.dt)) - 1e-9).ceil() * 2.0 * mc.dt
        }
    };
    let half = mc.with_delta(delta / 2.0);
    bridge_schedule(t, mc.dt, delta / 2.0)?;
    let coarse = kernel_estimate_in(bundle, op, x, y, t, &mc.with_delta(delta), 0)?;
    let fine = kernel_estimate_in(bundle, op, x, y, t, &half, 1)?;
    let mut out = fine.clone();
    for j in 0..out.mean.len() {
        out.mean[j] = fine.mean[j] * 2.0 - coarse.mean[j];
        out.stderr[j] = (4.0 * fine.stderr[j].powi(2) + coarse.stderr[j].powi(2)).sqrt();
    }
    out.wall_time_s = match (coarse.wall_time_s, fine.wall_time_s) {
        (Some(a), Some(b)) => Some(a + b),
        _ => None,
    };
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridReport {
    /// One estimate per grid point.
    pub points: Vec<Estimate>,
    pub sup: f64,
    pub sup_stderr: f64,
    pub argmax: usize,
}

impl GridReport {
    fn from_points(points: Vec<Estimate>) -> Self {
        let (argmax, sup, sup_stderr) = points
            .iter()
            .enumerate()
            .map(|(i, e)| (i, e.mean[0].re, e.stderr[0]))
            .fold((0, f64::NEG_INFINITY, 0.0), |acc, v| {
                if v.1 > acc.1 {
                    v
                } else {
                    acc
                }
            });
        Self {
            points,
            sup,
            sup_stderr,
            argmax,
        }
    }
}

/// `E[|𝒬(t)|²]` (spectral norm) at each grid point; grid point `j` uses
/// stream family `j`.
pub fn moment_diagnostic(
    bundle: &BundleSpec,
    op: &FirstOrderOp,
    grid: &[Point],
    t: f64,
    mc: &McConfig,
) -> Result<GridReport> {
    check_inputs(bundle, op, t, mc)?;
    if grid.is_empty() {
        return domain("moment diagnostic needs at least one grid point");
    }
    let (n, last) = step_schedule(t, mc.dt)?;
    let mut points = Vec::with_capacity(grid.len());
    for (j, x) in grid.iter().enumerate() {
        bundle.base().validate_point(x)?;
        let streams = mc.streams(j as u64);
        let m = run_paths(mc.n_paths, 1, mc.workers, |i, out| {
            let mut walk = QWalk::new(bundle, op, x, streams.get(i))?;
            walk.run(n, mc.dt, last);
            out[0] = Complex64::new(walk.q.spectral_norm().powi(2), 0.0);
            Ok(())
        })?;
        points.push(m.estimate(1, 1, mc));
    }
    Ok(GridReport::from_points(points))
}

/// `‖𝒬 - 𝒬₂𝒬₁‖` on one path, where `𝒬₁` solves the equation with the
/// first-order part only and `𝒬₂` the drift equation
/// `d𝒬₂ = -𝒬₂ 𝒬₁ //^{-1} q0 // 𝒬₁^{-1} dt`.
pub fn factorization_check(
    bundle: &BundleSpec,
    op: &FirstOrderOp,
    path: &PathSample,
    transport: &TransportSequence,
) -> Result<f64> {
    let model = bundle.base();
    let q = solve_q_process(bundle, op, path, transport)?;
    let q1_path = q_history(bundle, &op.first_order_part(model)?, path, transport)?;
    let mut q2 = FiberMat::identity(op.rank());
    if !op.q0_zero {
        for i in 0..path.n_steps() {
            let step = path.step(model, i)?;
            let q1 = q1_path[i];
            let q1_inv = q1
                .inverse()
                .ok_or_else(|| Error::Internal("first-order factor became singular".into()))?;
            let drift = FiberMat::conjugate_unitary(&op.q0(&step.from), &transport.matrices[i]);
            q2 = q2 - q2 * (q1 * drift * q1_inv).scale_re(step.dt);
        }
    }
    let q1 = *q1_path.last().expect("nonempty");
    Ok((q - q2 * q1).frobenius_norm())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KatoReport {
    /// `sup_x ∫_0^t E|w(𝖻_s)| ds`.
    pub integral: GridReport,
    /// `sup_x E[exp(p ∫_0^t |w(𝖻_s)| ds)]`, when requested.
    pub exponential_moment: Option<GridReport>,
}

/// Kato-class diagnostic for a scalar potential, trapezoidal in time.
pub fn kato_estimate(
    model: &ManifoldModel,
    w: &ScalarFn,
    t: f64,
    grid: &[Point],
    mc: &McConfig,
    exponent: Option<f64>,
) -> Result<KatoReport> {
    mc.validate()?;
    if !(t.is_finite() && t > 0.0) {
        return domain(format!("time must be positive, got {t}"));
    }
    if grid.is_empty() {
        return domain("Kato diagnostic needs at least one grid point");
    }
    let (n, last) = step_schedule(t, mc.dt)?;
    let p = exponent.unwrap_or(0.0);
    let mut integrals = Vec::with_capacity(grid.len());
    let mut moments = Vec::with_capacity(grid.len());
    for (j, x) in grid.iter().enumerate() {
        model.validate_point(x)?;
        let streams = mc.streams(j as u64);
        let m = run_paths(mc.n_paths, 2, mc.workers, |i, out| {
            let mut walker = Walker::new(model, x, streams.get(i))?;
            let mut prev = w(x).abs();
            let mut integral = 0.0;
            for k in 0..n {
                let h = if k + 1 == n { last } else { mc.dt };
                let step = walker.step(h);
                let next = w(&step.to).abs();
                integral += 0.5 * (prev + next) * h;
                prev = next;
            }
            out[0] = Complex64::new(integral, 0.0);
            out[1] = Complex64::new((p * integral).exp(), 0.0);
            Ok(())
        })?;
        let full = m.estimate(1, 2, mc);
        let split = |k: usize| Estimate {
            rows: 1,
            cols: 1,
            mean: vec![full.mean[k]],
            stderr: vec![full.stderr[k]],
            ..full.clone()
        };
        integrals.push(split(0));
        moments.push(split(1));
    }
    Ok(KatoReport {
        integral: GridReport::from_points(integrals),
        exponential_moment: exponent.map(|_| GridReport::from_points(moments)),
    })
}

/// A constant section.
pub fn constant_section(values: &[Complex64]) -> Result<SectionFn> {
    Ok(SectionFn::constant(FiberVec::from_slice(values)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::mode1;
    use crate::paths::sample_bm;
    use crate::transport::parallel_transport;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn circle() -> ManifoldModel {
        ManifoldModel::circle(1.0).unwrap()
    }

    #[test]
    fn zero_operator_gives_identity_process() {
        let s = ManifoldModel::sphere2(1.0).unwrap();
        let b = BundleSpec::tangent_s2(&s).unwrap();
        let op = FirstOrderOp::zero(&s, 2).unwrap();
        let x = s.sphere_point_polar(0.4, 0.2).unwrap();
        let path = sample_bm(&s, &x, 0.5, 0.01, RngConfig::new(1, 1)).unwrap();
        let tr = parallel_transport(&b, &path).unwrap();
        assert_eq!(
            solve_q_process(&b, &op, &path, &tr).unwrap(),
            FiberMat::identity(2)
        );
    }

    #[test]
    fn constant_potential_follows_scalar_euler() {
        let m = circle();
        let b = BundleSpec::trivial(&m, 1).unwrap();
        let cst = 0.7;
        let op = FirstOrderOp::circle_scalar(&m, 1, c(0.0, 0.0), c(cst, 0.0)).unwrap();
        let x = m.flat_point(&[0.0]).unwrap();
        for dt in [1e-2, 1e-3] {
            let path = sample_bm(&m, &x, 1.0, dt, RngConfig::new(0, 0)).unwrap();
            let tr = parallel_transport(&b, &path).unwrap();
            let q = solve_q_process(&b, &op, &path, &tr).unwrap()[(0, 0)];
            let euler = (1.0 - cst * dt).powi(path.n_steps() as i32);
            assert!((q.re - euler).abs() < 1e-12);
            assert!((q.re - (-cst).exp()).abs() <= cst * cst * dt);
        }
    }

    #[test]
    fn trivial_fk_returns_constant_exactly() {
        let m = ManifoldModel::flat_torus(&[1.0, 2.0]).unwrap();
        let b = BundleSpec::trivial(&m, 2).unwrap();
        let op = FirstOrderOp::zero(&m, 2).unwrap();
        let v = [c(1.0, 2.0), c(-0.5, 0.0)];
        let psi = constant_section(&v).unwrap();
        let mc = McConfig::new(3000, 0.05, 4).unwrap();
        let e = fk_estimate(&b, &op, &psi, &m.flat_point(&[0.2, 0.3]).unwrap(), 1.0, &mc).unwrap();
        assert_eq!(e.mean, v.to_vec());
        assert_eq!(e.stderr, vec![0.0, 0.0]);
    }

    #[test]
    fn nilpotent_potential_matches_closed_form() {
        let m = circle();
        let b = BundleSpec::trivial(&m, 2).unwrap();
        let nil = FiberMat::from_fn(2, |i, j| {
            if (i, j) == (0, 1) {
                c(1.0, 0.0)
            } else {
                c(0.0, 0.0)
            }
        });
        let op =
            FirstOrderOp::potential(&m, Arc::new(TrigField::constant(&m, nil).unwrap())).unwrap();
        let w = [c(0.3, 0.0), c(1.0, -1.0)];
        let psi = constant_section(&w).unwrap();
        let t = 0.8;
        let mc = McConfig::new(200, 0.01, 0).unwrap();
        let e = fk_estimate(&b, &op, &psi, &m.flat_point(&[0.0]).unwrap(), t, &mc).unwrap();
        // Euler product (I - N dt)^n = I - n dt N exactly since N² = 0.
        let expected = [w[0] - w[1] * t, w[1]];
        assert!(e.max_error(&expected) < 1e-12);
    }

    #[test]
    fn circle_drift_matches_fourier_symbol() {
        let m = circle();
        let b = BundleSpec::trivial(&m, 1).unwrap();
        let (a, v, k, t, xpos) = (c(1.0, 0.0), c(0.5, 0.2), 1, 0.5, 0.3);
        let op = FirstOrderOp::circle_scalar(&m, 1, a, v).unwrap();
        let psi = SectionFn::trig(&m, vec![(mode1(k), vec![c(1.0, 0.0)])]).unwrap();
        let mc = McConfig::new(20_000, 1e-2, 3).unwrap();
        let e = fk_estimate(&b, &op, &psi, &m.flat_point(&[xpos]).unwrap(), t, &mc).unwrap();
        let kf = k as f64;
        let ik = c(0.0, kf);
        let n = 50;
        let discrete = (ik * xpos).exp()
            * (-kf * kf * t / 2.0).exp()
            * (c(1.0, 0.0) - (v + ik * a) * mc.dt).powi(n);
        assert!(
            e.agrees(&[discrete], 4.0, 0.0),
            "{:?} vs {discrete}",
            e.mean
        );
    }

    #[test]
    fn kernel_of_constant_potential_scales_heat_kernel() {
        let m = circle();
        let b = BundleSpec::trivial(&m, 1).unwrap();
        let v = 0.6;
        let op = FirstOrderOp::circle_scalar(&m, 1, c(0.0, 0.0), c(v, 0.0)).unwrap();
        let (x, y) = (m.flat_point(&[0.0]).unwrap(), m.flat_point(&[0.5]).unwrap());
        let t = 0.5;
        let mc = McConfig::new(20_000, 5e-3, 9).unwrap();
        let e = kernel_estimate(&b, &op, &x, &y, t, &mc).unwrap();
        let n = bridge_schedule(t, mc.dt, default_delta(t, mc.dt)).unwrap();
        // 𝒬 is deterministic and frozen over the last interval.
        let target = (1.0 - v * mc.dt).powi(n as i32) * m.heat_kernel(&x, &y, t).unwrap();
        assert!(
            e.agrees(&[c(target, 0.0)], 4.0, 0.0),
            "{:?} vs {target}",
            e.mean
        );
    }

    #[test]
    fn flat_connection_kernel_on_sphere_trivial_matches_heat_kernel() {
        let s = ManifoldModel::sphere2(1.0).unwrap();
        let b = BundleSpec::tangent_s2(&s).unwrap();
        let op = FirstOrderOp::zero(&s, 2).unwrap();
        let x = s.sphere_point_polar(0.5, 0.0).unwrap();
        let mc = McConfig::new(4000, 0.01, 2).unwrap();
        let e = kernel_estimate(&b, &op, &x, &x, 0.5, &mc).unwrap();
        // Trace of the tangent kernel diagonal is bounded by 2 p(t,x,x).
        let p = s.heat_kernel(&x, &x, 0.5).unwrap();
        assert!(e.mean.iter().all(|z| z.norm() <= 1.2 * p));
    }

    #[test]
    fn factorization_trivial_cases_are_exact() {
        let m = circle();
        let b = BundleSpec::u1_flat(&m, &[0.3]).unwrap();
        let x = m.flat_point(&[0.0]).unwrap();
        let path = sample_bm(&m, &x, 1.0, 0.01, RngConfig::new(5, 0)).unwrap();
        let tr = parallel_transport(&b, &path).unwrap();
        let only_q0 = FirstOrderOp::circle_scalar(&m, 1, c(0.0, 0.0), c(0.5, 1.0)).unwrap();
        let only_sigma = FirstOrderOp::circle_scalar(&m, 1, c(1.0, 0.5), c(0.0, 0.0)).unwrap();
        assert!(factorization_check(&b, &only_q0, &path, &tr).unwrap() <= 1e-12);
        assert!(factorization_check(&b, &only_sigma, &path, &tr).unwrap() <= 1e-12);
    }

    #[test]
    fn kato_constant_potential_is_exact() {
        let m = circle();
        let cst = 1.7;
        let w: ScalarFn = Arc::new(move |_| cst);
        let grid = [m.flat_point(&[0.0]).unwrap(), m.flat_point(&[PI]).unwrap()];
        let mc = McConfig::new(100, 0.01, 0).unwrap();
        let r = kato_estimate(&m, &w, 0.7, &grid, &mc, Some(0.5)).unwrap();
        assert!((r.integral.sup - cst * 0.7).abs() < 1e-12);
        assert_eq!(r.integral.sup_stderr, 0.0);
        assert!((r.exponential_moment.unwrap().sup - (0.5 * cst * 0.7f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn self_adjoint_potential_contracts_pathwise() {
        let m = circle();
        let b = BundleSpec::u1_flat(&m, &[0.4]).unwrap();
        let kappa = 0.5;
        // Hermitian with eigenvalues 0.5 + 0.3·(1 ± cos θ)-ish, all ≥ κ.
        let h = FiberMat::from_fn(2, |i, j| match (i, j) {
            (0, 0) => c(0.8, 0.0),
            (1, 1) => c(kappa + 0.3, 0.0),
            _ => c(0.0, 0.0),
        });
        let off = FiberMat::from_fn(2, |i, j| if i != j { c(0.15, 0.0) } else { c(0.0, 0.0) });
        let q0 =
            TrigField::new(&m, 2, vec![([0; 4], h), (mode1(1), off), (mode1(-1), off)]).unwrap();
        let b2 = BundleSpec::trivial(&m, 2).unwrap();
        let op = FirstOrderOp::potential(&m, Arc::new(q0)).unwrap();
        let x = m.flat_point(&[0.1]).unwrap();
        let (t, dt) = (1.0, 1e-3);
        for seed in 0..20 {
            let (q, _, _) = q_sample(&b2, &op, &x, t, dt, RngConfig::new(seed, 0)).unwrap();
            assert!(q.spectral_norm() <= (-kappa * t).exp() * (1.0 + dt));
        }
        let _ = b;
    }

    proptest! {
        #[test]
        fn sigma1_is_linear(a in -2.0f64..2.0, bcoef in -2.0f64..2.0, v0 in -1.0f64..1.0, v1 in -1.0f64..1.0, w0 in -1.0f64..1.0, w1 in -1.0f64..1.0) {
            let m = ManifoldModel::flat_torus(&[1.0, 1.5]).unwrap();
            let s0 = FiberMat::from_fn(2, |i, j| c(i as f64 + 0.5, j as f64 - 0.2));
            let s1 = FiberMat::from_fn(2, |i, j| c(-(j as f64), 0.3 * i as f64));
            let f0: Field = Arc::new(TrigField::new(&m, 2, vec![(mode1(1), s0), ([0; 4], s1)]).unwrap());
            let f1: Field = Arc::new(TrigField::constant(&m, s0 * s1).unwrap());
            let op = FirstOrderOp::new(2, vec![f0, f1], Arc::new(ConstField(FiberMat::zeros(2)))).unwrap();
            let p = m.flat_point(&[0.3, 0.9]).unwrap();
            let v = Coords::from_slice(&[v0, v1]).unwrap();
            let w = Coords::from_slice(&[w0, w1]).unwrap();
            let comb = Coords::from_slice(&[a * v0 + bcoef * w0, a * v1 + bcoef * w1]).unwrap();
            let lhs = op.sigma1(&p, &comb);
            let rhs = op.sigma1(&p, &v).scale_re(a) + op.sigma1(&p, &w).scale_re(bcoef);
            prop_assert!((lhs - rhs).frobenius_norm() <= 1e-12);
        }
    }
}
