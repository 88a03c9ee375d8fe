//! Metric connections on vector bundles over the model geometries and
//! stochastic parallel transport along sampled paths.
//!
//! Fiber coordinates are chart-referenced. `//_i` maps coordinates in the
//! fiber over the start point to coordinates in the fiber over `b_i`,
//! expressed in the chart of `b_i`. A section `s` is parallel when
//! `ds = -A(dx) s`, so each step multiplies on the left:
//! `//_{i+1} = exp(-A(mid) Δx) //_i`, followed by the bundle transition if
//! the path changed chart.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{domain, Error, Result};
use crate::fields::TrigField;
use crate::geometry::{Chart, Coords, ManifoldKind, ManifoldModel, Point};
use crate::linalg::FiberMat;
use crate::paths::{PathSample, Step};

/// Local connection 1-form `A = Σ A_k du^k` in every chart, plus transitions.
pub trait ConnectionForm: Send + Sync {
    fn rank(&self) -> usize;

    /// `A_k(p)` in the chart of `p`.
    fn component(&self, p: &Point, k: usize) -> FiberMat;

    /// Unitary map from fiber coordinates in `from` to those in `to` at `p`.
    fn transition(&self, p: &Point, from: Chart, to: Chart) -> FiberMat {
        let _ = (p, from, to);
        FiberMat::identity(self.rank())
    }

    /// `A ≡ 0` in every chart with identity transitions.
    fn is_zero(&self) -> bool {
        false
    }

    /// Exact Fourier data for each `A_k`, when available.
    fn trig_components(&self) -> Option<&[TrigField]> {
        None
    }

    /// `A(p)(v) = Σ_k v^k A_k(p)`.
    fn potential(&self, p: &Point, v: &Coords) -> FiberMat {
        let mut out = FiberMat::zeros(self.rank());
        for k in 0..v.dim() {
            if v[k] != 0.0 {
                out += self.component(p, k).scale_re(v[k]);
            }
        }
        out
    }
}

#[derive(Clone)]
pub struct BundleSpec {
    name: String,
    base: ManifoldModel,
    connection: Arc<dyn ConnectionForm>,
}

impl fmt::Debug for BundleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BundleSpec")
            .field("name", &self.name)
            .field("rank", &self.rank())
            .finish()
    }
}

impl BundleSpec {
    pub fn new(
        name: impl Into<String>,
        base: ManifoldModel,
        connection: Arc<dyn ConnectionForm>,
    ) -> Self {
        Self {
            name: name.into(),
            base,
            connection,
        }
    }

    /// Trivial rank-`d` bundle with the flat product connection.
    pub fn trivial(base: &ManifoldModel, rank: usize) -> Result<Self> {
        check_rank(rank)?;
        let trig = match base.periods() {
            Some(_) => (0..base.dim())
                .map(|_| TrigField::zero(base, rank))
                .collect::<Result<Vec<_>>>()?,
            None => Vec::new(),
        };
        Ok(Self::new(
            format!("trivial({rank})"),
            base.clone(),
            Arc::new(ConstantConnection {
                rank,
                components: vec![FiberMat::zeros(rank); base.dim()],
                trig,
            }),
        ))
    }

    /// Flat line bundle with `A = i Σ_k a_k dx^k` on a circle or torus.
    pub fn u1_flat(base: &ManifoldModel, a: &[f64]) -> Result<Self> {
        if base.periods().is_none() {
            return Err(Error::Unsupported(
                "u1_flat is defined on circles and tori".into(),
            ));
        }
        if a.len() != base.dim() {
            return Err(Error::Dimension(format!(
                "u1_flat needs {} coefficients, got {}",
                base.dim(),
                a.len()
            )));
        }
        let components: Vec<FiberMat> = a
            .iter()
            .map(|&ak| FiberMat::scalar(1, Complex64::new(0.0, ak)))
            .collect();
        let trig = components
            .iter()
            .map(|c| TrigField::constant(base, *c))
            .collect::<Result<Vec<_>>>()?;
        let label = a
            .iter()
            .map(|x| x.to_string())
            .collect::<Vec<_>>()
            .join(",");
        Ok(Self::new(
            format!("u1_flat({label})"),
            base.clone(),
            Arc::new(ConstantConnection {
                rank: 1,
                components,
                trig,
            }),
        ))
    }

    /// Connection with trigonometric-polynomial coefficients on a circle or torus.
    pub fn trig(base: &ManifoldModel, components: Vec<TrigField>) -> Result<Self> {
        if components.len() != base.dim() {
            return Err(Error::Dimension(format!(
                "need one connection coefficient per axis ({}), got {}",
                base.dim(),
                components.len()
            )));
        }
        let rank = components
            .first()
            .map(|c| crate::fields::MatrixField::rank(c))
            .unwrap_or(1);
        check_rank(rank)?;
        Ok(Self::new(
            "trig",
            base.clone(),
            Arc::new(TrigConnection { rank, components }),
        ))
    }

    /// Levi-Civita connection on the tangent bundle of a sphere, in the
    /// orthonormal chart frames `e_a = λ^{-1} ∂_a`.
    pub fn tangent_s2(base: &ManifoldModel) -> Result<Self> {
        if base.sphere_radius().is_none() {
            return Err(Error::Unsupported("tangent_s2 needs a sphere".into()));
        }
        Ok(Self::new(
            "tangent_s2",
            base.clone(),
            Arc::new(TangentConnection { base: base.clone() }),
        ))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn base(&self) -> &ManifoldModel {
        &self.base
    }

    pub fn rank(&self) -> usize {
        self.connection.rank()
    }

    pub fn connection(&self) -> &dyn ConnectionForm {
        self.connection.as_ref()
    }

    /// Conjugate the connection by a constant unitary gauge change `G`:
    /// fiber coordinates become `G s`, so `A` becomes `G A G^{-1}`.
    pub fn gauge_transformed(&self, gauge: FiberMat) -> Result<Self> {
        if gauge.dim() != self.rank() {
            return Err(Error::Dimension(
                "gauge rank differs from bundle rank".into(),
            ));
        }
        Ok(Self::new(
            format!("{}^G", self.name),
            self.base.clone(),
            Arc::new(GaugedConnection {
                inner: self.connection.clone(),
                gauge,
            }),
        ))
    }

    /// Largest anti-Hermiticity defect of `A_k` at `p`.
    pub fn metric_defect(&self, p: &Point) -> f64 {
        (0..p.dim())
            .map(|k| {
                let a = self.connection.component(p, k);
                (a + a.adjoint()).frobenius_norm()
            })
            .fold(0.0, f64::max)
    }
}

fn check_rank(rank: usize) -> Result<()> {
    if (1..=crate::linalg::MAX_RANK).contains(&rank) {
        Ok(())
    } else {
        Err(Error::Dimension(format!(
            "bundle rank {rank} outside 1..={}",
            crate::linalg::MAX_RANK
        )))
    }
}

struct ConstantConnection {
    rank: usize,
    components: Vec<FiberMat>,
    trig: Vec<TrigField>,
}

impl ConnectionForm for ConstantConnection {
    fn rank(&self) -> usize {
        self.rank
    }

    fn component(&self, _p: &Point, k: usize) -> FiberMat {
        self.components[k]
    }

    fn is_zero(&self) -> bool {
        self.components.iter().all(|c| c.frobenius_norm() == 0.0)
    }

    fn trig_components(&self) -> Option<&[TrigField]> {
        (!self.trig.is_empty()).then_some(self.trig.as_slice())
    }
}

struct TrigConnection {
    rank: usize,
    components: Vec<TrigField>,
}

impl ConnectionForm for TrigConnection {
    fn rank(&self) -> usize {
        self.rank
    }

    fn component(&self, p: &Point, k: usize) -> FiberMat {
        crate::fields::MatrixField::eval(&self.components[k], p)
    }

    fn trig_components(&self) -> Option<&[TrigField]> {
        Some(&self.components)
    }
}

struct TangentConnection {
    base: ManifoldModel,
}

impl ConnectionForm for TangentConnection {
    fn rank(&self) -> usize {
        2
    }

    /// `(A_k)^a_b = Γ^a_{kb} - ∂_k log λ δ^a_b`.
    fn component(&self, p: &Point, k: usize) -> FiberMat {
        let gamma = self
            .base
            .christoffel(p)
            .expect("transport evaluates the connection inside the chart domain");
        let grad = self.base.log_conformal_gradient(p);
        FiberMat::from_fn(2, |a, b| {
            let diag = if a == b { grad[k] } else { 0.0 };
            Complex64::new(gamma.get(a, k, b) - diag, 0.0)
        })
    }

    fn transition(&self, p: &Point, from: Chart, to: Chart) -> FiberMat {
        if from == to {
            return FiberMat::identity(2);
        }
        let u = chart_coords(&self.base, p, from);
        let beta = std::f64::consts::PI - 2.0 * u[1].atan2(u[0]);
        let (s, c) = beta.sin_cos();
        FiberMat::from_fn(2, |a, b| Complex64::new([[c, -s], [s, c]][a][b], 0.0))
    }
}

/// Coordinates of `p` in the chart `chart`.
pub(crate) fn chart_coords(model: &ManifoldModel, p: &Point, chart: Chart) -> [f64; 2] {
    if p.chart == chart {
        [p.coords[0], p.coords[1]]
    } else {
        let q = model
            .to_chart(p, chart)
            .expect("transition evaluated on the chart overlap");
        [q.coords[0], q.coords[1]]
    }
}

struct GaugedConnection {
    inner: Arc<dyn ConnectionForm>,
    gauge: FiberMat,
}

impl ConnectionForm for GaugedConnection {
    fn rank(&self) -> usize {
        self.inner.rank()
    }

    fn component(&self, p: &Point, k: usize) -> FiberMat {
        self.gauge * self.inner.component(p, k) * self.gauge.adjoint()
    }

    fn transition(&self, p: &Point, from: Chart, to: Chart) -> FiberMat {
        self.gauge * self.inner.transition(p, from, to) * self.gauge.adjoint()
    }
}

/// Evaluation point for the connection along a step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TransportRule {
    /// Geodesic midpoint; realizes Stratonovich transport.
    #[default]
    Midpoint,
    /// Start point; for convergence studies only.
    LeftPoint,
}

/// Running transport along a path, advanced one step at a time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransportState {
    pub matrix: FiberMat,
    pub chart: Chart,
}

impl TransportState {
    pub fn start(bundle: &BundleSpec, at: &Point) -> Self {
        Self {
            matrix: FiberMat::identity(bundle.rank()),
            chart: at.chart,
        }
    }

    /// Transport across one step. The returned matrix before any chart
    /// switch is exposed for Stratonovich functionals.
    #[inline]
    pub fn advance(&mut self, bundle: &BundleSpec, step: &Step, rule: TransportRule) -> FiberMat {
        debug_assert_eq!(self.chart, step.from.chart);
        let conn = bundle.connection();
        if conn.is_zero() {
            self.chart = step.to.chart;
            return self.matrix;
        }
        let at = match rule {
            TransportRule::Midpoint => &step.midpoint,
            TransportRule::LeftPoint => &step.from,
        };
        let increment = conn.potential(at, &step.delta);
        let before_switch = increment.scale_re(-1.0).exp() * self.matrix;
        self.matrix = if step.switches_chart() {
            conn.transition(&step.to, step.from.chart, step.to.chart) * before_switch
        } else {
            before_switch
        };
        self.chart = step.to.chart;
        before_switch
    }

    /// `//^{-1} X //` for an endomorphism `X` of the current fiber.
    #[inline]
    pub fn conjugate(&self, x: &FiberMat) -> FiberMat {
        FiberMat::conjugate_unitary(x, &self.matrix)
    }
}

/// Transport from `from` (the current path point) straight to `to` by one
/// midpoint step along the connecting geodesic. The result is expressed in
/// the chart of `to`.
pub fn close_transport(
    bundle: &BundleSpec,
    state: &TransportState,
    from: &Point,
    to: &Point,
) -> Result<FiberMat> {
    let model = bundle.base();
    let conn = bundle.connection();
    if conn.is_zero() {
        return Ok(state.matrix);
    }
    let m = model.dim();
    let (matrix, chart) = match model.sphere_radius() {
        None => {
            let periods = model.periods().expect("flat model has periods");
            let mut d = Coords::zeros(m);
            let mut mid = from.coords;
            for k in 0..m {
                d[k] = crate::geometry::periodic_offset(to.coords[k] - from.coords[k], periods[k]);
                mid[k] += 0.5 * d[k];
            }
            let mid = model.flat_point(mid.as_slice())?;
            (
                conn.potential(&mid, &d).scale_re(-1.0).exp() * state.matrix,
                Chart::Global,
            )
        }
        Some(r) => {
            let (matrix, end) = closing_step(model, conn, r, from, to, state.matrix, 0)?;
            (matrix, end.chart)
        }
    };
    Ok(if chart != to.chart {
        conn.transition(to, chart, to.chart) * matrix
    } else {
        matrix
    })
}

/// One midpoint step from `from` to `to` on the sphere, in a chart that
/// contains the start, the geodesic midpoint and the end. Steps that fit in
/// no chart are bisected. Returns the transport and the end point in the
/// chart it is expressed in.
fn closing_step(
    model: &ManifoldModel,
    conn: &dyn ConnectionForm,
    r: f64,
    from: &Point,
    to: &Point,
    matrix: FiberMat,
    depth: usize,
) -> Result<(FiberMat, Point)> {
    let (x, y) = (
        from.embedded.unwrap_or_default(),
        to.embedded.unwrap_or_default(),
    );
    let sum = [x[0] + y[0], x[1] + y[1], x[2] + y[2]];
    let len = crate::geometry::norm3(&sum);
    if len <= 1e-12 * r {
        return domain("closing transport between antipodal points");
    }
    let mid = model.sphere_point(crate::geometry::scale3(&sum, r / len))?;
    let within = |p: &Point, chart: Chart| {
        model
            .to_chart(p, chart)
            .ok()
            .filter(|e| e.coords.norm() <= crate::geometry::CHART_LIMIT)
    };
    for chart in [from.chart, from.chart.other()] {
        if let (Some(base), Some(m), Some(end)) =
            (within(from, chart), within(&mid, chart), within(to, chart))
        {
            let matrix = if chart != from.chart {
                conn.transition(&base, from.chart, chart) * matrix
            } else {
                matrix
            };
            let mut d = Coords::zeros(2);
            d[0] = end.coords[0] - base.coords[0];
            d[1] = end.coords[1] - base.coords[1];
            return Ok((conn.potential(&m, &d).scale_re(-1.0).exp() * matrix, end));
        }
    }
    if depth >= 8 {
        return domain("closing step does not fit in a chart");
    }
    let (m1, half) = closing_step(model, conn, r, from, &mid, matrix, depth + 1)?;
    closing_step(model, conn, r, &half, to, m1, depth + 1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransportSequence {
    pub matrices: Vec<FiberMat>,
    pub charts: Vec<Chart>,
}

/// Stochastic parallel transport along a sampled path.
pub fn parallel_transport(bundle: &BundleSpec, path: &PathSample) -> Result<TransportSequence> {
    parallel_transport_with(bundle, path, TransportRule::Midpoint)
}

pub fn parallel_transport_with(
    bundle: &BundleSpec,
    path: &PathSample,
    rule: TransportRule,
) -> Result<TransportSequence> {
    let model = bundle.base();
    if path.points.first().map(|p| p.dim()) != Some(model.dim()) {
        return Err(Error::Internal(
            "path and bundle live on different geometries".into(),
        ));
    }
    let start = path.points[0];
    let mut state = TransportState::start(bundle, &start);
    let mut seq = TransportSequence {
        matrices: Vec::with_capacity(path.points.len()),
        charts: Vec::with_capacity(path.points.len()),
    };
    seq.matrices.push(state.matrix);
    seq.charts.push(state.chart);
    for i in 0..path.n_steps() {
        let step = path.step(model, i)?;
        if step.from.chart != state.chart {
            return Err(Error::Internal(
                "path chart does not match transport chart".into(),
            ));
        }
        state.advance(bundle, &step, rule);
        seq.matrices.push(state.matrix);
        seq.charts.push(state.chart);
    }
    Ok(seq)
}

/// `//_i^{-1} X //_i`: the endomorphism `X` of the fiber over `b_i`, seen
/// from the fiber over the start point.
pub fn transport_conjugate(seq: &TransportSequence, i: usize, x: &FiberMat) -> Result<FiberMat> {
    let m = seq.matrices.get(i).ok_or_else(|| {
        Error::Domain(format!(
            "index {i} beyond transport of length {}",
            seq.matrices.len()
        ))
    })?;
    if m.dim() != x.dim() {
        return Err(Error::Dimension(
            "endomorphism rank differs from bundle rank".into(),
        ));
    }
    let inv = m
        .inverse()
        .ok_or_else(|| Error::Internal("singular transport matrix".into()))?;
    Ok(inv * *x * *m)
}

/// A deterministic path through the given points (consecutive points must
/// be close). Frames are set to the identity and increments to the chart
/// displacement, which is all transport needs.
pub fn path_through(model: &ManifoldModel, points: &[Point], dt: f64) -> Result<PathSample> {
    if points.len() < 2 {
        return Err(Error::Domain("a path needs at least two points".into()));
    }
    let m = model.dim();
    let mut increments = Vec::with_capacity(points.len() - 1);
    let mut fixed = Vec::with_capacity(points.len());
    fixed.push(points[0]);
    for w in points.windows(2) {
        let (a, b) = (fixed.last().copied().expect("nonempty"), w[1]);
        let mut d = Coords::zeros(m);
        match model.kind() {
            ManifoldKind::Sphere2 { .. } => {
                let b_here = model.to_chart(&b, a.chart)?;
                for k in 0..m {
                    d[k] = b_here.coords[k] - a.coords[k];
                }
                let b_next = if b_here.coords.norm() > crate::geometry::CHART_SWITCH {
                    model.to_chart(&b, a.chart.other())?
                } else {
                    b_here
                };
                fixed.push(b_next);
            }
            _ => {
                let periods = model.periods().expect("flat model has periods");
                for k in 0..m {
                    d[k] = crate::geometry::periodic_offset(b.coords[k] - a.coords[k], periods[k]);
                }
                fixed.push(b);
            }
        }
        increments.push(d);
    }
    let frames = vec![crate::paths::FrameMat::identity(m); fixed.len()];
    let times = (0..fixed.len()).map(|i| i as f64 * dt).collect();
    Ok(PathSample {
        times,
        dt,
        last_dt: dt,
        points: fixed,
        frames,
        increments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{cross3, dot3, norm3, scale3};
    use crate::paths::sample_bm;
    use crate::rng::RngConfig;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn trivial_connection_gives_identity() {
        let t = ManifoldModel::flat_torus(&[1.0, 2.0]).unwrap();
        let b = BundleSpec::trivial(&t, 3).unwrap();
        let x = t.flat_point(&[0.1, 0.2]).unwrap();
        let path = sample_bm(&t, &x, 0.5, 0.01, RngConfig::new(0, 0)).unwrap();
        let seq = parallel_transport(&b, &path).unwrap();
        assert!(seq.matrices.iter().all(|m| *m == FiberMat::identity(3)));
        let xm = FiberMat::from_fn(3, |i, j| c(i as f64, j as f64));
        assert_eq!(transport_conjugate(&seq, 10, &xm).unwrap(), xm);
    }

    #[test]
    fn circle_loop_holonomy() {
        let circle = ManifoldModel::circle(1.0).unwrap();
        let a = 0.37;
        let b = BundleSpec::u1_flat(&circle, &[a]).unwrap();
        let n = 62_832; // dt = 1e-4 in arclength
        let pts: Vec<Point> = (0..=n)
            .map(|i| {
                circle
                    .flat_point(&[2.0 * PI * i as f64 / n as f64])
                    .unwrap()
            })
            .collect();
        let path = path_through(&circle, &pts, 1e-4).unwrap();
        let seq = parallel_transport(&b, &path).unwrap();
        let hol = seq.matrices.last().unwrap()[(0, 0)];
        assert!((hol - Complex64::from_polar(1.0, -2.0 * PI * a)).norm() < 1e-8);
    }

    fn latitude_loop(model: &ManifoldModel, polar: f64, n: usize) -> Vec<Point> {
        (0..=n)
            .map(|i| {
                model
                    .sphere_point_polar(polar, 2.0 * PI * i as f64 / n as f64)
                    .unwrap()
            })
            .collect()
    }

    /// Transport of a tangent vector along the latitude in R^3:
    /// `dV/dτ = -(V · dn/dτ) n`, integrated by RK4.
    fn embedded_transport(model: &ManifoldModel, polar: f64, v0: [f64; 3], n: usize) -> [f64; 3] {
        let r = model.sphere_radius().unwrap();
        let curve = |tau: f64| {
            let (s, c) = (polar.sin(), polar.cos());
            (
                [s * tau.cos(), s * tau.sin(), c],
                [-s * tau.sin(), s * tau.cos(), 0.0],
            )
        };
        let rhs = |tau: f64, v: [f64; 3]| {
            let (nrm, dn) = curve(tau);
            let k = dot3(&v, &dn);
            [-k * nrm[0], -k * nrm[1], -k * nrm[2]]
        };
        let h = 2.0 * PI / n as f64;
        let mut v = v0;
        for i in 0..n {
            let tau = i as f64 * h;
            let k1 = rhs(tau, v);
            let k2 = rhs(
                tau + h / 2.0,
                std::array::from_fn(|j| v[j] + h / 2.0 * k1[j]),
            );
            let k3 = rhs(
                tau + h / 2.0,
                std::array::from_fn(|j| v[j] + h / 2.0 * k2[j]),
            );
            let k4 = rhs(tau + h, std::array::from_fn(|j| v[j] + h * k3[j]));
            v = std::array::from_fn(|j| {
                v[j] + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
            });
        }
        let _ = r;
        v
    }

    /// Orthonormal chart frame vectors `e_a = λ^{-1} ∂X/∂u_a` in R^3.
    fn chart_frame_vectors(model: &ManifoldModel, p: &Point) -> [[f64; 3]; 2] {
        let r = model.sphere_radius().unwrap();
        let j = crate::geometry::chart_inverse_jacobian(r, p.chart, [p.coords[0], p.coords[1]]);
        let lam = model.conformal_factor(p);
        [
            scale3(&[j[0][0], j[1][0], j[2][0]], 1.0 / lam),
            scale3(&[j[0][1], j[1][1], j[2][1]], 1.0 / lam),
        ]
    }

    #[test]
    fn sphere_latitude_holonomy() {
        for (radius, polar) in [(1.0, 0.7), (2.0, 1.2), (1.0, 2.2)] {
            let s = ManifoldModel::sphere2(radius).unwrap();
            let b = BundleSpec::tangent_s2(&s).unwrap();
            let pts = latitude_loop(&s, polar, 20_000);
            let path = path_through(&s, &pts, 1e-4).unwrap();
            let hol = *parallel_transport(&b, &path)
                .unwrap()
                .matrices
                .last()
                .unwrap();
            let start = path.points[0];
            let end = path.points.last().unwrap();
            // Holonomy between chart frames at the same point; express the
            // end in the start chart if the loop switched charts.
            let hol = if end.chart != start.chart {
                b.connection().transition(end, end.chart, start.chart) * hol
            } else {
                hol
            };
            let omega = 2.0 * PI * (1.0 - polar.cos());
            let expected = FiberMat::from_fn(2, |i, j| {
                c(
                    [[omega.cos(), -omega.sin()], [omega.sin(), omega.cos()]][i][j],
                    0.0,
                )
            });
            assert!(
                (hol - expected).frobenius_norm() < 1e-6,
                "polar {polar}: {hol:?}"
            );

            // Independent oracle in R^3.
            let e = chart_frame_vectors(&s, &start);
            let v = embedded_transport(&s, polar, e[0], 4000);
            let comps = [dot3(&v, &e[0]), dot3(&v, &e[1])];
            assert!(
                (comps[0] - hol[(0, 0)].re).abs() < 1e-6
                    && (comps[1] - hol[(1, 0)].re).abs() < 1e-6
            );
            let _ = (cross3, norm3);
        }
    }

    #[test]
    fn christoffel_fault_breaks_holonomy() {
        let s = ManifoldModel::sphere2(1.0)
            .unwrap()
            .with_fault(crate::geometry::Fault::ChristoffelSignFlip);
        let b = BundleSpec::tangent_s2(&s).unwrap();
        let polar = 0.9;
        let path = path_through(&s, &latitude_loop(&s, polar, 5000), 1e-3).unwrap();
        let hol = *parallel_transport(&b, &path)
            .unwrap()
            .matrices
            .last()
            .unwrap();
        let omega = 2.0 * PI * (1.0 - polar.cos());
        assert!((hol[(1, 0)].re - omega.sin()).abs() > 1e-2);
    }

    /// Gauge compatibility on the overlap: `A^S = T A^N T^{-1} - dT T^{-1}`.
    #[test]
    fn tangent_connection_is_chart_compatible() {
        let s = ManifoldModel::sphere2(1.3).unwrap();
        let b = BundleSpec::tangent_s2(&s).unwrap();
        let conn = b.connection();
        let h = 1e-6;
        for &(u0, u1) in &[(0.8, 0.4), (-1.1, 0.9), (0.3, -1.5)] {
            let pn = s.sphere_point_in_chart(Chart::North, [u0, u1]).unwrap();
            let t = conn.transition(&pn, Chart::North, Chart::South);
            let t_inv = t.adjoint();
            for k in 0..2 {
                // Tangent direction ∂/∂u_k pushed into the south chart.
                let mut up = [u0, u1];
                let mut dn = [u0, u1];
                up[k] += h;
                dn[k] -= h;
                let (pu, pd) = (
                    s.sphere_point_in_chart(Chart::North, up).unwrap(),
                    s.sphere_point_in_chart(Chart::North, dn).unwrap(),
                );
                let dt = (conn.transition(&pu, Chart::North, Chart::South)
                    - conn.transition(&pd, Chart::North, Chart::South))
                .scale_re(1.0 / (2.0 * h));
                let (su, sd) = (
                    s.to_chart(&pu, Chart::South).unwrap(),
                    s.to_chart(&pd, Chart::South).unwrap(),
                );
                let mut dv = Coords::zeros(2);
                dv[0] = (su.coords[0] - sd.coords[0]) / (2.0 * h);
                dv[1] = (su.coords[1] - sd.coords[1]) / (2.0 * h);
                let ps = s.to_chart(&pn, Chart::South).unwrap();
                let lhs = conn.potential(&ps, &dv);
                let rhs = t * conn.component(&pn, k) * t_inv - dt * t_inv;
                assert!((lhs - rhs).frobenius_norm() < 1e-6, "k={k}");
            }
        }
    }

    #[test]
    fn transport_is_unitary_and_conjugation_preserves_spectrum() {
        let s = ManifoldModel::sphere2(1.0).unwrap();
        let b = BundleSpec::tangent_s2(&s).unwrap();
        let x = s.sphere_point_polar(1.5, 0.0).unwrap();
        let path = sample_bm(&s, &x, 2.0, 1e-3, RngConfig::new(2, 5)).unwrap();
        let seq = parallel_transport(&b, &path).unwrap();
        for m in &seq.matrices {
            assert!((m.adjoint() * *m - FiberMat::identity(2)).frobenius_norm() < 1e-10);
        }
        let xm = FiberMat::from_fn(2, |i, j| c((i + 2 * j) as f64, 1.0 - i as f64));
        let y = transport_conjugate(&seq, 1500, &xm).unwrap();
        let ev = |m: &FiberMat| {
            let mut e: Vec<Complex64> = m
                .to_dmatrix()
                .eigenvalues()
                .map(|v| v.iter().cloned().collect())
                .unwrap_or_else(|| {
                    let tr = m.trace();
                    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
                    let disc = (tr * tr - det * 4.0).sqrt();
                    vec![(tr + disc) / 2.0, (tr - disc) / 2.0]
                });
            e.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
            e
        };
        for (a, b) in ev(&xm).iter().zip(ev(&y).iter()) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn gauge_covariance() {
        let t = ManifoldModel::flat_torus(&[2.0 * PI, 2.0 * PI]).unwrap();
        let one = FiberMat::from_fn(2, |i, j| if i == j { c(0.0, 0.0) } else { c(0.0, 0.3) });
        let two = FiberMat::from_fn(2, |i, j| {
            if i == j {
                c(0.0, 0.1 * (i as f64 + 1.0))
            } else {
                c(0.0, 0.0)
            }
        });
        let mut m1 = [0; crate::geometry::MAX_DIM];
        m1[0] = 1;
        let mut m1n = m1;
        m1n[0] = -1;
        let comp0 = TrigField::new(&t, 2, vec![([0; 4], two), (m1, one), (m1n, one)]).unwrap();
        let comp1 = TrigField::constant(&t, one).unwrap();
        let b = BundleSpec::trig(&t, vec![comp0, comp1]).unwrap();
        let x = t.flat_point(&[0.3, 0.1]).unwrap();
        assert!(b.metric_defect(&x) < 1e-12);
        let theta: f64 = 0.8;
        let g = FiberMat::from_fn(2, |i, j| {
            c(
                [[theta.cos(), -theta.sin()], [theta.sin(), theta.cos()]][i][j],
                0.0,
            )
        }) * FiberMat::from_fn(2, |i, j| {
            if i == j {
                Complex64::from_polar(1.0, 0.4 * i as f64)
            } else {
                c(0.0, 0.0)
            }
        });
        let bg = b.gauge_transformed(g).unwrap();
        let path = sample_bm(&t, &x, 1.0, 1e-3, RngConfig::new(7, 0)).unwrap();
        let s1 = parallel_transport(&b, &path).unwrap();
        let s2 = parallel_transport(&bg, &path).unwrap();
        for (a, bm) in s1.matrices.iter().zip(&s2.matrices) {
            assert!((g * *a * g.adjoint() - *bm).frobenius_norm() < 1e-12);
        }
    }

    #[test]
    fn transport_composes_over_concatenated_paths() {
        let s = ManifoldModel::sphere2(1.0).unwrap();
        let b = BundleSpec::tangent_s2(&s).unwrap();
        let x = s.sphere_point_polar(1.0, 1.0).unwrap();
        let path = sample_bm(&s, &x, 1.0, 1e-2, RngConfig::new(11, 0)).unwrap();
        let full = parallel_transport(&b, &path).unwrap();
        let k = 40;
        let tail_pts = &path.points[k..];
        let tail = PathSample {
            times: path.times[k..].to_vec(),
            dt: path.dt,
            last_dt: path.last_dt,
            points: tail_pts.to_vec(),
            frames: path.frames[k..].to_vec(),
            increments: path.increments[k..].to_vec(),
        };
        let second = parallel_transport(&b, &tail).unwrap();
        let composed = *second.matrices.last().unwrap() * full.matrices[k];
        assert!((composed - *full.matrices.last().unwrap()).frobenius_norm() < 1e-13);
    }
}
