//! Compact model geometries: circle, flat torus and the round 2-sphere.
//!
//! The sphere carries two stereographic charts. `North` projects from the
//! south pole, `u = (x, y) / (r + z)`; `South` projects from the north pole,
//! `v = (x, -y) / (r - z)`. In complex notation `v = 1 / u`, so both charts
//! induce the outward orientation.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Largest manifold dimension supported (flat tori up to T^4).
pub const MAX_DIM: usize = 4;

/// Paths switch stereographic chart once `|u|` exceeds this value.
pub const CHART_SWITCH: f64 = 2.0;

/// Points are rejected if their chart coordinates exceed this norm.
pub const CHART_LIMIT: f64 = 4.0;

const SERIES_REL_TOL: f64 = 1e-14;
const SERIES_MAX_TERMS: usize = 10_000;

/// A strictly positive finite real.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct PositiveReal(f64);

impl PositiveReal {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && value > 0.0 {
            Ok(Self(value))
        } else {
            domain(format!("expected a positive finite number, got {value}"))
        }
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for PositiveReal {
    type Error = Error;
    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<PositiveReal> for f64 {
    fn from(value: PositiveReal) -> f64 {
        value.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Chart {
    /// The single periodic chart of a circle or torus.
    Global,
    North,
    South,
}

impl Chart {
    pub fn other(self) -> Chart {
        match self {
            Chart::North => Chart::South,
            Chart::South => Chart::North,
            Chart::Global => Chart::Global,
        }
    }
}

/// Up to [`MAX_DIM`] real coordinates stored inline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coords {
    dim: usize,
    values: [f64; MAX_DIM],
}

impl Coords {
    pub fn zeros(dim: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&dim), "dimension {dim} unsupported");
        Self {
            dim,
            values: [0.0; MAX_DIM],
        }
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        if values.is_empty() || values.len() > MAX_DIM {
            return Err(Error::Dimension(format!(
                "{} coordinates outside 1..={MAX_DIM}",
                values.len()
            )));
        }
        let mut out = Self::zeros(values.len());
        out.values[..values.len()].copy_from_slice(values);
        Ok(out)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.values[..self.dim]
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values[..self.dim]
    }

    pub fn norm(&self) -> f64 {
        self.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.as_slice().iter().all(|x| x.is_finite())
    }
}

impl std::ops::Index<usize> for Coords {
    type Output = f64;
    #[inline]
    fn index(&self, i: usize) -> &f64 {
        &self.as_slice()[i]
    }
}

impl std::ops::IndexMut<usize> for Coords {
    #[inline]
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.as_mut_slice()[i]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub chart: Chart,
    pub coords: Coords,
    /// Embedded representative on the radius-r sphere; `None` for flat models.
    pub embedded: Option<[f64; 3]>,
}

impl Point {
    pub fn dim(&self) -> usize {
        self.coords.dim()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TangentVector {
    pub base: Point,
    pub components: Coords,
}

/// Connection coefficients `Γ^k_{ij}` stored as `k * m^2 + i * m + j`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Christoffel {
    dim: usize,
    values: [f64; MAX_DIM * MAX_DIM * MAX_DIM],
}

impl Christoffel {
    fn zeros(dim: usize) -> Self {
        Self {
            dim,
            values: [0.0; MAX_DIM * MAX_DIM * MAX_DIM],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.values[(k * self.dim + i) * self.dim + j]
    }

    fn set(&mut self, k: usize, i: usize, j: usize, value: f64) {
        self.values[(k * self.dim + i) * self.dim + j] = value;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ManifoldKind {
    Circle { radius: PositiveReal },
    FlatTorus { periods: Vec<PositiveReal> },
    Sphere2 { radius: PositiveReal },
}

/// Deliberate defects used to check that the validation suites notice them.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    #[default]
    None,
    ChristoffelSignFlip,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifoldModel {
    kind: ManifoldKind,
    fault: Fault,
    periods: Option<Coords>,
}

/// Which closed form to evaluate a heat kernel with.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeatSeries {
    /// Regime-dependent choice.
    Auto,
    WrappedGaussian,
    Fourier,
    Legendre,
}

impl ManifoldModel {
    pub fn circle(radius: f64) -> Result<Self> {
        Self::from_kind(ManifoldKind::Circle {
            radius: PositiveReal::new(radius)?,
        })
    }

    pub fn flat_torus(periods: &[f64]) -> Result<Self> {
        let periods = periods
            .iter()
            .map(|&p| PositiveReal::new(p))
            .collect::<Result<Vec<_>>>()?;
        Self::from_kind(ManifoldKind::FlatTorus { periods })
    }

    pub fn sphere2(radius: f64) -> Result<Self> {
        Self::from_kind(ManifoldKind::Sphere2 {
            radius: PositiveReal::new(radius)?,
        })
    }

    pub fn from_kind(kind: ManifoldKind) -> Result<Self> {
        if let ManifoldKind::FlatTorus { periods } = &kind {
            if periods.is_empty() || periods.len() > MAX_DIM {
                return Err(Error::Dimension(format!(
                    "flat torus dimension {} outside 1..={MAX_DIM}",
                    periods.len()
                )));
            }
        }
        let periods = match &kind {
            ManifoldKind::Circle { radius } => {
                Some(Coords::from_slice(&[2.0 * PI * radius.get()])?)
            }
            ManifoldKind::FlatTorus { periods } => {
                let p: Vec<f64> = periods.iter().map(|p| p.get()).collect();
                Some(Coords::from_slice(&p)?)
            }
            ManifoldKind::Sphere2 { .. } => None,
        };
        Ok(Self {
            kind,
            fault: Fault::None,
            periods,
        })
    }

    pub fn with_fault(mut self, fault: Fault) -> Self {
        self.fault = fault;
        self
    }

    pub fn kind(&self) -> &ManifoldKind {
        &self.kind
    }

    pub fn fault(&self) -> Fault {
        self.fault
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            ManifoldKind::Circle { .. } => 1,
            ManifoldKind::FlatTorus { periods } => periods.len(),
            ManifoldKind::Sphere2 { .. } => 2,
        }
    }

    pub fn is_flat(&self) -> bool {
        !matches!(self.kind, ManifoldKind::Sphere2 { .. })
    }

    /// Sphere radius, if this is a sphere.
    pub fn sphere_radius(&self) -> Option<f64> {
        match self.kind {
            ManifoldKind::Sphere2 { radius } => Some(radius.get()),
            _ => None,
        }
    }

    /// Coordinate periods of a flat model.
    #[inline]
    pub fn periods(&self) -> Option<Coords> {
        self.periods
    }

    pub fn volume(&self) -> f64 {
        match &self.kind {
            ManifoldKind::Sphere2 { radius } => 4.0 * PI * radius.get().powi(2),
            _ => self
                .periods()
                .map(|p| p.as_slice().iter().product())
                .unwrap_or(0.0),
        }
    }

    // ----- points -------------------------------------------------------

    /// A point of a flat model from unnormalized coordinates.
    pub fn flat_point(&self, coords: &[f64]) -> Result<Point> {
        let periods = self
            .periods()
            .ok_or_else(|| Error::Domain("flat_point called on a sphere".into()))?;
        if coords.len() != periods.dim() {
            return Err(Error::Dimension(format!(
                "expected {} coordinates, got {}",
                periods.dim(),
                coords.len()
            )));
        }
        let mut c = Coords::from_slice(coords)?;
        if !c.is_finite() {
            return domain("non-finite coordinates");
        }
        for i in 0..c.dim() {
            c[i] = wrap(c[i], periods[i]);
        }
        Ok(Point {
            chart: Chart::Global,
            coords: c,
            embedded: None,
        })
    }

    /// A sphere point from an embedded vector, which must lie on the sphere.
    pub fn sphere_point(&self, embedded: [f64; 3]) -> Result<Point> {
        let r = self.require_sphere()?;
        let norm = norm3(&embedded);
        if !norm.is_finite() || (norm - r).abs() > 1e-9 * r.max(1.0) {
            return domain(format!("embedded point has norm {norm}, expected {r}"));
        }
        let x = scale3(&embedded, r / norm);
        let chart = if x[2] >= 0.0 {
            Chart::North
        } else {
            Chart::South
        };
        Ok(sphere_point_in(r, chart, x))
    }

    /// A sphere point from chart coordinates, with no chart switching.
    pub fn sphere_point_in_chart(&self, chart: Chart, u: [f64; 2]) -> Result<Point> {
        let r = self.require_sphere()?;
        if chart == Chart::Global {
            return domain("sphere points need a stereographic chart");
        }
        let n = (u[0] * u[0] + u[1] * u[1]).sqrt();
        if !n.is_finite() || n > CHART_LIMIT {
            return domain(format!(
                "chart coordinate norm {n} outside the chart domain"
            ));
        }
        let x = chart_inverse(r, chart, u);
        Ok(Point {
            chart,
            coords: Coords::from_slice(&u)?,
            embedded: Some(x),
        })
    }

    /// Polar-angle / azimuth parametrization of the sphere.
    pub fn sphere_point_polar(&self, polar: f64, azimuth: f64) -> Result<Point> {
        let r = self.require_sphere()?;
        self.sphere_point([
            r * polar.sin() * azimuth.cos(),
            r * polar.sin() * azimuth.sin(),
            r * polar.cos(),
        ])
    }

    pub fn north_pole(&self) -> Result<Point> {
        let r = self.require_sphere()?;
        self.sphere_point([0.0, 0.0, r])
    }

    pub fn south_pole(&self) -> Result<Point> {
        let r = self.require_sphere()?;
        self.sphere_point([0.0, 0.0, -r])
    }

    /// Re-express a sphere point in the given chart.
    pub fn to_chart(&self, p: &Point, chart: Chart) -> Result<Point> {
        let r = self.require_sphere()?;
        let x = p
            .embedded
            .ok_or_else(|| Error::Internal("sphere point without embedding".into()))?;
        if chart == Chart::Global {
            return domain("sphere points need a stereographic chart");
        }
        let u = chart_map(r, chart, &x)?;
        Ok(Point {
            chart,
            coords: Coords::from_slice(&u)?,
            embedded: Some(x),
        })
    }

    pub fn validate_point(&self, p: &Point) -> Result<()> {
        if p.dim() != self.dim() {
            return Err(Error::Dimension(format!(
                "point has {} coordinates, manifold dimension is {}",
                p.dim(),
                self.dim()
            )));
        }
        if !p.coords.is_finite() {
            return domain("non-finite point coordinates");
        }
        match self.kind {
            ManifoldKind::Sphere2 { .. } => {
                if p.chart == Chart::Global {
                    return domain("sphere point in the global chart");
                }
                if p.coords.norm() > CHART_LIMIT {
                    return domain(format!(
                        "chart coordinate norm {} outside the chart domain",
                        p.coords.norm()
                    ));
                }
            }
            _ => {
                if p.chart != Chart::Global {
                    return domain("flat model point in a stereographic chart");
                }
            }
        }
        Ok(())
    }

    // ----- metric data --------------------------------------------------

    /// Conformal factor `λ` with `g = λ² I` in chart coordinates.
    pub fn conformal_factor(&self, p: &Point) -> f64 {
        match self.kind {
            ManifoldKind::Sphere2 { radius } => {
                let s = p.coords[0] * p.coords[0] + p.coords[1] * p.coords[1];
                2.0 * radius.get() / (1.0 + s)
            }
            _ => 1.0,
        }
    }

    /// Gradient of `log λ` in chart coordinates.
    pub fn log_conformal_gradient(&self, p: &Point) -> [f64; 2] {
        match self.kind {
            ManifoldKind::Sphere2 { .. } => {
                let s = p.coords[0] * p.coords[0] + p.coords[1] * p.coords[1];
                [
                    -2.0 * p.coords[0] / (1.0 + s),
                    -2.0 * p.coords[1] / (1.0 + s),
                ]
            }
            _ => [0.0, 0.0],
        }
    }

    pub fn metric_at(&self, p: &Point) -> Result<DMatrix<f64>> {
        self.validate_point(p)?;
        let m = self.dim();
        let lambda = self.conformal_factor(p);
        Ok(DMatrix::from_diagonal_element(m, m, lambda * lambda))
    }

    pub fn christoffel(&self, p: &Point) -> Result<Christoffel> {
        self.validate_point(p)?;
        let m = self.dim();
        let mut gamma = Christoffel::zeros(m);
        if self.is_flat() {
            return Ok(gamma);
        }
        let sign = match self.fault {
            Fault::ChristoffelSignFlip => -1.0,
            Fault::None => 1.0,
        };
        let grad = self.log_conformal_gradient(p);
        for k in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    let mut v = 0.0;
                    if i == k {
                        v += grad[j];
                    }
                    if j == k {
                        v += grad[i];
                    }
                    if i == j {
                        v -= grad[k];
                    }
                    gamma.set(k, i, j, sign * v);
                }
            }
        }
        Ok(gamma)
    }

    pub fn scalar_curvature(&self, p: &Point) -> Result<f64> {
        self.validate_point(p)?;
        Ok(match self.kind {
            ManifoldKind::Sphere2 { radius } => 2.0 / radius.get().powi(2),
            _ => 0.0,
        })
    }

    // ----- geodesics ----------------------------------------------------

    /// Geodesic exponential `exp_p(v)`.
    pub fn exp_step(&self, v: &TangentVector) -> Result<Point> {
        let p = &v.base;
        self.validate_point(p)?;
        if v.components.dim() != self.dim() || !v.components.is_finite() {
            return domain("tangent vector incompatible with its base point");
        }
        match self.kind {
            ManifoldKind::Sphere2 { radius } => {
                let r = radius.get();
                let x = p
                    .embedded
                    .ok_or_else(|| Error::Internal("sphere point without embedding".into()))?;
                let jac = chart_inverse_jacobian(r, p.chart, [p.coords[0], p.coords[1]]);
                let mut w = [0.0; 3];
                for (a, wa) in w.iter_mut().enumerate() {
                    *wa = jac[a][0] * v.components[0] + jac[a][1] * v.components[1];
                }
                let y = great_circle(r, &x, &w);
                Ok(sphere_point_near(r, p.chart, y))
            }
            _ => {
                let mut c = p.coords;
                for i in 0..c.dim() {
                    c[i] += v.components[i];
                }
                self.flat_point(c.as_slice())
            }
        }
    }

    pub fn distance(&self, p: &Point, q: &Point) -> Result<f64> {
        self.validate_point(p)?;
        self.validate_point(q)?;
        match self.kind {
            ManifoldKind::Sphere2 { radius } => {
                let r = radius.get();
                let (x, y) = (
                    p.embedded.unwrap_or_default(),
                    q.embedded.unwrap_or_default(),
                );
                Ok(r * angle_between(&x, &y))
            }
            _ => {
                let periods = self.periods().expect("flat model has periods");
                let mut s = 0.0;
                for i in 0..p.dim() {
                    let d = periodic_offset(q.coords[i] - p.coords[i], periods[i]);
                    s += d * d;
                }
                Ok(s.sqrt())
            }
        }
    }

    // ----- heat kernels -------------------------------------------------

    /// Kernel of `e^{tΔ/2}` with respect to the Riemannian volume.
    pub fn heat_kernel(&self, x: &Point, y: &Point, t: f64) -> Result<f64> {
        self.heat_kernel_with(x, y, t, HeatSeries::Auto)
    }

    pub fn heat_kernel_with(
        &self,
        x: &Point,
        y: &Point,
        t: f64,
        series: HeatSeries,
    ) -> Result<f64> {
        if !(t.is_finite() && t > 0.0) {
            return domain(format!("heat kernel time must be positive, got {t}"));
        }
        match self.kind {
            ManifoldKind::Sphere2 { radius } => {
                if !matches!(series, HeatSeries::Auto | HeatSeries::Legendre) {
                    return domain("sphere heat kernel is only available as a Legendre series");
                }
                let d = self.distance(x, y)?;
                sphere_heat_kernel(radius.get(), d, t)
            }
            _ => {
                self.validate_point(x)?;
                self.validate_point(y)?;
                let periods = self.periods().expect("flat model has periods");
                let mut value = 1.0;
                for i in 0..x.dim() {
                    let offset = y.coords[i] - x.coords[i];
                    value *= circle_heat_kernel(periods[i], offset, t, series)?;
                }
                Ok(value)
            }
        }
    }

    fn require_sphere(&self) -> Result<f64> {
        self.sphere_radius()
            .ok_or_else(|| Error::Domain("operation requires a sphere".into()))
    }
}

/// Heat kernel of `Δ/2` on a circle of circumference `period`, at arclength
/// offset `offset`.
pub fn circle_heat_kernel(period: f64, offset: f64, t: f64, series: HeatSeries) -> Result<f64> {
    let d = periodic_offset(offset, period);
    let use_gauss = match series {
        HeatSeries::WrappedGaussian => true,
        HeatSeries::Fourier => false,
        HeatSeries::Auto => t < (period / (2.0 * PI)).powi(2),
        HeatSeries::Legendre => return domain("Legendre series applies to the sphere only"),
    };
    if use_gauss {
        wrapped_gaussian(period, d, t)
    } else {
        circle_fourier(period, d, t)
    }
}

fn wrapped_gaussian(period: f64, d: f64, t: f64) -> Result<f64> {
    let norm = 1.0 / (2.0 * PI * t).sqrt();
    let term = |n: i64| norm * (-(d + n as f64 * period).powi(2) / (2.0 * t)).exp();
    let mut sum = term(0);
    let mut terms = 1usize;
    let mut n = 1i64;
    loop {
        let (a, b) = (term(n), term(-n));
        sum += a + b;
        terms += 2;
        // Images beyond n decay faster than the current pair.
        if a.max(b) <= SERIES_REL_TOL * sum || sum == 0.0 && a.max(b) == 0.0 {
            return Ok(sum);
        }
        if terms >= SERIES_MAX_TERMS {
            return Err(Error::Convergence {
                terms,
                bound: a.max(b) / sum,
            });
        }
        n += 1;
    }
}

fn circle_fourier(period: f64, d: f64, t: f64) -> Result<f64> {
    let mut sum = 1.0 / period;
    let mut terms = 1usize;
    let mut k = 1u64;
    loop {
        let kappa = 2.0 * PI * k as f64 / period;
        let bound = 2.0 / period * (-kappa * kappa * t / 2.0).exp();
        sum += bound * (kappa * d).cos();
        terms += 1;
        if bound <= SERIES_REL_TOL * sum.abs() {
            return Ok(sum);
        }
        if terms >= SERIES_MAX_TERMS {
            return Err(Error::Convergence {
                terms,
                bound: bound / sum.abs(),
            });
        }
        k += 1;
    }
}

/// Legendre series of the sphere heat kernel at geodesic distance `d`.
///
/// When the series result is dominated by cancellation the leading small-time
/// asymptotic is returned instead; in that regime the kernel is below 1e-12 of
/// its diagonal value.
pub fn sphere_heat_kernel(radius: f64, d: f64, t: f64) -> Result<f64> {
    let r2 = radius * radius;
    let theta = (d / radius).clamp(0.0, PI);
    let c = theta.cos();
    let (mut p_prev, mut p_cur) = (1.0, c);
    let mut sum = 1.0 / (4.0 * PI * r2);
    let mut abs_sum = sum;
    let mut l = 1usize;
    loop {
        let lf = l as f64;
        let bound = (2.0 * lf + 1.0) / (4.0 * PI * r2) * (-lf * (lf + 1.0) * t / (2.0 * r2)).exp();
        sum += bound * p_cur;
        abs_sum += bound;
        if bound <= SERIES_REL_TOL * sum.abs() || bound <= f64::MIN_POSITIVE {
            break;
        }
        if l + 1 >= SERIES_MAX_TERMS {
            return Err(Error::Convergence {
                terms: l + 1,
                bound: bound / sum.abs(),
            });
        }
        let next = ((2.0 * lf + 1.0) * c * p_cur - lf * p_prev) / (lf + 1.0);
        p_prev = p_cur;
        p_cur = next;
        l += 1;
    }
    if sum > 1e-12 * abs_sum {
        return Ok(sum);
    }
    let ratio = if theta < 1e-8 {
        1.0
    } else {
        theta / theta.sin()
    };
    if !ratio.is_finite() {
        // Antipodal point at small time: the asymptotic form degenerates,
        // and the true value underflows anyway.
        return Ok(f64::MIN_POSITIVE);
    }
    let asym = (-(d * d) / (2.0 * t)).exp() * ratio.sqrt() / (2.0 * PI * t);
    Ok(asym.max(f64::MIN_POSITIVE))
}

/// Reduce `x` into `[0, period)`.
pub fn wrap(x: f64, period: f64) -> f64 {
    let y = x.rem_euclid(period);
    if y >= period {
        0.0
    } else {
        y
    }
}

/// Representative of `x` modulo `period` in `[-period/2, period/2]`.
pub fn periodic_offset(x: f64, period: f64) -> f64 {
    x - period * (x / period).round()
}

// ----- sphere helpers ---------------------------------------------------

pub(crate) fn norm3(x: &[f64; 3]) -> f64 {
    (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()
}

pub(crate) fn dot3(x: &[f64; 3], y: &[f64; 3]) -> f64 {
    x[0] * y[0] + x[1] * y[1] + x[2] * y[2]
}

pub(crate) fn cross3(x: &[f64; 3], y: &[f64; 3]) -> [f64; 3] {
    [
        x[1] * y[2] - x[2] * y[1],
        x[2] * y[0] - x[0] * y[2],
        x[0] * y[1] - x[1] * y[0],
    ]
}

pub(crate) fn scale3(x: &[f64; 3], s: f64) -> [f64; 3] {
    [x[0] * s, x[1] * s, x[2] * s]
}

pub(crate) fn angle_between(x: &[f64; 3], y: &[f64; 3]) -> f64 {
    norm3(&cross3(x, y)).atan2(dot3(x, y))
}

/// Stereographic chart map from the embedded point.
pub(crate) fn chart_map(r: f64, chart: Chart, x: &[f64; 3]) -> Result<[f64; 2]> {
    let (num, den) = match chart {
        Chart::North => ([x[0], x[1]], r + x[2]),
        Chart::South => ([x[0], -x[1]], r - x[2]),
        Chart::Global => return domain("sphere points need a stereographic chart"),
    };
    if den <= 1e-300 {
        return domain("point is the projection pole of this chart");
    }
    Ok([num[0] / den, num[1] / den])
}

/// Inverse stereographic map.
pub(crate) fn chart_inverse(r: f64, chart: Chart, u: [f64; 2]) -> [f64; 3] {
    let s = u[0] * u[0] + u[1] * u[1];
    let d = 1.0 + s;
    let north = [2.0 * r * u[0] / d, 2.0 * r * u[1] / d, r * (1.0 - s) / d];
    match chart {
        Chart::South => [north[0], -north[1], -north[2]],
        _ => north,
    }
}

/// `dX/du` of the inverse chart map, a 3x2 matrix.
pub(crate) fn chart_inverse_jacobian(r: f64, chart: Chart, u: [f64; 2]) -> [[f64; 2]; 3] {
    let s = u[0] * u[0] + u[1] * u[1];
    let d = 1.0 + s;
    let d2 = d * d;
    let mut j = [[0.0; 2]; 3];
    for k in 0..2 {
        for i in 0..2 {
            let delta = if i == k { 1.0 } else { 0.0 };
            j[i][k] = 2.0 * r * delta / d - 4.0 * r * u[i] * u[k] / d2;
        }
        j[2][k] = -4.0 * r * u[k] / d2;
    }
    if chart == Chart::South {
        for k in 0..2 {
            j[1][k] = -j[1][k];
            j[2][k] = -j[2][k];
        }
    }
    j
}

/// `du/dX` of the chart map, a 2x3 matrix.
pub(crate) fn chart_jacobian(r: f64, chart: Chart, x: &[f64; 3]) -> [[f64; 3]; 2] {
    match chart {
        Chart::South => {
            let den = r - x[2];
            [
                [1.0 / den, 0.0, x[0] / (den * den)],
                [0.0, -1.0 / den, -x[1] / (den * den)],
            ]
        }
        _ => {
            let den = r + x[2];
            [
                [1.0 / den, 0.0, -x[0] / (den * den)],
                [0.0, 1.0 / den, -x[1] / (den * den)],
            ]
        }
    }
}

pub(crate) fn sphere_point_in(r: f64, chart: Chart, x: [f64; 3]) -> Point {
    let u = chart_map(r, chart, &x).expect("chart chosen away from its pole");
    Point {
        chart,
        coords: Coords::from_slice(&u).expect("two coordinates"),
        embedded: Some(x),
    }
}

/// Express `x` in `preferred` unless that leaves the switching disc.
pub(crate) fn sphere_point_near(r: f64, preferred: Chart, x: [f64; 3]) -> Point {
    if let Ok(u) = chart_map(r, preferred, &x) {
        if u[0] * u[0] + u[1] * u[1] <= CHART_SWITCH * CHART_SWITCH {
            return Point {
                chart: preferred,
                coords: Coords::from_slice(&u).expect("two coordinates"),
                embedded: Some(x),
            };
        }
    }
    sphere_point_in(r, preferred.other(), x)
}

/// Move along the great circle through `x` with initial ambient velocity `w`.
pub(crate) fn great_circle(r: f64, x: &[f64; 3], w: &[f64; 3]) -> [f64; 3] {
    let speed = norm3(w);
    if speed == 0.0 {
        return *x;
    }
    let alpha = speed / r;
    let (s, c) = alpha.sin_cos();
    let f = r * s / speed;
    let y = [
        c * x[0] + f * w[0],
        c * x[1] + f * w[1],
        c * x[2] + f * w[2],
    ];
    // Renormalize against drift over long paths.
    scale3(&y, r / norm3(&y))
}

/// Rotate `v` about the unit `axis` by `angle` (Rodrigues).
pub(crate) fn rotate3(v: &[f64; 3], axis: &[f64; 3], angle: f64) -> [f64; 3] {
    let (s, c) = angle.sin_cos();
    let kxv = cross3(axis, v);
    let kdv = dot3(axis, v);
    [
        v[0] * c + kxv[0] * s + axis[0] * kdv * (1.0 - c),
        v[1] * c + kxv[1] * s + axis[1] * kdv * (1.0 - c),
        v[2] * c + kxv[2] * s + axis[2] * kdv * (1.0 - c),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn unit_sphere() -> ManifoldModel {
        ManifoldModel::sphere2(1.0).unwrap()
    }

    #[test]
    fn metric_examples() {
        let circle = ManifoldModel::circle(1.0).unwrap();
        let p = circle.flat_point(&[0.3]).unwrap();
        assert_eq!(circle.metric_at(&p).unwrap()[(0, 0)], 1.0);

        let torus = ManifoldModel::flat_torus(&[2.0 * PI, 2.0 * PI]).unwrap();
        let p = torus.flat_point(&[1.0, 2.0]).unwrap();
        assert_eq!(torus.metric_at(&p).unwrap(), DMatrix::identity(2, 2));

        let s = unit_sphere();
        let p = s.sphere_point_in_chart(Chart::North, [0.6, 0.8]).unwrap();
        let g = s.metric_at(&p).unwrap();
        assert_abs_diff_eq!(g[(0, 0)], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g[(1, 1)], 1.0, epsilon = 1e-15);
        assert_eq!(g[(0, 1)], 0.0);
    }

    #[test]
    fn invalid_models_are_rejected() {
        assert!(ManifoldModel::circle(0.0).is_err());
        assert!(ManifoldModel::sphere2(-1.0).is_err());
        assert!(ManifoldModel::flat_torus(&[1.0, f64::NAN]).is_err());
        assert!(ManifoldModel::flat_torus(&[1.0; 5]).is_err());
    }

    #[test]
    fn points_outside_chart_domain_are_rejected() {
        let s = unit_sphere();
        assert!(s.sphere_point_in_chart(Chart::North, [5.0, 0.0]).is_err());
        let bad = Point {
            chart: Chart::North,
            coords: Coords::from_slice(&[10.0, 0.0]).unwrap(),
            embedded: Some([0.0, 0.0, 1.0]),
        };
        assert!(s.metric_at(&bad).is_err());
    }

    #[test]
    fn christoffel_vanishes_at_chart_centre() {
        let s = unit_sphere();
        let p = s.north_pole().unwrap();
        let gamma = s.christoffel(&p).unwrap();
        assert!(gamma.values.iter().all(|&v| v == 0.0));

        // Finite-difference oracle: dg/du at the centre vanishes too.
        let h = 1e-5;
        for k in 0..2 {
            let mut up = [0.0, 0.0];
            let mut dn = [0.0, 0.0];
            up[k] = h;
            dn[k] = -h;
            let gp = s
                .metric_at(&s.sphere_point_in_chart(Chart::North, up).unwrap())
                .unwrap();
            let gm = s
                .metric_at(&s.sphere_point_in_chart(Chart::North, dn).unwrap())
                .unwrap();
            assert!(((gp - gm) / (2.0 * h)).amax() < 1e-6);
        }
    }

    #[test]
    fn christoffel_flat_is_zero() {
        let torus = ManifoldModel::flat_torus(&[1.0, 2.0, 3.0]).unwrap();
        let p = torus.flat_point(&[0.1, 0.2, 0.3]).unwrap();
        assert!(torus
            .christoffel(&p)
            .unwrap()
            .values
            .iter()
            .all(|&v| v == 0.0));
        let circle = ManifoldModel::circle(2.0).unwrap();
        let p = circle.flat_point(&[1.0]).unwrap();
        assert_eq!(circle.christoffel(&p).unwrap().get(0, 0, 0), 0.0);
    }

    /// Metric compatibility `∂_k g_ij = Γ^l_{ki} g_lj + Γ^l_{kj} g_il`.
    fn compatibility_defect(s: &ManifoldModel, chart: Chart, u: [f64; 2]) -> f64 {
        let h = 1e-6;
        let p = s.sphere_point_in_chart(chart, u).unwrap();
        let g = s.metric_at(&p).unwrap();
        let gamma = s.christoffel(&p).unwrap();
        let mut worst: f64 = 0.0;
        for k in 0..2 {
            let mut up = u;
            let mut dn = u;
            up[k] += h;
            dn[k] -= h;
            let gp = s
                .metric_at(&s.sphere_point_in_chart(chart, up).unwrap())
                .unwrap();
            let gm = s
                .metric_at(&s.sphere_point_in_chart(chart, dn).unwrap())
                .unwrap();
            let dg = (gp - gm) / (2.0 * h);
            for i in 0..2 {
                for j in 0..2 {
                    let mut rhs = 0.0;
                    for l in 0..2 {
                        rhs += gamma.get(l, k, i) * g[(l, j)] + gamma.get(l, k, j) * g[(i, l)];
                    }
                    worst = worst.max((dg[(i, j)] - rhs).abs());
                }
            }
        }
        worst
    }

    proptest! {
        #[test]
        fn christoffel_is_metric_compatible(u0 in -1.5f64..1.5, u1 in -1.5f64..1.5, south in any::<bool>()) {
            let s = ManifoldModel::sphere2(1.3).unwrap();
            let chart = if south { Chart::South } else { Chart::North };
            prop_assert!(compatibility_defect(&s, chart, [u0, u1]) < 1e-5);
        }

        #[test]
        fn christoffel_is_symmetric(u0 in -2.0f64..2.0, u1 in -2.0f64..2.0) {
            let s = unit_sphere();
            let p = s.sphere_point_in_chart(Chart::North, [u0, u1]).unwrap();
            let g = s.christoffel(&p).unwrap();
            for k in 0..2 { for i in 0..2 { for j in 0..2 {
                prop_assert_eq!(g.get(k, i, j), g.get(k, j, i));
            }}}
        }

        #[test]
        fn chart_transition_round_trip(u0 in -2.0f64..2.0, u1 in -2.0f64..2.0) {
            prop_assume!(u0 * u0 + u1 * u1 > 0.05);
            let s = ManifoldModel::sphere2(0.7).unwrap();
            let p = s.sphere_point_in_chart(Chart::North, [u0, u1]).unwrap();
            let q = s.to_chart(&p, Chart::South).unwrap();
            let back = s.to_chart(&q, Chart::North).unwrap();
            prop_assert!((back.coords[0] - u0).abs() <= 1e-12);
            prop_assert!((back.coords[1] - u1).abs() <= 1e-12);
            // Complex inversion v = 1 / u.
            let w = num_complex::Complex64::new(u0, u1).inv();
            prop_assert!((q.coords[0] - w.re).abs() <= 1e-12 && (q.coords[1] - w.im).abs() <= 1e-12);
        }

        #[test]
        fn exp_step_preserves_sphere(u0 in -2.0f64..2.0, u1 in -2.0f64..2.0, v0 in -3.0f64..3.0, v1 in -3.0f64..3.0, r in 0.5f64..3.0) {
            let s = ManifoldModel::sphere2(r).unwrap();
            let p = s.sphere_point_in_chart(Chart::North, [u0, u1]).unwrap();
            let q = s.exp_step(&TangentVector { base: p, components: Coords::from_slice(&[v0, v1]).unwrap() }).unwrap();
            prop_assert!((norm3(&q.embedded.unwrap()) - r).abs() <= 1e-12 * r.max(1.0));
            prop_assert!(q.coords.norm() <= CHART_SWITCH + 1e-12);
        }

        #[test]
        fn heat_kernel_is_symmetric(a in 0.0f64..6.28, b in 0.0f64..6.28, c in 0.0f64..3.14, t in 0.05f64..3.0) {
            let circle = ManifoldModel::circle(1.0).unwrap();
            let (x, y) = (circle.flat_point(&[a]).unwrap(), circle.flat_point(&[b]).unwrap());
            prop_assert!((circle.heat_kernel(&x, &y, t).unwrap() - circle.heat_kernel(&y, &x, t).unwrap()).abs() <= 1e-10);
            let s = unit_sphere();
            let (x, y) = (s.sphere_point_polar(c, a).unwrap(), s.sphere_point_polar(b / 2.0, c).unwrap());
            prop_assert!((s.heat_kernel(&x, &y, t).unwrap() - s.heat_kernel(&y, &x, t).unwrap()).abs() <= 1e-10);
        }

        #[test]
        fn sphere_distance_triangle_inequality(a in 0.0f64..3.14, b in 0.0f64..6.28, c in 0.0f64..3.14, d in 0.0f64..6.28, e in 0.0f64..3.14, f in 0.0f64..6.28) {
            let s = ManifoldModel::sphere2(1.5).unwrap();
            let (p, q, w) = (s.sphere_point_polar(a, b).unwrap(), s.sphere_point_polar(c, d).unwrap(), s.sphere_point_polar(e, f).unwrap());
            let pq = s.distance(&p, &q).unwrap();
            prop_assert!((pq - s.distance(&q, &p).unwrap()).abs() < 1e-14);
            prop_assert!(pq <= s.distance(&p, &w).unwrap() + s.distance(&w, &q).unwrap() + 1e-12);
        }
    }

    #[test]
    fn exp_step_examples() {
        let circle = ManifoldModel::circle(1.0).unwrap();
        let p = circle.flat_point(&[0.0]).unwrap();
        let q = circle
            .exp_step(&TangentVector {
                base: p,
                components: Coords::from_slice(&[2.0 * PI]).unwrap(),
            })
            .unwrap();
        assert!(q.coords[0] < 1e-12 || (q.coords[0] - 2.0 * PI).abs() < 1e-12);

        let torus = ManifoldModel::flat_torus(&[2.0 * PI, 2.0 * PI]).unwrap();
        let p = torus.flat_point(&[0.0, 0.0]).unwrap();
        let q = torus
            .exp_step(&TangentVector {
                base: p,
                components: Coords::from_slice(&[PI, 3.0 * PI]).unwrap(),
            })
            .unwrap();
        assert_abs_diff_eq!(q.coords[0], PI, epsilon = 1e-12);
        assert_abs_diff_eq!(q.coords[1], PI, epsilon = 1e-12);
    }

    #[test]
    fn exp_step_north_to_south_matches_geodesic_ode() {
        let s = unit_sphere();
        let p = s.north_pole().unwrap();
        // At the chart centre λ = 2, so chart speed π/2 is metric speed π.
        let v = TangentVector {
            base: p,
            components: Coords::from_slice(&[PI / 2.0, 0.0]).unwrap(),
        };
        let q = s.exp_step(&v).unwrap();
        let x = q.embedded.unwrap();
        assert!(norm3(&[x[0], x[1], x[2] + 1.0]) < 1e-12);
        assert_eq!(q.chart, Chart::South);

        // Oracle: RK4 on the chart geodesic equation, stopped before the
        // south pole leaves the chart, compared against the same flow time.
        let rhs = |st: [f64; 4]| -> [f64; 4] {
            let pt = s
                .sphere_point_in_chart(Chart::North, [st[0], st[1]])
                .unwrap();
            let g = s.christoffel(&pt).unwrap();
            let mut acc = [0.0; 2];
            for (k, a) in acc.iter_mut().enumerate() {
                for i in 0..2 {
                    for j in 0..2 {
                        *a -= g.get(k, i, j) * st[2 + i] * st[2 + j];
                    }
                }
            }
            [st[2], st[3], acc[0], acc[1]]
        };
        let tau = 0.6;
        let n = 20_000;
        let h = tau / n as f64;
        let mut st = [0.0, 0.0, PI / 2.0, 0.0];
        for _ in 0..n {
            let k1 = rhs(st);
            let k2 = rhs(std::array::from_fn(|i| st[i] + 0.5 * h * k1[i]));
            let k3 = rhs(std::array::from_fn(|i| st[i] + 0.5 * h * k2[i]));
            let k4 = rhs(std::array::from_fn(|i| st[i] + h * k3[i]));
            st = std::array::from_fn(|i| {
                st[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            });
        }
        let v = TangentVector {
            base: p,
            components: Coords::from_slice(&[tau * PI / 2.0, 0.0]).unwrap(),
        };
        let q = s.exp_step(&v).unwrap();
        let q = s.to_chart(&q, Chart::North).unwrap();
        assert!((q.coords[0] - st[0]).abs() < 1e-8 && (q.coords[1] - st[1]).abs() < 1e-8);
    }

    #[test]
    fn distance_examples() {
        let circle = ManifoldModel::circle(1.0).unwrap();
        let (a, b) = (
            circle.flat_point(&[0.0]).unwrap(),
            circle.flat_point(&[PI]).unwrap(),
        );
        assert_abs_diff_eq!(circle.distance(&a, &b).unwrap(), PI, epsilon = 1e-15);
        assert_eq!(circle.distance(&a, &a).unwrap(), 0.0);
        let s = unit_sphere();
        let d = s
            .distance(&s.north_pole().unwrap(), &s.south_pole().unwrap())
            .unwrap();
        assert_abs_diff_eq!(d, PI, epsilon = 1e-15);
    }

    #[test]
    fn scalar_curvature_examples() {
        let torus = ManifoldModel::flat_torus(&[1.0, 1.0]).unwrap();
        assert_eq!(
            torus
                .scalar_curvature(&torus.flat_point(&[0.0, 0.0]).unwrap())
                .unwrap(),
            0.0
        );
        let s1 = unit_sphere();
        assert_eq!(s1.scalar_curvature(&s1.north_pole().unwrap()).unwrap(), 2.0);
        let s2 = ManifoldModel::sphere2(2.0).unwrap();
        assert_eq!(s2.scalar_curvature(&s2.north_pole().unwrap()).unwrap(), 0.5);
    }

    /// Scalar curvature from the Christoffel symbols by finite differences:
    /// `R^a_{bcd} = ∂_c Γ^a_{db} - ∂_d Γ^a_{cb} + Γ^a_{ce}Γ^e_{db} - Γ^a_{de}Γ^e_{cb}`.
    #[test]
    fn scalar_curvature_matches_christoffel_finite_differences() {
        for r in [1.0, 2.0] {
            let s = ManifoldModel::sphere2(r).unwrap();
            let u = [0.3, -0.4];
            let h = 1e-5;
            let p = s.sphere_point_in_chart(Chart::North, u).unwrap();
            let gamma = s.christoffel(&p).unwrap();
            let dgamma = |c: usize| {
                let mut up = u;
                let mut dn = u;
                up[c] += h;
                dn[c] -= h;
                let gp = s
                    .christoffel(&s.sphere_point_in_chart(Chart::North, up).unwrap())
                    .unwrap();
                let gm = s
                    .christoffel(&s.sphere_point_in_chart(Chart::North, dn).unwrap())
                    .unwrap();
                move |a: usize, b: usize, d: usize| (gp.get(a, b, d) - gm.get(a, b, d)) / (2.0 * h)
            };
            let (d0, d1) = (dgamma(0), dgamma(1));
            let d = |c: usize, a: usize, b: usize, e: usize| {
                if c == 0 {
                    d0(a, b, e)
                } else {
                    d1(a, b, e)
                }
            };
            let riemann = |a: usize, b: usize, c: usize, dd: usize| {
                let mut v = d(c, a, dd, b) - d(dd, a, c, b);
                for e in 0..2 {
                    v += gamma.get(a, c, e) * gamma.get(e, dd, b)
                        - gamma.get(a, dd, e) * gamma.get(e, c, b);
                }
                v
            };
            let g = s.metric_at(&p).unwrap();
            let mut scal = 0.0;
            for b in 0..2 {
                for dd in 0..2 {
                    let ricci: f64 = (0..2).map(|a| riemann(a, b, a, dd)).sum();
                    scal += ricci / g[(b, dd)].max(1e-300) * if b == dd { 1.0 } else { 0.0 };
                }
            }
            assert!((scal - 2.0 / (r * r)).abs() < 1e-4, "r={r}: {scal}");
        }
    }

    #[test]
    fn circle_heat_kernel_examples() {
        let circle = ManifoldModel::circle(1.0).unwrap();
        let x = circle.flat_point(&[0.0]).unwrap();
        let p = circle.heat_kernel(&x, &x, 200.0).unwrap();
        assert_abs_diff_eq!(p, 1.0 / (2.0 * PI), epsilon = 1e-14);

        let a = circle
            .heat_kernel_with(&x, &x, 1.0, HeatSeries::WrappedGaussian)
            .unwrap();
        let b = circle
            .heat_kernel_with(&x, &x, 1.0, HeatSeries::Fourier)
            .unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!(circle.heat_kernel(&x, &x, 0.0).is_err());
        assert!(circle.heat_kernel(&x, &x, -1.0).is_err());
    }

    proptest! {
        #[test]
        fn wrapped_gaussian_agrees_with_fourier(d in -10.0f64..10.0, t in 0.01f64..20.0, period in 0.5f64..10.0) {
            let a = circle_heat_kernel(period, d, t, HeatSeries::WrappedGaussian).unwrap();
            let b = circle_heat_kernel(period, d, t, HeatSeries::Fourier).unwrap();
            prop_assert!((a - b).abs() <= 1e-10, "{} vs {}", a, b);
        }
    }

    #[test]
    fn heat_kernel_normalization() {
        // Trapezoid on a periodic smooth integrand is spectrally accurate.
        let circle = ManifoldModel::circle(1.3).unwrap();
        let x = circle.flat_point(&[0.4]).unwrap();
        for t in [0.05, 0.5, 3.0] {
            let n = 2000;
            let period = 2.0 * PI * 1.3;
            let sum: f64 = (0..n)
                .map(|i| {
                    let y = circle.flat_point(&[period * i as f64 / n as f64]).unwrap();
                    circle.heat_kernel(&x, &y, t).unwrap()
                })
                .sum();
            assert!((sum * period / n as f64 - 1.0).abs() < 1e-8);
        }
        let s = ManifoldModel::sphere2(1.2).unwrap();
        let x = s.sphere_point_polar(0.7, 0.2).unwrap();
        let nodes = crate::quadrature::SphereGrid::new(&s, 48, 96).unwrap();
        for t in [0.1, 1.0] {
            let total: f64 = nodes
                .iter()
                .map(|(y, w)| w * s.heat_kernel(&x, y, t).unwrap())
                .sum();
            assert!((total - 1.0).abs() < 1e-8, "t={t}: {total}");
        }
    }

    #[test]
    fn chapman_kolmogorov_on_circle() {
        let circle = ManifoldModel::circle(1.0).unwrap();
        let x = circle.flat_point(&[0.3]).unwrap();
        let y = circle.flat_point(&[2.0]).unwrap();
        let (s, t) = (0.3, 0.7);
        let n = 1024;
        let sum: f64 = (0..n)
            .map(|i| {
                let z = circle
                    .flat_point(&[2.0 * PI * i as f64 / n as f64])
                    .unwrap();
                circle.heat_kernel(&x, &z, s).unwrap() * circle.heat_kernel(&z, &y, t).unwrap()
            })
            .sum::<f64>()
            * 2.0
            * PI
            / n as f64;
        assert!((sum - circle.heat_kernel(&x, &y, s + t).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn sphere_heat_kernel_far_field_is_positive() {
        let s = unit_sphere();
        let (n, so) = (s.north_pole().unwrap(), s.south_pole().unwrap());
        let v = s.heat_kernel(&n, &so, 0.01).unwrap();
        assert!(v > 0.0 && v < 1e-100);
        let x = s.sphere_point_polar(2.0, 0.0).unwrap();
        let v = s.heat_kernel(&n, &x, 0.02).unwrap();
        assert!(v > 0.0 && v < 1e-30);
    }

    #[test]
    fn sphere_heat_kernel_small_time_matches_asymptotic() {
        let s = unit_sphere();
        let n = s.north_pole().unwrap();
        let x = s.sphere_point_polar(0.1, 0.0).unwrap();
        let t = 0.002;
        let series = s.heat_kernel(&n, &x, t).unwrap();
        let d: f64 = 0.1;
        let asym = (-(d * d) / (2.0 * t)).exp() * (d / d.sin()).sqrt() / (2.0 * PI * t);
        // First correction to the leading term is O(t).
        assert!((series / asym - 1.0).abs() < 2.0 * t);
    }
}
