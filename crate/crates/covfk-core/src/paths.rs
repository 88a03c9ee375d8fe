//! Brownian motion on the model geometries by geodesic Euler steps, with the
//! orthonormal frame carried along each step, and bridge reweighting.
//!
//! All model geometries are compact, so paths never explode and no lifetime
//! indicator is tracked.

use crate::error::{domain, Error, Result};
use crate::geometry::{
    chart_inverse_jacobian, chart_jacobian, chart_map, cross3, dot3, great_circle, norm3, rotate3,
    scale3, sphere_point_in, sphere_point_near, Chart, Coords, ManifoldKind, ManifoldModel, Point,
    MAX_DIM,
};
use crate::rng::{GaussianStream, RngConfig};

/// A linear map from `R^m` into the tangent space, in chart coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameMat {
    dim: usize,
    values: [[f64; MAX_DIM]; MAX_DIM],
}

impl FrameMat {
    pub fn identity(dim: usize) -> Self {
        let mut values = [[0.0; MAX_DIM]; MAX_DIM];
        for (i, row) in values.iter_mut().enumerate().take(dim) {
            row[i] = 1.0;
        }
        Self { dim, values }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i][j]
    }

    /// `F ξ`.
    #[inline]
    pub fn apply(&self, xi: &Coords) -> Coords {
        let mut out = Coords::zeros(self.dim);
        for i in 0..self.dim {
            let mut acc = 0.0;
            for j in 0..self.dim {
                acc += self.values[i][j] * xi[j];
            }
            out[i] = acc;
        }
        out
    }

    /// `max |F^T g F - I|` for the conformal metric `g = λ² I`.
    pub fn orthonormality_defect(&self, conformal_factor: f64) -> f64 {
        let l2 = conformal_factor * conformal_factor;
        let mut worst: f64 = 0.0;
        for a in 0..self.dim {
            for b in 0..self.dim {
                let mut s = 0.0;
                for i in 0..self.dim {
                    s += self.values[i][a] * self.values[i][b];
                }
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((l2 * s - target).abs());
            }
        }
        worst
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathSample {
    pub times: Vec<f64>,
    /// Nominal step and the possibly truncated final step.
    pub dt: f64,
    pub last_dt: f64,
    pub points: Vec<Point>,
    pub frames: Vec<FrameMat>,
    /// Gaussian increments scaled by `sqrt(dt)`, read in the frame.
    pub increments: Vec<Coords>,
}

impl PathSample {
    pub fn n_steps(&self) -> usize {
        self.increments.len()
    }

    pub fn end(&self) -> &Point {
        self.points.last().expect("paths have at least one point")
    }

    /// Per-step geometric data, as produced while sampling.
    pub fn step(&self, model: &ManifoldModel, i: usize) -> Result<Step> {
        let dt = if i + 1 == self.n_steps() {
            self.last_dt
        } else {
            self.dt
        };
        step_data(
            model,
            i,
            dt,
            &self.points[i],
            &self.points[i + 1],
            &self.frames[i],
            &self.increments[i],
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BridgeSample {
    /// The unconditioned path on `[0, t - δ]`.
    pub path: PathSample,
    pub target: Point,
    /// `p(δ, b_{t-δ}, y) / p(t, x, y)`.
    pub weight: f64,
}

/// Everything a path functional needs about one Euler step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Step {
    pub index: usize,
    pub dt: f64,
    pub from: Point,
    /// End point in its own chart, which may differ from `from.chart`.
    pub to: Point,
    pub frame: FrameMat,
    pub xi: Coords,
    /// `F ξ` in the chart of `from`.
    pub tangent: Coords,
    /// Chart increment of the step in the chart of `from`.
    pub delta: Coords,
    /// Geodesic midpoint in the chart of `from`.
    pub midpoint: Point,
    /// End point expressed in the chart of `from`.
    pub end_in_from_chart: Point,
}

impl Step {
    pub fn switches_chart(&self) -> bool {
        self.to.chart != self.from.chart
    }
}

/// Number of steps and the length of the last one.
pub fn step_schedule(t: f64, dt: f64) -> Result<(usize, f64)> {
    if !(t.is_finite() && t > 0.0) {
        return domain(format!("time horizon must be positive, got {t}"));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return domain(format!("step size must be positive, got {dt}"));
    }
    if dt > t * (1.0 + 1e-12) {
        return domain(format!("step size {dt} exceeds horizon {t}"));
    }
    let ratio = t / dt;
    let n = (ratio - 1e-9).ceil().max(1.0) as usize;
    let last = t - (n - 1) as f64 * dt;
    let last = if (last - dt).abs() <= 1e-9 * dt {
        dt
    } else {
        last
    };
    Ok((n, last))
}

enum WalkerState {
    Flat {
        coords: Coords,
    },
    Sphere {
        radius: f64,
        chart: Chart,
        x: [f64; 3],
        frame: [[f64; 3]; 2],
    },
}

/// Streaming geodesic Euler sampler.
pub struct Walker<'a> {
    model: &'a ManifoldModel,
    state: WalkerState,
    normals: GaussianStream,
    index: usize,
}

impl<'a> Walker<'a> {
    pub fn new(model: &'a ManifoldModel, start: &Point, rng: RngConfig) -> Result<Self> {
        model.validate_point(start)?;
        let state = match model.kind() {
            ManifoldKind::Sphere2 { radius } => {
                let r = radius.get();
                let x = start
                    .embedded
                    .ok_or_else(|| Error::Internal("sphere point without embedding".into()))?;
                let u = [start.coords[0], start.coords[1]];
                let jac = chart_inverse_jacobian(r, start.chart, u);
                let mut frame = [[0.0; 3]; 2];
                for (a, e) in frame.iter_mut().enumerate() {
                    let col = [jac[0][a], jac[1][a], jac[2][a]];
                    *e = scale3(&col, 1.0 / norm3(&col));
                }
                WalkerState::Sphere {
                    radius: r,
                    chart: start.chart,
                    x,
                    frame,
                }
            }
            _ => WalkerState::Flat {
                coords: start.coords,
            },
        };
        Ok(Self {
            model,
            state,
            normals: GaussianStream::new(rng, model.dim()),
            index: 0,
        })
    }

    pub fn current(&self) -> Point {
        match &self.state {
            WalkerState::Flat { coords } => Point {
                chart: Chart::Global,
                coords: *coords,
                embedded: None,
            },
            WalkerState::Sphere {
                radius, chart, x, ..
            } => sphere_point_in(*radius, *chart, *x),
        }
    }

    pub fn frame(&self) -> FrameMat {
        match &self.state {
            WalkerState::Flat { coords } => FrameMat::identity(coords.dim()),
            WalkerState::Sphere {
                radius,
                chart,
                x,
                frame,
            } => chart_frame(*radius, *chart, x, frame),
        }
    }

    /// Advance by one step of length `dt`.
    pub fn step(&mut self, dt: f64) -> Step {
        let from = self.current();
        let frame = self.frame();
        let m = self.model.dim();
        let mut buf = [0.0; MAX_DIM];
        self.normals.next_step(&mut buf);
        let mut xi = Coords::zeros(m);
        let sdt = dt.sqrt();
        for i in 0..m {
            xi[i] = buf[i] * sdt;
        }
        let index = self.index;
        self.index += 1;
        match &mut self.state {
            WalkerState::Flat { coords } => {
                let periods = self.model.periods().expect("flat model has periods");
                for i in 0..m {
                    coords[i] = crate::geometry::wrap(coords[i] + xi[i], periods[i]);
                }
            }
            WalkerState::Sphere {
                radius,
                chart,
                x,
                frame: e,
            } => {
                let r = *radius;
                let w = [
                    xi[0] * e[0][0] + xi[1] * e[1][0],
                    xi[0] * e[0][1] + xi[1] * e[1][1],
                    xi[0] * e[0][2] + xi[1] * e[1][2],
                ];
                let y = great_circle(r, x, &w);
                let axis = cross3(x, &w);
                let axis_norm = norm3(&axis);
                if axis_norm > 0.0 {
                    let axis = scale3(&axis, 1.0 / axis_norm);
                    let angle = norm3(&w) / r;
                    for ea in e.iter_mut() {
                        *ea = rotate3(ea, &axis, angle);
                    }
                }
                reorthonormalize(&y, e, r);
                let next = sphere_point_near(r, *chart, y);
                *x = y;
                *chart = next.chart;
            }
        }
        let to = self.current();
        step_data(self.model, index, dt, &from, &to, &frame, &xi)
            .expect("consecutive path points share a chart neighbourhood")
    }
}

fn reorthonormalize(x: &[f64; 3], e: &mut [[f64; 3]; 2], r: f64) {
    let n = scale3(x, 1.0 / r);
    let mut e0 = e[0];
    let c = dot3(&e0, &n);
    for i in 0..3 {
        e0[i] -= c * n[i];
    }
    let e0 = scale3(&e0, 1.0 / norm3(&e0));
    // Keep orientation: e1 = n × e0.
    e[0] = e0;
    e[1] = cross3(&n, &e0);
}

fn chart_frame(r: f64, chart: Chart, x: &[f64; 3], e: &[[f64; 3]; 2]) -> FrameMat {
    let jac = chart_jacobian(r, chart, x);
    let mut f = FrameMat::identity(2);
    for i in 0..2 {
        for a in 0..2 {
            f.values[i][a] = dot3(&jac[i], &e[a]);
        }
    }
    f
}

fn step_data(
    model: &ManifoldModel,
    index: usize,
    dt: f64,
    from: &Point,
    to: &Point,
    frame: &FrameMat,
    xi: &Coords,
) -> Result<Step> {
    let tangent = frame.apply(xi);
    match model.sphere_radius() {
        None => {
            let periods = model
                .periods()
                .ok_or_else(|| Error::Internal("flat step on a sphere".into()))?;
            let mut mid = from.coords;
            for i in 0..mid.dim() {
                mid[i] = crate::geometry::wrap(mid[i] + 0.5 * tangent[i], periods[i]);
            }
            let midpoint = Point {
                chart: Chart::Global,
                coords: mid,
                embedded: None,
            };
            Ok(Step {
                index,
                dt,
                from: *from,
                to: *to,
                frame: *frame,
                xi: *xi,
                tangent,
                delta: tangent,
                midpoint,
                end_in_from_chart: *to,
            })
        }
        Some(r) => {
            let (x, y) = (
                from.embedded.unwrap_or_default(),
                to.embedded.unwrap_or_default(),
            );
            let end = chart_map(r, from.chart, &y)?;
            let mut delta = Coords::zeros(2);
            delta[0] = end[0] - from.coords[0];
            delta[1] = end[1] - from.coords[1];
            let sum = [x[0] + y[0], x[1] + y[1], x[2] + y[2]];
            let mid = scale3(&sum, r / norm3(&sum));
            let mid_u = chart_map(r, from.chart, &mid)?;
            Ok(Step {
                index,
                dt,
                from: *from,
                to: *to,
                frame: *frame,
                xi: *xi,
                tangent,
                delta,
                midpoint: Point {
                    chart: from.chart,
                    coords: Coords::from_slice(&mid_u)?,
                    embedded: Some(mid),
                },
                end_in_from_chart: Point {
                    chart: from.chart,
                    coords: Coords::from_slice(&end)?,
                    embedded: Some(y),
                },
            })
        }
    }
}

/// Sample a Brownian path on `[0, t]`.
pub fn sample_bm(
    model: &ManifoldModel,
    x: &Point,
    t: f64,
    dt: f64,
    rng: RngConfig,
) -> Result<PathSample> {
    let (n, last) = step_schedule(t, dt)?;
    sample_steps(model, x, n, dt, last, rng)
}

fn sample_steps(
    model: &ManifoldModel,
    x: &Point,
    n: usize,
    dt: f64,
    last: f64,
    rng: RngConfig,
) -> Result<PathSample> {
    let mut walker = Walker::new(model, x, rng)?;
    let mut path = PathSample {
        times: Vec::with_capacity(n + 1),
        dt,
        last_dt: last,
        points: Vec::with_capacity(n + 1),
        frames: Vec::with_capacity(n + 1),
        increments: Vec::with_capacity(n),
    };
    path.times.push(0.0);
    path.points.push(*x);
    path.frames.push(walker.frame());
    for i in 0..n {
        let h = if i + 1 == n { last } else { dt };
        let step = walker.step(h);
        path.times.push(i as f64 * dt + h);
        path.points.push(step.to);
        path.frames.push(walker.frame());
        path.increments.push(step.xi);
    }
    Ok(path)
}

/// Number of Euler steps on `[0, t - δ]` for a bridge with step `dt`.
pub fn bridge_schedule(t: f64, dt: f64, delta: f64) -> Result<usize> {
    if !(delta.is_finite() && delta > 0.0 && delta < t) {
        return domain(format!("bridge delta {delta} must lie in (0, {t})"));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return domain(format!("step size must be positive, got {dt}"));
    }
    let k = delta / dt;
    if (k - k.round()).abs() > 1e-9 * k.max(1.0) {
        return domain(format!("bridge delta {delta} is not a multiple of dt {dt}"));
    }
    let n = ((t - delta) / dt).round() as usize;
    if n == 0 || ((t - delta) - n as f64 * dt).abs() > 1e-9 * t {
        return domain(format!(
            "t - delta = {} is not a positive multiple of dt {dt}",
            t - delta
        ));
    }
    Ok(n)
}

/// Default bridge interval `max(dt, t / 100)`, rounded up to a multiple of `dt`.
pub fn default_delta(t: f64, dt: f64) -> f64 {
    let target = dt.max(t / 100.0);
    (target / dt - 1e-9).ceil() * dt
}

/// Sample a path on `[0, t - δ]` together with its bridge weight towards `y`.
pub fn sample_bridge(
    model: &ManifoldModel,
    x: &Point,
    y: &Point,
    t: f64,
    dt: f64,
    delta: f64,
    rng: RngConfig,
) -> Result<BridgeSample> {
    let n = bridge_schedule(t, dt, delta)?;
    let path = sample_steps(model, x, n, dt, dt, rng)?;
    let weight = model.heat_kernel(path.end(), y, delta)? / model.heat_kernel(x, y, t)?;
    Ok(BridgeSample {
        path,
        target: *y,
        weight,
    })
}
