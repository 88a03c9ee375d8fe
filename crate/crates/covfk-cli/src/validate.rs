//! `covfk validate`: per-module invariant suites with machine-readable
//! pass/fail output.

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use clap::ValueEnum;
use covfk_core::berezin::{
    perturbation_identity_check_matrices, trace_formula_mc, trace_formula_spectral,
    GrassmannMatrix, TraceProblem,
};
use covfk_core::fields::{Field, SectionFn, TrigField};
use covfk_core::fk::{constant_section, fk_estimate, FirstOrderOp};
use covfk_core::geometry::{Fault, ManifoldModel, Point};
use covfk_core::linalg::FiberMat;
use covfk_core::mc::{run_paths, McConfig};
use covfk_core::paths::Walker;
use covfk_core::quadrature::QuadratureGrid;
use covfk_core::rng::{split_streams, GaussianStream, RngConfig};
use covfk_core::spectral::{assemble_h, assemble_operator};
use covfk_core::spin::{
    clifford, gamma, grading, spinor_bundle, CliffordConvention, DiracStencil, DiracTruncation,
    FormAt, MixedForm, Poly3, SpinorField,
};
use covfk_core::transport::{parallel_transport, path_through, BundleSpec};
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::CliResult;
use crate::report::{Check, RunOptions, RunResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Geometry,
    Paths,
    Transport,
    Fk,
    Trace,
    Spin,
    All,
}

impl Suite {
    const MODULES: [Suite; 6] = [
        Suite::Geometry,
        Suite::Paths,
        Suite::Transport,
        Suite::Fk,
        Suite::Trace,
        Suite::Spin,
    ];

    fn name(self) -> &'static str {
        match self {
            Suite::Geometry => "geometry",
            Suite::Paths => "paths",
            Suite::Transport => "transport",
            Suite::Fk => "fk",
            Suite::Trace => "trace",
            Suite::Spin => "spin",
            Suite::All => "all",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateConfig {
    pub suite: Suite,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        Self {
            suite: Suite::All,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteSummary {
    pub suite: &'static str,
    pub passed: usize,
    pub failed: usize,
}

#[derive(Serialize)]
struct ValidateResults {
    summary: Vec<SuiteSummary>,
}

struct Ctx {
    fault: Fault,
    seed: u64,
    workers: Option<usize>,
}

impl Ctx {
    fn sphere(&self, radius: f64) -> CliResult<ManifoldModel> {
        Ok(ManifoldModel::sphere2(radius)?.with_fault(self.fault))
    }

    fn gaussians(&self, stream: u64, n: usize) -> Vec<f64> {
        let mut g = GaussianStream::new(RngConfig::new(self.seed, stream), n);
        let mut out = vec![0.0; n];
        g.next_step(&mut out);
        out
    }

    fn mc(&self, n_paths: usize, dt: f64) -> CliResult<McConfig> {
        Ok(McConfig::new(n_paths, dt, self.seed)?.with_workers(self.workers))
    }
}

pub fn run(cfg: ValidateConfig, opts: &RunOptions) -> CliResult<(RunResult, Vec<SuiteSummary>)> {
    let started = Instant::now();
    let mut cfg = cfg;
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    let ctx = Ctx {
        fault: opts.geometry_fault(),
        seed: cfg.seed,
        workers: opts.workers,
    };
    let suites: Vec<Suite> = match cfg.suite {
        Suite::All => Suite::MODULES.to_vec(),
        s => vec![s],
    };
    let mut checks = Vec::new();
    let mut summary = Vec::new();
    for suite in suites {
        let found = match suite {
            Suite::Geometry => geometry_suite(&ctx)?,
            Suite::Paths => paths_suite(&ctx)?,
            Suite::Transport => transport_suite(&ctx)?,
            Suite::Fk => fk_suite(&ctx)?,
            Suite::Trace => trace_suite(&ctx)?,
            Suite::Spin => spin_suite(&ctx)?,
            Suite::All => unreachable!("expanded above"),
        };
        let passed = found.iter().filter(|c| c.pass).count();
        summary.push(SuiteSummary {
            suite: suite.name(),
            passed,
            failed: found.len() - passed,
        });
        checks.extend(found.into_iter().map(|mut c| {
            c.name = format!("{}.{}", suite.name(), c.name);
            c
        }));
    }
    let results = ValidateResults {
        summary: summary.clone(),
    };
    let result = RunResult::new("validate", &cfg, results, checks, opts, started);
    Ok((result, summary))
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn geometry_suite(ctx: &Ctx) -> CliResult<Vec<Check>> {
    let sphere = ctx.sphere(1.3)?;
    let mut round_trip: f64 = 0.0;
    let mut christoffel: f64 = 0.0;
    let h = 1e-5;
    for i in 0..24 {
        let polar = 0.5 + 2.1 * i as f64 / 23.0;
        let p = sphere.sphere_point_polar(polar, 0.37 * i as f64)?;
        let there = sphere.to_chart(&p, p.chart.other())?;
        let back = sphere.to_chart(&there, p.chart)?;
        round_trip = round_trip.max((back.coords[0] - p.coords[0]).abs());
        round_trip = round_trip.max((back.coords[1] - p.coords[1]).abs());

        // Γ^k_ij = ½ g^{kl}(∂_i g_jl + ∂_j g_il - ∂_l g_ij) from differenced metrics.
        let u = [p.coords[0], p.coords[1]];
        let metric = |du: [f64; 2]| -> CliResult<DMatrix<f64>> {
            let q = sphere.sphere_point_in_chart(p.chart, [u[0] + du[0], u[1] + du[1]])?;
            Ok(sphere.metric_at(&q)?)
        };
        let mut dg = Vec::with_capacity(2);
        for axis in 0..2 {
            let mut e = [0.0; 2];
            e[axis] = h;
            let plus = metric(e)?;
            let minus = metric([-e[0], -e[1]])?;
            dg.push((plus - minus) / (2.0 * h));
        }
        let g_inv = sphere
            .metric_at(&p)?
            .try_inverse()
            .expect("metric is positive definite");
        let gamma = sphere.christoffel(&p)?;
        for k in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    let mut expect = 0.0;
                    for l in 0..2 {
                        expect +=
                            0.5 * g_inv[(k, l)] * (dg[i][(j, l)] + dg[j][(i, l)] - dg[l][(i, j)]);
                    }
                    christoffel = christoffel.max((gamma.get(k, i, j) - expect).abs());
                }
            }
        }
    }

    let unit = ctx.sphere(1.0)?;
    let grid = QuadratureGrid::sphere(&unit, 32, 64)?;
    let x = unit.sphere_point_polar(0.7, 0.3)?;
    let mut normalization: f64 = 0.0;
    for t in [0.5, 2.0] {
        let mut total = 0.0;
        for (y, w) in grid.iter() {
            total += w * unit.heat_kernel(&x, y, t)?;
        }
        normalization = normalization.max((total - 1.0).abs());
    }
    let circle = ManifoldModel::circle(1.0)?;
    let cgrid = QuadratureGrid::uniform(&circle, 256)?;
    let cx = circle.flat_point(&[1.0])?;
    let mut total = 0.0;
    for (y, w) in cgrid.iter() {
        total += w * circle.heat_kernel(&cx, y, 0.5)?;
    }
    normalization = normalization.max((total - 1.0).abs());

    let area: f64 = grid.iter().map(|(_, w)| w).sum();
    let scal = sphere.scalar_curvature(&sphere.north_pole()?)?;
    Ok(vec![
        Check::at_most("chart_round_trip", round_trip, 1e-12),
        Check::at_most("christoffel_matches_metric", christoffel, 1e-6),
        Check::at_most("heat_kernel_normalization", normalization, 1e-6),
        Check::at_most("sphere_area", (area - 4.0 * PI).abs(), 1e-10),
        Check::at_most(
            "scalar_curvature",
            (scal - 2.0 / (1.3f64 * 1.3)).abs(),
            1e-12,
        ),
    ])
}

fn paths_suite(ctx: &Ctx) -> CliResult<Vec<Check>> {
    let streams = split_streams(RngConfig::new(ctx.seed, 0), 512)?;
    let mut firsts: Vec<u64> = streams
        .iter()
        .map(|s| {
            let mut g = GaussianStream::new(*s, 1);
            let mut out = [0.0];
            g.next_step(&mut out);
            out[0].to_bits()
        })
        .collect();
    firsts.sort_unstable();
    firsts.dedup();
    let duplicates = (streams.len() - firsts.len()) as f64;

    let sphere = ctx.sphere(1.0)?;
    let start = sphere.sphere_point_polar(0.4, 0.0)?;
    let mut walker = Walker::new(&sphere, &start, RngConfig::new(ctx.seed, 1))?;
    let mut frame_defect: f64 = 0.0;
    for _ in 0..2000 {
        let step = walker.step(1e-2);
        let lam = sphere.conformal_factor(&step.from);
        frame_defect = frame_defect.max(step.frame.orthonormality_defect(lam));
    }

    // E z_t = z_0 e^{-t} on the unit sphere under Δ/2.
    let (t, dt, n) = (1.0, 5e-3, 20_000);
    let mc = ctx.mc(n, dt)?;
    let fam = mc.streams(2);
    let m = run_paths(n, 1, mc.workers, |i, out| {
        let mut w = Walker::new(&sphere, &start, fam.get(i))?;
        for _ in 0..(t / dt).round() as usize {
            w.step(dt);
        }
        out[0] = c(w.current().embedded.expect("sphere point")[2], 0.0);
        Ok(())
    })?;
    let z_err = (m.mean(0).re - 0.4f64.cos() * (-t).exp()).abs();
    let z_tol = 4.0 * m.stderr(0) + 2.0 * dt;

    // E|X_t - x|^2 = m t on a flat torus.
    let torus = ManifoldModel::flat_torus(&[2.0 * PI, 2.0 * PI])?;
    let x0 = torus.flat_point(&[1.0, 2.0])?;
    let fam = mc.streams(3);
    let m = run_paths(n, 1, mc.workers, |i, out| {
        let mut w = Walker::new(&torus, &x0, fam.get(i))?;
        let mut disp = [0.0; 2];
        for _ in 0..(t / dt).round() as usize {
            let step = w.step(dt);
            disp[0] += step.delta[0];
            disp[1] += step.delta[1];
        }
        out[0] = c(disp[0] * disp[0] + disp[1] * disp[1], 0.0);
        Ok(())
    })?;
    let msd_err = (m.mean(0).re - 2.0 * t).abs();
    Ok(vec![
        Check::at_most("stream_first_draws_distinct", duplicates, 0.0),
        Check::at_most("frame_orthonormality", frame_defect, 1e-9),
        Check::at_most("sphere_coordinate_mean", z_err, z_tol),
        Check::at_most("torus_mean_square_displacement", msd_err, 4.0 * m.stderr(0)),
    ])
}

fn latitude(model: &ManifoldModel, polar: f64, n: usize) -> CliResult<Vec<Point>> {
    (0..=n)
        .map(|i| Ok(model.sphere_point_polar(polar, 2.0 * PI * i as f64 / n as f64)?))
        .collect()
}

fn transport_suite(ctx: &Ctx) -> CliResult<Vec<Check>> {
    let sphere = ctx.sphere(1.0)?;
    let polar: f64 = 0.9;
    let omega = 2.0 * PI * (1.0 - polar.cos());
    let n = 5000;
    let path = path_through(&sphere, &latitude(&sphere, polar, n)?, 1.0 / n as f64)?;

    let tangent = BundleSpec::tangent_s2(&sphere)?;
    let hol = *parallel_transport(&tangent, &path)?
        .matrices
        .last()
        .expect("nonempty path");
    let rotation = FiberMat::from_fn(2, |i, j| {
        c(
            [[omega.cos(), -omega.sin()], [omega.sin(), omega.cos()]][i][j],
            0.0,
        )
    });
    let tangent_err = (hol - rotation).frobenius_norm();

    let spinor = spinor_bundle(&sphere)?;
    let hol = *parallel_transport(&spinor, &path)?
        .matrices
        .last()
        .expect("nonempty path");
    let half = FiberMat::from_fn(2, |a, b| match (a, b) {
        (0, 0) => Complex64::from_polar(1.0, -omega / 2.0),
        (1, 1) => Complex64::from_polar(1.0, omega / 2.0),
        _ => c(0.0, 0.0),
    });
    let spinor_err = (hol - half).frobenius_norm();

    let a = 0.3;
    let circle = ManifoldModel::circle(1.0)?;
    let line = BundleSpec::u1_flat(&circle, &[a])?;
    let pts = (0..=2000)
        .map(|i| Ok(circle.flat_point(&[2.0 * PI * i as f64 / 2000.0])?))
        .collect::<CliResult<Vec<_>>>()?;
    let hol = parallel_transport(&line, &path_through(&circle, &pts, 1e-3)?)?
        .matrices
        .last()
        .expect("nonempty path")[(0, 0)];
    let u1_err = (hol - Complex64::from_polar(1.0, -2.0 * PI * a)).norm();

    let start = sphere.sphere_point_polar(1.1, 0.2)?;
    let mut walker = Walker::new(&sphere, &start, RngConfig::new(ctx.seed, 4))?;
    let pts: Vec<Point> = std::iter::once(start)
        .chain((0..400).map(|_| walker.step(1e-3).to))
        .collect();
    let seq = parallel_transport(&tangent, &path_through(&sphere, &pts, 1e-3)?)?;
    let unitarity = seq
        .matrices
        .iter()
        .map(|u| (u.adjoint() * *u - FiberMat::identity(2)).frobenius_norm())
        .fold(0.0, f64::max);
    Ok(vec![
        Check::at_most("tangent_latitude_holonomy", tangent_err, 1e-4),
        Check::at_most("spinor_latitude_holonomy", spinor_err, 1e-4),
        Check::at_most("circle_line_bundle_holonomy", u1_err, 1e-8),
        Check::at_most("transport_unitarity", unitarity, 1e-12),
    ])
}

fn fk_suite(ctx: &Ctx) -> CliResult<Vec<Check>> {
    let circle = ManifoldModel::circle(1.0)?;
    let x = circle.flat_point(&[0.7])?;

    let scalar = BundleSpec::trivial(&circle, 1)?;
    let est = fk_estimate(
        &scalar,
        &FirstOrderOp::zero(&circle, 1)?,
        &constant_section(&[c(2.0, 0.0)])?,
        &x,
        1.0,
        &ctx.mc(2048, 1e-2)?,
    )?;
    let zero_variance = (est.scalar() - c(2.0, 0.0)).norm() + est.max_stderr();

    // Q = ∂ on e^{iθ}: e^{-t(1/2 + i)} e^{ix} for the PDE, the Euler product
    // (1 - i dt)^n for the scheme.
    let (t, dt, k) = (0.25, 1e-3, 1.0);
    let op = FirstOrderOp::circle_scalar(&circle, 1, c(1.0, 0.0), c(0.0, 0.0))?;
    let psi = SectionFn::trig(
        &circle,
        vec![(covfk_core::fields::mode1(1), vec![c(1.0, 0.0)])],
    )?;
    let est = fk_estimate(&scalar, &op, &psi, &x, t, &ctx.mc(20_000, dt)?)?;
    let ik = c(0.0, k);
    let wave = (ik * 0.7).exp();
    let exact = wave * (-(k * k / 2.0 + ik) * t).exp();
    let discrete =
        wave * (-k * k * t / 2.0).exp() * (c(1.0, 0.0) - ik * dt).powi((t / dt).round() as i32);
    let oracle_err = (est.scalar() - exact).norm();
    let oracle_tol = 4.0 * est.max_stderr() + (discrete - exact).norm();

    let pair = BundleSpec::trivial(&circle, 2)?;
    let nil = FiberMat::from_fn(2, |i, j| {
        if (i, j) == (0, 1) {
            c(1.0, 0.0)
        } else {
            c(0.0, 0.0)
        }
    });
    let op = FirstOrderOp::potential(&circle, Arc::new(TrigField::constant(&circle, nil)?))?;
    let w = [c(0.5, -1.0), c(2.0, 0.25)];
    let est = fk_estimate(
        &pair,
        &op,
        &constant_section(&w)?,
        &x,
        0.8,
        &ctx.mc(1024, 1e-2)?,
    )?;
    let expect = [w[0] - w[1] * 0.8, w[1]];
    let nil_err = est.max_error(&expect) + est.max_stderr();
    Ok(vec![
        Check::at_most("zero_variance_constant", zero_variance, 0.0),
        Check::at_most("circle_semigroup_oracle", oracle_err, oracle_tol),
        Check::at_most("nilpotent_potential", nil_err, 1e-12),
    ])
}

fn random_matrix(ctx: &Ctx, stream: u64, n: usize) -> DMatrix<Complex64> {
    let g = ctx.gaussians(stream, 2 * n * n);
    let s = 1.0 / (2.0 * n as f64).sqrt();
    DMatrix::from_fn(n, n, |i, j| {
        c(g[2 * (i * n + j)] * s, g[2 * (i * n + j) + 1] * s)
    })
}

fn trace_suite(ctx: &Ctx) -> CliResult<Vec<Check>> {
    let mut identity: f64 = 0.0;
    for pair in 0..20u64 {
        let n = 4 + (pair as usize * 60) / 19;
        let h = random_matrix(ctx, 100 + 2 * pair, n) + DMatrix::identity(n, n) * c(2.0, 0.0);
        let p = random_matrix(ctx, 101 + 2 * pair, n);
        identity = identity.max(perturbation_identity_check_matrices(&h, &p, 1.0)?);
    }

    let a = random_matrix(ctx, 200, 6);
    let b = random_matrix(ctx, 201, 6);
    let prod = GrassmannMatrix::odd(a).mul(&GrassmannMatrix::odd(b))?;
    let nilpotency = prod.body.norm() + prod.theta.norm();

    let circle = ManifoldModel::circle(1.0)?;
    let bundle = BundleSpec::trivial(&circle, 1)?;
    let one: Field = Arc::new(TrigField::constant(&circle, FiberMat::identity(1))?);
    let zero: Field = Arc::new(TrigField::zero(&circle, 1)?);
    let mult = TrigField::scalar_circle(
        &circle,
        1,
        &[(0, c(1.0, 0.0)), (1, c(0.5, 0.0)), (-1, c(0.5, 0.0))],
    )?;
    let p = FirstOrderOp::potential(&circle, Arc::new(mult))?;
    let problem = TraceProblem {
        bundle: &bundle,
        potential: zero.clone(),
        perturbation: &p,
        weight: one.clone(),
        t: 1.0,
    };
    let duhamel_route = trace_formula_spectral(&problem, 24)?;
    let h = assemble_h(&bundle, &FirstOrderOp::zero(&circle, 1)?, 24)?;
    let pm = assemble_operator(&bundle, &p, &h)?;
    let direct = (pm * h.semigroup(1.0)?).trace();
    let cyclicity = (duhamel_route - direct).norm();

    let none = FirstOrderOp::zero(&circle, 1)?;
    let grid = QuadratureGrid::uniform(&circle, 8)?;
    let est = trace_formula_mc(
        &TraceProblem {
            perturbation: &none,
            ..problem
        },
        &grid,
        &ctx.mc(1024, 1e-2)?,
    )?;
    let zero_perturbation = est.scalar().norm() + est.max_stderr();
    Ok(vec![
        Check::at_most("perturbation_identity_random", identity, 1e-9),
        Check::at_most("grassmann_nilpotency", nilpotency, 0.0),
        Check::at_most("cyclicity_zeroth_order", cyclicity, 1e-9),
        Check::at_most("zero_perturbation_exact", zero_perturbation, 0.0),
    ])
}

fn random_poly(ctx: &Ctx, stream: u64) -> Poly3 {
    let g = ctx.gaussians(stream, 20);
    let exps: [[u32; 3]; 10] = [
        [0, 0, 0],
        [1, 0, 0],
        [0, 1, 0],
        [0, 0, 1],
        [2, 0, 0],
        [0, 2, 0],
        [0, 0, 2],
        [1, 1, 0],
        [1, 0, 1],
        [0, 1, 1],
    ];
    exps.iter().enumerate().fold(Poly3::zero(), |acc, (i, e)| {
        &acc + &Poly3::monomial(c(g[2 * i], g[2 * i + 1]), *e)
    })
}

fn spin_suite(ctx: &Ctx) -> CliResult<Vec<Check>> {
    let mut relations: f64 = 0.0;
    for a in 0..2 {
        for b in 0..2 {
            let anti = gamma(a) * gamma(b) + gamma(b) * gamma(a);
            let expect = FiberMat::identity(2).scale_re(if a == b { -2.0 } else { 0.0 });
            relations = relations.max((anti - expect).frobenius_norm());
        }
        relations = relations.max((grading() * gamma(a) + gamma(a) * grading()).frobenius_norm());
    }
    let vol = FormAt {
        area: c(1.0, 0.0),
        ..FormAt::default()
    };
    let area = clifford(&vol, CliffordConvention::IncreasingIndex);
    relations = relations.max((area.scale(c(0.0, 1.0)) - grading()).frobenius_norm());

    let sphere = ctx.sphere(1.0)?;
    let bundle = spinor_bundle(&sphere)?;
    let g = ctx.gaussians(300, 2);
    let p = sphere.sphere_point_polar(0.4 + 2.3 * g[0].abs().min(1.0), 3.0 * g[1])?;
    let field = SpinorField::from_north(&bundle, [random_poly(ctx, 301), random_poly(ctx, 302)]);
    let coarse = DiracStencil::new(&bundle, 2e-3)?;
    let fine = DiracStencil::new(&bundle, 1e-3)?;
    let lich = coarse.lichnerowicz_defect(&field, &p)? / fine.lichnerowicz_defect(&field, &p)?;
    let form = Arc::new(MixedForm::one_form([
        random_poly(ctx, 303),
        random_poly(ctx, 304),
        random_poly(ctx, 305),
    ]));
    let comm = coarse.commutation_defect(form.as_ref(), &field, &p)?
        / fine.commutation_defect(form.as_ref(), &field, &p)?;

    let truncation = DiracTruncation::new(1.0, 6)?;
    let str_max = [1.0, 2.0]
        .iter()
        .map(|&t| truncation.heat_supertrace(t).abs())
        .fold(0.0, f64::max);
    let spectrum = truncation
        .eigenvalues()
        .iter()
        .filter(|l| **l > 0.0)
        .take(3 * 4)
        .zip([1.0, 1.0, 2.0, 2.0, 2.0, 2.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0])
        .map(|(l, k)| (l - k).abs())
        .fold(0.0, f64::max);
    Ok(vec![
        Check::at_most("clifford_relations", relations, 1e-15),
        Check::at_most("lichnerowicz_quarter_ratio", (lich - 4.0).abs(), 0.5),
        Check::at_most("commutation_quarter_ratio", (comm - 4.0).abs(), 0.5),
        Check::at_most("truncation_supertrace", str_max, 1e-10),
        Check::at_most("truncation_spectrum", spectrum, 1e-8),
    ])
}

/// Plain-text table for the terminal.
pub fn summary_table(summary: &[SuiteSummary]) -> String {
    let mut out = format!("{:<10} {:>6} {:>6}\n", "suite", "passed", "failed");
    for s in summary {
        out.push_str(&format!(
            "{:<10} {:>6} {:>6}\n",
            s.suite, s.passed, s.failed
        ));
    }
    out
}
