//! Stochastic Chern character components of the round sphere's Dirac
//! operator, evaluated on `dt`-forms on the loop space.
//!
//! A form on `T × S²` is written `α = α' + dt ∧ α''`. The perturbation
//! attached to a one-factor input is
//! `F_T(α) = -c(d†α') + 2 Σ_a c(e_a ⌟ α') ∇_{e_a} - c(α'')`,
//! and the first two components are
//! `Ch_0(α_0) = Str(c(α_0') e^{-D²})`,
//! `Ch_1(α_0, α_1) = -Str(c(α_0') ∫_0^1 e^{-sD²} F_T(α_1) e^{-(1-s)D²} ds)`.
//! With `H = D²/2` and `t = 2` these are heat-kernel traces whose bridge
//! representation uses `V = scal/8`, which is constant on the round sphere.

use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::berezin::{trace_formula_mc, TraceProblem};
use crate::error::{domain, Result};
use crate::fields::{ConstField, Field, FnField};
use crate::fk::FirstOrderOp;
use crate::geometry::{ManifoldModel, Point};
use crate::linalg::FiberMat;
use crate::mc::{map_blocks, run_paths, timed, Estimate, McConfig};
use crate::paths::{bridge_schedule, default_delta, Walker};
use crate::quadrature::QuadratureGrid;
use crate::rng::RngConfig;
use crate::transport::{close_transport, BundleSpec, TransportRule, TransportState};

use super::bundle::spinor_bundle;
use super::clifford::{clifford, grading, supertrace, CliffordConvention};
use super::dirac::homogeneous_degree;
use super::forms::{FormAt, FormSpec, MixedForm};

/// Heat time matching `e^{-D²} = e^{-tH}` with `H = D²/2`.
pub const CHERN_TIME: f64 = 2.0;

/// First stream family used by the Chern estimators, disjoint from the
/// families of the generic trace formula.
pub const CHERN_STREAM_BASE: u64 = 1 << 32;

/// `α' + dt ∧ α''`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LoopForm {
    pub spatial: MixedForm,
    pub temporal: MixedForm,
}

impl LoopForm {
    pub fn new(spatial: MixedForm, temporal: MixedForm) -> Self {
        Self { spatial, temporal }
    }

    pub fn spatial(form: MixedForm) -> Self {
        Self::new(form, MixedForm::zero())
    }

    pub fn temporal(form: MixedForm) -> Self {
        Self::new(MixedForm::zero(), form)
    }
}

/// Serializable loop form.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoopFormSpec {
    pub spatial: FormSpec,
    pub temporal: FormSpec,
}

impl LoopFormSpec {
    pub fn to_form(&self) -> LoopForm {
        LoopForm::new(self.spatial.to_form(), self.temporal.to_form())
    }
}

/// Discretization of the stochastic integral in `Ch_1`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegralForm {
    /// Left-point increments `2c(F ξ ⌟ α') - (c(d†α') + c(α'')) dt`.
    #[default]
    Ito,
    /// Trapezoidal increments `2c(Δu ⌟ α') - c(α'') dt`.
    Stratonovich,
}

/// Pointwise data of a one-factor input.
#[derive(Clone)]
struct FormData {
    model: ManifoldModel,
    spatial: MixedForm,
    codiff: MixedForm,
    temporal: MixedForm,
    convention: CliffordConvention,
}

impl FormData {
    fn new(model: &ManifoldModel, form: &LoopForm, convention: CliffordConvention) -> Result<Self> {
        let Some(r) = model.sphere_radius() else {
            return domain("Chern characters are evaluated on the sphere");
        };
        Ok(Self {
            model: model.clone(),
            spatial: form.spatial.clone(),
            codiff: form.spatial.codifferential(r),
            temporal: form.temporal.clone(),
            convention,
        })
    }

    fn at(&self, form: &MixedForm, p: &Point) -> FormAt {
        form.at(&self.model, p)
            .expect("forms are evaluated at validated sphere points")
    }

    /// `2 c(v ⌟ α')` for a chart-component vector `v`.
    fn symbol(&self, p: &Point, v: [f64; 2]) -> FiberMat {
        let lam = self.model.conformal_factor(p);
        let at = self.at(&self.spatial, p);
        clifford(&at.contract([lam * v[0], lam * v[1]]), self.convention).scale_re(2.0)
    }

    fn temporal_term(&self, p: &Point) -> FiberMat {
        clifford(&self.at(&self.temporal, p), self.convention)
    }

    fn ito_correction(&self, p: &Point) -> FiberMat {
        clifford(&self.at(&self.codiff, p), self.convention)
    }
}

/// `F_T(α)` as a first-order operator on `spinor_s2`. Its symbol in chart
/// direction `k` is `2λ c(e_k ⌟ α')`.
pub fn build_ft(
    model: &ManifoldModel,
    form: &LoopForm,
    convention: CliffordConvention,
) -> Result<FirstOrderOp> {
    let data = Arc::new(FormData::new(model, form, convention)?);
    let mut sigma1: Vec<Field> = Vec::with_capacity(2);
    for k in 0..2 {
        let d = data.clone();
        sigma1.push(Arc::new(FnField::new(2, move |p: &Point| {
            let mut v = [0.0; 2];
            v[k] = 1.0;
            d.symbol(p, v)
        })));
    }
    let d = data.clone();
    let q0: Field = Arc::new(FnField::new(2, move |p: &Point| {
        -(d.ito_correction(p) + d.temporal_term(p))
    }));
    FirstOrderOp::new(2, sigma1, q0)
}

/// Zeroth-order two-factor term
/// `(-1)^{|α_0'|} (c(α_0' ∧ α_1') - c(α_0') c(α_1'))`.
pub fn build_ft_pair(
    model: &ManifoldModel,
    first: &LoopForm,
    second: &LoopForm,
    convention: CliffordConvention,
) -> Result<FirstOrderOp> {
    let sign = homogeneous_degree(&first.spatial)?.map_or(1.0, |d| d.parity_sign());
    let (m, a, b) = (model.clone(), first.spatial.clone(), second.spatial.clone());
    let zero: Field = Arc::new(FnField::new(2, |_p: &Point| FiberMat::zeros(2)));
    let q0: Field = Arc::new(FnField::new(2, move |p: &Point| {
        let (x, y) = (
            a.at(&m, p).expect("sphere point"),
            b.at(&m, p).expect("sphere point"),
        );
        let wedge = clifford(&x.wedge(&y), convention);
        (wedge - clifford(&x, convention) * clifford(&y, convention)).scale_re(sign)
    }));
    FirstOrderOp::new(2, vec![zero.clone(), zero], q0)
}

/// Shared inputs of the Chern estimators.
#[derive(Clone, Debug)]
pub struct ChernSetup<'a> {
    pub model: &'a ManifoldModel,
    pub grid: &'a QuadratureGrid,
    pub mc: &'a McConfig,
    pub convention: CliffordConvention,
}

struct NodeSums {
    total: Complex64,
    variance: f64,
    per_node: usize,
    seconds: f64,
}

impl ChernSetup<'_> {
    fn check(&self) -> Result<BundleSpec> {
        self.mc.validate()?;
        if self.grid.is_empty() {
            return domain("Chern estimators need a nonempty quadrature grid");
        }
        spinor_bundle(self.model)
    }

    fn delta(&self) -> f64 {
        self.mc
            .bridge_delta
            .unwrap_or_else(|| default_delta(CHERN_TIME, self.mc.dt))
    }

    /// `Σ_x μ(x) mean_paths f(x, path)` with nodes in parallel.
    fn integrate(
        &self,
        f: impl Fn(&Point, RngConfig) -> Result<Complex64> + Sync,
    ) -> Result<NodeSums> {
        let per_node = self.mc.n_paths.div_ceil(self.grid.len());
        let (nodes, seconds) = timed(|| {
            let per = map_blocks(
                self.grid.len(),
                self.mc.workers,
                |j| -> Result<(Complex64, f64)> {
                    let (x, _) = &self.grid.nodes()[j];
                    let streams = self.mc.streams(CHERN_STREAM_BASE + j as u64);
                    let m = run_paths(per_node, 1, Some(1), |i, out| {
                        out[0] = f(x, streams.get(i))?;
                        Ok(())
                    })?;
                    Ok((m.mean(0), m.variance(0)))
                },
            )?;
            per.into_iter().collect::<Result<Vec<_>>>()
        })?;
        let mut total = Complex64::new(0.0, 0.0);
        let mut variance = 0.0;
        for ((mean, v), (_, weight)) in nodes.iter().zip(self.grid.iter()) {
            total += mean * weight;
            variance += weight * weight * v / per_node as f64;
        }
        Ok(NodeSums {
            total,
            variance,
            per_node,
            seconds,
        })
    }

    fn estimate(&self, sums: NodeSums, factor: Complex64) -> Estimate {
        Estimate {
            rows: 1,
            cols: 1,
            mean: vec![sums.total * factor],
            stderr: vec![sums.variance.sqrt() * factor.norm()],
            n_paths: sums.per_node * self.grid.len(),
            dt: self.mc.dt,
            seed: self.mc.seed,
            wall_time_s: Some(sums.seconds),
        }
    }

    /// `e^{-t scal/8}`, deterministic on the round sphere.
    fn curvature_weight(&self) -> Result<f64> {
        let p = self.model.north_pole()?;
        Ok((-CHERN_TIME * self.model.scalar_curvature(&p)? / 8.0).exp())
    }
}

/// Monte Carlo `Ch_0(α_0)`.
pub fn chern_n0(setup: &ChernSetup<'_>, alpha0: &LoopForm) -> Result<Estimate> {
    let bundle = setup.check()?;
    let model = setup.model;
    let delta = setup.delta();
    let mc = setup.mc;
    let n = bridge_schedule(CHERN_TIME, mc.dt, delta)?;
    let form = FormData::new(model, alpha0, setup.convention)?;
    let sums = setup.integrate(|x, rng| {
        let c0 = clifford(&form.at(&form.spatial, x), setup.convention);
        let mut walker = Walker::new(model, x, rng)?;
        let mut transport = TransportState::start(&bundle, x);
        for _ in 0..n {
            let step = walker.step(mc.dt);
            transport.advance(&bundle, &step, TransportRule::Midpoint);
        }
        let end = walker.current();
        let closed = close_transport(&bundle, &transport, &end, x)?;
        let kernel = model.heat_kernel(&end, x, delta)?;
        Ok(supertrace(&(c0 * closed.adjoint())) * kernel)
    })?;
    let weight = setup.curvature_weight()?;
    Ok(setup.estimate(sums, Complex64::new(weight, 0.0)))
}

/// Monte Carlo `Ch_1(α_0, α_1)`.
///
/// Per path the accumulated `∫ //^{-1} F_T(α_1)-increment //` over `[0, t-δ]`
/// is closed by `//(t)^{-1}` and weighted by `p(δ, 𝖻_{t-δ}, x)`; the result
/// is `-½ e^{-t scal/8} Σ_x μ(x) mean(Str(c(α_0') ·))`.
pub fn chern_n1(
    setup: &ChernSetup<'_>,
    alpha0: &LoopForm,
    alpha1: &LoopForm,
    integral: IntegralForm,
) -> Result<Estimate> {
    let bundle = setup.check()?;
    let model = setup.model;
    let delta = setup.delta();
    let mc = setup.mc;
    let n = bridge_schedule(CHERN_TIME, mc.dt, delta)?;
    let outer = FormData::new(model, alpha0, setup.convention)?;
    let inner = FormData::new(model, alpha1, setup.convention)?;
    let sums = setup.integrate(|x, rng| {
        let c0 = clifford(&outer.at(&outer.spatial, x), setup.convention);
        let mut walker = Walker::new(model, x, rng)?;
        let mut transport = TransportState::start(&bundle, x);
        let mut acc = FiberMat::zeros(2);
        for _ in 0..n {
            let step = walker.step(mc.dt);
            match integral {
                IntegralForm::Ito => {
                    let v = [step.tangent[0], step.tangent[1]];
                    let inc = inner.symbol(&step.from, v)
                        - (inner.ito_correction(&step.from) + inner.temporal_term(&step.from))
                            .scale_re(mc.dt);
                    acc += transport.conjugate(&inc);
                    transport.advance(&bundle, &step, TransportRule::Midpoint);
                }
                IntegralForm::Stratonovich => {
                    let v = [step.delta[0], step.delta[1]];
                    let left = inner.symbol(&step.from, v)
                        - inner.temporal_term(&step.from).scale_re(mc.dt);
                    let left = transport.conjugate(&left);
                    let end = &step.end_in_from_chart;
                    let right = inner.symbol(end, v) - inner.temporal_term(end).scale_re(mc.dt);
                    let after = transport.advance(&bundle, &step, TransportRule::Midpoint);
                    let right = FiberMat::conjugate_unitary(&right, &after);
                    acc += (left + right).scale_re(0.5);
                }
            }
        }
        let end = walker.current();
        let closed = close_transport(&bundle, &transport, &end, x)?;
        let kernel = model.heat_kernel(&end, x, delta)?;
        Ok(supertrace(&(c0 * acc * closed.adjoint())) * kernel)
    })?;
    let weight = setup.curvature_weight()?;
    Ok(setup.estimate(sums, Complex64::new(-0.5 * weight, 0.0)))
}

/// `Ch_1` through the generic trace formula with `V = scal/8`,
/// `P = F_T(α_1)` and weight `γ c(α_0')`, scaled by `-½`.
pub fn chern_n1_trace_formula(
    setup: &ChernSetup<'_>,
    alpha0: &LoopForm,
    alpha1: &LoopForm,
) -> Result<Estimate> {
    let bundle = setup.check()?;
    let model = setup.model;
    let op = build_ft(model, alpha1, setup.convention)?;
    let scal = model.scalar_curvature(&model.north_pole()?)?;
    let (m, form, conv) = (model.clone(), alpha0.spatial.clone(), setup.convention);
    let weight: Field = Arc::new(FnField::new(2, move |p: &Point| {
        grading() * clifford(&form.at(&m, p).expect("sphere point"), conv)
    }));
    let problem = TraceProblem {
        bundle: &bundle,
        potential: Arc::new(ConstField(FiberMat::identity(2).scale_re(scal / 8.0))),
        perturbation: &op,
        weight,
        t: CHERN_TIME,
    };
    let mut est = trace_formula_mc(&problem, setup.grid, setup.mc)?;
    est.mean[0] *= -0.5;
    est.stderr[0] *= 0.5;
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::berezin::{trace_formula_mc, TraceProblem};
    use crate::fields::ConstField;
    use crate::spin::clifford::grading;
    use crate::spin::forms::Poly3;
    use crate::spin::truncation::DiracTruncation;

    fn setup_parts(n_paths: usize, seed: u64) -> (ManifoldModel, QuadratureGrid, McConfig) {
        let model = ManifoldModel::sphere2(1.0).unwrap();
        let grid = QuadratureGrid::sphere(&model, 6, 8).unwrap();
        let mc = McConfig::new(n_paths, 0.02, seed).unwrap().with_delta(0.04);
        (model, grid, mc)
    }

    #[test]
    fn ft_symbol_is_scaled_frame_contraction() {
        let model = ManifoldModel::sphere2(1.5).unwrap();
        let a = MixedForm::one_form([Poly3::coordinate(2), Poly3::real(1.0), Poly3::zero()]);
        let op = build_ft(
            &model,
            &LoopForm::spatial(a.clone()),
            CliffordConvention::default(),
        )
        .unwrap();
        let p = model
            .sphere_point_in_chart(crate::geometry::Chart::North, [0.5, 0.2])
            .unwrap();
        let lam = model.conformal_factor(&p);
        let at = a.at(&model, &p).unwrap();
        for k in 0..2 {
            let mut e = [0.0; 2];
            e[k] = 1.0;
            let expect =
                clifford(&at.contract(e), CliffordConvention::default()).scale_re(2.0 * lam);
            let got = op.sigma1_fields()[k].eval(&p);
            assert!((got - expect).frobenius_norm() < 1e-14);
        }
    }

    #[test]
    fn pair_term_vanishes_for_functions() {
        let model = ManifoldModel::sphere2(1.0).unwrap();
        let f = LoopForm::spatial(MixedForm::function(Poly3::coordinate(0)));
        let g = LoopForm::spatial(MixedForm::one_form([
            Poly3::real(1.0),
            Poly3::zero(),
            Poly3::zero(),
        ]));
        let op = build_ft_pair(&model, &f, &g, CliffordConvention::default()).unwrap();
        let p = model.sphere_point_polar(1.0, 0.3).unwrap();
        assert!(op.q0(&p).frobenius_norm() < 1e-15);
        // Two 1-forms: c(a∧b) - c(a)c(b) = a·b, with sign -1.
        let op = build_ft_pair(&model, &g, &g, CliffordConvention::default()).unwrap();
        let at = g.spatial.at(&model, &p).unwrap();
        let norm2 = at.covector[0] * at.covector[0] + at.covector[1] * at.covector[1];
        assert!((op.q0(&p) - FiberMat::scalar(2, -norm2)).frobenius_norm() < 1e-14);
    }

    #[test]
    fn n0_of_volume_form_matches_truncation() {
        let (model, grid, mc) = setup_parts(20_000, 11);
        let setup = ChernSetup {
            model: &model,
            grid: &grid,
            mc: &mc,
            convention: CliffordConvention::default(),
        };
        let est = chern_n0(&setup, &LoopForm::spatial(MixedForm::volume())).unwrap();
        let exact = DiracTruncation::new(1.0, 6)
            .unwrap()
            .chern_n0(&MixedForm::volume())
            .unwrap();
        let slack = 4.0 * est.stderr[0] + exact.norm() * (mc.dt + 0.04);
        assert!(
            (est.scalar() - exact).norm() < slack,
            "{:?} vs {exact}",
            est.scalar()
        );
    }

    #[test]
    fn n0_of_function_vanishes_in_expectation() {
        let (model, grid, mc) = setup_parts(8_000, 12);
        let setup = ChernSetup {
            model: &model,
            grid: &grid,
            mc: &mc,
            convention: CliffordConvention::default(),
        };
        let est = chern_n0(
            &setup,
            &LoopForm::spatial(MixedForm::function(
                &Poly3::coordinate(2) + &Poly3::real(1.0),
            )),
        )
        .unwrap();
        assert!(est.scalar().norm() < 4.0 * est.stderr[0] + 1e-12);
    }

    #[test]
    fn n1_temporal_function_matches_truncation_and_trace_formula() {
        let (model, grid, mc) = setup_parts(20_000, 13);
        let setup = ChernSetup {
            model: &model,
            grid: &grid,
            mc: &mc,
            convention: CliffordConvention::default(),
        };
        let z = Poly3::coordinate(2);
        let outer = MixedForm::area_form(z.clone());
        let alpha1 = LoopForm::temporal(MixedForm::function(z.clone()));
        let ito = chern_n1(
            &setup,
            &LoopForm::spatial(outer.clone()),
            &alpha1,
            IntegralForm::Ito,
        )
        .unwrap();
        let exact = DiracTruncation::new(1.0, 6)
            .unwrap()
            .chern_n1_temporal(&outer, &z)
            .unwrap();
        assert!(exact.norm() > 0.3);
        let slack = 4.0 * ito.stderr[0] + exact.norm() * (mc.dt + 0.04);
        assert!(
            (ito.scalar() - exact).norm() < slack,
            "{:?} vs {exact}",
            ito.scalar()
        );

        // Same quantity through the generic trace formula with V = scal/8.
        let bundle = spinor_bundle(&model).unwrap();
        let op = build_ft(&model, &alpha1, CliffordConvention::default()).unwrap();
        let (m, o) = (model.clone(), outer.clone());
        let weight: Field = Arc::new(FnField::new(2, move |p: &Point| {
            grading() * clifford(&o.at(&m, p).unwrap(), CliffordConvention::default())
        }));
        let problem = TraceProblem {
            bundle: &bundle,
            potential: Arc::new(ConstField(FiberMat::identity(2).scale_re(0.25))),
            perturbation: &op,
            weight,
            t: CHERN_TIME,
        };
        let generic = trace_formula_mc(&problem, &grid, &mc).unwrap();
        let generic_value = generic.scalar() * -0.5;
        let slack = 4.0 * (ito.stderr[0].powi(2) + (0.5 * generic.stderr[0]).powi(2)).sqrt()
            + exact.norm() * (mc.dt + 0.04);
        assert!((ito.scalar() - generic_value).norm() < slack);
    }

    #[test]
    fn n1_ito_and_stratonovich_agree() {
        let (model, grid, mc) = setup_parts(8_000, 14);
        let setup = ChernSetup {
            model: &model,
            grid: &grid,
            mc: &mc,
            convention: CliffordConvention::default(),
        };
        let outer = LoopForm::spatial(MixedForm::function(Poly3::coordinate(2)));
        let a = LoopForm::spatial(MixedForm::one_form([
            Poly3::coordinate(1),
            -&Poly3::coordinate(0),
            Poly3::zero(),
        ]));
        let ito = chern_n1(&setup, &outer, &a, IntegralForm::Ito).unwrap();
        let strat = chern_n1(&setup, &outer, &a, IntegralForm::Stratonovich).unwrap();
        assert!(ito.scalar().norm() > 5.0 * ito.stderr[0]);
        let scale = ito.scalar().norm().max(strat.scalar().norm());
        let slack =
            3.0 * (ito.stderr[0].powi(2) + strat.stderr[0].powi(2)).sqrt() + scale * mc.dt * 2.0;
        assert!(
            (ito.scalar() - strat.scalar()).norm() < slack,
            "{:?} vs {:?}",
            ito.scalar(),
            strat.scalar()
        );
    }
}
