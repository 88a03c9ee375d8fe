//! Finite-difference Dirac operator and the identities it satisfies.
//!
//! On a conformal chart `g = λ² I`,
//! `D φ = λ^{-1} Σ_k γ_k (∂_k + A_k) φ` and
//! `∇†∇ φ = -λ^{-2} Σ_k (∂_k + A_k)^2 φ`.
//! Derivatives are central differences with step `h` in the chart of the
//! evaluation point, so all identities below hold to `O(h²)`.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{domain, Result};
use crate::geometry::{Chart, ManifoldModel, Point};
use crate::linalg::{FiberMat, FiberVec};
use crate::transport::BundleSpec;

use super::clifford::{clifford, gamma, CliffordConvention};
use super::forms::{FormDegree, FormField, MixedForm, Poly3};

/// A spinor field, evaluated in the chart frame of the point.
#[derive(Clone)]
pub struct SpinorField {
    eval: Arc<dyn Fn(&Point) -> FiberVec + Send + Sync>,
}

impl SpinorField {
    pub fn new(eval: impl Fn(&Point) -> FiberVec + Send + Sync + 'static) -> Self {
        Self {
            eval: Arc::new(eval),
        }
    }

    /// Field with polynomial components in the North frame, carried to the
    /// South frame by the bundle transition. Undefined at the South pole.
    pub fn from_north(bundle: &BundleSpec, components: [Poly3; 2]) -> Self {
        let b = bundle.clone();
        Self::new(move |p| {
            let x = p.embedded.unwrap_or_default();
            let v = FiberVec::from_slice(&[components[0].eval(&x), components[1].eval(&x)])
                .expect("rank 2");
            if p.chart == Chart::North {
                v
            } else {
                b.connection()
                    .transition(p, Chart::North, p.chart)
                    .apply(&v)
            }
        })
    }

    /// Field on a flat 2-torus from a function of the coordinates.
    pub fn flat(f: impl Fn(&[f64]) -> [Complex64; 2] + Send + Sync + 'static) -> Self {
        Self::new(move |p| FiberVec::from_slice(&f(p.coords.as_slice())).expect("rank 2"))
    }

    pub fn eval(&self, p: &Point) -> FiberVec {
        (self.eval)(p)
    }
}

/// Parameters shared by the finite-difference operators.
#[derive(Clone, Copy, Debug)]
pub struct DiracStencil<'a> {
    pub bundle: &'a BundleSpec,
    pub step: f64,
    pub convention: CliffordConvention,
}

impl<'a> DiracStencil<'a> {
    pub fn new(bundle: &'a BundleSpec, step: f64) -> Result<Self> {
        let model = bundle.base();
        if bundle.rank() != 2 || model.dim() != 2 {
            return domain("the Dirac operator acts on rank-2 bundles over surfaces");
        }
        if !(step.is_finite() && step > 0.0) {
            return domain(format!(
                "finite-difference step must be positive, got {step}"
            ));
        }
        Ok(Self {
            bundle,
            step,
            convention: CliffordConvention::default(),
        })
    }

    pub fn with_convention(mut self, convention: CliffordConvention) -> Self {
        self.convention = convention;
        self
    }

    fn model(&self) -> &ManifoldModel {
        self.bundle.base()
    }

    fn shifted(&self, p: &Point, k: usize, s: f64) -> Result<Point> {
        let model = self.model();
        let mut u = [p.coords[0], p.coords[1]];
        u[k] += s;
        match model.sphere_radius() {
            Some(_) => model.sphere_point_in_chart(p.chart, u),
            None => model.flat_point(&u),
        }
    }

    fn connection(&self, p: &Point, k: usize) -> FiberMat {
        self.bundle.connection().component(p, k)
    }

    /// `(∂_k + A_k) φ` at `p`.
    pub fn chart_derivative(&self, field: &SpinorField, p: &Point, k: usize) -> Result<FiberVec> {
        let h = self.step;
        let plus = field.eval(&self.shifted(p, k, h)?);
        let minus = field.eval(&self.shifted(p, k, -h)?);
        let d = (plus - minus).scale(Complex64::new(0.5 / h, 0.0));
        Ok(d + self.connection(p, k).apply(&field.eval(p)))
    }

    /// `∇_{e_a} φ` in the orthonormal frame.
    pub fn frame_derivative(&self, field: &SpinorField, p: &Point, a: usize) -> Result<FiberVec> {
        let lam = self.model().conformal_factor(p);
        Ok(self
            .chart_derivative(field, p, a)?
            .scale(Complex64::new(1.0 / lam, 0.0)))
    }

    pub fn dirac_apply(&self, field: &SpinorField, p: &Point) -> Result<FiberVec> {
        let mut out = FiberVec::zeros(2);
        for a in 0..2 {
            out = out + gamma(a).apply(&self.frame_derivative(field, p, a)?);
        }
        Ok(out)
    }

    /// `D φ` as a field, for nested application.
    pub fn dirac_field(&self, field: &SpinorField) -> SpinorField {
        let (bundle, step, convention, inner) = (
            self.bundle.clone(),
            self.step,
            self.convention,
            field.clone(),
        );
        SpinorField::new(move |p| {
            let stencil = DiracStencil {
                bundle: &bundle,
                step,
                convention,
            };
            stencil.dirac_apply(&inner, p).unwrap_or_else(|_| {
                FiberVec::from_slice(&[Complex64::new(f64::NAN, 0.0); 2]).expect("rank 2")
            })
        })
    }

    /// Connection Laplacian `∇†∇ φ`.
    pub fn bochner_apply(&self, field: &SpinorField, p: &Point) -> Result<FiberVec> {
        let h = self.step;
        let lam = self.model().conformal_factor(p);
        let center = field.eval(p);
        let mut sum = FiberVec::zeros(2);
        for k in 0..2 {
            let (pp, pm) = (self.shifted(p, k, h)?, self.shifted(p, k, -h)?);
            let (fp, fm) = (field.eval(&pp), field.eval(&pm));
            let second = (fp + fm - center.scale(Complex64::new(2.0, 0.0)))
                .scale(Complex64::new(1.0 / (h * h), 0.0));
            let first = (fp - fm).scale(Complex64::new(0.5 / h, 0.0));
            let a = self.connection(p, k);
            let da = (self.connection(&pp, k) - self.connection(&pm, k)).scale_re(0.5 / h);
            sum = sum
                + second
                + da.apply(&center)
                + a.scale_re(2.0).apply(&first)
                + (a * a).apply(&center);
        }
        Ok(sum.scale(Complex64::new(-1.0 / (lam * lam), 0.0)))
    }

    /// `|D²φ - ∇†∇φ - (scal/4) φ|` at `p`.
    pub fn lichnerowicz_defect(&self, field: &SpinorField, p: &Point) -> Result<f64> {
        let d2 = self.dirac_apply(&self.dirac_field(field), p)?;
        let bochner = self.bochner_apply(field, p)?;
        let scal = self.model().scalar_curvature(p)?;
        let rest = field.eval(p).scale(Complex64::new(scal / 4.0, 0.0));
        Ok((d2 - bochner - rest).norm())
    }

    /// `c(α) φ` as a field.
    pub fn clifford_field(&self, form: Arc<dyn FormField>, field: &SpinorField) -> SpinorField {
        let (model, convention, inner) = (self.model().clone(), self.convention, field.clone());
        SpinorField::new(move |p| match form.at(&model, p) {
            Ok(at) => clifford(&at, convention).apply(&inner.eval(p)),
            Err(_) => FiberVec::from_slice(&[Complex64::new(f64::NAN, 0.0); 2]).expect("rank 2"),
        })
    }

    /// Graded commutator `[D, c(α)] φ`, summed over the homogeneous parts.
    pub fn graded_commutator(
        &self,
        form: &dyn FormField,
        field: &SpinorField,
        p: &Point,
    ) -> Result<FiberVec> {
        let model = self.model();
        let dphi = self.dirac_apply(field, p)?;
        let mut out = FiberVec::zeros(2);
        for deg in form.degrees() {
            let part = form.part(deg);
            let c = clifford(&part.at(model, p)?, self.convention);
            let lhs = self.dirac_apply(&self.clifford_field(part, field), p)?;
            let sign = deg.parity_sign();
            out = out + lhs - c.apply(&dphi).scale(Complex64::new(sign, 0.0));
        }
        Ok(out)
    }

    /// Norm of
    /// `[D, c(α)]φ - c((d + d†)α)φ + 2 Σ_a c(e_a ⌟ α) ∇_{e_a} φ` at `p`.
    pub fn commutation_defect(
        &self,
        form: &dyn FormField,
        field: &SpinorField,
        p: &Point,
    ) -> Result<f64> {
        let model = self.model();
        let lhs = self.graded_commutator(form, field, p)?;
        let dd = clifford(&form.hodge_dirac(model)?.at(model, p)?, self.convention);
        let at = form.at(model, p)?;
        let mut rest = dd.apply(&field.eval(p));
        for a in 0..2 {
            let mut e = [0.0; 2];
            e[a] = 1.0;
            let c = clifford(&at.contract(e), self.convention);
            rest = rest - c.scale_re(2.0).apply(&self.frame_derivative(field, p, a)?);
        }
        Ok((lhs - rest).norm())
    }
}

/// Degree of a homogeneous form, or an error for mixed input.
pub fn homogeneous_degree(form: &MixedForm) -> Result<Option<FormDegree>> {
    let degrees = form.degrees();
    match degrees.len() {
        0 => Ok(None),
        1 => Ok(Some(degrees[0])),
        _ => domain("expected a homogeneous form"),
    }
}
