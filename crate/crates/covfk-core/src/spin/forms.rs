//! Mixed differential forms on the round sphere with polynomial
//! coefficients in the embedded coordinates `(x, y, z)`.
//!
//! A 1-form is stored as an ambient covector field and acts on tangent
//! vectors by the Euclidean pairing. A 2-form is a multiple of the area form,
//! oriented by the outward normal.

use std::collections::BTreeMap;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::geometry::{chart_inverse_jacobian, ManifoldModel, Point};

type Exponents = [u32; 3];

/// Polynomial in `(x, y, z)` with complex coefficients.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Poly3 {
    terms: BTreeMap<Exponents, Complex64>,
}

impl Poly3 {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: Complex64) -> Self {
        Self::monomial(c, [0, 0, 0])
    }

    pub fn real(c: f64) -> Self {
        Self::constant(Complex64::new(c, 0.0))
    }

    /// The coordinate function `x`, `y` or `z` for `axis` 0, 1 or 2.
    pub fn coordinate(axis: usize) -> Self {
        let mut e = [0; 3];
        e[axis] = 1;
        Self::monomial(Complex64::new(1.0, 0.0), e)
    }

    pub fn monomial(c: Complex64, exponents: Exponents) -> Self {
        let mut p = Self::zero();
        p.add_term(exponents, c);
        p
    }

    fn add_term(&mut self, e: Exponents, c: Complex64) {
        if c == Complex64::new(0.0, 0.0) {
            return;
        }
        let entry = self.terms.entry(e).or_default();
        *entry += c;
        if *entry == Complex64::new(0.0, 0.0) {
            self.terms.remove(&e);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Exponents, &Complex64)> {
        self.terms.iter()
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .keys()
            .map(|e| e[0] + e[1] + e[2])
            .max()
            .unwrap_or(0)
    }

    pub fn scale(&self, c: Complex64) -> Self {
        let mut out = Self::zero();
        for (e, v) in &self.terms {
            out.add_term(*e, v * c);
        }
        out
    }

    pub fn scale_re(&self, c: f64) -> Self {
        self.scale(Complex64::new(c, 0.0))
    }

    pub fn derivative(&self, axis: usize) -> Self {
        let mut out = Self::zero();
        for (e, v) in &self.terms {
            if e[axis] > 0 {
                let mut f = *e;
                f[axis] -= 1;
                out.add_term(f, v * e[axis] as f64);
            }
        }
        out
    }

    pub fn gradient(&self) -> [Poly3; 3] {
        [self.derivative(0), self.derivative(1), self.derivative(2)]
    }

    pub fn eval(&self, x: &[f64; 3]) -> Complex64 {
        self.terms
            .iter()
            .map(|(e, v)| {
                v * (x[0].powi(e[0] as i32) * x[1].powi(e[1] as i32) * x[2].powi(e[2] as i32))
            })
            .sum()
    }
}

impl Add for &Poly3 {
    type Output = Poly3;
    fn add(self, rhs: &Poly3) -> Poly3 {
        let mut out = self.clone();
        for (e, v) in &rhs.terms {
            out.add_term(*e, *v);
        }
        out
    }
}

impl Sub for &Poly3 {
    type Output = Poly3;
    fn sub(self, rhs: &Poly3) -> Poly3 {
        self + &(-rhs)
    }
}

impl Neg for &Poly3 {
    type Output = Poly3;
    fn neg(self) -> Poly3 {
        self.scale_re(-1.0)
    }
}

impl Mul for &Poly3 {
    type Output = Poly3;
    fn mul(self, rhs: &Poly3) -> Poly3 {
        let mut out = Poly3::zero();
        for (a, u) in &self.terms {
            for (b, v) in &rhs.terms {
                out.add_term([a[0] + b[0], a[1] + b[1], a[2] + b[2]], u * v);
            }
        }
        out
    }
}

fn dot(a: &[Poly3; 3], b: &[Poly3; 3]) -> Poly3 {
    &(&(&a[0] * &b[0]) + &(&a[1] * &b[1])) + &(&a[2] * &b[2])
}

fn cross(a: &[Poly3; 3], b: &[Poly3; 3]) -> [Poly3; 3] {
    [
        &(&a[1] * &b[2]) - &(&a[2] * &b[1]),
        &(&a[2] * &b[0]) - &(&a[0] * &b[2]),
        &(&a[0] * &b[1]) - &(&a[1] * &b[0]),
    ]
}

fn unit_normal(radius: f64) -> [Poly3; 3] {
    std::array::from_fn(|i| Poly3::coordinate(i).scale_re(1.0 / radius))
}

/// Form degree, as used for grading signs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum FormDegree {
    Zero,
    One,
    Two,
}

impl FormDegree {
    pub fn parity_sign(self) -> f64 {
        match self {
            FormDegree::One => -1.0,
            _ => 1.0,
        }
    }
}

/// `f + a + b vol` on the sphere of a given radius.
#[derive(Clone, Debug, PartialEq)]
pub struct MixedForm {
    pub function: Poly3,
    pub covector: [Poly3; 3],
    pub area: Poly3,
}

impl Default for MixedForm {
    fn default() -> Self {
        Self::zero()
    }
}

impl MixedForm {
    pub fn zero() -> Self {
        Self {
            function: Poly3::zero(),
            covector: [Poly3::zero(), Poly3::zero(), Poly3::zero()],
            area: Poly3::zero(),
        }
    }

    pub fn function(f: Poly3) -> Self {
        Self {
            function: f,
            ..Self::zero()
        }
    }

    pub fn one_form(a: [Poly3; 3]) -> Self {
        Self {
            covector: a,
            ..Self::zero()
        }
    }

    /// `b vol`.
    pub fn area_form(b: Poly3) -> Self {
        Self {
            area: b,
            ..Self::zero()
        }
    }

    pub fn volume() -> Self {
        Self::area_form(Poly3::real(1.0))
    }

    /// Degrees with a nonzero component.
    pub fn degrees(&self) -> Vec<FormDegree> {
        let mut out = Vec::new();
        if !self.function.is_zero() {
            out.push(FormDegree::Zero);
        }
        if self.covector.iter().any(|c| !c.is_zero()) {
            out.push(FormDegree::One);
        }
        if !self.area.is_zero() {
            out.push(FormDegree::Two);
        }
        out
    }

    pub fn part(&self, degree: FormDegree) -> Self {
        match degree {
            FormDegree::Zero => Self::function(self.function.clone()),
            FormDegree::One => Self::one_form(self.covector.clone()),
            FormDegree::Two => Self::area_form(self.area.clone()),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.degrees().is_empty()
    }

    pub fn scale(&self, c: Complex64) -> Self {
        Self {
            function: self.function.scale(c),
            covector: std::array::from_fn(|i| self.covector[i].scale(c)),
            area: self.area.scale(c),
        }
    }

    /// Exterior derivative.
    pub fn d(&self, radius: f64) -> Self {
        let grad = self.function.gradient();
        let curl = [
            &self.covector[2].derivative(1) - &self.covector[1].derivative(2),
            &self.covector[0].derivative(2) - &self.covector[2].derivative(0),
            &self.covector[1].derivative(0) - &self.covector[0].derivative(1),
        ];
        Self {
            function: Poly3::zero(),
            covector: grad,
            area: dot(&curl, &unit_normal(radius)),
        }
    }

    /// Codifferential `d† = -Σ_a e_a ⌟ ∇_{e_a}`.
    pub fn codifferential(&self, radius: f64) -> Self {
        let n = unit_normal(radius);
        // Tangential projection V = a - (a·n) n, then -div_S V.
        let an = dot(&self.covector, &n);
        let v: [Poly3; 3] = std::array::from_fn(|i| &self.covector[i] - &(&an * &n[i]));
        let mut div = Poly3::zero();
        for i in 0..3 {
            div = &div + &v[i].derivative(i);
            for j in 0..3 {
                div = &div - &(&(&n[i] * &n[j]) * &v[i].derivative(j));
            }
        }
        Self {
            function: -&div,
            covector: cross(&self.area.gradient(), &n),
            area: Poly3::zero(),
        }
    }

    /// `d + d†`.
    pub fn hodge_dirac(&self, radius: f64) -> Self {
        &self.d(radius) + &self.codifferential(radius)
    }

    /// Components in the orthonormal chart frame at `p`.
    pub fn at(&self, model: &ManifoldModel, p: &Point) -> Result<FormAt> {
        let Some(x) = p.embedded else {
            return domain("forms are evaluated on sphere points");
        };
        let frame = frame_vectors(model, p)?;
        let a: [Complex64; 3] = std::array::from_fn(|i| self.covector[i].eval(&x));
        let pair = |e: &[f64; 3]| a[0] * e[0] + a[1] * e[1] + a[2] * e[2];
        Ok(FormAt {
            function: self.function.eval(&x),
            covector: [pair(&frame[0]), pair(&frame[1])],
            area: self.area.eval(&x),
        })
    }
}

impl Add for &MixedForm {
    type Output = MixedForm;
    fn add(self, rhs: &MixedForm) -> MixedForm {
        MixedForm {
            function: &self.function + &rhs.function,
            covector: std::array::from_fn(|i| &self.covector[i] + &rhs.covector[i]),
            area: &self.area + &rhs.area,
        }
    }
}

/// A mixed form on a surface model, evaluated in orthonormal frame
/// components.
pub trait FormField: Send + Sync {
    fn at(&self, model: &ManifoldModel, p: &Point) -> Result<FormAt>;
    fn degrees(&self) -> Vec<FormDegree>;
    fn part(&self, degree: FormDegree) -> Arc<dyn FormField>;
    /// `(d + d†) α` on the given model.
    fn hodge_dirac(&self, model: &ManifoldModel) -> Result<Arc<dyn FormField>>;
}

impl FormField for MixedForm {
    fn at(&self, model: &ManifoldModel, p: &Point) -> Result<FormAt> {
        MixedForm::at(self, model, p)
    }

    fn degrees(&self) -> Vec<FormDegree> {
        MixedForm::degrees(self)
    }

    fn part(&self, degree: FormDegree) -> Arc<dyn FormField> {
        Arc::new(MixedForm::part(self, degree))
    }

    fn hodge_dirac(&self, model: &ManifoldModel) -> Result<Arc<dyn FormField>> {
        let Some(r) = model.sphere_radius() else {
            return domain("polynomial forms live on the sphere");
        };
        Ok(Arc::new(MixedForm::hodge_dirac(self, r)))
    }
}

/// Trigonometric polynomial `Σ c_k exp(2πi (k_1 x_1 / P_1 + k_2 x_2 / P_2))`
/// on a flat 2-torus.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrigPoly2 {
    pub terms: Vec<(Complex64, [i32; 2])>,
}

impl TrigPoly2 {
    pub fn new(terms: Vec<(Complex64, [i32; 2])>) -> Self {
        let terms = terms
            .into_iter()
            .filter(|(c, _)| *c != Complex64::new(0.0, 0.0))
            .collect();
        Self { terms }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    fn derivative(&self, axis: usize, periods: [f64; 2]) -> Self {
        Self::new(
            self.terms
                .iter()
                .map(|(c, k)| {
                    let w = 2.0 * std::f64::consts::PI * k[axis] as f64 / periods[axis];
                    (c * Complex64::new(0.0, w), *k)
                })
                .collect(),
        )
    }

    fn sum(&self, other: &Self, sign: f64) -> Self {
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().map(|(c, k)| (c * sign, *k)));
        Self::new(terms)
    }

    pub fn eval(&self, x: &[f64], periods: [f64; 2]) -> Complex64 {
        self.terms
            .iter()
            .map(|(c, k)| {
                let phase = 2.0
                    * std::f64::consts::PI
                    * (k[0] as f64 * x[0] / periods[0] + k[1] as f64 * x[1] / periods[1]);
                c * Complex64::from_polar(1.0, phase)
            })
            .sum()
    }
}

/// `f + a_1 dx^1 + a_2 dx^2 + b dx^1 ∧ dx^2` on a flat 2-torus.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FlatForm {
    pub function: TrigPoly2,
    pub covector: [TrigPoly2; 2],
    pub area: TrigPoly2,
}

fn flat_periods(model: &ManifoldModel) -> Result<[f64; 2]> {
    match model.periods() {
        Some(p) if p.dim() == 2 && model.sphere_radius().is_none() => Ok([p[0], p[1]]),
        _ => domain("trigonometric forms live on a flat 2-torus"),
    }
}

impl FormField for FlatForm {
    fn at(&self, model: &ManifoldModel, p: &Point) -> Result<FormAt> {
        let periods = flat_periods(model)?;
        let x = p.coords.as_slice();
        Ok(FormAt {
            function: self.function.eval(x, periods),
            covector: [
                self.covector[0].eval(x, periods),
                self.covector[1].eval(x, periods),
            ],
            area: self.area.eval(x, periods),
        })
    }

    fn degrees(&self) -> Vec<FormDegree> {
        let mut out = Vec::new();
        if !self.function.is_zero() {
            out.push(FormDegree::Zero);
        }
        if self.covector.iter().any(|c| !c.is_zero()) {
            out.push(FormDegree::One);
        }
        if !self.area.is_zero() {
            out.push(FormDegree::Two);
        }
        out
    }

    fn part(&self, degree: FormDegree) -> Arc<dyn FormField> {
        let mut out = FlatForm::default();
        match degree {
            FormDegree::Zero => out.function = self.function.clone(),
            FormDegree::One => out.covector = self.covector.clone(),
            FormDegree::Two => out.area = self.area.clone(),
        }
        Arc::new(out)
    }

    fn hodge_dirac(&self, model: &ManifoldModel) -> Result<Arc<dyn FormField>> {
        let per = flat_periods(model)?;
        let d = |f: &TrigPoly2, axis| f.derivative(axis, per);
        let [a1, a2] = &self.covector;
        Ok(Arc::new(FlatForm {
            function: d(a1, 0).sum(&d(a2, 1), 1.0).negate(),
            covector: [
                d(&self.function, 0).sum(&d(&self.area, 1), 1.0),
                d(&self.function, 1).sum(&d(&self.area, 0), -1.0),
            ],
            area: d(a2, 0).sum(&d(a1, 1), -1.0),
        }))
    }
}

impl TrigPoly2 {
    fn negate(&self) -> Self {
        Self::new(self.terms.iter().map(|(c, k)| (-c, *k)).collect())
    }
}

/// Orthonormal chart frame `e_a = λ^{-1} ∂X/∂u^a` in R^3. Coordinates past
/// the chart limit are accepted.
pub fn frame_vectors(model: &ManifoldModel, p: &Point) -> Result<[[f64; 3]; 2]> {
    let Some(r) = model.sphere_radius() else {
        return domain("frame vectors are defined on the sphere");
    };
    if p.dim() != 2 || !p.coords.is_finite() {
        return domain("frame vectors need finite chart coordinates");
    }
    let j = chart_inverse_jacobian(r, p.chart, [p.coords[0], p.coords[1]]);
    let lam = model.conformal_factor(p);
    Ok([
        [j[0][0] / lam, j[1][0] / lam, j[2][0] / lam],
        [j[0][1] / lam, j[1][1] / lam, j[2][1] / lam],
    ])
}

/// A mixed form at one point, in orthonormal frame components.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FormAt {
    pub function: Complex64,
    pub covector: [Complex64; 2],
    /// Coefficient of `e^1 ∧ e^2`.
    pub area: Complex64,
}

impl FormAt {
    /// Interior product with a tangent vector given in frame components.
    pub fn contract(&self, v: [f64; 2]) -> FormAt {
        FormAt {
            function: self.covector[0] * v[0] + self.covector[1] * v[1],
            covector: [-self.area * v[1], self.area * v[0]],
            area: Complex64::new(0.0, 0.0),
        }
    }

    pub fn wedge(&self, other: &FormAt) -> FormAt {
        let (f, a, b) = (self.function, self.covector, self.area);
        let (g, c, e) = (other.function, other.covector, other.area);
        FormAt {
            function: f * g,
            covector: [f * c[0] + g * a[0], f * c[1] + g * a[1]],
            area: f * e + g * b + a[0] * c[1] - a[1] * c[0],
        }
    }
}

/// Serializable polynomial term list `[[re, im], [i, j, k]]`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PolySpec(pub Vec<([f64; 2], [u32; 3])>);

impl PolySpec {
    pub fn to_poly(&self) -> Poly3 {
        let mut p = Poly3::zero();
        for (c, e) in &self.0 {
            p.add_term(*e, Complex64::new(c[0], c[1]));
        }
        p
    }
}

/// Serializable mixed form.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FormSpec {
    pub function: PolySpec,
    pub covector: [PolySpec; 3],
    pub area: PolySpec,
}

impl FormSpec {
    pub fn to_form(&self) -> MixedForm {
        MixedForm {
            function: self.function.to_poly(),
            covector: std::array::from_fn(|i| self.covector[i].to_poly()),
            area: self.area.to_poly(),
        }
    }
}
