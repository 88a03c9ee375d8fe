//! Deterministic reference values: Galerkin truncations of
//! `H = ∇†∇/2 + Q` in a Fourier basis, matrix-exponential semigroups and
//! Duhamel integrals.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fields::{MatrixField, Mode, SectionFn, TrigField};
use crate::fk::FirstOrderOp;
use crate::geometry::{Coords, ManifoldModel, Point, MAX_DIM};
use crate::linalg::{FiberMat, FiberVec};
use crate::quadrature::gauss_legendre;
use crate::transport::BundleSpec;

type CMat = DMatrix<Complex64>;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Galerkin matrix of `H` on modes `|k_j| <= cutoff` tensored with the fiber.
#[derive(Clone, Debug)]
pub struct FourierTruncation {
    rank: usize,
    cutoff: usize,
    periods: Coords,
    modes: Vec<Mode>,
    matrix: CMat,
}

/// Fourier coefficients of an operator applied to `e_l ⊗ fiber basis`:
/// mode `k` maps to a `d×d` block whose column `c` is the image of `e_c`.
type Column = BTreeMap<Mode, FiberMat>;

fn trig_of(field: &dyn MatrixField) -> Result<&TrigField> {
    field.trig().ok_or_else(|| {
        Error::Unsupported("spectral assembly needs trigonometric-polynomial coefficients".into())
    })
}

fn shift(a: &Mode, b: &Mode) -> Mode {
    std::array::from_fn(|j| a[j] + b[j])
}

fn wavenumber(periods: &Coords, k: &Mode, j: usize) -> f64 {
    2.0 * PI * k[j] as f64 / periods[j]
}

fn multiply(f: &TrigField, v: &Column) -> Column {
    let mut out = Column::new();
    for (m, c) in f.terms() {
        for (k, block) in v {
            *out.entry(shift(m, k))
                .or_insert_with(|| FiberMat::zeros(block.dim())) += *c * *block;
        }
    }
    out
}

fn add_into(acc: &mut Column, v: Column, scale: Complex64) {
    for (k, block) in v {
        let b = block.scale(scale);
        match acc.get_mut(&k) {
            Some(a) => *a += b,
            None => {
                acc.insert(k, b);
            }
        }
    }
}

/// `(∂_j + A_j) v`.
fn covariant(periods: &Coords, a: Option<&TrigField>, j: usize, v: &Column) -> Column {
    let mut out: Column = v
        .iter()
        .map(|(k, block)| {
            (
                *k,
                block.scale(Complex64::new(0.0, wavenumber(periods, k, j))),
            )
        })
        .collect();
    if let Some(a) = a {
        add_into(&mut out, multiply(a, v), Complex64::new(1.0, 0.0));
    }
    out
}

fn check_flat(model: &ManifoldModel) -> Result<Coords> {
    model
        .periods()
        .ok_or_else(|| Error::Unsupported("Fourier truncations need a circle or torus".into()))
}

fn enumerate_modes(dim: usize, cutoff: usize) -> Vec<Mode> {
    let k = cutoff as i32;
    let mut modes = vec![[0; MAX_DIM]];
    for j in 0..dim {
        let mut next = Vec::with_capacity(modes.len() * (2 * cutoff + 1));
        for m in &modes {
            for v in -k..=k {
                let mut n = *m;
                n[j] = v;
                next.push(n);
            }
        }
        modes = next;
    }
    modes
}

struct Assembler<'a> {
    periods: Coords,
    connection: Vec<Option<&'a TrigField>>,
    rank: usize,
}

impl<'a> Assembler<'a> {
    fn new(bundle: &'a BundleSpec) -> Result<Self> {
        let periods = check_flat(bundle.base())?;
        let conn = bundle.connection();
        let connection = if conn.is_zero() {
            vec![None; periods.dim()]
        } else {
            let comps = conn.trig_components().ok_or_else(|| {
                Error::Unsupported("spectral assembly needs a trigonometric connection".into())
            })?;
            comps.iter().map(|c| (!c.is_zero()).then_some(c)).collect()
        };
        Ok(Self {
            periods,
            connection,
            rank: bundle.rank(),
        })
    }

    fn first_order(&self, op: &FirstOrderOp, v: &Column) -> Result<Column> {
        let mut out = Column::new();
        for (j, s) in op.sigma1_fields().iter().enumerate() {
            let s = trig_of(s.as_ref())?;
            if s.is_zero() {
                continue;
            }
            let dv = covariant(&self.periods, self.connection[j], j, v);
            add_into(&mut out, multiply(s, &dv), Complex64::new(1.0, 0.0));
        }
        let q0 = trig_of(op.q0_field().as_ref())?;
        add_into(&mut out, multiply(q0, v), Complex64::new(1.0, 0.0));
        Ok(out)
    }

    fn laplacian(&self, v: &Column) -> Column {
        let mut out = Column::new();
        for j in 0..self.periods.dim() {
            let dv = covariant(&self.periods, self.connection[j], j, v);
            let ddv = covariant(&self.periods, self.connection[j], j, &dv);
            add_into(&mut out, ddv, Complex64::new(-0.5, 0.0));
        }
        out
    }

    fn matrix(&self, modes: &[Mode], apply: impl Fn(&Column) -> Result<Column>) -> Result<CMat> {
        let d = self.rank;
        let index: BTreeMap<Mode, usize> = modes.iter().enumerate().map(|(i, m)| (*m, i)).collect();
        let n = modes.len() * d;
        let mut out = CMat::zeros(n, n);
        for (l, mode) in modes.iter().enumerate() {
            let mut v = Column::new();
            v.insert(*mode, FiberMat::identity(d));
            for (k, block) in apply(&v)? {
                if let Some(&row) = index.get(&k) {
                    for a in 0..d {
                        for c in 0..d {
                            out[(row * d + a, l * d + c)] = block[(a, c)];
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Galerkin matrix of `∇†∇/2 + Q` at mode cutoff `cutoff`.
pub fn assemble_h(
    bundle: &BundleSpec,
    op: &FirstOrderOp,
    cutoff: usize,
) -> Result<FourierTruncation> {
    if op.rank() != bundle.rank() {
        return Err(Error::Dimension("operator and bundle ranks differ".into()));
    }
    let asm = Assembler::new(bundle)?;
    let modes = enumerate_modes(asm.periods.dim(), cutoff);
    let matrix = asm.matrix(&modes, |v| {
        let mut out = asm.laplacian(v);
        add_into(&mut out, asm.first_order(op, v)?, Complex64::new(1.0, 0.0));
        Ok(out)
    })?;
    Ok(FourierTruncation {
        rank: bundle.rank(),
        cutoff,
        periods: asm.periods,
        modes,
        matrix,
    })
}

/// Galerkin matrix of the first-order operator `P` alone, on the basis of `truncation`.
pub fn assemble_operator(
    bundle: &BundleSpec,
    op: &FirstOrderOp,
    truncation: &FourierTruncation,
) -> Result<CMat> {
    if op.rank() != bundle.rank() || truncation.rank != bundle.rank() {
        return Err(Error::Dimension(
            "operator, bundle and truncation ranks differ".into(),
        ));
    }
    let asm = Assembler::new(bundle)?;
    asm.matrix(&truncation.modes, |v| asm.first_order(op, v))
}

impl FourierTruncation {
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn volume(&self) -> f64 {
        self.periods.as_slice().iter().product()
    }

    fn mode_index(&self, k: &Mode) -> Option<usize> {
        self.modes.binary_search(k).ok()
    }

    /// Coefficients of a trigonometric section in the orthonormal basis
    /// `e^{iκ·x} / sqrt(vol)`; modes beyond the cutoff are an error.
    pub fn project(&self, psi: &SectionFn) -> Result<DVector<Complex64>> {
        let terms = psi
            .trig_terms()
            .ok_or_else(|| Error::Unsupported("projection needs a trigonometric section".into()))?;
        if psi.rank() != self.rank {
            return Err(Error::Dimension(
                "section rank differs from truncation rank".into(),
            ));
        }
        let mut out = DVector::zeros(self.dim());
        let norm = self.volume().sqrt();
        for (k, v) in terms {
            let i = self.mode_index(k).ok_or_else(|| {
                Error::Domain(format!("mode {k:?} beyond cutoff {}", self.cutoff))
            })?;
            for a in 0..self.rank {
                out[i * self.rank + a] += v[a] * norm;
            }
        }
        Ok(out)
    }

    /// `Σ_k c_k e_k(x)`.
    pub fn evaluate(&self, coeffs: &DVector<Complex64>, x: &Point) -> FiberVec {
        let norm = 1.0 / self.volume().sqrt();
        let mut out = vec![ZERO; self.rank];
        for (i, k) in self.modes.iter().enumerate() {
            let ph = TrigField::phase(&self.periods, k, x) * norm;
            for (a, o) in out.iter_mut().enumerate() {
                *o += coeffs[i * self.rank + a] * ph;
            }
        }
        FiberVec::from_slice(&out).expect("rank within bounds")
    }

    /// `e^{-tH}`.
    pub fn semigroup(&self, t: f64) -> Result<CMat> {
        if !(t.is_finite() && t >= 0.0) {
            return Err(Error::Domain(format!(
                "semigroup time must be nonnegative, got {t}"
            )));
        }
        if t == 0.0 {
            return Ok(CMat::identity(self.dim(), self.dim()));
        }
        Ok((&self.matrix * Complex64::new(-t, 0.0)).exp())
    }

    pub fn semigroup_apply(
        &self,
        t: f64,
        coeffs: &DVector<Complex64>,
    ) -> Result<DVector<Complex64>> {
        Ok(self.semigroup(t)? * coeffs)
    }

    /// `(e^{-tH}Ψ)(x)`.
    pub fn semigroup_at(&self, t: f64, psi: &SectionFn, x: &Point) -> Result<FiberVec> {
        let c = self.semigroup_apply(t, &self.project(psi)?)?;
        Ok(self.evaluate(&c, x))
    }

    /// Truncated kernel `Σ e_k(x) [e^{-tH}]_{kl} e_l(y)^*`.
    pub fn kernel_at(&self, t: f64, x: &Point, y: &Point) -> Result<FiberMat> {
        let s = self.semigroup(t)?;
        let d = self.rank;
        let norm = 1.0 / self.volume();
        let px: Vec<Complex64> = self
            .modes
            .iter()
            .map(|k| TrigField::phase(&self.periods, k, x))
            .collect();
        let py: Vec<Complex64> = self
            .modes
            .iter()
            .map(|k| TrigField::phase(&self.periods, k, y).conj())
            .collect();
        let mut acc = [[ZERO; 4]; 4];
        for (i, a) in px.iter().enumerate() {
            for (j, b) in py.iter().enumerate() {
                let w = a * b * norm;
                for (r, row) in acc.iter_mut().enumerate().take(d) {
                    for (c, entry) in row.iter_mut().enumerate().take(d) {
                        *entry += s[(i * d + r, j * d + c)] * w;
                    }
                }
            }
        }
        let out = FiberMat::from_fn(d, |r, c| acc[r][c]);
        Ok(out)
    }

    /// The sub-block on modes `|k_j| <= cutoff`.
    pub fn restrict(&self, cutoff: usize) -> Result<CMat> {
        if cutoff > self.cutoff {
            return Err(Error::Domain(
                "restriction cutoff exceeds assembly cutoff".into(),
            ));
        }
        let keep: Vec<usize> = self
            .modes
            .iter()
            .enumerate()
            .filter(|(_, k)| k.iter().all(|v| v.unsigned_abs() as usize <= cutoff))
            .flat_map(|(i, _)| (0..self.rank).map(move |a| i * self.rank + a))
            .collect();
        Ok(CMat::from_fn(keep.len(), keep.len(), |i, j| {
            self.matrix[(keep[i], keep[j])]
        }))
    }

    /// `∫_0^t e^{-sH} P e^{-(t-s)H} ds`.
    pub fn duhamel_quadrature(&self, p: &CMat, t: f64) -> Result<CMat> {
        duhamel(&self.matrix, p, t)
    }
}

/// `φ1(z) = (e^z - 1) / z`.
fn phi1(z: Complex64) -> Complex64 {
    if z.norm() < 1e-3 {
        let mut term = Complex64::new(1.0, 0.0);
        let mut sum = term;
        for n in 2..8 {
            term = term * z / n as f64;
            sum += term;
        }
        sum
    } else {
        (z.exp() - 1.0) / z
    }
}

/// Condition number above which eigenvector-based Duhamel is abandoned.
pub const DUHAMEL_CONDITION_LIMIT: f64 = 1e8;

/// Eigenvectors of `h` from its complex Schur form; `None` when the
/// eigenbasis is too ill-conditioned.
fn eigen_decomposition(h: &CMat) -> Option<(Vec<Complex64>, CMat, CMat)> {
    let n = h.nrows();
    let (q, t) = nalgebra::linalg::Schur::new(h.clone()).unpack();
    let lambda: Vec<Complex64> = (0..n).map(|i| t[(i, i)]).collect();
    let scale = t.norm().max(1e-300);
    // Eigenvectors of the triangular factor by back-substitution.
    let mut y = CMat::zeros(n, n);
    for k in 0..n {
        y[(k, k)] = Complex64::new(1.0, 0.0);
        for i in (0..k).rev() {
            let mut s = ZERO;
            for j in i + 1..=k {
                s += t[(i, j)] * y[(j, k)];
            }
            let mut den = lambda[k] - lambda[i];
            if den.norm() < 1e-14 * scale {
                if s.norm() == 0.0 {
                    continue;
                }
                den = Complex64::new(1e-14 * scale, 0.0);
            }
            y[(i, k)] = s / den;
        }
        let norm = y.column(k).norm();
        y.column_mut(k).unscale_mut(norm);
    }
    let v = &q * &y;
    let v_inv = v.clone().try_inverse()?;
    let cond = v.norm() * v_inv.norm() / n as f64;
    if !cond.is_finite() || cond > DUHAMEL_CONDITION_LIMIT {
        return None;
    }
    Some((lambda, v, v_inv))
}

/// `∫_0^t e^{-sH} P e^{-(t-s)H} ds` through the eigenbasis of `H`, with a
/// Gauss-Legendre fallback for (nearly) defective `H`.
pub fn duhamel(h: &CMat, p: &CMat, t: f64) -> Result<CMat> {
    if h.nrows() != h.ncols() || p.shape() != h.shape() {
        return Err(Error::Dimension(
            "Duhamel needs square matrices of equal size".into(),
        ));
    }
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::Domain(format!(
            "Duhamel time must be nonnegative, got {t}"
        )));
    }
    match eigen_decomposition(h) {
        Some((lambda, v, v_inv)) => {
            let pt = &v_inv * p * &v;
            let n = h.nrows();
            let inner = CMat::from_fn(n, n, |i, j| {
                pt[(i, j)] * t * (-lambda[j] * t).exp() * phi1((lambda[j] - lambda[i]) * t)
            });
            Ok(&v * inner * &v_inv)
        }
        None => duhamel_gauss_legendre(h, p, t, 8, 32),
    }
}

/// Composite Gauss-Legendre quadrature of the Duhamel integrand on
/// `panels` equal subintervals.
pub fn duhamel_gauss_legendre(
    h: &CMat,
    p: &CMat,
    t: f64,
    panels: usize,
    order: usize,
) -> Result<CMat> {
    let n = h.nrows();
    let mut out = CMat::zeros(n, n);
    let width = t / panels as f64;
    let nodes = gauss_legendre(order, 0.0, width)?;
    for k in 0..panels {
        for &(s0, w) in &nodes {
            let s = k as f64 * width + s0;
            let left = (h * Complex64::new(-s, 0.0)).exp();
            let right = (h * Complex64::new(-(t - s), 0.0)).exp();
            out += (left * p * right) * Complex64::new(w, 0.0);
        }
    }
    Ok(out)
}

/// Scalar Laplacian spectrum on a round sphere, `l <= cutoff`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SphereScalarTruncation {
    pub radius: f64,
    pub cutoff: usize,
}

impl SphereScalarTruncation {
    pub fn new(radius: f64, cutoff: usize) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::Domain(format!(
                "radius must be positive, got {radius}"
            )));
        }
        Ok(Self { radius, cutoff })
    }

    /// `l(l+1) / (2r²)` for `l = 0..=cutoff`, each with multiplicity `2l+1`.
    pub fn eigenvalues(&self) -> Vec<(f64, usize)> {
        (0..=self.cutoff)
            .map(|l| {
                (
                    (l * (l + 1)) as f64 / (2.0 * self.radius * self.radius),
                    2 * l + 1,
                )
            })
            .collect()
    }

    pub fn dim(&self) -> usize {
        (self.cutoff + 1).pow(2)
    }

    /// Coefficients ordered by `(l, m)`, `m = -l..=l`.
    pub fn semigroup_apply(&self, t: f64, coeffs: &[Complex64]) -> Result<Vec<Complex64>> {
        if coeffs.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "expected {} coefficients",
                self.dim()
            )));
        }
        let mut out = Vec::with_capacity(coeffs.len());
        let mut it = coeffs.iter();
        for (lambda, mult) in self.eigenvalues() {
            let f = (-lambda * t).exp();
            for _ in 0..mult {
                out.push(it.next().expect("length checked") * f);
            }
        }
        Ok(out)
    }

    pub fn trace(&self, t: f64) -> f64 {
        self.eigenvalues()
            .iter()
            .map(|(l, m)| *m as f64 * (-l * t).exp())
            .sum()
    }
}
