//! Galerkin truncation of the Dirac operator on the round sphere.
//!
//! In the North frame write `ψ = λ^{-1/2} χ`, so that `D ψ = λ^{-3/2} D_0 χ`
//! with `D_0 = [[0, 2i∂_w], [2i∂_w̄, 0]]`. The trial space at order `N` is
//! spanned by `χ_+ = M(p, q)` with `p < N, q ≤ N` and `χ_- = M(p, q)` with
//! `p ≤ N, q < N`, where `M(p, q) = w^p w̄^q (1 + |w|²)^{-N}`. It is the sum
//! of the eigenspaces with `|μ| ≤ N / r`, so the truncated spectrum is exact.
//! All matrix elements reduce to
//! `∫ |w|^{2a} (1 + |w|²)^{-c} du = π / ((c - 1) C(c - 2, a))`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{domain, Error, Result};

use super::forms::{FormDegree, MixedForm, Poly3};

type CMat = DMatrix<Complex64>;

/// Largest supported order.
pub const MAX_ORDER: usize = 24;

/// `Σ coefficient · w^p w̄^q (1 + |w|²)^{-n}` keyed by `(p, q, n)`.
#[derive(Clone, Debug, Default)]
struct RationalExpansion {
    terms: BTreeMap<(u32, u32, u32), Complex64>,
}

impl RationalExpansion {
    fn basis(p: u32, q: u32, n: u32) -> Self {
        let mut terms = BTreeMap::new();
        terms.insert((p, q, n), Complex64::new(1.0, 0.0));
        Self { terms }
    }

    fn add(&mut self, key: (u32, u32, u32), c: Complex64) {
        *self.terms.entry(key).or_default() += c;
    }

    /// Multiply by the embedded coordinate `axis` on the radius-`r` sphere.
    fn times_coordinate(&self, axis: usize, r: f64) -> Self {
        let mut out = Self::default();
        let i = Complex64::new(0.0, 1.0);
        for (&(p, q, n), &c) in &self.terms {
            let c = c * r;
            match axis {
                0 => {
                    out.add((p + 1, q, n + 1), c);
                    out.add((p, q + 1, n + 1), c);
                }
                1 => {
                    out.add((p + 1, q, n + 1), -i * c);
                    out.add((p, q + 1, n + 1), i * c);
                }
                _ => {
                    out.add((p, q, n + 1), c * 2.0);
                    out.add((p, q, n), -c);
                }
            }
        }
        out
    }

    fn times_poly(&self, f: &Poly3, r: f64) -> Self {
        let mut out = Self::default();
        for (e, c) in f.terms() {
            let mut term = self.clone();
            for (axis, &power) in e.iter().enumerate() {
                for _ in 0..power {
                    term = term.times_coordinate(axis, r);
                }
            }
            for (k, v) in term.terms {
                out.add(k, v * c);
            }
        }
        out
    }

    fn d_w(p: u32, q: u32, n: u32) -> Self {
        let mut out = Self::default();
        if p > 0 {
            out.add((p - 1, q, n), Complex64::new(p as f64, 0.0));
        }
        out.add((p, q + 1, n + 1), Complex64::new(-(n as f64), 0.0));
        out
    }

    fn d_wbar(p: u32, q: u32, n: u32) -> Self {
        let mut out = Self::default();
        if q > 0 {
            out.add((p, q - 1, n), Complex64::new(q as f64, 0.0));
        }
        out.add((p + 1, q, n + 1), Complex64::new(-(n as f64), 0.0));
        out
    }
}

fn binomial(n: u32, k: u32) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `∫ conj(M(p, q, n)) M(p', q', n') du` over the plane.
fn pairing(a: (u32, u32, u32), b: (u32, u32, u32)) -> Result<f64> {
    let (p, q, n) = a;
    let (pp, qq, nn) = b;
    if q + pp != p + qq {
        return Ok(0.0);
    }
    let power = p + qq;
    let c = n + nn;
    if c < power + 2 {
        return Err(Error::Internal(format!(
            "divergent pairing |w|^{} (1+|w|²)^-{c}",
            2 * power
        )));
    }
    Ok(PI / ((c - 1) as f64 * binomial(c - 2, power)))
}

fn pair_expansions(a: (u32, u32, u32), b: &RationalExpansion, extra_n: u32) -> Result<Complex64> {
    let mut s = Complex64::new(0.0, 0.0);
    for (&(p, q, n), &c) in &b.terms {
        s += c * pairing(a, (p, q, n + extra_n))?;
    }
    Ok(s)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Chirality {
    Plus,
    Minus,
}

/// Exact finite section of the sphere's Dirac operator.
#[derive(Clone, Debug)]
pub struct DiracTruncation {
    radius: f64,
    order: u32,
    basis: Vec<(Chirality, u32, u32)>,
    /// `L^{-1}` for the Gram matrix `G = L L*`.
    whitening: CMat,
    eigenvalues: Vec<f64>,
    eigenvectors: CMat,
}

impl DiracTruncation {
    pub fn new(radius: f64, order: usize) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return domain(format!("radius must be positive, got {radius}"));
        }
        if order == 0 || order > MAX_ORDER {
            return domain(format!("truncation order must lie in 1..={MAX_ORDER}"));
        }
        let n = order as u32;
        let mut basis = Vec::new();
        for p in 0..n {
            for q in 0..=n {
                basis.push((Chirality::Plus, p, q));
            }
        }
        for p in 0..=n {
            for q in 0..n {
                basis.push((Chirality::Minus, p, q));
            }
        }
        let dim = basis.len();
        let mut gram = CMat::zeros(dim, dim);
        let mut stiff = CMat::zeros(dim, dim);
        let two_i = Complex64::new(0.0, 2.0);
        for (i, &(ci, p, q)) in basis.iter().enumerate() {
            for (j, &(cj, pp, qq)) in basis.iter().enumerate() {
                if ci == cj {
                    let w = RationalExpansion::basis(pp, qq, n);
                    gram[(i, j)] = pair_expansions((p, q, n), &w, 1)? * (2.0 * radius);
                } else {
                    let d = match cj {
                        Chirality::Minus => RationalExpansion::d_w(pp, qq, n),
                        Chirality::Plus => RationalExpansion::d_wbar(pp, qq, n),
                    };
                    stiff[(i, j)] = pair_expansions((p, q, n), &d, 0)? * two_i;
                }
            }
        }
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::Internal("Gram matrix is not positive definite".into()))?;
        let l_inv = chol
            .l()
            .try_inverse()
            .ok_or_else(|| Error::Internal("singular Cholesky factor".into()))?;
        let dirac = &l_inv * stiff * l_inv.adjoint();
        let herm = (&dirac + dirac.adjoint()) * Complex64::new(0.5, 0.0);
        let eig = herm.symmetric_eigen();
        let mut order_idx: Vec<usize> = (0..dim).collect();
        order_idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let eigenvalues = order_idx.iter().map(|&k| eig.eigenvalues[k]).collect();
        let eigenvectors = CMat::from_fn(dim, dim, |r, c| eig.eigenvectors[(r, order_idx[c])]);
        Ok(Self {
            radius,
            order: n,
            basis,
            whitening: l_inv,
            eigenvalues,
            eigenvectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// Ascending eigenvalues of the truncated `D`.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    fn grading_sign(&self, i: usize) -> f64 {
        match self.basis[i].0 {
            Chirality::Plus => 1.0,
            Chirality::Minus => -1.0,
        }
    }

    /// `c(α)` in the orthonormal trial basis for a form without 1-form part.
    pub fn clifford_matrix(&self, form: &MixedForm) -> Result<CMat> {
        if form.degrees().contains(&FormDegree::One) {
            return Err(Error::Unsupported(
                "the Dirac truncation represents 0- and 2-forms only".into(),
            ));
        }
        let n = self.order;
        let dim = self.dim();
        let mut raw = CMat::zeros(dim, dim);
        let minus_i = Complex64::new(0.0, -1.0);
        for (j, &(cj, pp, qq)) in self.basis.iter().enumerate() {
            let start = RationalExpansion::basis(pp, qq, n);
            let f = start.times_poly(&form.function, self.radius);
            // c(b vol) = b γ_1γ_2 = -i b σ_z.
            let b = start.times_poly(&form.area, self.radius);
            let sign = self.grading_sign(j);
            for (i, &(ci, p, q)) in self.basis.iter().enumerate() {
                if ci != cj {
                    continue;
                }
                let fv = pair_expansions((p, q, n), &f, 1)?;
                let bv = pair_expansions((p, q, n), &b, 1)?;
                raw[(i, j)] = (fv + bv * minus_i * sign) * (2.0 * self.radius);
            }
        }
        Ok(&self.whitening * raw * self.whitening.adjoint())
    }

    /// `Σ_i sign_i A_ii` in the orthonormal trial basis.
    pub fn supertrace(&self, a: &CMat) -> Complex64 {
        (0..self.dim())
            .map(|i| a[(i, i)] * self.grading_sign(i))
            .sum()
    }

    fn heat(&self, t: f64) -> CMat {
        let v = &self.eigenvectors;
        let d = CMat::from_diagonal(&nalgebra::DVector::from_iterator(
            self.dim(),
            self.eigenvalues
                .iter()
                .map(|l| Complex64::new((-t * l * l).exp(), 0.0)),
        ));
        v * d * v.adjoint()
    }

    /// `Tr e^{-t D²}`.
    pub fn heat_trace(&self, t: f64) -> f64 {
        self.eigenvalues.iter().map(|l| (-t * l * l).exp()).sum()
    }

    /// `Str(e^{-t D²})`.
    pub fn heat_supertrace(&self, t: f64) -> f64 {
        self.supertrace(&self.heat(t)).re
    }

    /// `Str(c(α_0') e^{-D²})`.
    pub fn chern_n0(&self, alpha0: &MixedForm) -> Result<Complex64> {
        let c = self.clifford_matrix(alpha0)?;
        Ok(self.supertrace(&(c * self.heat(1.0))))
    }

    /// `Ch_1(α_0, dt ∧ f) = Str(c(α_0') ∫_0^1 e^{-sD²} f e^{-(1-s)D²} ds)`.
    pub fn chern_n1_temporal(&self, alpha0: &MixedForm, f: &Poly3) -> Result<Complex64> {
        let c = self.clifford_matrix(alpha0)?;
        let m = self.clifford_matrix(&MixedForm::function(f.clone()))?;
        let v = &self.eigenvectors;
        let mut tilde = v.adjoint() * m * v;
        let sq: Vec<f64> = self.eigenvalues.iter().map(|l| l * l).collect();
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                tilde[(i, j)] *= duhamel_weight(sq[i], sq[j]);
            }
        }
        let duh = v * tilde * v.adjoint();
        Ok(self.supertrace(&(c * duh)))
    }
}

/// `∫_0^1 e^{-s a} e^{-(1-s) b} ds`.
fn duhamel_weight(a: f64, b: f64) -> f64 {
    let gap = a - b;
    if gap.abs() < 1e-12 {
        (-a).exp()
    } else {
        // e^{-b} (1 - e^{-gap}) / gap, stable for small gaps.
        (-b).exp() * -(-gap).exp_m1() / gap
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairing_matches_beta_integral() {
        // ∫ (1+|w|²)^{-2} du = π; ∫ |w|² (1+|w|²)^{-4} du = π/6.
        assert!((pairing((0, 0, 1), (0, 0, 1)).unwrap() - PI).abs() < 1e-14);
        assert!((pairing((1, 0, 2), (1, 0, 2)).unwrap() - PI / 6.0).abs() < 1e-14);
        assert_eq!(pairing((1, 0, 2), (0, 0, 2)).unwrap(), 0.0);
    }

    #[test]
    fn spectrum_is_exact_with_multiplicities() {
        for radius in [1.0, 2.0] {
            let order = 4;
            let t = DiracTruncation::new(radius, order).unwrap();
            assert_eq!(t.dim(), 2 * order * (order + 1));
            let mut expect: Vec<f64> = Vec::new();
            for k in 1..=order {
                for _ in 0..2 * k {
                    expect.push(k as f64 / radius);
                    expect.push(-(k as f64) / radius);
                }
            }
            expect.sort_by(f64::total_cmp);
            for (got, want) in t.eigenvalues().iter().zip(&expect) {
                assert!((got - want).abs() < 1e-9, "{got} vs {want}");
            }
        }
    }

    #[test]
    fn heat_trace_matches_closed_form() {
        let t = DiracTruncation::new(1.0, 6).unwrap();
        let closed: f64 = (1..=6)
            .map(|k| 4.0 * k as f64 * (-(k * k) as f64).exp())
            .sum();
        assert!((t.heat_trace(1.0) - closed).abs() < 1e-12);
        let vol = t.chern_n0(&MixedForm::volume()).unwrap();
        assert!((vol - Complex64::new(0.0, -closed)).norm() < 1e-10);
        let f = t
            .chern_n0(&MixedForm::function(Poly3::coordinate(2)))
            .unwrap();
        assert!(f.norm() < 1e-10);
    }

    #[test]
    fn multiplication_by_one_is_identity() {
        let t = DiracTruncation::new(1.3, 3).unwrap();
        let m = t
            .clifford_matrix(&MixedForm::function(Poly3::real(1.0)))
            .unwrap();
        assert!((m - CMat::identity(t.dim(), t.dim())).norm() < 1e-11);
    }

    #[test]
    fn temporal_unit_function_reduces_to_heat_supertrace() {
        // Duhamel of the identity is e^{-D²}.
        let t = DiracTruncation::new(1.0, 5).unwrap();
        let a = t
            .chern_n1_temporal(&MixedForm::volume(), &Poly3::real(1.0))
            .unwrap();
        let b = t.chern_n0(&MixedForm::volume()).unwrap();
        assert!((a - b).norm() < 1e-11);
    }

    #[test]
    fn temporal_value_is_stable_under_order_doubling() {
        let f = &Poly3::coordinate(2) + &Poly3::real(1.0);
        let a = DiracTruncation::new(1.0, 5)
            .unwrap()
            .chern_n1_temporal(&MixedForm::volume(), &f)
            .unwrap();
        let b = DiracTruncation::new(1.0, 10)
            .unwrap()
            .chern_n1_temporal(&MixedForm::volume(), &f)
            .unwrap();
        assert!((a - b).norm() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn spectrum_is_symmetric_and_index_vanishes() {
        let t = DiracTruncation::new(1.0, 6).unwrap();
        let ev = t.eigenvalues();
        for (a, b) in ev.iter().zip(ev.iter().rev()) {
            assert!((a + b).abs() < 1e-8);
        }
        let smallest = ev.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
        assert!((smallest - 1.0).abs() < 1e-2);
        for time in [1.0, 2.0] {
            assert!(t.heat_supertrace(time).abs() < 1e-10);
        }
    }
}
