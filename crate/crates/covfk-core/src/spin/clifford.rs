//! Clifford multiplication on the rank-2 spinor fiber of a surface.
//!
//! Generators `γ_1 = iσ_x`, `γ_2 = iσ_y` satisfy `γ_a γ_b + γ_b γ_a =
//! -2 δ_ab`; the grading is `γ = i γ_1 γ_2 = σ_z`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::linalg::FiberMat;

use super::forms::FormAt;

/// Normalization of `c` on wedge products of 1-forms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CliffordConvention {
    /// `c(e^{i_1} ∧ ⋯ ∧ e^{i_p}) = γ_{i_1} ⋯ γ_{i_p}` for increasing indices.
    #[default]
    IncreasingIndex,
    /// `c(α_1 ∧ ⋯ ∧ α_p) = α_1 ⋯ α_p / p!` applied to a single wedge word.
    Factorial,
}

impl CliffordConvention {
    /// Factor multiplying `γ_1 γ_2` in `c(e^1 ∧ e^2)`.
    pub fn area_factor(self) -> f64 {
        match self {
            CliffordConvention::IncreasingIndex => 1.0,
            CliffordConvention::Factorial => 0.5,
        }
    }
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn gamma(a: usize) -> FiberMat {
    let (z, i) = (c(0.0, 0.0), c(0.0, 1.0));
    let rows = match a {
        0 => [[z, i], [i, z]],
        1 => [[z, c(1.0, 0.0)], [c(-1.0, 0.0), z]],
        _ => panic!("surface Clifford generators are indexed 0 and 1"),
    };
    FiberMat::from_fn(2, |r, s| rows[r][s])
}

/// `γ_1 γ_2 = -i σ_z`.
pub fn gamma12() -> FiberMat {
    gamma(0) * gamma(1)
}

/// Chirality operator `γ = σ_z`.
pub fn grading() -> FiberMat {
    FiberMat::from_fn(2, |r, s| match (r, s) {
        (0, 0) => c(1.0, 0.0),
        (1, 1) => c(-1.0, 0.0),
        _ => c(0.0, 0.0),
    })
}

/// Supertrace `Str(A) = tr(γ A)`.
pub fn supertrace(a: &FiberMat) -> Complex64 {
    a[(0, 0)] - a[(1, 1)]
}

/// `c(α)` for a form given in orthonormal frame components.
pub fn clifford(form: &FormAt, convention: CliffordConvention) -> FiberMat {
    FiberMat::scalar(2, form.function)
        + gamma(0).scale(form.covector[0])
        + gamma(1).scale(form.covector[1])
        + gamma12().scale(form.area * convention.area_factor())
}
