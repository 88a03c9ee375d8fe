//! Matrix- and vector-valued coefficient fields.
//!
//! Trigonometric-polynomial fields on circles and tori are the ones the
//! spectral oracle can assemble exactly; anything else is a closure.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geometry::{Coords, ManifoldModel, Point, MAX_DIM};
use crate::linalg::{FiberMat, FiberVec};

/// Integer Fourier mode on a torus of dimension `<= MAX_DIM`.
pub type Mode = [i32; MAX_DIM];

pub trait MatrixField: Send + Sync {
    fn rank(&self) -> usize;
    fn eval(&self, p: &Point) -> FiberMat;
    /// Exact Fourier data, when available.
    fn trig(&self) -> Option<&TrigField> {
        None
    }

    /// The value, when the field does not depend on the point.
    fn constant(&self) -> Option<FiberMat> {
        self.trig().and_then(TrigField::constant_value)
    }
}

pub type Field = Arc<dyn MatrixField>;

impl fmt::Debug for dyn MatrixField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.trig() {
            Some(t) => t.fmt(f),
            None => write!(f, "MatrixField(rank {})", self.rank()),
        }
    }
}

/// `Σ_k C_k exp(i Σ_j 2π k_j x_j / P_j)` with matrix coefficients `C_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrigField {
    rank: usize,
    periods: Coords,
    terms: Vec<(Mode, FiberMat)>,
}

impl TrigField {
    pub fn new(model: &ManifoldModel, rank: usize, terms: Vec<(Mode, FiberMat)>) -> Result<Self> {
        let periods = model.periods().ok_or_else(|| {
            Error::Unsupported("trigonometric fields need a circle or torus".into())
        })?;
        for (mode, c) in &terms {
            if c.dim() != rank {
                return Err(Error::Dimension(format!(
                    "coefficient of rank {} in a rank-{rank} field",
                    c.dim()
                )));
            }
            if mode[periods.dim()..].iter().any(|&k| k != 0) {
                return Err(Error::Dimension("mode has more axes than the torus".into()));
            }
        }
        let mut merged: Vec<(Mode, FiberMat)> = Vec::new();
        for (mode, c) in terms {
            match merged.iter_mut().find(|(m, _)| *m == mode) {
                Some((_, acc)) => *acc += c,
                None => merged.push((mode, c)),
            }
        }
        merged.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(Self {
            rank,
            periods,
            terms: merged,
        })
    }

    pub fn constant(model: &ManifoldModel, value: FiberMat) -> Result<Self> {
        Self::new(model, value.dim(), vec![([0; MAX_DIM], value)])
    }

    pub fn zero(model: &ManifoldModel, rank: usize) -> Result<Self> {
        Self::new(model, rank, vec![])
    }

    /// Scalar field `Σ c_k e^{ikθ}` on a circle, as a multiple of the identity.
    pub fn scalar_circle(
        model: &ManifoldModel,
        rank: usize,
        coeffs: &[(i32, Complex64)],
    ) -> Result<Self> {
        let terms = coeffs
            .iter()
            .map(|&(k, c)| {
                let mut mode = [0; MAX_DIM];
                mode[0] = k;
                (mode, FiberMat::scalar(rank, c))
            })
            .collect();
        Self::new(model, rank, terms)
    }

    pub fn terms(&self) -> &[(Mode, FiberMat)] {
        &self.terms
    }

    pub fn periods(&self) -> Coords {
        self.periods
    }

    /// Largest `|k_j|` over all terms and axes.
    pub fn degree(&self) -> usize {
        self.terms
            .iter()
            .flat_map(|(m, _)| m.iter().map(|k| k.unsigned_abs() as usize))
            .max()
            .unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.terms
            .iter()
            .all(|(_, c)| c.entries().iter().all(|z| *z == Complex64::new(0.0, 0.0)))
    }

    /// The sum of the coefficients, when every mode is zero.
    pub fn constant_value(&self) -> Option<FiberMat> {
        let mut out = FiberMat::zeros(self.rank);
        for (mode, c) in &self.terms {
            if mode.iter().any(|&k| k != 0) {
                return None;
            }
            out += *c;
        }
        Some(out)
    }

    /// `exp(i k·x)` for this field's periods.
    #[inline]
    pub fn phase(periods: &Coords, mode: &Mode, p: &Point) -> Complex64 {
        let mut arg = 0.0;
        for j in 0..periods.dim() {
            if mode[j] != 0 {
                arg += 2.0 * PI * mode[j] as f64 * p.coords[j] / periods[j];
            }
        }
        Complex64::from_polar(1.0, arg)
    }
}

impl MatrixField for TrigField {
    fn rank(&self) -> usize {
        self.rank
    }

    fn eval(&self, p: &Point) -> FiberMat {
        let mut out = FiberMat::zeros(self.rank);
        for (mode, c) in &self.terms {
            if mode.iter().all(|&k| k == 0) {
                out += *c;
            } else {
                out += c.scale(Self::phase(&self.periods, mode, p));
            }
        }
        out
    }

    fn trig(&self) -> Option<&TrigField> {
        Some(self)
    }
}

/// A field given by a closure, e.g. on the sphere.
pub struct FnField<F> {
    rank: usize,
    f: F,
}

impl<F> FnField<F>
where
    F: Fn(&Point) -> FiberMat + Send + Sync,
{
    pub fn new(rank: usize, f: F) -> Self {
        Self { rank, f }
    }
}

impl<F> MatrixField for FnField<F>
where
    F: Fn(&Point) -> FiberMat + Send + Sync,
{
    fn rank(&self) -> usize {
        self.rank
    }

    fn eval(&self, p: &Point) -> FiberMat {
        (self.f)(p)
    }
}

/// A constant matrix on any geometry.
#[derive(Clone, Debug)]
pub struct ConstField(pub FiberMat);

impl MatrixField for ConstField {
    fn rank(&self) -> usize {
        self.0.dim()
    }

    fn eval(&self, _p: &Point) -> FiberMat {
        self.0
    }

    fn constant(&self) -> Option<FiberMat> {
        Some(self.0)
    }
}

/// A section of the bundle, in chart-referenced fiber coordinates.
#[derive(Clone)]
pub struct SectionFn {
    rank: usize,
    eval: Arc<dyn Fn(&Point) -> FiberVec + Send + Sync>,
    trig: Option<Vec<(Mode, Vec<Complex64>)>>,
}

impl fmt::Debug for SectionFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SectionFn")
            .field("rank", &self.rank)
            .field("trig", &self.trig)
            .finish()
    }
}

impl SectionFn {
    pub fn new(rank: usize, eval: impl Fn(&Point) -> FiberVec + Send + Sync + 'static) -> Self {
        Self {
            rank,
            eval: Arc::new(eval),
            trig: None,
        }
    }

    pub fn constant(value: FiberVec) -> Self {
        let coeffs = value.as_slice().to_vec();
        Self {
            rank: value.dim(),
            eval: Arc::new(move |_| value),
            trig: Some(vec![([0; MAX_DIM], coeffs)]),
        }
    }

    /// `Σ_k v_k exp(i k·x)` on a circle or torus.
    pub fn trig(model: &ManifoldModel, terms: Vec<(Mode, Vec<Complex64>)>) -> Result<Self> {
        let periods = model.periods().ok_or_else(|| {
            Error::Unsupported("trigonometric sections need a circle or torus".into())
        })?;
        let rank = terms.first().map(|(_, v)| v.len()).unwrap_or(1);
        if rank == 0 || terms.iter().any(|(_, v)| v.len() != rank) {
            return Err(Error::Dimension("inconsistent section rank".into()));
        }
        let stored = terms.clone();
        let eval = move |p: &Point| {
            let mut out = vec![Complex64::new(0.0, 0.0); rank];
            for (mode, v) in &stored {
                let ph = TrigField::phase(&periods, mode, p);
                for (o, c) in out.iter_mut().zip(v) {
                    *o += ph * c;
                }
            }
            FiberVec::from_slice(&out).expect("rank checked above")
        };
        Ok(Self {
            rank,
            eval: Arc::new(eval),
            trig: Some(terms),
        })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    #[inline]
    pub fn eval(&self, p: &Point) -> FiberVec {
        (self.eval)(p)
    }

    pub fn trig_terms(&self) -> Option<&[(Mode, Vec<Complex64>)]> {
        self.trig.as_deref()
    }
}

/// Mode with a single nonzero first component.
pub fn mode1(k: i32) -> Mode {
    let mut m = [0; MAX_DIM];
    m[0] = k;
    m
}
