//! Spinor bundle of the round sphere in the stereographic chart frames.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geometry::{Chart, ManifoldModel, Point};
use crate::linalg::FiberMat;
use crate::transport::{chart_coords, BundleSpec, ConnectionForm};

use super::clifford::gamma12;

struct SpinConnection {
    base: ManifoldModel,
}

impl ConnectionForm for SpinConnection {
    fn rank(&self) -> usize {
        2
    }

    /// Lift of the Levi-Civita form: `A_k = -½ (A^tan_k)^1_2 γ_1 γ_2`.
    fn component(&self, p: &Point, k: usize) -> FiberMat {
        let gamma = self
            .base
            .christoffel(p)
            .expect("transport evaluates the connection inside the chart domain");
        gamma12().scale_re(-0.5 * gamma.get(0, k, 1))
    }

    fn transition(&self, p: &Point, from: Chart, to: Chart) -> FiberMat {
        if from == to {
            return FiberMat::identity(2);
        }
        let u = chart_coords(&self.base, p, Chart::North);
        let n = (u[0] * u[0] + u[1] * u[1]).sqrt();
        let w = Complex64::new(u[0], u[1]) / n;
        let i = Complex64::new(0.0, 1.0);
        let north_to_south = FiberMat::from_fn(2, |a, b| match (a, b) {
            (0, 0) => -i * w,
            (1, 1) => i * w.conj(),
            _ => Complex64::new(0.0, 0.0),
        });
        if from == Chart::North {
            north_to_south
        } else {
            north_to_south.adjoint()
        }
    }
}

/// Spinor bundle `spinor_s2` with its spin connection.
pub fn spinor_bundle(base: &ManifoldModel) -> Result<BundleSpec> {
    if base.sphere_radius().is_none() {
        return Err(Error::Unsupported("spinor_s2 needs a sphere".into()));
    }
    Ok(BundleSpec::new(
        "spinor_s2",
        base.clone(),
        Arc::new(SpinConnection { base: base.clone() }),
    ))
}
