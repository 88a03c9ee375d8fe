//! Outer quadrature grids over the model geometries.

use std::f64::consts::PI;
use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;

use crate::error::{domain, Result};
use crate::geometry::{ManifoldModel, Point};

/// Gauss-Legendre nodes and weights mapped to `[a, b]`.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> Result<Vec<(f64, f64)>> {
    let Some(n) = NonZeroUsize::new(n) else {
        return domain("Gauss-Legendre rule needs at least one node");
    };
    let rule = GaussLegendre::new(n);
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    Ok(rule
        .as_node_weight_pairs()
        .iter()
        .map(|&(x, w)| (mid + half * x, half * w))
        .collect())
}

/// Points with weights summing to the manifold volume.
#[derive(Clone, Debug)]
pub struct QuadratureGrid {
    nodes: Vec<(Point, f64)>,
}

impl QuadratureGrid {
    /// Uniform tensor grid with `per_axis` nodes on each axis of a flat model.
    /// Exact for trigonometric polynomials of degree below `per_axis`.
    pub fn uniform(model: &ManifoldModel, per_axis: usize) -> Result<Self> {
        let Some(periods) = model.periods() else {
            return domain("uniform grids need a circle or flat torus");
        };
        if per_axis == 0 {
            return domain("grid needs at least one node per axis");
        }
        let m = periods.dim();
        let total = per_axis.pow(m as u32);
        let weight = model.volume() / total as f64;
        let mut nodes = Vec::with_capacity(total);
        let mut coords = vec![0.0; m];
        for flat in 0..total {
            let mut rem = flat;
            for (axis, c) in coords.iter_mut().enumerate() {
                *c = periods[axis] * (rem % per_axis) as f64 / per_axis as f64;
                rem /= per_axis;
            }
            nodes.push((model.flat_point(&coords)?, weight));
        }
        Ok(Self { nodes })
    }

    /// Gauss-Legendre in `cos(polar)` times a uniform azimuthal rule.
    pub fn sphere(model: &ManifoldModel, n_polar: usize, n_azimuth: usize) -> Result<Self> {
        let Some(r) = model.sphere_radius() else {
            return domain("sphere grid needs a sphere");
        };
        if n_azimuth == 0 {
            return domain("grid needs at least one azimuthal node");
        }
        let mut nodes = Vec::with_capacity(n_polar * n_azimuth);
        for (c, w) in gauss_legendre(n_polar, -1.0, 1.0)? {
            let polar = c.clamp(-1.0, 1.0).acos();
            for j in 0..n_azimuth {
                let azimuth = 2.0 * PI * (j as f64 + 0.5) / n_azimuth as f64;
                let weight = r * r * w * 2.0 * PI / n_azimuth as f64;
                nodes.push((model.sphere_point_polar(polar, azimuth)?, weight));
            }
        }
        Ok(Self { nodes })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Point, f64)> {
        self.nodes.iter().map(|(p, w)| (p, *w))
    }

    pub fn nodes(&self) -> &[(Point, f64)] {
        &self.nodes
    }
}

/// Alias used where only sphere grids make sense.
pub type SphereGrid = QuadratureGrid;

impl QuadratureGrid {
    /// Shorthand for [`QuadratureGrid::sphere`].
    pub fn new(model: &ManifoldModel, n_polar: usize, n_azimuth: usize) -> Result<Self> {
        Self::sphere(model, n_polar, n_azimuth)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let nodes = gauss_legendre(5, 0.0, 2.0).unwrap();
        let integral: f64 = nodes.iter().map(|(x, w)| w * x.powi(9)).sum();
        assert!((integral - 2f64.powi(10) / 10.0).abs() < 1e-10);
    }

    #[test]
    fn weights_sum_to_volume() {
        let s = ManifoldModel::sphere2(1.7).unwrap();
        let g = QuadratureGrid::sphere(&s, 6, 12).unwrap();
        let total: f64 = g.iter().map(|(_, w)| w).sum();
        assert!((total - s.volume()).abs() < 1e-12);
        let t = ManifoldModel::flat_torus(&[1.0, 2.0]).unwrap();
        let g = QuadratureGrid::uniform(&t, 8).unwrap();
        assert_eq!(g.len(), 64);
        assert!((g.iter().map(|(_, w)| w).sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn sphere_grid_integrates_low_degree_polynomials() {
        let s = ManifoldModel::sphere2(1.0).unwrap();
        let g = QuadratureGrid::sphere(&s, 8, 16).unwrap();
        // ∫ z² dμ = 4π/3 on the unit sphere.
        let v: f64 = g
            .iter()
            .map(|(p, w)| w * p.embedded.unwrap()[2].powi(2))
            .sum();
        assert!((v - 4.0 * PI / 3.0).abs() < 1e-12);
        let v: f64 = g
            .iter()
            .map(|(p, w)| w * p.embedded.unwrap()[0].powi(2))
            .sum();
        assert!((v - 4.0 * PI / 3.0).abs() < 1e-12);
    }
}
