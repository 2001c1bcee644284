//! Closed-form data fields and their samples on a basis.

use std::sync::Arc;

use nalgebra::DVector;

use crate::basis::GalerkinBasis;
use crate::tensor::Vec2;

/// Scalar field of position and time.
pub type ScalarFn = Arc<dyn Fn(&Vec2, f64) -> f64 + Send + Sync>;
/// Vector field of position and time.
pub type VectorFn = Arc<dyn Fn(&Vec2, f64) -> Vec2 + Send + Sync>;

pub fn constant_scalar(c: f64) -> ScalarFn {
    Arc::new(move |_, _| c)
}

/// Referential charge density sampled where the force assembly needs it.
#[derive(Clone, Debug, Default)]
pub struct ChargeSample {
    pub at_points: Vec<f64>,
    pub grads: Vec<Vec2>,
    pub at_boundary: Vec<f64>,
}

impl ChargeSample {
    /// Samples a closed-form density; gradients by central differences.
    pub fn from_fn(basis: &GalerkinBasis, q: &ScalarFn) -> Self {
        let dim = basis.dim();
        let h = 1e-5 * basis.axes.iter().map(|a| a.upper - a.lower).fold(0.0, f64::max);
        let grad = |x: &Vec2| {
            let mut g = Vec2::zeros();
            for a in 0..dim {
                let mut e = Vec2::zeros();
                e[a] = h;
                g[a] = (q(&(x + e), 0.0) - q(&(x - e), 0.0)) / (2.0 * h);
            }
            g
        };
        ChargeSample {
            at_points: basis.points.iter().map(|p| q(&p.x, 0.0)).collect(),
            grads: basis.points.iter().map(|p| grad(&p.x)).collect(),
            at_boundary: basis.boundary_points.iter().map(|p| q(&p.x, 0.0)).collect(),
        }
    }

    /// Samples a scalar field in the Galerkin space.
    pub fn from_coeffs(basis: &GalerkinBasis, c: &DVector<f64>) -> Self {
        let s = c.as_slice();
        ChargeSample {
            at_points: basis.points.iter().map(|p| p.shapes.value(s)).collect(),
            grads: basis.points.iter().map(|p| p.shapes.gradient(s)).collect(),
            at_boundary: basis.boundary_points.iter().map(|p| p.shapes.value(s)).collect(),
        }
    }

    pub fn zeros(basis: &GalerkinBasis) -> Self {
        ChargeSample {
            at_points: vec![0.0; basis.points.len()],
            grads: vec![Vec2::zeros(); basis.points.len()],
            at_boundary: vec![0.0; basis.boundary_points.len()],
        }
    }

    pub fn total(&self, basis: &GalerkinBasis) -> f64 {
        basis.points.iter().zip(&self.at_points).map(|(p, q)| p.weight * q).sum()
    }
}
