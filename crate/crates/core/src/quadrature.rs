//! Tensor Gauss-Legendre rules on boxes.

use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::tensor::Vec2;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub points: Vec<Vec2>,
    pub weights: Vec<f64>,
    /// Polynomial degree integrated exactly (per axis, per element).
    pub order: usize,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(&Vec2) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(x))
            .sum()
    }
}

/// Number of Gauss points per axis needed for exactness `order`.
pub fn points_for_order(order: usize) -> usize {
    order / 2 + 1
}

/// One-dimensional Gauss-Legendre nodes and weights on `[a, b]`.
pub fn gauss_1d(npts: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let rule = GaussLegendre::new(NonZeroUsize::new(npts.max(1)).unwrap());
    let mut out: Vec<(f64, f64)> = rule
        .as_node_weight_pairs()
        .iter()
        .map(|&(x, w)| (0.5 * (b - a) * x + 0.5 * (b + a), 0.5 * (b - a) * w))
        .collect();
    out.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());
    out
}

/// Tensor Gauss rule over the box `[lower, upper]` exact for polynomials of
/// degree `order` in each variable.
pub fn quadrature(lower: &[f64], upper: &[f64], order: usize) -> Result<QuadratureRule> {
    if order < 1 {
        return Err(invalid("order", "quadrature order must be at least 1"));
    }
    let dim = lower.len();
    let n = points_for_order(order);
    let gx = gauss_1d(n, lower[0], upper[0]);
    let mut points = Vec::new();
    let mut weights = Vec::new();
    if dim == 1 {
        for (x, w) in gx {
            points.push(Vec2::new(x, 0.0));
            weights.push(w);
        }
    } else {
        let gy = gauss_1d(n, lower[1], upper[1]);
        for &(y, wy) in &gy {
            for &(x, wx) in &gx {
                points.push(Vec2::new(x, y));
                weights.push(wx * wy);
            }
        }
    }
    Ok(QuadratureRule {
        points,
        weights,
        order: 2 * n - 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_is_exact_with_order_three() {
        let q = quadrature(&[0.0], &[1.0], 3).unwrap();
        assert!((q.integrate(|x| x[0].powi(3)) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn weights_sum_to_measure_of_unit_square() {
        let q = quadrature(&[0.0, 0.0], &[1.0, 1.0], 5).unwrap();
        assert!((q.weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert!(q.weights.iter().all(|&w| w > 0.0));
    }

    #[test]
    fn sixth_power_is_not_exact_with_order_three() {
        let q = quadrature(&[0.0], &[1.0], 3).unwrap();
        let err = (q.integrate(|x| x[0].powi(6)) - 1.0 / 7.0).abs();
        assert!(err > 1e-6, "error {err}");
    }

    #[test]
    fn order_zero_rejected() {
        assert!(quadrature(&[0.0], &[1.0], 0).is_err());
    }
}
