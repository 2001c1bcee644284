//! Small fixed-size tensor algebra for spatial dimension 1 or 2.
//!
//! All tensors are stored padded to 2x2 storage. For `dim == 1` only the
//! `(0, 0)` entry is meaningful and the padding is kept at zero, so sums over
//! the full storage agree with sums over the active block.

use nalgebra::{Matrix2, Vector2};

pub type Vec2 = Vector2<f64>;
pub type Mat2 = Matrix2<f64>;

/// Second deformation gradient: `g[i]` is the Hessian of the i-th component.
pub type Tensor3 = [Mat2; 2];

pub fn zero3() -> Tensor3 {
    [Mat2::zeros(), Mat2::zeros()]
}

pub fn identity(dim: usize) -> Mat2 {
    match dim {
        1 => Mat2::new(1.0, 0.0, 0.0, 0.0),
        _ => Mat2::identity(),
    }
}

pub fn det(dim: usize, f: &Mat2) -> f64 {
    match dim {
        1 => f[(0, 0)],
        _ => f[(0, 0)] * f[(1, 1)] - f[(0, 1)] * f[(1, 0)],
    }
}

/// Cofactor matrix `Cof F = det(F) F^{-T}`, which is polynomial in `F`.
pub fn cofactor(dim: usize, f: &Mat2) -> Mat2 {
    match dim {
        1 => Mat2::new(1.0, 0.0, 0.0, 0.0),
        _ => Mat2::new(f[(1, 1)], -f[(1, 0)], -f[(0, 1)], f[(0, 0)]),
    }
}

/// Derivative of the cofactor: `d Cof_ij / d F_kl`.
pub fn d_cofactor(dim: usize, i: usize, j: usize, k: usize, l: usize) -> f64 {
    if dim == 1 {
        return 0.0;
    }
    // Cof = [[F11, -F10], [-F01, F00]]
    match (i, j) {
        (0, 0) if (k, l) == (1, 1) => 1.0,
        (0, 1) if (k, l) == (1, 0) => -1.0,
        (1, 0) if (k, l) == (0, 1) => -1.0,
        (1, 1) if (k, l) == (0, 0) => 1.0,
        _ => 0.0,
    }
}

/// Full contraction `A : B` over the active block.
pub fn ddot(a: &Mat2, b: &Mat2) -> f64 {
    a.component_mul(b).sum()
}

pub fn frob2(a: &Mat2) -> f64 {
    ddot(a, a)
}

pub fn triple_dot(a: &Tensor3, b: &Tensor3) -> f64 {
    ddot(&a[0], &b[0]) + ddot(&a[1], &b[1])
}

/// Inverse for the active block; `None` when singular.
pub fn inverse(dim: usize, f: &Mat2) -> Option<Mat2> {
    let j = det(dim, f);
    if j == 0.0 || !j.is_finite() {
        return None;
    }
    Some(cofactor(dim, f).transpose() / j)
}

/// Rotation by angle `theta` in the plane.
pub fn rotation(theta: f64) -> Mat2 {
    let (s, c) = theta.sin_cos();
    Mat2::new(c, -s, s, c)
}

pub fn vec_of(dim: usize, x: &[f64]) -> Vec2 {
    match dim {
        1 => Vec2::new(x[0], 0.0),
        _ => Vec2::new(x[0], x[1]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cofactor_transpose_times_f_is_det_identity() {
        let f = Mat2::new(1.3, -0.2, 0.7, 0.9);
        let c = cofactor(2, &f);
        let lhs = c.transpose() * f;
        let rhs = Mat2::identity() * det(2, &f);
        assert!((lhs - rhs).norm() < 1e-14);
    }

    #[test]
    fn cofactor_derivative_matches_finite_differences() {
        let f = Mat2::new(1.1, 0.3, -0.4, 0.8);
        let h = 1e-6;
        for k in 0..2 {
            for l in 0..2 {
                let mut fp = f;
                fp[(k, l)] += h;
                let mut fm = f;
                fm[(k, l)] -= h;
                let dc = (cofactor(2, &fp) - cofactor(2, &fm)) / (2.0 * h);
                for i in 0..2 {
                    for j in 0..2 {
                        assert!((dc[(i, j)] - d_cofactor(2, i, j, k, l)).abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn one_dimensional_padding() {
        let f = Mat2::new(2.0, 0.0, 0.0, 0.0);
        assert_eq!(det(1, &f), 2.0);
        assert_eq!(cofactor(1, &f)[(0, 0)], 1.0);
        assert_eq!(inverse(1, &f).unwrap()[(0, 0)], 0.5);
        assert!(inverse(1, &Mat2::zeros()).is_none());
    }
}
