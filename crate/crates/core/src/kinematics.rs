//! Deformation fields, cofactor algebra, the determinant monitor and the
//! preimage search behind the change-of-variables formula.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::basis::{hermite_data_fd, GalerkinBasis, LocalShapes};
use crate::error::{invalid, Error, Result};
use crate::tensor::{cofactor, det, inverse, zero3, Mat2, Tensor3, Vec2};

/// Deformation quantities at one point.
#[derive(Clone, Copy, Debug)]
pub struct PointKinematics {
    pub pos: Vec2,
    pub f: Mat2,
    pub g: Tensor3,
    pub det: f64,
    pub cof: Mat2,
}

/// Position, deformation gradient and second gradient from shape data.
pub fn kinematics_at(dim: usize, shapes: &LocalShapes, chi: &[f64], n: usize) -> PointKinematics {
    let mut pos = Vec2::zeros();
    let mut f = Mat2::zeros();
    let mut g = zero3();
    for c in 0..dim {
        let coeffs = &chi[c * n..(c + 1) * n];
        pos[c] = shapes.value(coeffs);
        let grad = shapes.gradient(coeffs);
        for j in 0..dim {
            f[(c, j)] = grad[j];
        }
        g[c] = shapes.hessian(coeffs);
    }
    PointKinematics {
        pos,
        f,
        g,
        det: det(dim, &f),
        cof: cofactor(dim, &f),
    }
}

/// Coefficients of `χ` and `χ̇` with kinematics cached at quadrature points.
///
/// Vector coefficients are component-major: entry `c * N + a` belongs to
/// shape `a` of component `c`.
#[derive(Clone, Debug)]
pub struct DeformationState {
    pub dim: usize,
    pub chi: DVector<f64>,
    pub chidot: DVector<f64>,
    pub cache: Vec<PointKinematics>,
}

impl DeformationState {
    pub fn new(basis: &GalerkinBasis, chi: DVector<f64>, chidot: DVector<f64>) -> Result<Self> {
        let len = basis.dim() * basis.dofs_per_component();
        if chi.len() != len || chidot.len() != len {
            return Err(Error::Dimension(format!(
                "expected {len} coefficients, got {} and {}",
                chi.len(),
                chidot.len()
            )));
        }
        let mut s = DeformationState {
            dim: basis.dim(),
            chi,
            chidot,
            cache: Vec::new(),
        };
        s.rebuild(basis);
        Ok(s)
    }

    pub fn identity(basis: &GalerkinBasis) -> Self {
        let chi = interpolate_vector(basis, |x| *x);
        let n = chi.len();
        DeformationState::new(basis, chi, DVector::zeros(n)).unwrap()
    }

    /// Interpolates closed-form `χ₀` and `v₀`.
    pub fn from_fns(
        basis: &GalerkinBasis,
        chi0: impl Fn(&Vec2) -> Vec2,
        v0: impl Fn(&Vec2) -> Vec2,
    ) -> Result<Self> {
        DeformationState::new(basis, interpolate_vector(basis, chi0), interpolate_vector(basis, v0))
    }

    pub fn set_chi(&mut self, basis: &GalerkinBasis, chi: DVector<f64>) {
        self.chi = chi;
        self.rebuild(basis);
    }

    pub fn rebuild(&mut self, basis: &GalerkinBasis) {
        let n = basis.dofs_per_component();
        self.cache = basis
            .points
            .iter()
            .map(|p| kinematics_at(self.dim, &p.shapes, self.chi.as_slice(), n))
            .collect();
    }

    pub fn at(&self, basis: &GalerkinBasis, x: &Vec2) -> Result<PointKinematics> {
        let s = basis.eval_shapes(x, 2)?;
        Ok(kinematics_at(self.dim, &s, self.chi.as_slice(), basis.dofs_per_component()))
    }

    pub fn position(&self, basis: &GalerkinBasis, x: &Vec2) -> Result<Vec2> {
        Ok(self.at(basis, x)?.pos)
    }

    /// `F = ∇χ` and `G = ∇²χ` at `x`.
    pub fn gradients(&self, basis: &GalerkinBasis, x: &Vec2) -> Result<(Mat2, Tensor3)> {
        let k = self.at(basis, x)?;
        Ok((k.f, k.g))
    }

    /// Velocity at `x`.
    pub fn velocity(&self, basis: &GalerkinBasis, x: &Vec2) -> Result<Vec2> {
        let s = basis.eval_shapes(x, 0)?;
        let n = basis.dofs_per_component();
        let mut v = Vec2::zeros();
        for c in 0..self.dim {
            v[c] = s.value(&self.chidot.as_slice()[c * n..(c + 1) * n]);
        }
        Ok(v)
    }
}

/// Interpolates a vector field component by component.
pub fn interpolate_vector(basis: &GalerkinBasis, f: impl Fn(&Vec2) -> Vec2) -> DVector<f64> {
    let dim = basis.dim();
    let n = basis.dofs_per_component();
    let scale = basis.axes.iter().map(|a| a.upper - a.lower).fold(0.0, f64::max);
    let mut out = DVector::zeros(dim * n);
    for c in 0..dim {
        let comp = basis.interpolate(|x| hermite_data_fd(&|y: &Vec2| f(y)[c], x, dim, 1e-3 * scale));
        out.rows_mut(c * n, n).copy_from(&comp);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CofInv {
    pub det: f64,
    pub cof: Mat2,
    /// `F^{-T}`; absent when `F` is singular.
    pub inv_t: Option<Mat2>,
}

pub fn cof_inv(dim: usize, f: &Mat2) -> CofInv {
    CofInv {
        det: det(dim, f),
        cof: cofactor(dim, f),
        inv_t: inverse(dim, f).map(|m| m.transpose()),
    }
}

pub fn inverse_transpose(dim: usize, f: &Mat2) -> Result<Mat2> {
    inverse(dim, f)
        .map(|m| m.transpose())
        .ok_or(Error::Singular { det: det(dim, f) })
}

/// Row divergence of `∇χ^{-T}`, by the chain rule through the derivative of
/// `Cof/det` contracted with `∇²χ`.
pub fn div_inv_transpose_of(dim: usize, f: &Mat2, g: &Tensor3) -> Result<Vec2> {
    let finv = inverse(dim, f).ok_or(Error::Singular { det: det(dim, f) })?;
    let mut out = Vec2::zeros();
    // div(F^{-T})_i = -Σ F^{-1}_jk ∂_j F_kl F^{-1}_li
    for i in 0..dim {
        let mut s = 0.0;
        for j in 0..dim {
            for k in 0..dim {
                for l in 0..dim {
                    s -= finv[(j, k)] * g[k][(l, j)] * finv[(l, i)];
                }
            }
        }
        out[i] = s;
    }
    Ok(out)
}

pub fn div_inv_transpose(state: &DeformationState, basis: &GalerkinBasis, x: &Vec2) -> Result<Vec2> {
    let k = state.at(basis, x)?;
    div_inv_transpose_of(state.dim, &k.f, &k.g)
}

/// Sample set for the determinant monitor with precomputed shapes.
#[derive(Clone, Debug)]
pub struct MonitorSet {
    pub points: Vec<Vec2>,
    shapes: Vec<LocalShapes>,
}

impl MonitorSet {
    /// Quadrature points plus a uniform grid `oversample` times finer than
    /// the mesh.
    pub fn new(basis: &GalerkinBasis, oversample: usize) -> Self {
        let points = basis.monitor_points(oversample);
        let shapes = points.iter().map(|x| basis.eval_shapes(x, 1).unwrap()).collect();
        MonitorSet { points, shapes }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetReport {
    pub min_det: f64,
    pub floor: f64,
    pub violated: bool,
}

pub fn det_monitor_chi(dim: usize, n: usize, chi: &[f64], floor: f64, monitor: &MonitorSet) -> DetReport {
    let mut min_det = f64::INFINITY;
    for s in &monitor.shapes {
        let mut f = Mat2::zeros();
        for c in 0..dim {
            let g = s.gradient(&chi[c * n..(c + 1) * n]);
            for j in 0..dim {
                f[(c, j)] = g[j];
            }
        }
        let d = det(dim, &f);
        if d.is_nan() {
            min_det = f64::NEG_INFINITY;
        } else {
            min_det = min_det.min(d);
        }
    }
    DetReport {
        min_det,
        floor,
        violated: !(min_det >= floor),
    }
}

pub fn det_monitor(
    state: &DeformationState,
    basis: &GalerkinBasis,
    floor: f64,
    monitor: &MonitorSet,
) -> Result<DetReport> {
    if !(floor > 0.0) {
        return Err(invalid("det_floor", "must be positive"));
    }
    Ok(det_monitor_chi(
        state.dim,
        basis.dofs_per_component(),
        state.chi.as_slice(),
        floor,
        monitor,
    ))
}

/// Preimages of a spatial point found by Newton iteration from element
/// centres.
#[derive(Clone, Debug, Default)]
pub struct Preimages {
    pub points: Vec<Vec2>,
    /// Seeds whose iteration stalled inside the domain without converging.
    pub failures: usize,
}

const NEWTON_ITERS: usize = 50;
const DEDUP_TOL: f64 = 1e-8;

/// Reusable preimage search over one deformation.
pub struct PreimageFinder<'a> {
    basis: &'a GalerkinBasis,
    state: &'a DeformationState,
    seeds: Vec<Vec2>,
    tol: f64,
    /// Deformed bounding box of each seed's element, slightly inflated.
    boxes: Vec<(Vec2, Vec2)>,
}

impl<'a> PreimageFinder<'a> {
    pub fn new(basis: &'a GalerkinBasis, state: &'a DeformationState) -> Self {
        let dim = basis.dim();
        let mut seeds = Vec::with_capacity(basis.element_count());
        let mut boxes = Vec::with_capacity(basis.element_count());
        let per = 4;
        for e in 0..basis.element_count() {
            let (lo, hi) = basis.element_bounds(e);
            seeds.push((lo + hi) * 0.5);
            let mut bl = Vec2::repeat(f64::INFINITY);
            let mut bh = Vec2::repeat(f64::NEG_INFINITY);
            let ny = if dim == 2 { per } else { 0 };
            for j in 0..=ny {
                for i in 0..=per {
                    let mut x = lo;
                    x[0] += (hi[0] - lo[0]) * i as f64 / per as f64;
                    if dim == 2 {
                        x[1] += (hi[1] - lo[1]) * j as f64 / per as f64;
                    }
                    let y = state.position(basis, &x).unwrap();
                    for a in 0..dim {
                        bl[a] = bl[a].min(y[a]);
                        bh[a] = bh[a].max(y[a]);
                    }
                }
            }
            let pad = 0.5 * (bh - bl).norm() + 1e-9;
            boxes.push((bl.add_scalar(-pad), bh.add_scalar(pad)));
        }
        let scale = basis.axes.iter().map(|a| a.upper - a.lower).fold(0.0, f64::max);
        PreimageFinder {
            basis,
            state,
            seeds,
            tol: 1e-13 * scale.max(1.0),
            boxes,
        }
    }

    fn clamp(&self, x: &mut Vec2) -> bool {
        let mut clamped = false;
        for (a, ax) in self.basis.axes.iter().enumerate() {
            if x[a] < ax.lower {
                x[a] = ax.lower;
                clamped = true;
            } else if x[a] > ax.upper {
                x[a] = ax.upper;
                clamped = true;
            }
        }
        clamped
    }

    pub fn find(&self, y: &Vec2) -> Preimages {
        let dim = self.basis.dim();
        let mut out = Preimages::default();
        for (seed, (bl, bh)) in self.seeds.iter().zip(&self.boxes) {
            if (0..dim).any(|a| y[a] < bl[a] || y[a] > bh[a]) {
                continue;
            }
            let mut x = *seed;
            let mut converged = false;
            let mut clamped = false;
            for _ in 0..NEWTON_ITERS {
                let k = match self.state.at(self.basis, &x) {
                    Ok(k) => k,
                    Err(_) => break,
                };
                let r = k.pos - y;
                if r.norm() <= self.tol {
                    converged = true;
                    break;
                }
                let Some(finv) = inverse(dim, &k.f) else { break };
                x -= finv * r;
                clamped = self.clamp(&mut x);
            }
            if converged {
                if !out.points.iter().any(|p| (p - x).norm() < DEDUP_TOL) {
                    out.points.push(x);
                }
            } else if !clamped {
                out.failures += 1;
            }
        }
        out
    }
}

/// Pushforward density `Σ q(x)/det∇χ(x)` over the preimages of `y`.
pub fn pushforward_density(
    state: &DeformationState,
    basis: &GalerkinBasis,
    q_ref: impl Fn(&Vec2) -> f64,
    y: &Vec2,
) -> Result<(f64, usize)> {
    let finder = PreimageFinder::new(basis, state);
    pushforward_with(&finder, &q_ref, y)
}

fn pushforward_with(finder: &PreimageFinder, q_ref: &impl Fn(&Vec2) -> f64, y: &Vec2) -> Result<(f64, usize)> {
    let pre = finder.find(y);
    let mut s = 0.0;
    for x in &pre.points {
        let k = finder.state.at(finder.basis, x)?;
        if k.det <= 0.0 {
            return Err(Error::Singular { det: k.det });
        }
        s += q_ref(x) / k.det;
    }
    Ok((s, pre.failures))
}

/// Tensor Gauss grid over a spatial box.
#[derive(Clone, Debug)]
pub struct SpatialGrid {
    pub lower: Vec2,
    pub upper: Vec2,
    pub cells: [usize; 2],
    pub points_per_axis: usize,
}

impl SpatialGrid {
    pub fn new(dim: usize, lower: &[f64], upper: &[f64], cells: usize, points_per_axis: usize) -> Self {
        let mut lo = Vec2::zeros();
        let mut hi = Vec2::zeros();
        for a in 0..dim {
            lo[a] = lower[a];
            hi[a] = upper[a];
        }
        SpatialGrid {
            lower: lo,
            upper: hi,
            cells: [cells, if dim == 2 { cells } else { 1 }],
            points_per_axis,
        }
    }

    pub fn rule(&self, dim: usize) -> Vec<(Vec2, f64)> {
        let axis = |a: usize| -> Vec<(f64, f64)> {
            let n = self.cells[a];
            let h = (self.upper[a] - self.lower[a]) / n as f64;
            (0..n)
                .flat_map(|c| {
                    let l = self.lower[a] + c as f64 * h;
                    crate::quadrature::gauss_1d(self.points_per_axis, l, l + h)
                })
                .collect()
        };
        let xs = axis(0);
        if dim == 1 {
            return xs.into_iter().map(|(x, w)| (Vec2::new(x, 0.0), w)).collect();
        }
        let ys = axis(1);
        let mut out = Vec::with_capacity(xs.len() * ys.len());
        for &(y, wy) in &ys {
            for &(x, wx) in &xs {
                out.push((Vec2::new(x, y), wx * wy));
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AreaReport {
    /// Spatial side `∫ Σ_{preimages} f d𝗑`.
    pub lhs: f64,
    /// Referential side `∫ f det∇χ dx`.
    pub rhs: f64,
    pub residual: f64,
    pub failed_points: usize,
}

pub fn area_formula_residual(
    state: &DeformationState,
    basis: &GalerkinBasis,
    f: impl Fn(&Vec2) -> f64,
    grid: &SpatialGrid,
) -> Result<AreaReport> {
    let rhs: f64 = basis
        .points
        .iter()
        .zip(&state.cache)
        .map(|(p, k)| p.weight * f(&p.x) * k.det)
        .sum();
    if let Some(k) = state.cache.iter().find(|k| k.det <= 0.0) {
        return Err(Error::Singular { det: k.det });
    }
    let finder = PreimageFinder::new(basis, state);
    let mut lhs = 0.0;
    let mut failed = 0;
    for (y, w) in grid.rule(basis.dim()) {
        let pre = finder.find(&y);
        failed += pre.failures;
        lhs += w * pre.points.iter().map(&f).sum::<f64>();
    }
    Ok(AreaReport {
        lhs,
        rhs,
        residual: (lhs - rhs).abs(),
        failed_points: failed,
    })
}

/// `∫ 𝗊 d𝗑` of the pushforward density over a spatial grid.
pub fn pushforward_total(
    state: &DeformationState,
    basis: &GalerkinBasis,
    q_ref: impl Fn(&Vec2) -> f64,
    grid: &SpatialGrid,
) -> Result<(f64, usize)> {
    let finder = PreimageFinder::new(basis, state);
    let mut total = 0.0;
    let mut failed = 0;
    for (y, w) in grid.rule(basis.dim()) {
        let (d, nf) = pushforward_with(&finder, &q_ref, &y)?;
        total += w * d;
        failed += nf;
    }
    Ok((total, failed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_basis, BasisFamily, ReferenceDomain};

    fn b1() -> GalerkinBasis {
        build_basis(&ReferenceDomain::unit(1), 2, BasisFamily::CubicHermite).unwrap()
    }

    fn b2() -> GalerkinBasis {
        build_basis(&ReferenceDomain::unit(2), 1, BasisFamily::BognerFoxSchmit).unwrap()
    }

    #[test]
    fn identity_has_unit_gradient() {
        let b = b2();
        let s = DeformationState::identity(&b);
        let (f, g) = s.gradients(&b, &Vec2::new(0.3, 0.6)).unwrap();
        assert!((f - Mat2::identity()).norm() < 1e-12);
        assert!(g[0].norm() + g[1].norm() < 1e-10);
    }

    #[test]
    fn dilation_in_one_dimension() {
        let b = b1();
        let s = DeformationState::from_fns(&b, |x| 2.0 * x, |_| Vec2::zeros()).unwrap();
        let (f, g) = s.gradients(&b, &Vec2::new(0.41, 0.0)).unwrap();
        assert!((f[(0, 0)] - 2.0).abs() < 1e-12);
        assert!(g[0][(0, 0)].abs() < 1e-9);
    }

    #[test]
    fn quadratic_bend_in_two_dimensions() {
        let b = b2();
        let s = DeformationState::from_fns(
            &b,
            |x| Vec2::new(x[0] + 0.5 * x[0] * x[0], x[1]),
            |_| Vec2::zeros(),
        )
        .unwrap();
        for p in b.points.iter().take(20) {
            let (f, g) = s.gradients(&b, &p.x).unwrap();
            assert!((f - Mat2::new(1.0 + p.x[0], 0.0, 0.0, 1.0)).norm() < 1e-9);
            assert!((g[0][(0, 0)] - 1.0).abs() < 1e-7);
            assert!(g[0][(0, 1)].abs() + g[0][(1, 1)].abs() + g[1].norm() < 1e-7);
        }
    }

    #[test]
    fn cof_inv_examples() {
        let c = cof_inv(2, &Mat2::new(2.0, 0.0, 0.0, 3.0));
        assert_eq!(c.det, 6.0);
        assert_eq!(c.cof, Mat2::new(3.0, 0.0, 0.0, 2.0));
        assert!((c.inv_t.unwrap() - Mat2::new(0.5, 0.0, 0.0, 1.0 / 3.0)).norm() < 1e-15);
        let c = cof_inv(2, &Mat2::new(1.0, 2.0, 0.5, 1.0));
        assert_eq!(c.det, 0.0);
        assert!(c.inv_t.is_none());
    }

    #[test]
    fn div_inv_transpose_one_dimensional_closed_form() {
        let b = b1();
        let s = DeformationState::from_fns(&b, |x| Vec2::new(x[0] + 0.5 * x[0] * x[0], 0.0), |_| Vec2::zeros())
            .unwrap();
        for &x in &[0.1, 0.5, 0.9] {
            let d = div_inv_transpose(&s, &b, &Vec2::new(x, 0.0)).unwrap();
            assert!((d[0] + 1.0 / (1.0 + x).powi(2)).abs() < 1e-8);
        }
    }

    #[test]
    fn monitor_flags_compression() {
        let b = b1();
        let m = MonitorSet::new(&b, 4);
        let s = DeformationState::from_fns(&b, |x| 0.4 * x, |_| Vec2::zeros()).unwrap();
        let r = det_monitor(&s, &b, 0.5, &m).unwrap();
        assert!(r.violated && (r.min_det - 0.4).abs() < 1e-10);
        let r = det_monitor(&DeformationState::identity(&b), &b, 0.5, &m).unwrap();
        assert!(!r.violated && (r.min_det - 1.0).abs() < 1e-10);
    }

    #[test]
    fn dilation_pushforward_halves_density() {
        let b = b1();
        let s = DeformationState::from_fns(&b, |x| 2.0 * x, |_| Vec2::zeros()).unwrap();
        let (q, nf) = pushforward_density(&s, &b, |_| 1.0, &Vec2::new(1.3, 0.0)).unwrap();
        assert_eq!(nf, 0);
        assert!((q - 0.5).abs() < 1e-12);
        let (q, _) = pushforward_density(&s, &b, |_| 1.0, &Vec2::new(2.5, 0.0)).unwrap();
        assert_eq!(q, 0.0);
        let grid = SpatialGrid::new(1, &[-1.0], &[3.0], 40, 3);
        let r = area_formula_residual(&s, &b, |_| 1.0, &grid).unwrap();
        assert!((r.lhs - 2.0).abs() < 1e-10 && r.residual < 1e-10, "{r:?}");
    }

    #[test]
    fn affine_map_has_divergence_free_inverse_transpose() {
        let b = b2();
        let s = DeformationState::from_fns(&b, |x| Vec2::new(1.2 * x[0] + 0.3 * x[1], -0.1 * x[0] + 0.9 * x[1]), |_| Vec2::zeros())
            .unwrap();
        for p in b.points.iter().step_by(7) {
            assert!(div_inv_transpose(&s, &b, &p.x).unwrap().norm() < 1e-9);
        }
    }

    #[test]
    fn folding_map_is_out_of_contract() {
        let b = b1();
        let s = DeformationState::from_fns(&b, |x| Vec2::new((std::f64::consts::PI * x[0]).sin(), 0.0), |_| Vec2::zeros())
            .unwrap();
        let grid = SpatialGrid::new(1, &[0.0], &[1.0], 8, 3);
        assert!(matches!(area_formula_residual(&s, &b, |_| 1.0, &grid), Err(Error::Singular { .. })));
    }

    #[test]
    fn identity_pushforward_is_the_referential_density() {
        let b = b2();
        let s = DeformationState::identity(&b);
        let q = |x: &Vec2| 1.0 + x[0] * x[1];
        for y in [Vec2::new(0.3, 0.7), Vec2::new(0.91, 0.05)] {
            let (v, nf) = pushforward_density(&s, &b, q, &y).unwrap();
            assert_eq!(nf, 0);
            assert!((v - q(&y)).abs() < 1e-12);
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig { cases: 16, failure_persistence: None, ..Default::default() })]

        #[test]
        fn div_inv_transpose_matches_finite_differences(
            a in -0.08..0.08f64,
            c in -0.08..0.08f64,
            k in 1.0..3.0f64,
            pick in 0usize..10_000,
        ) {
            let b = b2();
            let s = DeformationState::from_fns(
                &b,
                |x| Vec2::new(x[0] + a * (k * x[1]).sin() + c * x[0] * x[0], x[1] + c * (k * x[0]).cos() * x[1]),
                |_| Vec2::zeros(),
            )
            .unwrap();
            let x = b.points[pick % b.points.len()].x;
            let an = div_inv_transpose(&s, &b, &x).unwrap();
            let h = 1e-5;
            let mut fd = Vec2::zeros();
            for j in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[j] += h;
                xm[j] -= h;
                let ap = inverse_transpose(2, &s.gradients(&b, &xp).unwrap().0).unwrap();
                let am = inverse_transpose(2, &s.gradients(&b, &xm).unwrap().0).unwrap();
                for i in 0..2 {
                    fd[i] += (ap[(i, j)] - am[(i, j)]) / (2.0 * h);
                }
            }
            proptest::prop_assert!((an - fd).norm() <= 1e-7 * (1.0 + an.norm()), "{an:?} vs {fd:?}");
        }
    }
}
