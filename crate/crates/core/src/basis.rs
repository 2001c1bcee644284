//! Nested C¹-conforming Galerkin spaces on rectangular reference domains.
//!
//! The one-dimensional space is the cubic Hermite spline space on a uniform
//! mesh, with a value and a slope degree of freedom per node. In two
//! dimensions the Bogner–Fox–Schmit rectangle is used, which is the tensor
//! product of two Hermite axes and carries `(φ, ∂ₓφ, ∂ᵧφ, ∂ₓ∂ᵧφ)` per node.
//!
//! Level `k` has `2^(k+1)` elements per axis; dyadic refinement makes the
//! spaces nested.

use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quadrature::{gauss_1d, points_for_order, QuadratureRule};
use crate::tensor::{Mat2, Vec2};

/// Relative tolerance for treating a point as inside the closed domain.
const INSIDE_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisFamily {
    CubicHermite,
    BognerFoxSchmit,
}

impl BasisFamily {
    pub fn name(&self) -> &'static str {
        match self {
            BasisFamily::CubicHermite => "hermite",
            BasisFamily::BognerFoxSchmit => "bfs",
        }
    }

    /// The family used for a given dimension.
    pub fn for_dim(dim: usize) -> BasisFamily {
        if dim == 1 {
            BasisFamily::CubicHermite
        } else {
            BasisFamily::BognerFoxSchmit
        }
    }

    fn supports(&self, dim: usize) -> bool {
        matches!(
            (self, dim),
            (BasisFamily::CubicHermite, 1) | (BasisFamily::BognerFoxSchmit, 2)
        )
    }
}

impl FromStr for BasisFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hermite" | "cubic_hermite" => Ok(BasisFamily::CubicHermite),
            "bfs" | "bogner_fox_schmit" => Ok(BasisFamily::BognerFoxSchmit),
            other => Err(Error::UnsupportedFamily {
                family: other.to_string(),
                dim: 0,
            }),
        }
    }
}

/// A face of the box: the side `upper` (or lower) of coordinate `axis`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Face {
    pub axis: usize,
    pub upper: bool,
}

impl Face {
    pub fn tag(&self) -> &'static str {
        match (self.axis, self.upper) {
            (0, false) => "left",
            (0, true) => "right",
            (1, false) => "bottom",
            _ => "top",
        }
    }

    pub fn normal(&self) -> Vec2 {
        let mut n = Vec2::zeros();
        n[self.axis] = if self.upper { 1.0 } else { -1.0 };
        n
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceDomain {
    pub dim: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ReferenceDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let dim = lower.len();
        if !(1..=2).contains(&dim) || upper.len() != dim {
            return Err(Error::Dimension(format!(
                "domain bounds must have 1 or 2 matching entries, got {} and {}",
                lower.len(),
                upper.len()
            )));
        }
        for axis in 0..dim {
            if !(lower[axis] < upper[axis]) || !lower[axis].is_finite() || !upper[axis].is_finite() {
                return Err(Error::DegenerateDomain {
                    axis,
                    lower: lower[axis],
                    upper: upper[axis],
                });
            }
        }
        Ok(ReferenceDomain { dim, lower, upper })
    }

    pub fn unit(dim: usize) -> Self {
        ReferenceDomain::new(vec![0.0; dim], vec![1.0; dim]).unwrap()
    }

    /// Box centred at `center` with half-width `half`.
    pub fn centered(center: &[f64], half: f64) -> Result<Self> {
        ReferenceDomain::new(
            center.iter().map(|c| c - half).collect(),
            center.iter().map(|c| c + half).collect(),
        )
    }

    pub fn faces(&self) -> Vec<Face> {
        (0..self.dim)
            .flat_map(|axis| [Face { axis, upper: false }, Face { axis, upper: true }])
            .collect()
    }

    pub fn boundary_tags(&self) -> Vec<&'static str> {
        self.faces().iter().map(Face::tag).collect()
    }

    pub fn face(&self, tag: &str) -> Option<Face> {
        self.faces().into_iter().find(|f| f.tag() == tag)
    }

    pub fn measure(&self) -> f64 {
        (0..self.dim).map(|a| self.upper[a] - self.lower[a]).product()
    }

    pub fn boundary_measure(&self) -> f64 {
        match self.dim {
            1 => 2.0,
            _ => 2.0 * (self.upper[0] - self.lower[0] + self.upper[1] - self.lower[1]),
        }
    }

    pub fn contains(&self, x: &Vec2) -> bool {
        (0..self.dim).all(|a| {
            let tol = INSIDE_TOL * (self.upper[a] - self.lower[a]);
            x[a] >= self.lower[a] - tol && x[a] <= self.upper[a] + tol
        })
    }
}

/// Cubic Hermite spline space on a uniform mesh of one interval.
#[derive(Clone, Debug)]
pub struct HermiteAxis {
    pub lower: f64,
    pub upper: f64,
    pub elements: usize,
}

impl HermiteAxis {
    pub fn h(&self) -> f64 {
        (self.upper - self.lower) / self.elements as f64
    }

    pub fn ndofs(&self) -> usize {
        2 * (self.elements + 1)
    }

    pub fn node(&self, i: usize) -> f64 {
        self.lower + i as f64 * self.h()
    }

    /// Element index and local coordinate in `[0, 1]`.
    pub fn locate(&self, x: f64) -> Option<(usize, f64)> {
        let len = self.upper - self.lower;
        if x < self.lower - INSIDE_TOL * len || x > self.upper + INSIDE_TOL * len {
            return None;
        }
        let t = ((x - self.lower) / self.h()).clamp(0.0, self.elements as f64);
        let el = (t.floor() as usize).min(self.elements - 1);
        Some((el, t - el as f64))
    }

    /// Values, first and second derivatives of the four local shapes
    /// `(value-left, slope-left, value-right, slope-right)`.
    pub fn local(&self, s: f64) -> ([f64; 4], [f64; 4], [f64; 4]) {
        let h = self.h();
        let s2 = s * s;
        let s3 = s2 * s;
        let v = [
            1.0 - 3.0 * s2 + 2.0 * s3,
            h * (s - 2.0 * s2 + s3),
            3.0 * s2 - 2.0 * s3,
            h * (s3 - s2),
        ];
        let d1 = [
            (6.0 * s2 - 6.0 * s) / h,
            1.0 - 4.0 * s + 3.0 * s2,
            (6.0 * s - 6.0 * s2) / h,
            3.0 * s2 - 2.0 * s,
        ];
        let d2 = [
            (12.0 * s - 6.0) / (h * h),
            (6.0 * s - 4.0) / h,
            (6.0 - 12.0 * s) / (h * h),
            (6.0 * s - 2.0) / h,
        ];
        (v, d1, d2)
    }
}

/// Nonzero shape functions at a point, with up to second derivatives.
#[derive(Clone, Debug, Default)]
pub struct LocalShapes {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
    pub grads: Vec<Vec2>,
    pub hessians: Vec<Mat2>,
}

impl LocalShapes {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn value(&self, coeffs: &[f64]) -> f64 {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&i, v)| coeffs[i] * v)
            .sum()
    }

    pub fn gradient(&self, coeffs: &[f64]) -> Vec2 {
        self.indices
            .iter()
            .zip(&self.grads)
            .fold(Vec2::zeros(), |acc, (&i, g)| acc + g * coeffs[i])
    }

    pub fn hessian(&self, coeffs: &[f64]) -> Mat2 {
        self.indices
            .iter()
            .zip(&self.hessians)
            .fold(Mat2::zeros(), |acc, (&i, h)| acc + h * coeffs[i])
    }
}

#[derive(Clone, Debug)]
pub struct QuadPoint {
    pub x: Vec2,
    pub weight: f64,
    pub element: usize,
    pub shapes: LocalShapes,
}

#[derive(Clone, Debug)]
pub struct BoundaryPoint {
    pub x: Vec2,
    pub weight: f64,
    pub normal: Vec2,
    pub face: Face,
    pub shapes: LocalShapes,
}

/// Hermite data `(φ, ∂ₓφ, ∂ᵧφ, ∂ₓ∂ᵧφ)` of a scalar function at a node.
pub type HermiteData = [f64; 4];

#[derive(Clone, Debug)]
pub struct GalerkinBasis {
    pub level: usize,
    pub family: BasisFamily,
    pub domain: ReferenceDomain,
    pub axes: Vec<HermiteAxis>,
    pub quad: QuadratureRule,
    pub points: Vec<QuadPoint>,
    pub boundary_points: Vec<BoundaryPoint>,
    pub nodes: Vec<Vec2>,
}

/// Default per-element exactness: twice the cubic degree plus one.
pub const DEFAULT_QUAD_ORDER: usize = 7;

/// Nested basis of the given refinement level (`2^(level+1)` elements per axis).
pub fn build_basis(domain: &ReferenceDomain, level: usize, family: BasisFamily) -> Result<GalerkinBasis> {
    if level > 12 {
        return Err(invalid("level", "refinement level above 12 is not supported"));
    }
    let n = 1usize << (level + 1);
    let mut b = GalerkinBasis::uniform(domain, family, &vec![n; domain.dim], DEFAULT_QUAD_ORDER)?;
    b.level = level;
    Ok(b)
}

impl GalerkinBasis {
    /// Uniform mesh with `elements[a]` elements along axis `a`.
    pub fn uniform(
        domain: &ReferenceDomain,
        family: BasisFamily,
        elements: &[usize],
        quad_order: usize,
    ) -> Result<GalerkinBasis> {
        if !family.supports(domain.dim) {
            return Err(Error::UnsupportedFamily {
                family: family.name().to_string(),
                dim: domain.dim,
            });
        }
        if elements.len() != domain.dim || elements.iter().any(|&n| n == 0) {
            return Err(invalid("elements", "need a positive element count per axis"));
        }
        if quad_order < 6 {
            return Err(invalid("quad_order", "cubic shapes need exactness order >= 6"));
        }
        let axes: Vec<HermiteAxis> = (0..domain.dim)
            .map(|a| HermiteAxis {
                lower: domain.lower[a],
                upper: domain.upper[a],
                elements: elements[a],
            })
            .collect();
        let mut basis = GalerkinBasis {
            level: 0,
            family,
            domain: domain.clone(),
            axes,
            quad: QuadratureRule {
                points: vec![],
                weights: vec![],
                order: 0,
            },
            points: vec![],
            boundary_points: vec![],
            nodes: vec![],
        };
        basis.build_nodes();
        basis.build_quadrature(quad_order);
        basis.build_boundary(quad_order);
        Ok(basis)
    }

    pub fn dim(&self) -> usize {
        self.domain.dim
    }

    pub fn dofs_per_component(&self) -> usize {
        self.axes.iter().map(HermiteAxis::ndofs).product()
    }

    pub fn element_count(&self) -> usize {
        self.axes.iter().map(|a| a.elements).product()
    }

    pub fn element_diameter(&self) -> f64 {
        self.axes.iter().map(|a| a.h() * a.h()).sum::<f64>().sqrt()
    }

    pub fn min_spacing(&self) -> f64 {
        self.axes.iter().map(HermiteAxis::h).fold(f64::INFINITY, f64::min)
    }

    fn build_nodes(&mut self) {
        self.nodes.clear();
        let nx = self.axes[0].elements + 1;
        let ny = if self.dim() == 2 { self.axes[1].elements + 1 } else { 1 };
        for j in 0..ny {
            for i in 0..nx {
                let y = if self.dim() == 2 { self.axes[1].node(j) } else { 0.0 };
                self.nodes.push(Vec2::new(self.axes[0].node(i), y));
            }
        }
    }

    fn build_quadrature(&mut self, order: usize) {
        let npts = points_for_order(order);
        let mut points = Vec::new();
        let per_axis: Vec<Vec<Vec<(f64, f64)>>> = self
            .axes
            .iter()
            .map(|ax| {
                (0..ax.elements)
                    .map(|e| gauss_1d(npts, ax.node(e), ax.node(e + 1)))
                    .collect()
            })
            .collect();
        if self.dim() == 1 {
            for (e, rule) in per_axis[0].iter().enumerate() {
                for &(x, w) in rule {
                    let p = Vec2::new(x, 0.0);
                    points.push(QuadPoint {
                        x: p,
                        weight: w,
                        element: e,
                        shapes: self.shapes_in(&[e], &p),
                    });
                }
            }
        } else {
            let nx = self.axes[0].elements;
            for ey in 0..self.axes[1].elements {
                for ex in 0..nx {
                    for &(y, wy) in &per_axis[1][ey] {
                        for &(x, wx) in &per_axis[0][ex] {
                            let p = Vec2::new(x, y);
                            points.push(QuadPoint {
                                x: p,
                                weight: wx * wy,
                                element: ex + nx * ey,
                                shapes: self.shapes_in(&[ex, ey], &p),
                            });
                        }
                    }
                }
            }
        }
        self.quad = QuadratureRule {
            points: points.iter().map(|p| p.x).collect(),
            weights: points.iter().map(|p| p.weight).collect(),
            order: 2 * npts - 1,
        };
        self.points = points;
    }

    fn build_boundary(&mut self, order: usize) {
        let npts = points_for_order(order);
        let mut out = Vec::new();
        for face in self.domain.faces() {
            let coord = if face.upper {
                self.domain.upper[face.axis]
            } else {
                self.domain.lower[face.axis]
            };
            if self.dim() == 1 {
                let p = Vec2::new(coord, 0.0);
                out.push(BoundaryPoint {
                    x: p,
                    weight: 1.0,
                    normal: face.normal(),
                    face,
                    shapes: self.eval_shapes(&p, 2).unwrap(),
                });
                continue;
            }
            let other = 1 - face.axis;
            let ax = &self.axes[other];
            for e in 0..ax.elements {
                for (t, w) in gauss_1d(npts, ax.node(e), ax.node(e + 1)) {
                    let mut p = Vec2::zeros();
                    p[face.axis] = coord;
                    p[other] = t;
                    out.push(BoundaryPoint {
                        x: p,
                        weight: w,
                        normal: face.normal(),
                        face,
                        shapes: self.eval_shapes(&p, 2).unwrap(),
                    });
                }
            }
        }
        self.boundary_points = out;
    }

    /// Index of the element containing `x` and local coordinates.
    fn locate(&self, x: &Vec2) -> Option<(Vec<usize>, Vec<f64>)> {
        let mut els = Vec::with_capacity(2);
        let mut ss = Vec::with_capacity(2);
        for (a, ax) in self.axes.iter().enumerate() {
            let (e, s) = ax.locate(x[a])?;
            els.push(e);
            ss.push(s);
        }
        Some((els, ss))
    }

    /// Element id containing `x`, if inside.
    pub fn element_of(&self, x: &Vec2) -> Option<usize> {
        let (els, _) = self.locate(x)?;
        Some(if self.dim() == 1 { els[0] } else { els[0] + self.axes[0].elements * els[1] })
    }

    /// Lower and upper corners of an element.
    pub fn element_bounds(&self, element: usize) -> (Vec2, Vec2) {
        let nx = self.axes[0].elements;
        let (ex, ey) = (element % nx, element / nx);
        let mut lo = Vec2::new(self.axes[0].node(ex), 0.0);
        let mut hi = Vec2::new(self.axes[0].node(ex + 1), 0.0);
        if self.dim() == 2 {
            lo[1] = self.axes[1].node(ey);
            hi[1] = self.axes[1].node(ey + 1);
        }
        (lo, hi)
    }

    fn shapes_in(&self, els: &[usize], x: &Vec2) -> LocalShapes {
        let ax0 = &self.axes[0];
        let s0 = ((x[0] - ax0.node(els[0])) / ax0.h()).clamp(0.0, 1.0);
        let (v0, d0, dd0) = ax0.local(s0);
        if self.dim() == 1 {
            let base = 2 * els[0];
            return LocalShapes {
                indices: (0..4).map(|k| base + k).collect(),
                values: v0.to_vec(),
                grads: d0.iter().map(|&d| Vec2::new(d, 0.0)).collect(),
                hessians: dd0.iter().map(|&d| Mat2::new(d, 0.0, 0.0, 0.0)).collect(),
            };
        }
        let ax1 = &self.axes[1];
        let s1 = ((x[1] - ax1.node(els[1])) / ax1.h()).clamp(0.0, 1.0);
        let (v1, d1, dd1) = ax1.local(s1);
        let nxd = ax0.ndofs();
        let mut out = LocalShapes {
            indices: Vec::with_capacity(16),
            values: Vec::with_capacity(16),
            grads: Vec::with_capacity(16),
            hessians: Vec::with_capacity(16),
        };
        for ky in 0..4 {
            for kx in 0..4 {
                out.indices.push((2 * els[0] + kx) + nxd * (2 * els[1] + ky));
                out.values.push(v0[kx] * v1[ky]);
                out.grads.push(Vec2::new(d0[kx] * v1[ky], v0[kx] * d1[ky]));
                let mixed = d0[kx] * d1[ky];
                out.hessians
                    .push(Mat2::new(dd0[kx] * v1[ky], mixed, mixed, v0[kx] * dd1[ky]));
            }
        }
        out
    }

    /// Nonzero shapes at `x` with derivatives up to `deriv` (0, 1 or 2).
    ///
    /// Lower-order entries are always filled; entries above `deriv` are left
    /// empty.
    pub fn eval_shapes(&self, x: &Vec2, deriv: usize) -> Result<LocalShapes> {
        if deriv > 2 {
            return Err(invalid("deriv", "only derivatives up to order 2 are available"));
        }
        let (els, _) = self.locate(x).ok_or_else(|| Error::OutsideDomain {
            point: x.iter().take(self.dim()).copied().collect(),
        })?;
        let mut s = self.shapes_in(&els, x);
        if deriv < 2 {
            s.hessians.clear();
        }
        if deriv < 1 {
            s.grads.clear();
        }
        Ok(s)
    }

    /// Value, gradient and Hessian of a scalar field with coefficients `coeffs`.
    pub fn evaluate(&self, coeffs: &[f64], x: &Vec2) -> Result<(f64, Vec2, Mat2)> {
        let s = self.eval_shapes(x, 2)?;
        Ok((s.value(coeffs), s.gradient(coeffs), s.hessian(coeffs)))
    }

    /// `(node index, derivative type)` of a global dof. The derivative type
    /// is `(a, b)` with `a`/`b` the derivative orders along x/y.
    pub fn dof_kind(&self, dof: usize) -> (usize, [usize; 2]) {
        let nxd = self.axes[0].ndofs();
        let (gx, gy) = (dof % nxd, dof / nxd);
        let nodes_x = self.axes[0].elements + 1;
        let node = gx / 2 + nodes_x * (gy / 2);
        (node, [gx % 2, gy % 2])
    }

    pub fn is_value_dof(&self, dof: usize) -> bool {
        self.dof_kind(dof).1 == [0, 0]
    }

    /// Hermite interpolant from nodal data `(φ, ∂ₓφ, ∂ᵧφ, ∂ₓ∂ᵧφ)`.
    pub fn interpolate(&self, mut f: impl FnMut(&Vec2) -> HermiteData) -> DVector<f64> {
        let n = self.dofs_per_component();
        let data: Vec<HermiteData> = self.nodes.iter().map(&mut f).collect();
        DVector::from_fn(n, |g, _| {
            let (node, kind) = self.dof_kind(g);
            let d = &data[node];
            match kind {
                [0, 0] => d[0],
                [1, 0] => d[1],
                [0, 1] => d[2],
                _ => d[3],
            }
        })
    }

    /// Hermite interpolant of a plain function; derivatives by Richardson
    /// extrapolated central differences.
    pub fn interpolate_fn(&self, f: impl Fn(&Vec2) -> f64) -> DVector<f64> {
        let dim = self.dim();
        let scale = self
            .axes
            .iter()
            .map(|a| a.upper - a.lower)
            .fold(0.0, f64::max);
        self.interpolate(|x| hermite_data_fd(&f, x, dim, 1e-3 * scale))
    }

    /// Exact representation of a coarser nested function in this space.
    pub fn prolongate(&self, coarse: &GalerkinBasis, coeffs: &[f64]) -> Result<DVector<f64>> {
        let mut err = None;
        let out = self.interpolate(|x| match coarse.evaluate(coeffs, x) {
            Ok((v, g, h)) => [v, g[0], g[1], h[(0, 1)]],
            Err(e) => {
                err = Some(e);
                [0.0; 4]
            }
        });
        match err {
            Some(e) => Err(e),
            None => Ok(out),
        }
    }

    /// Scalar matrix `∫ w ψ_a ψ_b` with the weight evaluated per quadrature point.
    pub fn weighted_mass(&self, weight: impl Fn(&QuadPoint) -> f64) -> DMatrix<f64> {
        let n = self.dofs_per_component();
        let mut m = DMatrix::zeros(n, n);
        for p in &self.points {
            let w = p.weight * weight(p);
            let s = &p.shapes;
            for (ia, &a) in s.indices.iter().enumerate() {
                for (ib, &b) in s.indices.iter().enumerate() {
                    m[(a, b)] += w * s.values[ia] * s.values[ib];
                }
            }
        }
        m
    }

    pub fn scalar_mass(&self) -> DMatrix<f64> {
        self.weighted_mass(|_| 1.0)
    }

    /// L² projection of `f` onto the scalar space.
    pub fn project_l2(&self, f: impl Fn(&Vec2) -> f64) -> Result<DVector<f64>> {
        let m = self.scalar_mass();
        let n = self.dofs_per_component();
        let mut b = DVector::zeros(n);
        for p in &self.points {
            let fv = f(&p.x) * p.weight;
            for (ia, &a) in p.shapes.indices.iter().enumerate() {
                b[a] += fv * p.shapes.values[ia];
            }
        }
        let chol = m.cholesky().ok_or(Error::NotPositiveDefinite)?;
        Ok(chol.solve(&b))
    }

    /// Dofs whose shapes do not vanish on the given faces in the trace
    /// sense (value and tangential derivatives). Fixing them to zero imposes
    /// a homogeneous Dirichlet condition.
    pub fn trace_dofs(&self, faces: &[Face]) -> Vec<usize> {
        let nodes_x = self.axes[0].elements + 1;
        (0..self.dofs_per_component())
            .filter(|&g| {
                let (node, kind) = self.dof_kind(g);
                let idx = [node % nodes_x, node / nodes_x];
                faces.iter().any(|f| {
                    let last = self.axes[f.axis].elements;
                    let on = if f.upper { idx[f.axis] == last } else { idx[f.axis] == 0 };
                    on && kind[f.axis] == 0
                })
            })
            .collect()
    }

    /// Quadrature points plus a uniform grid `oversample` times finer than
    /// the mesh (boundary included).
    pub fn monitor_points(&self, oversample: usize) -> Vec<Vec2> {
        let mut pts: Vec<Vec2> = self.quad.points.clone();
        let counts: Vec<usize> = self.axes.iter().map(|a| a.elements * oversample + 1).collect();
        let coord = |a: usize, i: usize| {
            let ax = &self.axes[a];
            ax.lower + (ax.upper - ax.lower) * i as f64 / (counts[a] - 1) as f64
        };
        if self.dim() == 1 {
            pts.extend((0..counts[0]).map(|i| Vec2::new(coord(0, i), 0.0)));
        } else {
            for j in 0..counts[1] {
                for i in 0..counts[0] {
                    pts.push(Vec2::new(coord(0, i), coord(1, j)));
                }
            }
        }
        pts
    }
}

/// Hermite nodal data of `f` at `x` by fourth-order central differences.
pub fn hermite_data_fd(f: &impl Fn(&Vec2) -> f64, x: &Vec2, dim: usize, h: f64) -> HermiteData {
    let v = f(x);
    let d = |e: Vec2| {
        let f1 = f(&(x + e)) - f(&(x - e));
        let f2 = f(&(x + 2.0 * e)) - f(&(x - 2.0 * e));
        (8.0 * f1 - f2) / (12.0 * h)
    };
    let ex = Vec2::new(h, 0.0);
    let dx = d(ex);
    if dim == 1 {
        return [v, dx, 0.0, 0.0];
    }
    let ey = Vec2::new(0.0, h);
    let dy = d(ey);
    // mixed derivative: central difference in y of the x-derivative
    let dx_at = |y: Vec2| {
        let f1 = f(&(y + ex)) - f(&(y - ex));
        let f2 = f(&(y + 2.0 * ex)) - f(&(y - 2.0 * ex));
        (8.0 * f1 - f2) / (12.0 * h)
    };
    let dxy = (8.0 * (dx_at(x + ey) - dx_at(x - ey)) - (dx_at(x + 2.0 * ey) - dx_at(x - 2.0 * ey)))
        / (12.0 * h);
    [v, dx, dy, dxy]
}
