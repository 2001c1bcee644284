//! Stored energy with determinant blow-up, the Biot extension, and the
//! nonlocal second-gradient quadratic form with a capped singular kernel.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::GalerkinBasis;
use crate::error::{invalid, Error, Result};
use crate::kinematics::DeformationState;
use crate::tensor::{cofactor, d_cofactor, det, frob2, zero3, Mat2, Tensor3, Vec2};

/// Fourth-order tangent `t[i][j][(k, l)] = ∂²φ / ∂F_ij ∂F_kl`.
pub type Tangent = [[Mat2; 2]; 2];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiotParams {
    /// Biot modulus `M_B`.
    pub modulus: f64,
    pub beta: f64,
    /// Equilibrium concentration `m_e`.
    pub m_e: f64,
    /// Entropic coefficient of the `m ln m` term.
    pub kappa: f64,
}

/// `φ(F) = μ/2 (|F|² − d) + κ/2 (det F − 1)² + ε_b (det F)^{-p_b}`, plus an
/// optional Biot part in the concentration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredEnergy {
    pub mu: f64,
    pub kappa: f64,
    pub eps_b: f64,
    pub p_b: f64,
    pub biot: Option<BiotParams>,
}

impl StoredEnergy {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("mu", self.mu), ("kappa", self.kappa), ("eps_b", self.eps_b), ("p_b", self.p_b)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(name, "must be positive and finite"));
            }
        }
        if let Some(b) = &self.biot {
            for (name, v) in [("biot.modulus", b.modulus), ("biot.m_e", b.m_e), ("biot.kappa", b.kappa)] {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(invalid(name, "must be positive and finite"));
                }
            }
            if !(b.beta >= 0.0) {
                return Err(invalid("biot.beta", "must be nonnegative"));
            }
        }
        Ok(())
    }

    /// Warning text when the barrier exponent is below `2d/(2γ+2−d)`.
    pub fn barrier_warning(&self, dim: usize, gamma: f64) -> Option<String> {
        let d = dim as f64;
        let threshold = 2.0 * d / (2.0 * gamma + 2.0 - d);
        (self.p_b <= threshold).then(|| {
            format!(
                "barrier exponent p_b = {} does not exceed 2d/(2γ+2−d) = {threshold:.4}; \
                 the determinant lower bound is not guaranteed",
                self.p_b
            )
        })
    }

    /// Additive constant making `φ + c ≥ 0`.
    pub fn normalization(&self, dim: usize) -> f64 {
        0.5 * self.mu * dim as f64 + self.biot.as_ref().map_or(0.0, |b| b.kappa * b.m_e)
    }

    fn biot_for(&self, m: Option<f64>) -> Option<(&BiotParams, f64)> {
        match (&self.biot, m) {
            (Some(b), Some(m)) => Some((b, m)),
            _ => None,
        }
    }

    /// Biot pressure `M_B (m − m_e β (1 − det F))`.
    pub fn pressure(&self, j: f64, m: f64) -> f64 {
        self.biot
            .as_ref()
            .map_or(0.0, |b| b.modulus * (m - b.m_e * b.beta * (1.0 - j)))
    }

    pub fn density(&self, dim: usize, f: &Mat2, m: Option<f64>) -> Result<f64> {
        let j = det(dim, f);
        if !(j > 0.0) {
            return Err(Error::Infeasible(format!("det F = {j} <= 0")));
        }
        let mut v = 0.5 * self.mu * (frob2(f) - dim as f64)
            + 0.5 * self.kappa * (j - 1.0).powi(2)
            + self.eps_b * j.powf(-self.p_b);
        if let Some((b, m)) = self.biot_for(m) {
            if m < 0.0 {
                return Err(Error::Infeasible(format!("concentration {m} < 0")));
            }
            let r = m - b.m_e * b.beta * (1.0 - j);
            v += 0.5 * b.modulus * r * r;
            if m > 0.0 {
                v += b.kappa * m * ((m / b.m_e).ln() - 1.0);
            }
        }
        Ok(v)
    }

    /// First Piola-type stress `∂_F φ`.
    pub fn stress(&self, dim: usize, f: &Mat2, m: Option<f64>) -> Result<Mat2> {
        let j = det(dim, f);
        if !(j > 0.0) {
            return Err(Error::Infeasible(format!("det F = {j} <= 0")));
        }
        let cof = cofactor(dim, f);
        let mut vol = self.kappa * (j - 1.0) - self.p_b * self.eps_b * j.powf(-self.p_b - 1.0);
        if let Some((b, m)) = self.biot_for(m) {
            if m < 0.0 {
                return Err(Error::Infeasible(format!("concentration {m} < 0")));
            }
            vol += b.beta * b.m_e * self.pressure(j, m);
        }
        Ok(self.mu * f + vol * cof)
    }

    pub fn tangent(&self, dim: usize, f: &Mat2, m: Option<f64>) -> Result<Tangent> {
        let j = det(dim, f);
        if !(j > 0.0) {
            return Err(Error::Infeasible(format!("det F = {j} <= 0")));
        }
        let cof = cofactor(dim, f);
        let mut vol = self.kappa * (j - 1.0) - self.p_b * self.eps_b * j.powf(-self.p_b - 1.0);
        let mut vol2 = self.kappa + self.p_b * (self.p_b + 1.0) * self.eps_b * j.powf(-self.p_b - 2.0);
        if let Some((b, m)) = self.biot_for(m) {
            let c = b.beta * b.m_e;
            vol += c * self.pressure(j, m);
            vol2 += b.modulus * c * c;
        }
        let mut t = [[Mat2::zeros(); 2]; 2];
        for i in 0..dim {
            for jj in 0..dim {
                for k in 0..dim {
                    for l in 0..dim {
                        let id = if i == k && jj == l { self.mu } else { 0.0 };
                        t[i][jj][(k, l)] =
                            id + vol2 * cof[(i, jj)] * cof[(k, l)] + vol * d_cofactor(dim, i, jj, k, l);
                    }
                }
            }
        }
        Ok(t)
    }

    /// `∂_m φ = p + κ_c ln(m/m_e)`.
    pub fn dm(&self, dim: usize, f: &Mat2, m: f64) -> Result<f64> {
        let b = self.biot.as_ref().ok_or_else(|| invalid("biot", "model has no Biot part"))?;
        if !(m > 0.0) {
            return Err(Error::Infeasible(format!("concentration {m} must be positive")));
        }
        Ok(self.pressure(det(dim, f), m) + b.kappa * (m / b.m_e).ln())
    }

    /// `∂²_mm φ = M_B + κ_c / m`.
    pub fn dmm(&self, m: f64) -> f64 {
        self.biot.as_ref().map_or(0.0, |b| b.modulus + b.kappa / m)
    }

    /// `∂²_{Fm} φ = M_B m_e β Cof F`.
    pub fn dfm(&self, dim: usize, f: &Mat2) -> Mat2 {
        self.biot
            .as_ref()
            .map_or(Mat2::zeros(), |b| b.modulus * b.m_e * b.beta * cofactor(dim, f))
    }
}

/// Isotropic capped kernel `k₀ min(r^{-(d+2γ)}, δ^{-(d+2γ)})` acting as the
/// identity on matching index pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonlocalKernel {
    pub gamma: f64,
    pub k0: f64,
    pub delta: f64,
}

impl NonlocalKernel {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.gamma > dim as f64 / 2.0 - 1.0) {
            return Err(invalid("kernel.gamma", format!("must exceed d/2 - 1 = {}", dim as f64 / 2.0 - 1.0)));
        }
        if !(self.k0 >= 0.0) || !self.k0.is_finite() {
            return Err(invalid("kernel.k0", "must be nonnegative and finite"));
        }
        if !(self.delta > 0.0) {
            return Err(invalid("kernel.delta", "must be positive"));
        }
        Ok(())
    }

    pub fn exponent(&self, dim: usize) -> f64 {
        dim as f64 + 2.0 * self.gamma
    }

    pub fn value(&self, dim: usize, r: f64) -> f64 {
        self.k0 * r.max(self.delta).powf(-self.exponent(dim))
    }

    /// Largest `ε` for which both kernel inequalities hold at every pair
    /// with distance at least `r_min` and every `|G| <= g_max`.
    ///
    /// The cap makes the lower inequality fail as `r → 0` for unbounded `G`,
    /// so the constant is only meaningful over such a bounded sample range.
    pub fn admissibility_eps(&self, dim: usize, r_min: f64, g_max: f64) -> f64 {
        let a = self.exponent(dim);
        let mut eps = self.k0.min(1.0 / self.k0);
        if r_min < self.delta {
            let g2 = g_max * g_max;
            let aa = g2 * r_min.powf(-a);
            let bb = self.value(dim, r_min) * g2;
            eps = eps.min((bb + (bb * bb + 4.0 * aa).sqrt()) / (2.0 * aa));
        }
        eps
    }

    /// Checks both kernel inequalities for one sample; `g2 = |G|²`.
    pub fn satisfies_bounds(&self, dim: usize, eps: f64, r: f64, g2: f64) -> bool {
        let a = self.exponent(dim);
        let gkg = self.value(dim, r) * g2;
        let lower = (eps * g2 * r.powf(-a) - 1.0 / eps).max(0.0);
        let upper = g2 / (eps * r.powf(a));
        let slack = 1e-12 * (1.0 + gkg.abs());
        lower <= gkg + slack && gkg <= upper + slack
    }
}

/// The nonlocal quadratic form on one basis: `𝓗(χ) = ½ Σ_i χ_iᵀ K χ_i`.
#[derive(Clone, Debug)]
pub struct NonlocalOperator {
    pub kernel: NonlocalKernel,
    /// Kernel values between quadrature points.
    pub kq: DMatrix<f64>,
    /// `s_q = Σ_r w_r k(x_q, x_r)`.
    pub row_sums: Vec<f64>,
    pub matrix: DMatrix<f64>,
}

fn hessian_entries(dim: usize) -> Vec<((usize, usize), f64)> {
    if dim == 1 {
        vec![((0, 0), 1.0)]
    } else {
        // the mixed entry appears twice in |G|²
        vec![((0, 0), 1.0), ((0, 1), 2.0), ((1, 1), 1.0)]
    }
}

impl NonlocalOperator {
    pub fn assemble(kernel: &NonlocalKernel, basis: &GalerkinBasis) -> Self {
        let dim = basis.dim();
        let q = basis.points.len();
        let n = basis.dofs_per_component();
        let w: Vec<f64> = basis.points.iter().map(|p| p.weight).collect();
        let kq = DMatrix::from_fn(q, q, |a, b| {
            kernel.value(dim, (basis.points[a].x - basis.points[b].x).norm())
        });
        let row_sums: Vec<f64> = (0..q).map(|a| (0..q).map(|b| w[b] * kq[(a, b)]).sum()).collect();
        let lap = DMatrix::from_fn(q, q, |a, b| {
            let d = if a == b { w[a] * row_sums[a] } else { 0.0 };
            d - w[a] * w[b] * kq[(a, b)]
        });
        let mut matrix = DMatrix::zeros(n, n);
        for ((r, c), mult) in hessian_entries(dim) {
            let mut amat = DMatrix::zeros(q, n);
            for (qi, p) in basis.points.iter().enumerate() {
                for (k, &idx) in p.shapes.indices.iter().enumerate() {
                    amat[(qi, idx)] = p.shapes.hessians[k][(r, c)];
                }
            }
            let la = &lap * &amat;
            matrix += mult * amat.transpose() * la;
        }
        let matrix = 0.5 * (&matrix + matrix.transpose());
        NonlocalOperator {
            kernel: kernel.clone(),
            kq,
            row_sums,
            matrix,
        }
    }

    pub fn energy(&self, dim: usize, chi: &DVector<f64>) -> f64 {
        let n = self.matrix.nrows();
        (0..dim)
            .map(|c| {
                let x = chi.rows(c * n, n);
                0.5 * x.dot(&(&self.matrix * x))
            })
            .sum()
    }

    /// Gradient of the energy in the coefficients.
    pub fn force(&self, dim: usize, chi: &DVector<f64>) -> DVector<f64> {
        let n = self.matrix.nrows();
        let mut out = DVector::zeros(dim * n);
        for c in 0..dim {
            let y = &self.matrix * chi.rows(c * n, n);
            out.rows_mut(c * n, n).copy_from(&y);
        }
        out
    }

    /// Hyperstress `Σ_i e_i ⊗ ∫ k(x_q, x̃)(∇²χ_i(x_q) − ∇²χ_i(x̃)) dx̃` at every
    /// quadrature point.
    pub fn hyperstress_at_points(&self, basis: &GalerkinBasis, state: &DeformationState) -> Vec<Tensor3> {
        let q = basis.points.len();
        let dim = basis.dim();
        (0..q)
            .map(|a| {
                let mut h = zero3();
                for i in 0..dim {
                    let mut acc = state.cache[a].g[i] * self.row_sums[a];
                    for b in 0..q {
                        acc -= state.cache[b].g[i] * (basis.points[b].weight * self.kq[(a, b)]);
                    }
                    h[i] = acc;
                }
                h
            })
            .collect()
    }
}

/// Double-integral form `¼ Σ_i ∬ k |∇²χ_i(x) − ∇²χ_i(x̃)|²`.
pub fn nonlocal_energy(kernel: &NonlocalKernel, state: &DeformationState, basis: &GalerkinBasis) -> f64 {
    let dim = basis.dim();
    let pts = &basis.points;
    let mut total = 0.0;
    for a in 0..pts.len() {
        for b in a + 1..pts.len() {
            let k = kernel.value(dim, (pts[a].x - pts[b].x).norm());
            let mut s = 0.0;
            for i in 0..dim {
                s += frob2(&(state.cache[a].g[i] - state.cache[b].g[i]));
            }
            // each unordered pair appears twice in the double integral
            total += 0.5 * pts[a].weight * pts[b].weight * k * s;
        }
    }
    total
}

/// Hyperstress at an arbitrary reference point.
pub fn hyperstress(
    kernel: &NonlocalKernel,
    state: &DeformationState,
    basis: &GalerkinBasis,
    x: &Vec2,
) -> Result<Tensor3> {
    let dim = basis.dim();
    let gx = state.gradients(basis, x)?.1;
    let mut h = zero3();
    for (p, k) in basis.points.iter().zip(&state.cache) {
        let kv = kernel.value(dim, (x - p.x).norm()) * p.weight;
        for i in 0..dim {
            h[i] += (gx[i] - k.g[i]) * kv;
        }
    }
    Ok(h)
}

/// `½ Σ_i ∫ 𝕳_i : ∇²χ_i`, the hyperstress form of the nonlocal energy.
pub fn nonlocal_energy_hyperstress(op: &NonlocalOperator, state: &DeformationState, basis: &GalerkinBasis) -> f64 {
    let h = op.hyperstress_at_points(basis, state);
    basis
        .points
        .iter()
        .zip(&h)
        .zip(&state.cache)
        .map(|((p, h), k)| 0.5 * p.weight * crate::tensor::triple_dot(h, &k.g))
        .sum()
}

/// `∫ 𝕳 ⋮ ∇²ζ` for a vector test field with coefficients `zeta`.
pub fn hyperstress_pairing(
    op: &NonlocalOperator,
    state: &DeformationState,
    basis: &GalerkinBasis,
    zeta: &DVector<f64>,
) -> f64 {
    let dim = basis.dim();
    let n = basis.dofs_per_component();
    let h = op.hyperstress_at_points(basis, state);
    basis
        .points
        .iter()
        .zip(&h)
        .map(|(p, h)| {
            let mut s = 0.0;
            for i in 0..dim {
                let hz = p.shapes.hessian(&zeta.as_slice()[i * n..(i + 1) * n]);
                s += crate::tensor::ddot(&h[i], &hz);
            }
            p.weight * s
        })
        .sum()
}

/// Mechanical energy `∫ φ(∇χ, m) + 𝓗(χ)`. `m_q` holds concentrations at
/// quadrature points when a Biot part is active.
pub fn mech_energy(
    model: &StoredEnergy,
    op: &NonlocalOperator,
    state: &DeformationState,
    basis: &GalerkinBasis,
    m_q: Option<&[f64]>,
) -> Result<f64> {
    Ok(stored_energy_total(model, state, basis, m_q)? + op.energy(basis.dim(), &state.chi))
}

pub fn stored_energy_total(
    model: &StoredEnergy,
    state: &DeformationState,
    basis: &GalerkinBasis,
    m_q: Option<&[f64]>,
) -> Result<f64> {
    let dim = basis.dim();
    let mut e = 0.0;
    for (q, (p, k)) in basis.points.iter().zip(&state.cache).enumerate() {
        e += p.weight * model.density(dim, &k.f, m_q.map(|m| m[q]))?;
    }
    Ok(e)
}

/// Generalized force `∫ φ′(∇χ):∇ζ_a + 𝕳 ⋮ ∇²ζ_a` for every vector basis
/// function.
pub fn mech_force(
    model: &StoredEnergy,
    op: &NonlocalOperator,
    state: &DeformationState,
    basis: &GalerkinBasis,
    m_q: Option<&[f64]>,
) -> Result<DVector<f64>> {
    let dim = basis.dim();
    let n = basis.dofs_per_component();
    let mut out = op.force(dim, &state.chi);
    for (q, (p, k)) in basis.points.iter().zip(&state.cache).enumerate() {
        let s = model.stress(dim, &k.f, m_q.map(|m| m[q]))? * p.weight;
        for (ia, &a) in p.shapes.indices.iter().enumerate() {
            let g = p.shapes.grads[ia];
            for c in 0..dim {
                let mut v = 0.0;
                for j in 0..dim {
                    v += s[(c, j)] * g[j];
                }
                out[c * n + a] += v;
            }
        }
    }
    Ok(out)
}

/// Coefficient Hessian of the mechanical energy.
pub fn mech_stiffness(
    model: &StoredEnergy,
    op: &NonlocalOperator,
    state: &DeformationState,
    basis: &GalerkinBasis,
    m_q: Option<&[f64]>,
) -> Result<DMatrix<f64>> {
    let dim = basis.dim();
    let n = basis.dofs_per_component();
    let mut out = DMatrix::zeros(dim * n, dim * n);
    for c in 0..dim {
        out.view_mut((c * n, c * n), (n, n)).copy_from(&op.matrix);
    }
    for (q, (p, k)) in basis.points.iter().zip(&state.cache).enumerate() {
        let t = model.tangent(dim, &k.f, m_q.map(|m| m[q]))?;
        let sh = &p.shapes;
        for (ia, &a) in sh.indices.iter().enumerate() {
            let ga = sh.grads[ia];
            for (ib, &b) in sh.indices.iter().enumerate() {
                let gb = sh.grads[ib];
                for c in 0..dim {
                    for e in 0..dim {
                        let mut v = 0.0;
                        for j in 0..dim {
                            for l in 0..dim {
                                v += t[c][j][(e, l)] * ga[j] * gb[l];
                            }
                        }
                        out[(c * n + a, e * n + b)] += p.weight * v;
                    }
                }
            }
        }
    }
    Ok(out)
}
