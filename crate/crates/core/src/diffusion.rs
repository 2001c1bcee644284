//! Biot-type diffusion of a charged diffusant in the reference configuration.
//!
//! Concentration `m` and electrochemical potential `μ` share the scalar
//! Galerkin space of the deformation. One implicit Euler step solves
//!
//! ```text
//! ∫ μ ψ = ∫ (∂_m φ(∇χ, m) + φ_el∘χ) ψ
//! ∫ (m − m_n)/dt ψ + ∫ m M₀(∇χ) ∇μ·∇ψ + ∫_Γ α (μ − μ_♭) ψ = 0
//! ```
//!
//! for every shape `ψ`, with the diffusant acting as the charge of the
//! electrostatic problem.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::GalerkinBasis;
use crate::electrostatics::{Electrostatics, PotentialField};
use crate::energy::StoredEnergy;
use crate::error::{invalid, Error, Result};
use crate::kinematics::DeformationState;
use crate::tensor::{cofactor, det, Mat2, Vec2};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionParams {
    /// Spatial mobility `𝗠₀` (row-major, symmetric positive definite).
    pub mobility: [[f64; 2]; 2],
    /// Boundary permeability.
    pub alpha: f64,
    /// Positivity floor relative to `m_e`.
    pub floor_rel: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for DiffusionParams {
    fn default() -> Self {
        DiffusionParams {
            mobility: [[1.0, 0.0], [0.0, 1.0]],
            alpha: 0.0,
            floor_rel: 1e-8,
            tol: 1e-11,
            max_iter: 40,
        }
    }
}

impl DiffusionParams {
    pub fn mobility_matrix(&self, dim: usize) -> Mat2 {
        let m = &self.mobility;
        if dim == 1 {
            Mat2::new(m[0][0], 0.0, 0.0, 0.0)
        } else {
            Mat2::new(m[0][0], m[0][1], m[1][0], m[1][1])
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let m = self.mobility_matrix(dim);
        if (m - m.transpose()).norm() > 1e-14 * m.norm() {
            return Err(invalid("diffusion.mobility", "must be symmetric"));
        }
        let ok = if dim == 1 { m[(0, 0)] > 0.0 } else { m[(0, 0)] > 0.0 && det(2, &m) > 0.0 };
        if !ok {
            return Err(invalid("diffusion.mobility", "must be positive definite"));
        }
        if !(self.alpha >= 0.0) {
            return Err(invalid("diffusion.alpha", "must be nonnegative"));
        }
        if !(self.floor_rel > 0.0 && self.floor_rel < 1.0) {
            return Err(invalid("diffusion.floor_rel", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct DiffusionState {
    pub m: DVector<f64>,
    pub mu: DVector<f64>,
}

impl DiffusionState {
    pub fn values_at_points(basis: &GalerkinBasis, c: &DVector<f64>) -> Vec<f64> {
        basis.points.iter().map(|p| p.shapes.value(c.as_slice())).collect()
    }

    pub fn m_at_points(&self, basis: &GalerkinBasis) -> Vec<f64> {
        Self::values_at_points(basis, &self.m)
    }

    pub fn total_mass(&self, basis: &GalerkinBasis) -> f64 {
        basis
            .points
            .iter()
            .map(|p| p.weight * p.shapes.value(self.m.as_slice()))
            .sum()
    }
}

/// `μ = p + κ ln(m/m_e) + φ_el∘χ`.
pub fn chemical_potential(model: &StoredEnergy, dim: usize, f: &Mat2, m: f64, phi_at_chi: f64) -> Result<f64> {
    Ok(model.dm(dim, f, m)? + phi_at_chi)
}

/// `M₀(F) = Cofᵀ 𝗠₀ Cof / det F`.
pub fn mobility_reference(dim: usize, m0: &Mat2, f: &Mat2) -> Result<Mat2> {
    let j = det(dim, f);
    if !(j > 0.0) {
        return Err(Error::Singular { det: j });
    }
    let c = cofactor(dim, f);
    Ok(c.transpose() * m0 * c / j)
}

/// Pullback `m Cofᵀ 𝗠₀ Cof / det F` of the mobility `m 𝗠₀`.
pub fn mobility_pullback(dim: usize, m0: &Mat2, f: &Mat2, m: f64) -> Result<Mat2> {
    Ok(m * mobility_reference(dim, m0, f)?)
}

/// Fixed data of a diffusion step.
pub struct DiffusionContext<'a> {
    pub basis: &'a GalerkinBasis,
    pub material: &'a StoredEnergy,
    pub params: &'a DiffusionParams,
    pub electro: Option<&'a Electrostatics>,
}

#[derive(Clone, Debug)]
pub struct DiffusionStep {
    pub state: DiffusionState,
    pub potential: Option<PotentialField>,
    /// `dt (∫ ∇μ·M∇μ + ∫_Γ α μ²)`.
    pub dissipation: f64,
    /// `dt ∫_Γ α μ_♭ μ`.
    pub work: f64,
    /// `dt ∫_Γ α (μ − μ_♭)`, the mass leaving through the boundary.
    pub outflow: f64,
    pub iterations: usize,
}

impl<'a> DiffusionContext<'a> {
    fn dim(&self) -> usize {
        self.basis.dim()
    }

    fn m_e(&self) -> Result<f64> {
        self.material
            .biot
            .as_ref()
            .map(|b| b.m_e)
            .ok_or_else(|| invalid("biot", "diffusion needs a Biot material"))
    }

    pub fn floor(&self) -> Result<f64> {
        Ok(self.params.floor_rel * self.m_e()?)
    }

    /// `φ_el(χ(x_q))` at every quadrature point.
    pub fn potential_at_points(&self, mech: &DeformationState, pot: Option<&PotentialField>) -> Vec<f64> {
        match (self.electro, pot) {
            (Some(es), Some(pot)) => mech.cache.iter().map(|k| es.evaluate(pot, &k.pos).0).collect(),
            _ => vec![0.0; self.basis.points.len()],
        }
    }

    fn solve_potential(
        &self,
        mech: &DeformationState,
        m_q: &[f64],
        init: Option<&PotentialField>,
    ) -> Result<Option<PotentialField>> {
        match self.electro {
            Some(es) => Ok(Some(es.solve_potential(self.basis, mech, m_q, init.map(|p| &p.coeffs))?)),
            None => Ok(None),
        }
    }

    /// `μ` as the L² projection of `∂_m φ + φ_el∘χ`.
    pub fn project_mu(&self, mech: &DeformationState, m: &DVector<f64>, pot: Option<&PotentialField>) -> Result<DVector<f64>> {
        let dim = self.dim();
        let n = self.basis.dofs_per_component();
        let phi = self.potential_at_points(mech, pot);
        let mut rhs = DVector::zeros(n);
        for (q, (p, k)) in self.basis.points.iter().zip(&mech.cache).enumerate() {
            let mv = p.shapes.value(m.as_slice());
            let v = chemical_potential(self.material, dim, &k.f, mv, phi[q])? * p.weight;
            for (i, &a) in p.shapes.indices.iter().enumerate() {
                rhs[a] += v * p.shapes.values[i];
            }
        }
        let mass = self.basis.scalar_mass();
        Ok(mass.cholesky().ok_or(Error::NotPositiveDefinite)?.solve(&rhs))
    }

    /// Initial state from concentration coefficients, with the potential
    /// solved for the diffusant charge.
    pub fn initial_state(
        &self,
        mech: &DeformationState,
        m: DVector<f64>,
    ) -> Result<(DiffusionState, Option<PotentialField>)> {
        let m_q = DiffusionState::values_at_points(self.basis, &m);
        let floor = self.floor()?;
        if let Some(v) = m_q.iter().find(|&&v| v < floor) {
            return Err(Error::Infeasible(format!("initial concentration {v} below floor {floor}")));
        }
        let pot = self.solve_potential(mech, &m_q, None)?;
        let mu = self.project_mu(mech, &m, pot.as_ref())?;
        Ok((DiffusionState { m, mu }, pot))
    }

    fn residual(
        &self,
        mech: &DeformationState,
        m_prev: &DVector<f64>,
        z: &DVector<f64>,
        phi: &[f64],
        mu_flat: &[f64],
        dt: f64,
    ) -> Result<DVector<f64>> {
        let dim = self.dim();
        let n = self.basis.dofs_per_component();
        let m0 = self.params.mobility_matrix(dim);
        let m = z.rows(0, n);
        let mu = z.rows(n, n);
        let mut r = DVector::zeros(2 * n);
        for (q, (p, k)) in self.basis.points.iter().zip(&mech.cache).enumerate() {
            let sh = &p.shapes;
            let mv = sh.value(m.as_slice());
            let muv = sh.value(mu.as_slice());
            let dm = sh.value(m.as_slice()) - sh.value(m_prev.as_slice());
            let gmu = sh.gradient(mu.as_slice());
            let chem = chemical_potential(self.material, dim, &k.f, mv, phi[q])?;
            let flux = mobility_pullback(dim, &m0, &k.f, mv)? * gmu;
            for (i, &a) in sh.indices.iter().enumerate() {
                r[a] += p.weight * (muv - chem) * sh.values[i];
                r[n + a] += p.weight * (dm / dt * sh.values[i] + flux.dot(&sh.grads[i]));
            }
        }
        if self.params.alpha > 0.0 {
            for (bp, &mf) in self.basis.boundary_points.iter().zip(mu_flat) {
                let sh = &bp.shapes;
                let muv = sh.value(mu.as_slice());
                for (i, &a) in sh.indices.iter().enumerate() {
                    r[n + a] += bp.weight * self.params.alpha * (muv - mf) * sh.values[i];
                }
            }
        }
        Ok(r)
    }

    fn jacobian(
        &self,
        mech: &DeformationState,
        z: &DVector<f64>,
        electro_tangent: Option<&DMatrix<f64>>,
        dt: f64,
    ) -> Result<DMatrix<f64>> {
        let dim = self.dim();
        let n = self.basis.dofs_per_component();
        let m0 = self.params.mobility_matrix(dim);
        let m = z.rows(0, n);
        let mu = z.rows(n, n);
        let mut jac = DMatrix::zeros(2 * n, 2 * n);
        for (p, k) in self.basis.points.iter().zip(&mech.cache) {
            let sh = &p.shapes;
            let mv = sh.value(m.as_slice());
            let gmu = sh.gradient(mu.as_slice());
            let mref = mobility_reference(dim, &m0, &k.f)?;
            let mgmu = mref * gmu;
            let dmm = self.material.dmm(mv);
            let w = p.weight;
            for (i, &a) in sh.indices.iter().enumerate() {
                let (va, ga) = (sh.values[i], sh.grads[i]);
                for (j, &b) in sh.indices.iter().enumerate() {
                    let (vb, gb) = (sh.values[j], sh.grads[j]);
                    jac[(a, b)] -= w * dmm * va * vb;
                    jac[(a, n + b)] += w * va * vb;
                    jac[(n + a, b)] += w * (va * vb / dt + vb * mgmu.dot(&ga));
                    jac[(n + a, n + b)] += w * mv * (mref * gb).dot(&ga);
                }
            }
        }
        if self.params.alpha > 0.0 {
            for bp in &self.basis.boundary_points {
                let sh = &bp.shapes;
                for (i, &a) in sh.indices.iter().enumerate() {
                    for (j, &b) in sh.indices.iter().enumerate() {
                        jac[(n + a, n + b)] += bp.weight * self.params.alpha * sh.values[i] * sh.values[j];
                    }
                }
            }
        }
        if let Some(t) = electro_tangent {
            let mut block = jac.view_mut((0, 0), (n, n));
            block -= t;
        }
        Ok(jac)
    }

    /// `∂(∫ φ_el∘χ ψ_a)/∂m_b` through the potential's dependence on the charge.
    fn electro_tangent(&self, mech: &DeformationState, pot: &PotentialField) -> Result<Option<DMatrix<f64>>> {
        let Some(es) = self.electro else { return Ok(None) };
        let c = es.charge_coupling(self.basis, mech)?;
        let chol = es.tangent_factor(pot)?;
        let mut x = DMatrix::zeros(c.nrows(), c.ncols());
        for j in 0..c.ncols() {
            let col = chol.solve(&c.column(j).into_owned());
            x.set_column(j, &col);
        }
        Ok(Some(c.transpose() * x))
    }

    /// One implicit Euler step with frozen deformation.
    pub fn step(
        &self,
        mech: &DeformationState,
        prev: &DiffusionState,
        pot_init: Option<&PotentialField>,
        mu_flat: &[f64],
        dt: f64,
    ) -> Result<DiffusionStep> {
        if !(dt > 0.0) {
            return Err(invalid("dt", "must be positive"));
        }
        let n = self.basis.dofs_per_component();
        let floor = self.floor()?;
        let mut z = DVector::zeros(2 * n);
        z.rows_mut(0, n).copy_from(&prev.m);
        z.rows_mut(n, n).copy_from(&prev.mu);
        let mut pot = pot_init.cloned();
        let mut scale = 0.0;
        for it in 0..self.params.max_iter {
            let m_q = DiffusionState::values_at_points(self.basis, &z.rows(0, n).into_owned());
            pot = self.solve_potential(mech, &m_q, pot.as_ref())?;
            let phi = self.potential_at_points(mech, pot.as_ref());
            let r = self.residual(mech, &prev.m, &z, &phi, mu_flat, dt)?;
            let rn = r.norm();
            if it == 0 {
                scale = 1.0 + rn + prev.mu.norm() + prev.m.norm() / dt;
            }
            if rn <= self.params.tol * scale {
                return Ok(self.finish(mech, z, pot, mu_flat, dt, it));
            }
            let et = match &pot {
                Some(p) => self.electro_tangent(mech, p)?,
                None => None,
            };
            let jac = self.jacobian(mech, &z, et.as_ref(), dt)?;
            let dz = jac.lu().solve(&(-r)).ok_or(Error::Singular { det: 0.0 })?;
            let mut alpha = 1.0;
            loop {
                let trial = &z + alpha * &dz;
                let tm = DiffusionState::values_at_points(self.basis, &trial.rows(0, n).into_owned());
                if tm.iter().all(|&v| v >= floor) {
                    z = trial;
                    break;
                }
                alpha *= 0.5;
                if alpha < 1e-6 {
                    return Err(Error::Infeasible(format!(
                        "concentration would drop below floor {floor:e}"
                    )));
                }
            }
        }
        let phi = self.potential_at_points(mech, pot.as_ref());
        let residual = self.residual(mech, &prev.m, &z, &phi, mu_flat, dt)?.norm();
        Err(Error::NoConvergence {
            solver: "diffusion newton",
            iterations: self.params.max_iter,
            residual,
        })
    }

    fn finish(
        &self,
        mech: &DeformationState,
        z: DVector<f64>,
        pot: Option<PotentialField>,
        mu_flat: &[f64],
        dt: f64,
        iterations: usize,
    ) -> DiffusionStep {
        let n = self.basis.dofs_per_component();
        let state = DiffusionState {
            m: z.rows(0, n).into_owned(),
            mu: z.rows(n, n).into_owned(),
        };
        let rate = dissipation_rate(self, mech, &state);
        let (mut work, mut outflow) = (0.0, 0.0);
        for (bp, &mf) in self.basis.boundary_points.iter().zip(mu_flat) {
            let muv = bp.shapes.value(state.mu.as_slice());
            work += bp.weight * self.params.alpha * mf * muv;
            outflow += bp.weight * self.params.alpha * (muv - mf);
        }
        DiffusionStep {
            state,
            potential: pot,
            dissipation: dt * rate,
            work: dt * work,
            outflow: dt * outflow,
            iterations,
        }
    }

    /// `∫ φ(∇χ, m) dx`, the local free energy of the Biot material.
    pub fn free_energy(&self, mech: &DeformationState, m: &DVector<f64>) -> Result<f64> {
        let dim = self.dim();
        let mut e = 0.0;
        for (p, k) in self.basis.points.iter().zip(&mech.cache) {
            e += p.weight * self.material.density(dim, &k.f, Some(p.shapes.value(m.as_slice())))?;
        }
        Ok(e)
    }
}

/// `2𝓡 = ∫ ∇μ·M(∇χ, m)∇μ + ∫_Γ α μ²`.
pub fn dissipation_rate(ctx: &DiffusionContext, mech: &DeformationState, state: &DiffusionState) -> f64 {
    let dim = ctx.dim();
    let m0 = ctx.params.mobility_matrix(dim);
    let mut s = 0.0;
    for (p, k) in ctx.basis.points.iter().zip(&mech.cache) {
        let mv = p.shapes.value(state.m.as_slice());
        let g = p.shapes.gradient(state.mu.as_slice());
        if let Ok(mob) = mobility_pullback(dim, &m0, &k.f, mv) {
            s += p.weight * g.dot(&(mob * g));
        }
    }
    for bp in &ctx.basis.boundary_points {
        let muv = bp.shapes.value(state.mu.as_slice());
        s += bp.weight * ctx.params.alpha * muv * muv;
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FluxSplit {
    pub darcy: Vec2,
    pub fick: Vec2,
    pub drift: Vec2,
    /// `−M(∇χ, m)∇μ` with `μ = p + κ ln(m/m_e) + φ_el∘χ` evaluated pointwise.
    pub total: Vec2,
}

/// Darcy, Fick and drift parts of the flux at a reference point.
pub fn darcy_fick_split(
    ctx: &DiffusionContext,
    mech: &DeformationState,
    state: &DiffusionState,
    pot: Option<&PotentialField>,
    x: &Vec2,
) -> Result<FluxSplit> {
    let dim = ctx.dim();
    let biot = ctx.material.biot.as_ref().ok_or_else(|| invalid("biot", "needs a Biot material"))?;
    let s = ctx.basis.eval_shapes(x, 2)?;
    let k = mech.at(ctx.basis, x)?;
    let m = s.value(state.m.as_slice());
    if !(m >= ctx.floor()?) {
        return Err(Error::Infeasible(format!("concentration {m} below floor")));
    }
    let gm = s.gradient(state.m.as_slice());
    // ∇det F = Cof : ∇F
    let mut gj = Vec2::zeros();
    for l in 0..dim {
        for i in 0..dim {
            for j in 0..dim {
                gj[l] += k.cof[(i, j)] * k.g[i][(j, l)];
            }
        }
    }
    let gp = biot.modulus * (gm + biot.m_e * biot.beta * gj);
    let gphi = match (ctx.electro, pot) {
        (Some(es), Some(pot)) => k.f.transpose() * es.evaluate(pot, &k.pos).1,
        _ => Vec2::zeros(),
    };
    let m0 = mobility_reference(dim, &ctx.params.mobility_matrix(dim), &k.f)?;
    let gmu = gp + biot.kappa * gm / m + gphi;
    Ok(FluxSplit {
        darcy: -m * (m0 * gp),
        fick: -biot.kappa * (m0 * gm),
        drift: -m * (m0 * gphi),
        total: -mobility_pullback(dim, &ctx.params.mobility_matrix(dim), &k.f, m)? * gmu,
    })
}

/// Largest positive part of
/// `∫ φ(∇χ, m) − φ(∇χ, m̃) − (μ − φ_el∘χ)(m − m̃) dx` over the samples,
/// the subgradient inequality for `μ − φ_el∘χ ∈ ∂_m φ`.
pub fn variational_inequality_residual(
    ctx: &DiffusionContext,
    mech: &DeformationState,
    state: &DiffusionState,
    pot: Option<&PotentialField>,
    samples: &[DVector<f64>],
) -> Result<f64> {
    let dim = ctx.dim();
    let phi = ctx.potential_at_points(mech, pot);
    let mut worst: f64 = 0.0;
    for mt in samples {
        let mut v = 0.0;
        for (q, (p, k)) in ctx.basis.points.iter().zip(&mech.cache).enumerate() {
            let m = p.shapes.value(state.m.as_slice());
            let mtv = p.shapes.value(mt.as_slice());
            let mu = p.shapes.value(state.mu.as_slice());
            let a = ctx.material.density(dim, &k.f, Some(m))?;
            let b = ctx.material.density(dim, &k.f, Some(mtv))?;
            v += p.weight * (a - b - (mu - phi[q]) * (m - mtv));
        }
        worst = worst.max(v);
    }
    Ok(worst)
}

/// Largest pointwise mismatch in
/// `∇m = (∇μ − M_B m_e β ∇det F − ∇(φ_el∘χ)) / ∂²_mm φ` at quadrature points.
pub fn gradient_identity_defect(
    ctx: &DiffusionContext,
    mech: &DeformationState,
    state: &DiffusionState,
    pot: Option<&PotentialField>,
) -> Result<f64> {
    let dim = ctx.dim();
    let biot = ctx.material.biot.as_ref().ok_or_else(|| invalid("biot", "needs a Biot material"))?;
    let mut worst: f64 = 0.0;
    for (p, k) in ctx.basis.points.iter().zip(&mech.cache) {
        let m = p.shapes.value(state.m.as_slice());
        let gm = p.shapes.gradient(state.m.as_slice());
        let gmu = p.shapes.gradient(state.mu.as_slice());
        let mut gj = Vec2::zeros();
        for l in 0..dim {
            for i in 0..dim {
                for j in 0..dim {
                    gj[l] += k.cof[(i, j)] * k.g[i][(j, l)];
                }
            }
        }
        let gphi = match (ctx.electro, pot) {
            (Some(es), Some(pot)) => k.f.transpose() * es.evaluate(pot, &k.pos).1,
            _ => Vec2::zeros(),
        };
        let rebuilt = (gmu - biot.modulus * biot.m_e * biot.beta * gj - gphi) / ctx.material.dmm(m);
        worst = worst.max((rebuilt - gm).norm());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_basis, BasisFamily, ReferenceDomain};
    use crate::energy::BiotParams;

    fn material() -> StoredEnergy {
        StoredEnergy {
            mu: 1.0,
            kappa: 1.0,
            eps_b: 0.5,
            p_b: 2.0,
            biot: Some(BiotParams {
                modulus: 2.0,
                beta: 0.5,
                m_e: 1.0,
                kappa: 0.3,
            }),
        }
    }

    #[test]
    fn chemical_potential_at_equilibrium() {
        let m = material();
        let i = crate::tensor::identity(1);
        assert!((chemical_potential(&m, 1, &i, 1.0, 0.0).unwrap() - 2.0).abs() < 1e-15);
        assert!((chemical_potential(&m, 1, &i, 1.0, 0.7).unwrap() - 2.7).abs() < 1e-15);
        assert!(chemical_potential(&m, 1, &i, 0.0, 0.0).is_err());
    }

    #[test]
    fn mobility_pullback_scalings() {
        let m0 = Mat2::new(2.0, 0.3, 0.3, 1.0);
        let p = mobility_pullback(2, &m0, &(1.7 * Mat2::identity()), 0.5).unwrap();
        assert!((p - 0.5 * m0).norm() < 1e-14);
        let m1 = Mat2::new(2.0, 0.0, 0.0, 0.0);
        let p = mobility_pullback(1, &m1, &Mat2::new(4.0, 0.0, 0.0, 0.0), 1.0).unwrap();
        assert!((p[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn equilibrium_is_stationary_and_closed_system_conserves_mass() {
        let b = build_basis(&ReferenceDomain::unit(1), 2, BasisFamily::CubicHermite).unwrap();
        let mat = material();
        let mech = DeformationState::identity(&b);
        for alpha in [0.0, 2.0] {
            let params = DiffusionParams {
                alpha,
                ..Default::default()
            };
            let ctx = DiffusionContext {
                basis: &b,
                material: &mat,
                params: &params,
                electro: None,
            };
            let m0 = b.interpolate_fn(|_| 1.0);
            let (st, _) = ctx.initial_state(&mech, m0.clone()).unwrap();
            let flat = vec![2.0; b.boundary_points.len()];
            let out = ctx.step(&mech, &st, None, &flat, 0.01).unwrap();
            assert!((out.state.m - &m0).amax() < 1e-10);

            let bump = b.interpolate_fn(|x| 1.0 + 0.3 * (std::f64::consts::PI * x[0]).cos());
            let (st, _) = ctx.initial_state(&mech, bump).unwrap();
            let out = ctx.step(&mech, &st, None, &flat, 0.01).unwrap();
            let dm = out.state.total_mass(&b) - st.total_mass(&b);
            assert!((dm + out.outflow).abs() < 1e-10, "{dm} {}", out.outflow);
        }
    }

    fn ctx_for<'a>(b: &'a GalerkinBasis, mat: &'a StoredEnergy, params: &'a DiffusionParams) -> DiffusionContext<'a> {
        DiffusionContext {
            basis: b,
            material: mat,
            params,
            electro: None,
        }
    }

    #[test]
    fn dissipation_of_uniform_potential_is_boundary_exchange() {
        let mat = material();
        for dim in [1, 2] {
            let b = build_basis(&ReferenceDomain::unit(dim), 1, BasisFamily::for_dim(dim)).unwrap();
            let mech = DeformationState::identity(&b);
            let state = DiffusionState {
                m: b.interpolate_fn(|_| 1.0),
                mu: b.interpolate_fn(|_| 1.5),
            };
            let closed = DiffusionParams::default();
            assert!(dissipation_rate(&ctx_for(&b, &mat, &closed), &mech, &state).abs() < 1e-14);
            let open = DiffusionParams {
                alpha: 2.0,
                ..Default::default()
            };
            let perimeter = if dim == 1 { 2.0 } else { 4.0 };
            let r = dissipation_rate(&ctx_for(&b, &mat, &open), &mech, &state);
            assert!((r - 2.0 * 1.5 * 1.5 * perimeter).abs() < 1e-12, "d={dim}: {r}");
        }
    }

    #[test]
    fn flux_split_term_isolation() {
        let mat = material();
        let b = build_basis(&ReferenceDomain::unit(1), 2, BasisFamily::CubicHermite).unwrap();
        let mech = DeformationState::identity(&b);
        let params = DiffusionParams::default();
        let ctx = ctx_for(&b, &mat, &params);
        let x = Vec2::new(0.37, 0.0);

        let flat = DiffusionState {
            m: b.interpolate_fn(|_| 1.2),
            mu: b.interpolate_fn(|_| 0.0),
        };
        let s = darcy_fick_split(&ctx, &mech, &flat, None, &x).unwrap();
        assert!(s.darcy.norm() + s.fick.norm() + s.drift.norm() + s.total.norm() < 1e-12, "{s:?}");

        // with uniform det F the pressure gradient is M_B ∇m, so Darcy/Fick = m M_B / κ
        let graded = DiffusionState {
            m: b.interpolate_fn(|x| 1.0 + 0.2 * x[0]),
            mu: b.interpolate_fn(|_| 0.0),
        };
        let s = darcy_fick_split(&ctx, &mech, &graded, None, &x).unwrap();
        let bio = mat.biot.as_ref().unwrap();
        let m = 1.0 + 0.2 * x[0];
        assert!((s.fick[0] + bio.kappa * 0.2).abs() < 1e-12);
        assert!((s.darcy[0] / s.fick[0] - m * bio.modulus / bio.kappa).abs() < 1e-12);
        assert_eq!(s.drift, Vec2::zeros());
        assert!((s.darcy + s.fick + s.drift - s.total).norm() < 1e-12);
    }

    #[test]
    fn unperturbed_sample_has_zero_violation() {
        let mat = material();
        let b = build_basis(&ReferenceDomain::unit(1), 2, BasisFamily::CubicHermite).unwrap();
        let mech = DeformationState::identity(&b);
        let params = DiffusionParams::default();
        let ctx = ctx_for(&b, &mat, &params);
        let (st, _) = ctx.initial_state(&mech, b.interpolate_fn(|x| 1.0 + 0.3 * x[0])).unwrap();
        let v = variational_inequality_residual(&ctx, &mech, &st, None, &[st.m.clone()]).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn relaxation_decreases_free_energy() {
        let mat = material();
        let b = build_basis(&ReferenceDomain::unit(1), 2, BasisFamily::CubicHermite).unwrap();
        let mech = DeformationState::identity(&b);
        let params = DiffusionParams {
            mobility: [[0.05, 0.0], [0.0, 0.05]],
            ..Default::default()
        };
        let ctx = ctx_for(&b, &mat, &params);
        let (mut st, _) = ctx
            .initial_state(&mech, b.interpolate_fn(|x| 1.0 + 0.4 * (std::f64::consts::PI * x[0]).cos()))
            .unwrap();
        let flat = vec![0.0; b.boundary_points.len()];
        let mut energy = ctx.free_energy(&mech, &st.m).unwrap();
        for _ in 0..20 {
            st = ctx.step(&mech, &st, None, &flat, 0.02).unwrap().state;
            let next = ctx.free_energy(&mech, &st.m).unwrap();
            assert!(next < energy, "{next} !< {energy}");
            energy = next;
        }
    }
}
