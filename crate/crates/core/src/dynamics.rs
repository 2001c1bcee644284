//! Time integration of the coupled mechanics, electrostatics and diffusion.
//!
//! Mechanics advances with the implicit midpoint rule. Inside every Newton
//! iteration the potential is re-solved at the midpoint configuration, so the
//! electrostatic equation holds as a constraint. With diffusion enabled the
//! step is staggered: mechanics with the concentration frozen, then one
//! implicit Euler diffusion step with the new deformation frozen.

use nalgebra::{DMatrix, DVector};

use crate::basis::GalerkinBasis;
use crate::diagnostics::{ledger_update, Energies, EnergyLedger, Increments};
use crate::diffusion::{DiffusionContext, DiffusionParams, DiffusionState};
use crate::electrostatics::{Electrostatics, PotentialField};
use crate::energy::{mech_force, mech_stiffness, stored_energy_total, NonlocalOperator, StoredEnergy};
use crate::error::{invalid, Error, Result};
use crate::fields::{ChargeSample, ScalarFn, VectorFn};
use crate::kinematics::{
    det_monitor, div_inv_transpose_of, interpolate_vector, inverse_transpose, kinematics_at, DeformationState,
    MonitorSet,
};
use crate::tensor::Vec2;

/// Galerkin mass matrix `∫ ρ ψ_a ψ_b` of the scalar space.
pub fn mass_matrix(basis: &GalerkinBasis, rho: impl Fn(&Vec2) -> f64) -> Result<DMatrix<f64>> {
    let low = basis.points.iter().map(|p| rho(&p.x)).fold(f64::INFINITY, f64::min);
    if !(low > 0.0) {
        return Err(invalid("rho", format!("density must be positive, found {low}")));
    }
    Ok(basis.weighted_mass(|p| rho(&p.x)))
}

/// Block-diagonal vector mass matrix in component-major order.
pub fn vector_mass(dim: usize, scalar: &DMatrix<f64>) -> DMatrix<f64> {
    let n = scalar.nrows();
    let mut m = DMatrix::zeros(dim * n, dim * n);
    for c in 0..dim {
        m.view_mut((c * n, c * n), (n, n)).copy_from(scalar);
    }
    m
}

/// `∫ q (∇φ∘χ)·ζ_a dx`, the derivative of the reduced electrostatic energy.
pub fn electro_force_direct(
    es: &Electrostatics,
    basis: &GalerkinBasis,
    state: &DeformationState,
    pot: &PotentialField,
    q: &ChargeSample,
) -> DVector<f64> {
    let dim = basis.dim();
    let n = basis.dofs_per_component();
    let mut out = DVector::zeros(dim * n);
    for ((p, k), &qv) in basis.points.iter().zip(&state.cache).zip(&q.at_points) {
        if qv == 0.0 {
            continue;
        }
        let grad = es.evaluate(pot, &k.pos).1 * (p.weight * qv);
        for (i, &a) in p.shapes.indices.iter().enumerate() {
            for c in 0..dim {
                out[c * n + a] += grad[c] * p.shapes.values[i];
            }
        }
    }
    out
}

/// The same force after integration by parts, free of `∇φ∘χ`:
/// `∫_Γ qΦ F^{-T}n·ζ − ∫ Φ F^{-T}:∇(qζ) − ∫ qΦ div(F^{-T})·ζ` with `Φ = φ∘χ`.
pub fn electro_force_ibp(
    es: &Electrostatics,
    basis: &GalerkinBasis,
    state: &DeformationState,
    pot: &PotentialField,
    q: &ChargeSample,
) -> Result<DVector<f64>> {
    let dim = basis.dim();
    let n = basis.dofs_per_component();
    let mut out = DVector::zeros(dim * n);
    for (((p, k), &qv), gq) in basis.points.iter().zip(&state.cache).zip(&q.at_points).zip(&q.grads) {
        let phi = es.evaluate(pot, &k.pos).0;
        if phi == 0.0 {
            continue;
        }
        let fit = inverse_transpose(dim, &k.f)?;
        let div = div_inv_transpose_of(dim, &k.f, &k.g)?;
        let w = p.weight * phi;
        let sh = &p.shapes;
        for (i, &a) in sh.indices.iter().enumerate() {
            // ∇(q ψ_a e_c) = e_c ⊗ (ψ_a ∇q + q ∇ψ_a)
            let gqz = gq * sh.values[i] + sh.grads[i] * qv;
            for c in 0..dim {
                let mut s = 0.0;
                for j in 0..dim {
                    s += fit[(c, j)] * gqz[j];
                }
                out[c * n + a] -= w * (s + qv * div[c] * sh.values[i]);
            }
        }
    }
    for (bp, &qv) in basis.boundary_points.iter().zip(&q.at_boundary) {
        if qv == 0.0 {
            continue;
        }
        let k = kinematics_at(dim, &bp.shapes, state.chi.as_slice(), n);
        let phi = es.evaluate(pot, &k.pos).0;
        let fn_ = inverse_transpose(dim, &k.f)? * bp.normal;
        let w = bp.weight * qv * phi;
        for (i, &a) in bp.shapes.indices.iter().enumerate() {
            for c in 0..dim {
                out[c * n + a] += w * fn_[c] * bp.shapes.values[i];
            }
        }
    }
    Ok(out)
}

/// Part of the electro-force Jacobian from `∇²φ∘χ`, with the potential held
/// fixed.
pub fn electro_stiffness_frozen(
    es: &Electrostatics,
    basis: &GalerkinBasis,
    state: &DeformationState,
    pot: &PotentialField,
    q: &ChargeSample,
) -> DMatrix<f64> {
    let dim = basis.dim();
    let n = basis.dofs_per_component();
    let mut out = DMatrix::zeros(dim * n, dim * n);
    for ((p, k), &qv) in basis.points.iter().zip(&state.cache).zip(&q.at_points) {
        if qv == 0.0 {
            continue;
        }
        let h = es.evaluate(pot, &k.pos).2 * (p.weight * qv);
        let sh = &p.shapes;
        for (i, &a) in sh.indices.iter().enumerate() {
            for (j, &b) in sh.indices.iter().enumerate() {
                let v = sh.values[i] * sh.values[j];
                for c in 0..dim {
                    for e in 0..dim {
                        out[(c * n + a, e * n + b)] += h[(c, e)] * v;
                    }
                }
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElectroForceForm {
    #[default]
    Direct,
    ByParts,
}

/// External loading. `q_ext` is consumed when the electrostatic problem is
/// built; the boundary permeability lives in [`DiffusionParams`].
#[derive(Clone, Default)]
pub struct LoadSpec {
    /// Body force per unit reference volume.
    pub body_force: Option<VectorFn>,
    /// Traction per unit reference area on Γ.
    pub traction: Option<VectorFn>,
    pub q_ext: Option<ScalarFn>,
    pub mu_flat: Option<ScalarFn>,
}

impl std::fmt::Debug for LoadSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LoadSpec")
            .field("body_force", &self.body_force.is_some())
            .field("traction", &self.traction.is_some())
            .field("q_ext", &self.q_ext.is_some())
            .field("mu_flat", &self.mu_flat.is_some())
            .finish()
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StepOptions {
    pub newton_tol: f64,
    pub max_newton: usize,
    /// Newton iterations between Jacobian refreshes.
    pub refresh: usize,
    pub dt_min: f64,
    pub det_floor: f64,
    pub force_form: ElectroForceForm,
}

impl Default for StepOptions {
    fn default() -> Self {
        StepOptions {
            newton_tol: 1e-10,
            max_newton: 60,
            refresh: 8,
            dt_min: 1e-8,
            det_floor: 1e-3,
            force_form: ElectroForceForm::Direct,
        }
    }
}

impl StepOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.newton_tol > 0.0) {
            return Err(invalid("newton_tol", "must be positive"));
        }
        if self.max_newton == 0 || self.refresh == 0 {
            return Err(invalid("max_newton", "iteration counts must be at least 1"));
        }
        if !(self.dt_min > 0.0) {
            return Err(invalid("dt_min", "must be positive"));
        }
        if !(self.det_floor > 0.0) {
            return Err(invalid("det_floor", "must be positive"));
        }
        Ok(())
    }
}

/// Accepted state of the time integration.
#[derive(Clone, Debug)]
pub struct SimulationState {
    pub t: f64,
    pub steps: usize,
    pub mech: DeformationState,
    pub pot: Option<PotentialField>,
    pub diff: Option<DiffusionState>,
    pub ledger: EnergyLedger,
    /// Final Newton residual norm of the step that produced this state.
    pub mech_residual: f64,
    pub newton_iterations: usize,
    pub rejections: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ResidualReport {
    /// Norm of the midpoint force balance on free dofs.
    pub mech: f64,
    /// Norm of the electrostatic weak residual at the end state.
    pub elec: f64,
}

#[derive(Clone, Debug)]
pub struct StaticSolution {
    pub state: DeformationState,
    pub pot: Option<PotentialField>,
    /// `E_mech + E_el − ⟨F, χ⟩`.
    pub energy: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
}

/// Assembled discrete problem.
pub struct Problem {
    pub basis: GalerkinBasis,
    pub material: StoredEnergy,
    pub nonlocal: NonlocalOperator,
    pub electro: Option<Electrostatics>,
    pub diffusion: Option<DiffusionParams>,
    /// Referential charge when diffusion is off; with diffusion the charge is
    /// the concentration.
    pub charge: ChargeSample,
    /// Vector mass matrix.
    pub mass: DMatrix<f64>,
    pub loads: LoadSpec,
    /// Clamped vector dofs, held at their initial values.
    pub clamp: Vec<usize>,
    pub monitor: MonitorSet,
    pub opts: StepOptions,
}

struct Midpoint {
    delta: DVector<f64>,
    residual: f64,
    iterations: usize,
}

impl Problem {
    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn ndofs(&self) -> usize {
        self.dim() * self.basis.dofs_per_component()
    }

    fn diffusion_ctx(&self) -> Option<DiffusionContext<'_>> {
        self.diffusion.as_ref().map(|params| DiffusionContext {
            basis: &self.basis,
            material: &self.material,
            params,
            electro: self.electro.as_ref(),
        })
    }

    fn charge_for(&self, diff: Option<&DiffusionState>) -> ChargeSample {
        match diff {
            Some(d) => ChargeSample::from_coeffs(&self.basis, &d.m),
            None => self.charge.clone(),
        }
    }

    fn m_points(&self, diff: Option<&DiffusionState>) -> Option<Vec<f64>> {
        diff.map(|d| d.m_at_points(&self.basis))
    }

    pub fn kinetic(&self, v: &DVector<f64>) -> f64 {
        0.5 * v.dot(&(&self.mass * v))
    }

    /// Linear momentum `Σ_a (M χ̇)` over the translation modes.
    pub fn momentum(&self, v: &DVector<f64>) -> Vec2 {
        let mv = &self.mass * v;
        let mut p = Vec2::zeros();
        for c in 0..self.dim() {
            let t = interpolate_vector(&self.basis, |_| {
                let mut e = Vec2::zeros();
                e[c] = 1.0;
                e
            });
            p[c] = t.dot(&mv);
        }
        p
    }

    /// Body-force and traction load vectors at time `t`.
    pub fn external_force(&self, t: f64) -> (DVector<f64>, DVector<f64>) {
        let dim = self.dim();
        let n = self.basis.dofs_per_component();
        let mut ff = DVector::zeros(dim * n);
        let mut fg = DVector::zeros(dim * n);
        if let Some(f) = &self.loads.body_force {
            for p in &self.basis.points {
                let v = f(&p.x, t) * p.weight;
                for (i, &a) in p.shapes.indices.iter().enumerate() {
                    for c in 0..dim {
                        ff[c * n + a] += v[c] * p.shapes.values[i];
                    }
                }
            }
        }
        if let Some(g) = &self.loads.traction {
            for bp in &self.basis.boundary_points {
                let v = g(&bp.x, t) * bp.weight;
                for (i, &a) in bp.shapes.indices.iter().enumerate() {
                    for c in 0..dim {
                        fg[c * n + a] += v[c] * bp.shapes.values[i];
                    }
                }
            }
        }
        (ff, fg)
    }

    fn mu_flat_at(&self, t: f64) -> Vec<f64> {
        match &self.loads.mu_flat {
            Some(f) => self.basis.boundary_points.iter().map(|bp| f(&bp.x, t)).collect(),
            None => vec![0.0; self.basis.boundary_points.len()],
        }
    }

    fn electro_force(&self, state: &DeformationState, pot: &PotentialField, q: &ChargeSample) -> Result<DVector<f64>> {
        let es = self.electro.as_ref().expect("electrostatics present");
        match self.opts.force_form {
            ElectroForceForm::Direct => Ok(electro_force_direct(es, &self.basis, state, pot, q)),
            ElectroForceForm::ByParts => electro_force_ibp(es, &self.basis, state, pot, q),
        }
    }

    /// Potential at a configuration, or `None` without electrostatics.
    pub fn solve_potential(
        &self,
        state: &DeformationState,
        q: &ChargeSample,
        init: Option<&PotentialField>,
    ) -> Result<Option<PotentialField>> {
        match &self.electro {
            Some(es) => Ok(Some(es.solve_potential(
                &self.basis,
                state,
                &q.at_points,
                init.map(|p| &p.coeffs),
            )?)),
            None => Ok(None),
        }
    }

    pub fn energies(
        &self,
        mech: &DeformationState,
        pot: Option<&PotentialField>,
        diff: Option<&DiffusionState>,
    ) -> Result<Energies> {
        let m_q = self.m_points(diff);
        let mut e = Energies {
            kinetic: self.kinetic(&mech.chidot),
            stored: stored_energy_total(&self.material, mech, &self.basis, m_q.as_deref())?,
            nonlocal: self.nonlocal.energy(self.dim(), &mech.chi),
            ..Default::default()
        };
        if let (Some(es), Some(pot)) = (&self.electro, pot) {
            let q = self.charge_for(diff);
            let load = es.load(&self.basis, mech, &q.at_points)?;
            e.elec_coupling = es.coupling(&load, pot);
            e.elec_field = es.field_energy(pot);
        }
        Ok(e)
    }

    fn zero_clamped(&self, v: &mut DVector<f64>) {
        for &k in &self.clamp {
            v[k] = 0.0;
        }
    }

    fn check_det(&self, mech: &DeformationState) -> Result<f64> {
        let rep = det_monitor(mech, &self.basis, self.opts.det_floor, &self.monitor)?;
        if rep.violated {
            return Err(Error::Infeasible(format!(
                "min det {:.6e} below floor {:.3e}",
                rep.min_det, rep.floor
            )));
        }
        Ok(rep.min_det)
    }

    /// Builds the initial state: clamped velocities zeroed, potential solved,
    /// determinant checked and the first ledger row written.
    pub fn initial_state(&self, mut mech: DeformationState, m0: Option<DVector<f64>>, t0: f64) -> Result<SimulationState> {
        self.opts.validate()?;
        self.zero_clamped(&mut mech.chidot);
        let min_det = self.check_det(&mech)?;
        let (diff, pot) = match (self.diffusion_ctx(), m0) {
            (Some(ctx), Some(m0)) => {
                let (d, p) = ctx.initial_state(&mech, m0)?;
                (Some(d), p)
            }
            (Some(_), None) => return Err(invalid("m0", "diffusion needs an initial concentration")),
            (None, _) => (None, self.solve_potential(&mech, &self.charge, None)?),
        };
        let e = self.energies(&mech, pot.as_ref(), diff.as_ref())?;
        Ok(SimulationState {
            t: t0,
            steps: 0,
            mech,
            pot,
            diff,
            ledger: EnergyLedger::initial(t0, &e, min_det),
            mech_residual: 0.0,
            newton_iterations: 0,
            rejections: 0,
        })
    }

    /// Midpoint force balance for an increment `Δ = χ_{n+1} − χ_n`.
    fn midpoint_residual(
        &self,
        prev: &SimulationState,
        delta: &DVector<f64>,
        dt: f64,
        q: &ChargeSample,
        m_q: Option<&[f64]>,
        fext: &DVector<f64>,
        pot: &mut Option<PotentialField>,
    ) -> Result<(DVector<f64>, DeformationState)> {
        let chi_mid = &prev.mech.chi + delta * 0.5;
        let mid = DeformationState::new(&self.basis, chi_mid, DVector::zeros(delta.len()))?;
        let inertia = &self.mass * (delta - &prev.mech.chidot * dt) * (2.0 / (dt * dt));
        let mut r = inertia + mech_force(&self.material, &self.nonlocal, &mid, &self.basis, m_q)? - fext;
        if self.electro.is_some() {
            let p = self.solve_potential(&mid, q, pot.as_ref())?.expect("potential");
            r += self.electro_force(&mid, &p, q)?;
            *pot = Some(p);
        }
        self.zero_clamped(&mut r);
        Ok((r, mid))
    }

    fn midpoint_jacobian(
        &self,
        mid: &DeformationState,
        dt: f64,
        q: &ChargeSample,
        m_q: Option<&[f64]>,
        pot: Option<&PotentialField>,
    ) -> Result<DMatrix<f64>> {
        let mut k = mech_stiffness(&self.material, &self.nonlocal, mid, &self.basis, m_q)?;
        if let (Some(es), Some(pot)) = (&self.electro, pot) {
            k += electro_stiffness_frozen(es, &self.basis, mid, pot, q);
        }
        let mut j = &self.mass * (2.0 / (dt * dt)) + k * 0.5;
        for &c in &self.clamp {
            j.row_mut(c).fill(0.0);
            j.column_mut(c).fill(0.0);
            j[(c, c)] = 1.0;
        }
        Ok(j)
    }

    fn solve_midpoint(&self, prev: &SimulationState, dt: f64, q: &ChargeSample, m_q: Option<&[f64]>, fext: &DVector<f64>) -> Result<Midpoint> {
        let mut delta = &prev.mech.chidot * dt;
        self.zero_clamped(&mut delta);
        let mut pot = prev.pot.clone();
        let scale = 1.0 + fext.norm() + (&self.mass * &prev.mech.chidot).norm() * (2.0 / dt);
        let mut lu = None;
        let mut rn = f64::INFINITY;
        for it in 0..self.opts.max_newton {
            let (r, mid) = self.midpoint_residual(prev, &delta, dt, q, m_q, fext, &mut pot)?;
            rn = r.norm();
            if !rn.is_finite() {
                break;
            }
            if rn <= self.opts.newton_tol * scale {
                return Ok(Midpoint {
                    delta,
                    residual: rn,
                    iterations: it,
                });
            }
            if it % self.opts.refresh == 0 {
                lu = Some(self.midpoint_jacobian(&mid, dt, q, m_q, pot.as_ref())?.lu());
            }
            let step = lu
                .as_ref()
                .expect("jacobian factored")
                .solve(&(-r))
                .ok_or(Error::Singular { det: 0.0 })?;
            delta += &step;
            if step.norm() <= 1e-15 * (1.0 + delta.norm()) {
                let (r, _) = self.midpoint_residual(prev, &delta, dt, q, m_q, fext, &mut pot)?;
                return Ok(Midpoint {
                    residual: r.norm(),
                    delta,
                    iterations: it + 1,
                });
            }
        }
        Err(Error::NoConvergence {
            solver: "midpoint newton",
            iterations: self.opts.max_newton,
            residual: rn,
        })
    }

    /// One step of size `dt` without rejection handling.
    pub fn try_step(&self, prev: &SimulationState, dt: f64) -> Result<SimulationState> {
        if !(dt > 0.0) {
            return Err(invalid("dt", "must be positive"));
        }
        let t_mid = prev.t + 0.5 * dt;
        let t_new = prev.t + dt;
        let q = self.charge_for(prev.diff.as_ref());
        let m_q = self.m_points(prev.diff.as_ref());
        let (ff, fg) = self.external_force(t_mid);
        let fext = &ff + &fg;
        let sol = self.solve_midpoint(prev, dt, &q, m_q.as_deref(), &fext)?;

        let chi = &prev.mech.chi + &sol.delta;
        let mut v = &sol.delta * (2.0 / dt) - &prev.mech.chidot;
        self.zero_clamped(&mut v);
        let mech = DeformationState::new(&self.basis, chi, v)?;
        let min_det = self.check_det(&mech)?;

        let mut inc = Increments {
            work_f: ff.dot(&sol.delta),
            work_g: fg.dot(&sol.delta),
            ..Default::default()
        };
        if self.loads.traction.is_some() {
            let (_, g0) = self.external_force(prev.t);
            let (_, g1) = self.external_force(t_new);
            let gdot_mid = (&g1 - &g0) / dt;
            let chi_mid = &prev.mech.chi + &sol.delta * 0.5;
            inc.work_g_parts = g1.dot(&mech.chi) - g0.dot(&prev.mech.chi) - dt * gdot_mid.dot(&chi_mid);
        }

        let (pot, diff) = match (self.diffusion_ctx(), &prev.diff) {
            (Some(ctx), Some(d)) => {
                let mu_flat = self.mu_flat_at(t_mid);
                let st = ctx.step(&mech, d, prev.pot.as_ref(), &mu_flat, dt)?;
                inc.dissipated = st.dissipation;
                inc.work_mu = st.work;
                (st.potential, Some(st.state))
            }
            _ => (self.solve_potential(&mech, &q, prev.pot.as_ref())?, None),
        };
        let e = self.energies(&mech, pot.as_ref(), diff.as_ref())?;
        let ledger = ledger_update(&prev.ledger, t_new, dt, &e, &inc, min_det);
        Ok(SimulationState {
            t: t_new,
            steps: prev.steps + 1,
            mech,
            pot,
            diff,
            ledger,
            mech_residual: sol.residual,
            newton_iterations: sol.iterations,
            rejections: prev.rejections,
        })
    }

    /// Advances by `dt`, halving on failure down to `dt_min`.
    pub fn advance(&self, prev: &SimulationState, dt: f64) -> Result<SimulationState> {
        match self.try_step(prev, dt) {
            Ok(s) => Ok(s),
            Err(e) if recoverable(&e) => {
                let half = 0.5 * dt;
                if half < self.opts.dt_min {
                    return Err(Error::StepUnderflow {
                        t: prev.t,
                        dt: half,
                        dt_min: self.opts.dt_min,
                        reason: e.to_string(),
                    });
                }
                log::debug!("step at t = {} rejected ({e}); retrying with dt = {half}", prev.t);
                let mut first = self.advance(prev, half)?;
                first.rejections += 1;
                self.advance(&first, half)
            }
            Err(e) => Err(e),
        }
    }

    /// Residual norms of the step `prev → next`.
    pub fn residual(&self, prev: &SimulationState, next: &SimulationState) -> Result<ResidualReport> {
        let dt = next.t - prev.t;
        if !(dt > 0.0) {
            return Err(invalid("dt", "states must be ordered in time"));
        }
        let q = self.charge_for(prev.diff.as_ref());
        let m_q = self.m_points(prev.diff.as_ref());
        let (ff, fg) = self.external_force(prev.t + 0.5 * dt);
        let delta = &next.mech.chi - &prev.mech.chi;
        let mut pot = prev.pot.clone();
        let (r, _) = self.midpoint_residual(prev, &delta, dt, &q, m_q.as_deref(), &(ff + fg), &mut pot)?;
        let elec = match (&self.electro, &next.pot) {
            (Some(es), Some(p)) => {
                let qn = self.charge_for(next.diff.as_ref());
                let load = es.load(&self.basis, &next.mech, &qn.at_points)?;
                es.weak_residual(&p.coeffs, &load).norm()
            }
            _ => 0.0,
        };
        Ok(ResidualReport { mech: r.norm(), elec })
    }

    /// `E_mech + E_el − ⟨F(t), χ⟩` together with the potential.
    fn static_energy(
        &self,
        mech: &DeformationState,
        fext: &DVector<f64>,
        m_q: Option<&[f64]>,
        pot_init: Option<&PotentialField>,
    ) -> Result<(f64, Option<PotentialField>)> {
        let mut e = stored_energy_total(&self.material, mech, &self.basis, m_q)? + self.nonlocal.energy(self.dim(), &mech.chi)
            - fext.dot(&mech.chi);
        let pot = self.solve_potential(mech, &self.charge, pot_init)?;
        if let (Some(es), Some(p)) = (&self.electro, &pot) {
            let load = es.load(&self.basis, mech, &self.charge.at_points)?;
            e += es.electrostatic_energy(&load, p);
        }
        Ok((e, pot))
    }

    fn static_gradient(
        &self,
        mech: &DeformationState,
        fext: &DVector<f64>,
        m_q: Option<&[f64]>,
        pot: Option<&PotentialField>,
    ) -> Result<DVector<f64>> {
        let mut g = mech_force(&self.material, &self.nonlocal, mech, &self.basis, m_q)? - fext;
        if let Some(p) = pot {
            g += self.electro_force(mech, p, &self.charge)?;
        }
        self.zero_clamped(&mut g);
        Ok(g)
    }

    /// Minimizes the static energy at time `t` by Newton's method with a
    /// backtracking line search, starting from `init`.
    pub fn solve_static(&self, init: &DeformationState, t: f64, tol: f64, max_iter: usize) -> Result<StaticSolution> {
        let (ff, fg) = self.external_force(t);
        let fext = ff + fg;
        let m_q: Option<Vec<f64>> = None;
        let mut mech = DeformationState::new(&self.basis, init.chi.clone(), DVector::zeros(init.chi.len()))?;
        self.check_det(&mech)?;
        let (mut energy, mut pot) = self.static_energy(&mech, &fext, m_q.as_deref(), None)?;
        let scale = 1.0 + fext.norm() + mech_force(&self.material, &self.nonlocal, &mech, &self.basis, None)?.norm();
        let mut gn = f64::INFINITY;
        for it in 0..max_iter {
            let g = self.static_gradient(&mech, &fext, m_q.as_deref(), pot.as_ref())?;
            gn = g.norm();
            if gn <= tol * scale {
                return Ok(StaticSolution {
                    state: mech,
                    pot,
                    energy,
                    gradient_norm: gn,
                    iterations: it,
                });
            }
            let mut h = mech_stiffness(&self.material, &self.nonlocal, &mech, &self.basis, None)?;
            if let (Some(es), Some(p)) = (&self.electro, &pot) {
                h += electro_stiffness_frozen(es, &self.basis, &mech, p, &self.charge);
            }
            for &c in &self.clamp {
                h.row_mut(c).fill(0.0);
                h.column_mut(c).fill(0.0);
                h[(c, c)] = 1.0;
            }
            let dir = shifted_newton_direction(h, &g)?;
            let slope = g.dot(&dir);
            // Below round-off in the energy only the gradient is informative.
            let noise = slope.abs() <= 1e-13 * (1.0 + energy.abs());
            let mut alpha = 1.0;
            let mut accepted = false;
            while alpha > 1e-12 {
                let trial_chi = &mech.chi + &dir * alpha;
                let trial = DeformationState::new(&self.basis, trial_chi, DVector::zeros(dir.len()))?;
                let feasible = !det_monitor(&trial, &self.basis, self.opts.det_floor, &self.monitor)?.violated;
                if feasible {
                    if let Ok((e, p)) = self.static_energy(&trial, &fext, m_q.as_deref(), pot.as_ref()) {
                        if e <= energy + 1e-4 * alpha * slope || noise {
                            mech = trial;
                            energy = e;
                            pot = p;
                            accepted = true;
                            break;
                        }
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                // No further decrease representable in floating point.
                return Ok(StaticSolution {
                    state: mech,
                    pot,
                    energy,
                    gradient_norm: gn,
                    iterations: it,
                });
            }
        }
        Err(Error::NoConvergence {
            solver: "static newton",
            iterations: max_iter,
            residual: gn,
        })
    }
}

/// Descent direction `−(H + τI)⁻¹ g` with the smallest shift `τ` that makes
/// the factorization succeed.
fn shifted_newton_direction(h: DMatrix<f64>, g: &DVector<f64>) -> Result<DVector<f64>> {
    let diag = h.diagonal().amax().max(1e-300);
    let mut tau = 0.0;
    for _ in 0..40 {
        let mut hs = h.clone();
        for i in 0..hs.nrows() {
            hs[(i, i)] += tau;
        }
        if let Some(ch) = hs.cholesky() {
            return Ok(-ch.solve(g));
        }
        tau = if tau == 0.0 { 1e-10 * diag } else { tau * 10.0 };
    }
    Err(Error::NotPositiveDefinite)
}

fn recoverable(e: &Error) -> bool {
    matches!(
        e,
        Error::Singular { .. }
            | Error::Infeasible(_)
            | Error::NoConvergence { .. }
            | Error::NotPositiveDefinite
            | Error::BodyEscaped { .. }
            | Error::OutsideDomain { .. }
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_basis, BasisFamily, ReferenceDomain};

    #[test]
    fn hermite_mass_matrix_single_element() {
        let b = build_basis(&ReferenceDomain::unit(1), 0, BasisFamily::CubicHermite).unwrap();
        let m = mass_matrix(&b, |_| 1.0).unwrap();
        // Level 0 has two elements of length h = 1/2; the classic cubic
        // Hermite element matrix is h/420 [156 22h 54 -13h; ...].
        let h = 0.5;
        let k = h / 420.0;
        assert!((m[(0, 0)] - k * 156.0).abs() < 1e-14);
        assert!((m[(0, 1)] - k * 22.0 * h).abs() < 1e-14);
        assert!((m[(1, 1)] - k * 4.0 * h * h).abs() < 1e-14);
        assert!((m[(0, 2)] - k * 54.0).abs() < 1e-14);
        assert!((m[(0, 3)] + k * 13.0 * h).abs() < 1e-14);
        assert!((m[(2, 2)] - 2.0 * k * 156.0).abs() < 1e-14);
    }

    #[test]
    fn nonpositive_density_rejected() {
        let b = build_basis(&ReferenceDomain::unit(1), 0, BasisFamily::CubicHermite).unwrap();
        assert!(mass_matrix(&b, |x| x[0] - 0.5).is_err());
    }

    #[test]
    fn kinetic_energy_of_uniform_velocity() {
        let b = build_basis(&ReferenceDomain::unit(2), 1, BasisFamily::BognerFoxSchmit).unwrap();
        let m = vector_mass(2, &mass_matrix(&b, |_| 3.0).unwrap());
        let v = interpolate_vector(&b, |_| Vec2::new(0.5, -2.0));
        let t = 0.5 * v.dot(&(&m * &v));
        assert!((t - 0.5 * 3.0 * 4.25).abs() < 1e-12);
        assert!(m.clone().cholesky().is_some());
    }
}
