//! Invariant suites evaluated on a scenario state.
//!
//! Every check reports the measured defect next to its tolerance. Random
//! directions and samples are drawn from a ChaCha stream seeded by the
//! scenario.

use anyhow::{anyhow, Result};
use elastocharge::diffusion::{chemical_potential, darcy_fick_split, variational_inequality_residual, DiffusionContext};
use elastocharge::dynamics::{electro_force_direct, electro_force_ibp, Problem, SimulationState};
use elastocharge::energy::{hyperstress_pairing, mech_energy, mech_force};
use elastocharge::fields::ChargeSample;
use elastocharge::kinematics::{area_formula_residual, pushforward_total, DeformationState, SpatialGrid};
use elastocharge::tensor::{cofactor, d_cofactor, det, rotation, Mat2, Vec2};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::run::setup;
use crate::scenario::Scenario;

pub const GRADIENT_TOL: f64 = 1e-6;
pub const FRAME_TOL: f64 = 1e-10;
pub const IDENTITY_TOL: f64 = 1e-10;
pub const FORCE_FORM_TOL: f64 = 1e-2;
pub const MAXWELL_TOL: f64 = 2e-2;
pub const FLUX_TOL: f64 = 1e-10;
pub const VAR_INEQ_TOL: f64 = 1e-8;
pub const UNIQUENESS_TOL: f64 = 1e-8;
pub const CLOSURE_TOL: f64 = 1e-12;
pub const PUSHFORWARD_TOL: f64 = 1e-6;

#[derive(Clone, Debug, Serialize)]
pub struct AuditCheck {
    pub suite: &'static str,
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub samples: usize,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct AuditReport {
    pub seed: u64,
    pub t: f64,
    pub checks: Vec<AuditCheck>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn get(&self, name: &str) -> Option<&AuditCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn check(suite: &'static str, name: &str, value: f64, tolerance: f64, samples: usize) -> AuditCheck {
    AuditCheck {
        suite,
        name: name.to_string(),
        value,
        tolerance,
        samples,
        pass: value <= tolerance,
    }
}

fn core<T>(r: elastocharge::Result<T>) -> Result<T> {
    r.map_err(|e| anyhow!("{e}"))
}

/// A problem together with the state under audit.
pub struct Audited<'a> {
    pub problem: &'a Problem,
    pub state: &'a SimulationState,
}

impl Audited<'_> {
    fn dim(&self) -> usize {
        self.problem.dim()
    }

    fn m_points(&self) -> Option<Vec<f64>> {
        self.state.diff.as_ref().map(|d| d.m_at_points(&self.problem.basis))
    }

    fn charge(&self) -> ChargeSample {
        match &self.state.diff {
            Some(d) => ChargeSample::from_coeffs(&self.problem.basis, &d.m),
            None => self.problem.charge.clone(),
        }
    }

    fn diffusion_ctx(&self) -> Option<DiffusionContext<'_>> {
        let p = self.problem;
        p.diffusion.as_ref().map(|params| DiffusionContext {
            basis: &p.basis,
            material: &p.material,
            params,
            electro: p.electro.as_ref(),
        })
    }

    fn with_chi(&self, chi: DVector<f64>) -> DeformationState {
        let mut s = self.state.mech.clone();
        s.set_chi(&self.problem.basis, chi);
        s
    }

    /// Stress, chemical potential, hyperstress pairing and generalized force
    /// against central differences of their energies.
    pub fn gradients(&self, rng: &mut ChaCha8Rng, samples: usize) -> Result<Vec<AuditCheck>> {
        let p = self.problem;
        let dim = self.dim();
        let model = &p.material;
        let mq = self.m_points();
        let cache = &self.state.mech.cache;
        let mut out = Vec::new();

        let mut worst: f64 = 0.0;
        for _ in 0..samples {
            let q = rng.random_range(0..cache.len());
            let mut f = cache[q].f;
            for i in 0..dim {
                for j in 0..dim {
                    f[(i, j)] += rng.random_range(-0.05..0.05);
                }
            }
            let m = mq.as_ref().map(|m| m[q] * rng.random_range(0.9..1.1));
            let s = core(model.stress(dim, &f, m))?;
            let h = 1e-6;
            let mut fd = Mat2::zeros();
            for i in 0..dim {
                for j in 0..dim {
                    let (mut fp, mut fm) = (f, f);
                    fp[(i, j)] += h;
                    fm[(i, j)] -= h;
                    fd[(i, j)] = (core(model.density(dim, &fp, m))? - core(model.density(dim, &fm, m))?) / (2.0 * h);
                }
            }
            worst = worst.max((s - fd).amax() / s.amax().max(1.0));
        }
        out.push(check("gradients", "stress", worst, GRADIENT_TOL, samples));

        if model.biot.is_some() {
            let mut worst: f64 = 0.0;
            for _ in 0..samples {
                let q = rng.random_range(0..cache.len());
                let f = cache[q].f;
                let m = mq.as_ref().map_or(1.0, |m| m[q]) * rng.random_range(0.8..1.2);
                let phi = rng.random_range(-1.0..1.0);
                let mu = core(chemical_potential(model, dim, &f, m, phi))?;
                let h = 1e-6 * m;
                let fd = (core(model.density(dim, &f, Some(m + h)))? - core(model.density(dim, &f, Some(m - h)))?) / (2.0 * h) + phi;
                worst = worst.max((mu - fd).abs() / mu.abs().max(1.0));
            }
            out.push(check("gradients", "chemical_potential", worst, GRADIENT_TOL, samples));
        }

        let n = self.state.mech.chi.len();
        let mut worst_h: f64 = 0.0;
        let mut worst_f: f64 = 0.0;
        // a generic nearby state so the checks do not sit at an equilibrium
        let eta = DVector::from_fn(n, |_, _| rng.random_range(-1e-4..1e-4));
        let base = self.with_chi(&self.state.mech.chi + eta);
        let e0 = core(mech_energy(model, &p.nonlocal, &base, &p.basis, mq.as_deref()))?;
        let force = core(mech_force(model, &p.nonlocal, &base, &p.basis, mq.as_deref()))?;
        let energy_at = |chi: DVector<f64>| core(mech_energy(model, &p.nonlocal, &self.with_chi(chi), &p.basis, mq.as_deref()));
        for _ in 0..samples {
            let zeta = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let an = hyperstress_pairing(&p.nonlocal, &base, &p.basis, &zeta);
            // the nonlocal energy is quadratic, so a unit central difference is exact
            let fd = (p.nonlocal.energy(dim, &(&base.chi + &zeta)) - p.nonlocal.energy(dim, &(&base.chi - &zeta))) / 2.0;
            let scale = an.abs().max(1e-12 * p.nonlocal.energy(dim, &zeta));
            worst_h = worst_h.max((an - fd).abs() / scale.max(1e-300));

            let h = 1e-4;
            let d1 = energy_at(&base.chi + &zeta * h)? - energy_at(&base.chi - &zeta * h)?;
            let d2 = energy_at(&base.chi + &zeta * (2.0 * h))? - energy_at(&base.chi - &zeta * (2.0 * h))?;
            let fd = (8.0 * d1 - d2) / (12.0 * h);
            let an = force.dot(&zeta);
            worst_f = worst_f.max((an - fd).abs() / an.abs().max(1e-8 * (1.0 + e0.abs())));
        }
        out.push(check("gradients", "hyperstress_pairing", worst_h, GRADIENT_TOL, samples));
        out.push(check("gradients", "mech_force", worst_f, GRADIENT_TOL, samples));
        Ok(out)
    }

    /// Cofactor, Piola and frame-indifference identities, the two electric
    /// force forms, Maxwell virtual work and the flux split.
    pub fn identities(&self, rng: &mut ChaCha8Rng, samples: usize) -> Result<Vec<AuditCheck>> {
        let p = self.problem;
        let dim = self.dim();
        let mut out = Vec::new();
        let cache = &self.state.mech.cache;

        let cof_det = cache
            .iter()
            .map(|k| {
                let j = det(dim, &k.f);
                let mut id = Mat2::zeros();
                for i in 0..dim {
                    id[(i, i)] = j;
                }
                (cofactor(dim, &k.f).transpose() * k.f - id).amax() / j.abs().max(1.0)
            })
            .fold(0.0, f64::max);
        out.push(check("identities", "cofactor_determinant", cof_det, IDENTITY_TOL, cache.len()));

        if dim == 2 {
            let mut piola: f64 = 0.0;
            for k in cache {
                for i in 0..2 {
                    let mut div = 0.0;
                    for j in 0..2 {
                        for a in 0..2 {
                            for b in 0..2 {
                                div += d_cofactor(2, i, j, a, b) * k.g[a][(b, j)];
                            }
                        }
                    }
                    piola = piola.max(div.abs() / k.g.iter().map(|g| g.amax()).fold(1.0, f64::max));
                }
            }
            out.push(check("identities", "piola", piola, IDENTITY_TOL, cache.len()));

            let mq = self.m_points();
            let e0 = core(mech_energy(&p.material, &p.nonlocal, &self.state.mech, &p.basis, mq.as_deref()))?;
            let nn = p.basis.dofs_per_component();
            let chi = &self.state.mech.chi;
            let mut worst: f64 = 0.0;
            for _ in 0..samples.min(20) {
                let q = rotation(rng.random_range(-std::f64::consts::PI..std::f64::consts::PI));
                let shift = Vec2::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
                let mut rot = DVector::zeros(2 * nn);
                for a in 0..nn {
                    let value = p.basis.is_value_dof(a);
                    for c in 0..2 {
                        rot[c * nn + a] = q[(c, 0)] * chi[a] + q[(c, 1)] * chi[nn + a] + if value { shift[c] } else { 0.0 };
                    }
                }
                let e1 = core(mech_energy(&p.material, &p.nonlocal, &self.with_chi(rot), &p.basis, mq.as_deref()))?;
                worst = worst.max((e1 - e0).abs() / e0.abs().max(1.0));
            }
            out.push(check("identities", "frame_indifference", worst, FRAME_TOL, samples.min(20)));
        }

        if let (Some(es), Some(pot)) = (&p.electro, &self.state.pot) {
            let q = self.charge();
            let direct = electro_force_direct(es, &p.basis, &self.state.mech, pot, &q);
            if direct.norm() > 0.0 {
                let ibp = core(electro_force_ibp(es, &p.basis, &self.state.mech, pot, &q))?;
                out.push(check("identities", "force_forms", (&direct - &ibp).norm() / direct.norm(), FORCE_FORM_TOL, 1));
                out.push(check("identities", "maxwell_virtual_work", self.maxwell_defect(&direct)?, MAXWELL_TOL, 1));
            }
        }

        if let (Some(ctx), Some(d)) = (self.diffusion_ctx(), &self.state.diff) {
            let mut worst: f64 = 0.0;
            for _ in 0..samples {
                let mut x = Vec2::zeros();
                for a in 0..dim {
                    let ax = &p.basis.axes[a];
                    x[a] = rng.random_range(ax.lower..ax.upper);
                }
                let s = core(darcy_fick_split(&ctx, &self.state.mech, d, self.state.pot.as_ref(), &x))?;
                worst = worst.max((s.darcy + s.fick + s.drift - s.total).norm() / s.total.norm().max(1.0));
            }
            out.push(check("identities", "flux_split", worst, FLUX_TOL, samples));
        }
        Ok(out)
    }

    /// Relative gap between `f·ζ` and `∫ T:∇V` for a Gaussian-weighted radial
    /// field `V` with `ζ` its Hermite pullback through the state.
    fn maxwell_defect(&self, force: &DVector<f64>) -> Result<f64> {
        let p = self.problem;
        let es = p.electro.as_ref().unwrap();
        let pot = self.state.pot.as_ref().unwrap();
        let dim = self.dim();
        let mut c = Vec2::zeros();
        c.as_mut_slice()[..dim].copy_from_slice(&es.params.center);
        let s2 = (0.375 * es.params.radius).powi(2);
        // V_i = d_i g with d = y − c and g = exp(−|d|²/s²)
        let field = |y: &Vec2| -> (Vec2, Mat2, [Mat2; 2]) {
            let mut d = y - c;
            if dim == 1 {
                d[1] = 0.0;
            }
            let g = (-d.norm_squared() / s2).exp();
            let gg = d * (-2.0 * g / s2);
            let mut hg = Mat2::zeros();
            for j in 0..dim {
                for k in 0..dim {
                    hg[(j, k)] = (4.0 * d[j] * d[k] / (s2 * s2) - if j == k { 2.0 / s2 } else { 0.0 }) * g;
                }
            }
            let mut grad = Mat2::zeros();
            let mut hess = [Mat2::zeros(), Mat2::zeros()];
            for i in 0..dim {
                for j in 0..dim {
                    grad[(i, j)] = if i == j { g } else { 0.0 } + d[i] * gg[j];
                    for k in 0..dim {
                        hess[i][(j, k)] = if i == j { gg[k] } else { 0.0 } + if i == k { gg[j] } else { 0.0 } + d[i] * hg[(j, k)];
                    }
                }
            }
            (d * g, grad, hess)
        };
        let n = p.basis.dofs_per_component();
        let mut zeta = DVector::zeros(dim * n);
        let mut err = None;
        for comp in 0..dim {
            let part = p.basis.interpolate(|x| {
                let (f, gr) = match self.state.mech.gradients(&p.basis, x) {
                    Ok(v) => v,
                    Err(e) => {
                        err = Some(e);
                        return [0.0; 4];
                    }
                };
                let y = self.state.mech.position(&p.basis, x).unwrap_or(*x);
                let (v, gv, hv) = field(&y);
                // chain rule for V∘χ: ∂_a = ∇V F e_a, ∂_xy = ∇²V[F e_x, F e_y] + ∇V ∂_xy χ
                let da = |a: usize| (0..dim).map(|j| gv[(comp, j)] * f[(j, a)]).sum::<f64>();
                let dxy = if dim == 2 {
                    let mut s = 0.0;
                    for j in 0..2 {
                        s += gv[(comp, j)] * gr[j][(0, 1)];
                        for k in 0..2 {
                            s += hv[comp][(j, k)] * f[(j, 0)] * f[(k, 1)];
                        }
                    }
                    s
                } else {
                    0.0
                };
                [v[comp], da(0), if dim == 2 { da(1) } else { 0.0 }, dxy]
            });
            zeta.rows_mut(comp * n, n).copy_from(&part);
        }
        if let Some(e) = err {
            return Err(anyhow!("{e}"));
        }
        let work = force.dot(&zeta);
        let mut stress_work = 0.0;
        for (qp, g) in es.mesh.points.iter().zip(&pot.grads) {
            let t = es.params.maxwell(dim, &(-g));
            stress_work += qp.weight * t.component_mul(&field(&qp.x).1).sum();
        }
        Ok((work - stress_work).abs() / work.abs().max(f64::MIN_POSITIVE))
    }

    /// Tested identity, uniqueness and maximality of the solved potential.
    pub fn electrostatics(&self, rng: &mut ChaCha8Rng, samples: usize) -> Result<Vec<AuditCheck>> {
        let p = self.problem;
        let (Some(es), Some(pot)) = (&p.electro, &self.state.pot) else {
            return Ok(Vec::new());
        };
        let q = self.charge();
        let load = core(es.load(&p.basis, &self.state.mech, &q.at_points))?;
        let solved = core(es.solve_with_load(&load, Some(&pot.coeffs)))?;
        let defect = (es.coupling(&load, &solved) - es.tested_field(&solved)).abs();
        let scale = es.tol * (1.0 + load.norm()) * solved.coeffs.norm().max(1.0);
        let mut out = vec![check("electrostatics", "tested_identity", defect / scale, 10.0, 1)];

        let init = DVector::from_fn(es.ndofs(), |_, _| rng.random_range(-3.0..3.0));
        let other = core(es.solve_with_load(&load, Some(&init)))?;
        out.push(check("electrostatics", "uniqueness", es.h1_seminorm_diff(&solved, &other), UNIQUENESS_TOL, 1));

        let best = es.electrostatic_energy(&load, &solved);
        let mut excess: f64 = 0.0;
        for _ in 0..samples.min(20) {
            let mut trial = solved.clone();
            for (k, c) in trial.coeffs.iter_mut().enumerate() {
                if !es.is_fixed(k) {
                    *c += 0.05 * rng.random_range(-1.0..1.0);
                }
            }
            trial.grads = es.mesh.points.iter().map(|x| x.shapes.gradient(trial.coeffs.as_slice())).collect();
            excess = excess.max(es.electrostatic_energy(&load, &trial) - best);
        }
        out.push(check("electrostatics", "reduced_energy_maximal", excess, 1e-12 * (1.0 + best.abs()), samples.min(20)));
        Ok(out)
    }

    /// Area formula and pushforward total for integrands supported inside
    /// the body, on a spatial grid covering its image.
    pub fn change_of_variables(&self) -> Result<Vec<AuditCheck>> {
        let p = self.problem;
        let dim = self.dim();
        let mech = &self.state.mech;
        let (mut lo, mut hi) = (vec![f64::INFINITY; dim], vec![f64::NEG_INFINITY; dim]);
        for x in &p.monitor.points {
            let y = core(mech.position(&p.basis, x))?;
            for a in 0..dim {
                lo[a] = lo[a].min(y[a]);
                hi[a] = hi[a].max(y[a]);
            }
        }
        for a in 0..dim {
            let pad = 0.01 * (hi[a] - lo[a]);
            lo[a] -= pad;
            hi[a] += pad;
        }
        let grid = SpatialGrid::new(dim, &lo, &hi, 16, 6);
        let axes = &p.basis.axes;
        let bump = |x: &Vec2| {
            (0..dim)
                .map(|a| (std::f64::consts::PI * (x[a] - axes[a].lower) / (axes[a].upper - axes[a].lower)).sin().powi(2))
                .product::<f64>()
        };
        let rep = core(area_formula_residual(mech, &p.basis, |x| bump(x) * (1.0 + x[0]), &grid))?;
        let mut out = vec![check(
            "change_of_variables",
            "area_formula",
            rep.residual / rep.rhs.abs().max(f64::MIN_POSITIVE),
            PUSHFORWARD_TOL,
            grid.rule(dim).len(),
        )];
        if rep.failed_points > 0 {
            log::warn!("{} spatial points had no converged preimage", rep.failed_points);
        }
        let q = |x: &Vec2| bump(x) * (0.5 + x[0] * x[0]);
        // the spatial density has kinks at element images, so resolve them
        let per_element = if dim == 1 { 16 } else { 4 };
        let cells = axes.iter().map(|a| per_element * a.elements).max().unwrap_or(16).max(16);
        let fine = SpatialGrid::new(dim, &lo, &hi, cells, 6);
        let (total, _) = core(pushforward_total(mech, &p.basis, q, &fine))?;
        let reference: f64 = p.basis.points.iter().map(|x| x.weight * q(&x.x)).sum();
        out.push(check(
            "change_of_variables",
            "pushforward_total",
            (total - reference).abs() / reference.abs().max(f64::MIN_POSITIVE),
            PUSHFORWARD_TOL,
            1,
        ));
        Ok(out)
    }

    /// Determinant floor and ledger closure at the audited state.
    pub fn state_checks(&self) -> Result<Vec<AuditCheck>> {
        let p = self.problem;
        let l = &self.state.ledger;
        let mut out = vec![AuditCheck {
            suite: "state",
            name: "det_floor".into(),
            value: l.min_det,
            tolerance: p.opts.det_floor,
            samples: p.monitor.len(),
            pass: l.min_det >= p.opts.det_floor,
        }];
        let e = core(p.energies(&self.state.mech, self.state.pot.as_ref(), self.state.diff.as_ref()))?;
        let sum = l.kinetic + l.stored + l.nonlocal + l.elec_coupling - l.elec_field;
        out.push(check("state", "ledger_closure", (sum - e.total()).abs() / e.total().abs().max(1.0), CLOSURE_TOL, 1));
        Ok(out)
    }

    /// Subgradient inequality over positive Galerkin samples, plus a
    /// corrupted chemical potential that must be detected.
    pub fn variational_inequality(&self, rng: &mut ChaCha8Rng, samples: usize) -> Result<Vec<AuditCheck>> {
        let (Some(ctx), Some(d)) = (self.diffusion_ctx(), &self.state.diff) else {
            return Ok(Vec::new());
        };
        let p = self.problem;
        let floor = core(ctx.floor())?;
        let trials: Vec<DVector<f64>> = (0..samples)
            .map(|_| {
                let r = DVector::from_fn(d.m.len(), |_, _| rng.random_range(-1.0..1.0));
                let mut s = rng.random_range(0.01..0.5);
                loop {
                    let trial = &d.m + &r * s;
                    if p.basis.points.iter().all(|q| q.shapes.value(trial.as_slice()) > floor.max(1e-3)) {
                        return trial;
                    }
                    s *= 0.5;
                }
            })
            .collect();
        let v = core(variational_inequality_residual(&ctx, &self.state.mech, d, self.state.pot.as_ref(), &trials))?;
        let mut bad = d.clone();
        let axis = &p.basis.axes[0];
        bad.mu += p.basis.interpolate_fn(|x| 0.2 * (std::f64::consts::PI * (x[0] - axis.lower) / (axis.upper - axis.lower)).sin());
        let vb = core(variational_inequality_residual(&ctx, &self.state.mech, &bad, self.state.pot.as_ref(), &trials))?;
        Ok(vec![
            check("variational_inequality", "violation", v, VAR_INEQ_TOL, samples),
            AuditCheck {
                suite: "variational_inequality",
                name: "corrupted_detected".into(),
                value: vb,
                tolerance: 1e-6,
                samples,
                pass: vb > 1e-6,
            },
        ])
    }

    pub fn all(&self, seed: u64, samples: usize) -> Result<AuditReport> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut checks = self.state_checks()?;
        checks.extend(self.gradients(&mut rng, samples)?);
        checks.extend(self.identities(&mut rng, samples)?);
        checks.extend(self.electrostatics(&mut rng, samples)?);
        checks.extend(self.change_of_variables()?);
        checks.extend(self.variational_inequality(&mut rng, samples)?);
        Ok(AuditReport {
            seed,
            t: self.state.t,
            checks,
        })
    }
}

/// Advances `audit.steps` steps and runs every suite on the result.
pub fn run_audit(sc: &Scenario) -> Result<AuditReport> {
    let (p, mut s) = setup(sc)?;
    for k in 0..sc.audit.steps {
        s = p.advance(&s, sc.time.dt).map_err(|e| anyhow!("audit step {}: {e}", k + 1))?;
    }
    let rep = Audited { problem: &p, state: &s }.all(sc.seed, sc.audit.samples)?;
    for c in &rep.checks {
        let tag = if c.pass { "ok" } else { "FAIL" };
        log::info!("{tag:4} {}/{}: {:.3e} (tolerance {:.1e})", c.suite, c.name, c.value, c.tolerance);
    }
    Ok(rep)
}
