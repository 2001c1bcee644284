//! p-regularized Poisson problem on a truncated spatial box.
//!
//! The potential minimizes `∫ e(∇φ) − ⟨b, φ⟩` with
//! `e(v) = ε0/2 |v|² + ε1/p |v|^p` and homogeneous Dirichlet data on the box
//! boundary. The load `b` collects the referential charge carried along by the
//! deformation, `∫_Ω q ψ(χ(x)) dx`, and an external spatial density.
//!
//! The spatial space uses the same C¹ elements as the reference domain, so
//! the reduced electrostatic energy is continuously differentiable in `χ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{BasisFamily, GalerkinBasis, ReferenceDomain, DEFAULT_QUAD_ORDER};
use crate::error::{invalid, Error, Result};
use crate::kinematics::DeformationState;
use crate::linalg::{BandedCholesky, BandedSym};
use crate::tensor::{Mat2, Vec2};

/// Vacuum permittivity in F/m.
pub const VACUUM_PERMITTIVITY: f64 = 8.854e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElectrostaticParams {
    pub eps0: f64,
    /// Coefficient of the `|∇φ|^p` regularization, `ε_r ε0`.
    pub eps1: f64,
    pub p: f64,
    /// Centre of the truncation box.
    pub center: Vec<f64>,
    /// Half-width of the truncation box.
    pub radius: f64,
    /// Spatial elements per axis.
    pub elements: usize,
}

impl ElectrostaticParams {
    pub fn default_p(dim: usize) -> f64 {
        if dim == 1 {
            2.5
        } else {
            3.0
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.eps0 > 0.0) {
            return Err(invalid("electrostatics.eps0", "must be positive"));
        }
        if !(self.eps1 >= 0.0) {
            return Err(invalid("electrostatics.eps1", "must be nonnegative"));
        }
        if !(self.p > dim as f64) {
            return Err(invalid(
                "electrostatics.p",
                format!("p = {} must exceed the dimension d = {dim} (p > d)", self.p),
            ));
        }
        if !(self.radius > 0.0) {
            return Err(invalid("electrostatics.radius", "must be positive"));
        }
        if self.center.len() != dim {
            return Err(invalid("electrostatics.center", format!("needs {dim} entries")));
        }
        if self.elements < 2 {
            return Err(invalid("electrostatics.elements", "need at least 2 elements per axis"));
        }
        Ok(())
    }

    /// Energy density `e(v)`.
    pub fn density(&self, v: &Vec2) -> f64 {
        let n = v.norm();
        0.5 * self.eps0 * n * n + self.eps1 / self.p * n.powf(self.p)
    }

    /// Effective permittivity `ε0 + ε1 |v|^{p−2}`.
    pub fn permittivity(&self, v: &Vec2) -> f64 {
        self.eps0 + self.eps1 * v.norm().powf(self.p - 2.0)
    }

    /// Maxwell stress `e ⊗ e′(e) − e(e) I` for the field `e`.
    pub fn maxwell(&self, dim: usize, e: &Vec2) -> Mat2 {
        let d = self.permittivity(e) * e;
        e * d.transpose() - self.density(e) * crate::tensor::identity(dim)
    }
}

#[derive(Clone, Debug)]
pub struct PotentialField {
    pub coeffs: DVector<f64>,
    /// `∇φ` at the spatial quadrature points.
    pub grads: Vec<Vec2>,
    pub iterations: usize,
    pub residual: f64,
    /// Objective `∫ e(∇φ) − ⟨b, φ⟩` after each accepted iterate.
    pub objective_history: Vec<f64>,
    pub picard_steps: usize,
}

#[derive(Clone, Debug)]
pub struct Electrostatics {
    pub params: ElectrostaticParams,
    pub mesh: GalerkinBasis,
    fixed: Vec<bool>,
    bw: usize,
    /// `∫ q_ext ψ d𝗑`.
    pub ext_load: DVector<f64>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Electrostatics {
    pub fn new(dim: usize, params: ElectrostaticParams, q_ext: impl Fn(&Vec2) -> f64) -> Result<Self> {
        params.validate(dim)?;
        let domain = ReferenceDomain::centered(&params.center, params.radius)?;
        let mesh = GalerkinBasis::uniform(
            &domain,
            BasisFamily::for_dim(dim),
            &vec![params.elements; dim],
            DEFAULT_QUAD_ORDER,
        )?;
        let n = mesh.dofs_per_component();
        let mut fixed = vec![false; n];
        for k in mesh.trace_dofs(&domain.faces()) {
            fixed[k] = true;
        }
        let bw = if dim == 1 { 3 } else { 3 * mesh.axes[0].ndofs() + 3 };
        let mut ext_load = DVector::zeros(n);
        for p in &mesh.points {
            let v = q_ext(&p.x) * p.weight;
            if v != 0.0 {
                for (k, &a) in p.shapes.indices.iter().enumerate() {
                    ext_load[a] += v * p.shapes.values[k];
                }
            }
        }
        for (k, &f) in fixed.iter().enumerate() {
            if f {
                ext_load[k] = 0.0;
            }
        }
        Ok(Electrostatics {
            params,
            mesh,
            fixed,
            bw,
            ext_load,
            tol: 1e-11,
            max_iter: 60,
        })
    }

    pub fn dim(&self) -> usize {
        self.mesh.dim()
    }

    pub fn ndofs(&self) -> usize {
        self.mesh.dofs_per_component()
    }

    /// Whether dof `k` carries the homogeneous Dirichlet condition.
    pub fn is_fixed(&self, k: usize) -> bool {
        self.fixed[k]
    }

    pub fn zero_field(&self) -> PotentialField {
        PotentialField {
            coeffs: DVector::zeros(self.ndofs()),
            grads: vec![Vec2::zeros(); self.mesh.points.len()],
            iterations: 0,
            residual: 0.0,
            objective_history: vec![0.0],
            picard_steps: 0,
        }
    }

    /// Fails when the deformed body leaves the inner half of the box.
    pub fn check_containment(&self, positions: impl Iterator<Item = Vec2>) -> Result<()> {
        let dim = self.dim();
        let limit = 0.5 * self.params.radius;
        let mut extent: f64 = 0.0;
        for y in positions {
            for a in 0..dim {
                extent = extent.max((y[a] - self.params.center[a]).abs());
            }
        }
        if !(extent <= limit) {
            return Err(Error::BodyEscaped { extent, limit });
        }
        Ok(())
    }

    /// Charge load `∫_Ω q ψ_A(χ(x)) dx` from charges at reference quadrature
    /// points.
    pub fn charge_load(&self, basis: &GalerkinBasis, state: &DeformationState, q: &[f64]) -> Result<DVector<f64>> {
        self.check_containment(state.cache.iter().map(|k| k.pos))?;
        let mut b = DVector::zeros(self.ndofs());
        for ((p, k), &qv) in basis.points.iter().zip(&state.cache).zip(q) {
            if qv == 0.0 {
                continue;
            }
            let s = self.mesh.eval_shapes(&k.pos, 0)?;
            let w = p.weight * qv;
            for (i, &a) in s.indices.iter().enumerate() {
                b[a] += w * s.values[i];
            }
        }
        for (k, &f) in self.fixed.iter().enumerate() {
            if f {
                b[k] = 0.0;
            }
        }
        Ok(b)
    }

    /// Total load including the external density.
    pub fn load(&self, basis: &GalerkinBasis, state: &DeformationState, q: &[f64]) -> Result<DVector<f64>> {
        Ok(self.charge_load(basis, state, q)? + &self.ext_load)
    }

    fn gradients_of(&self, c: &DVector<f64>) -> Vec<Vec2> {
        self.mesh.points.iter().map(|p| p.shapes.gradient(c.as_slice())).collect()
    }

    pub fn field_energy_of(&self, grads: &[Vec2]) -> f64 {
        self.mesh
            .points
            .iter()
            .zip(grads)
            .map(|(p, g)| p.weight * self.params.density(g))
            .sum()
    }

    /// `∫ e(∇φ) d𝗑`.
    pub fn field_energy(&self, pot: &PotentialField) -> f64 {
        self.field_energy_of(&pot.grads)
    }

    fn objective(&self, c: &DVector<f64>, grads: &[Vec2], load: &DVector<f64>) -> f64 {
        self.field_energy_of(grads) - load.dot(c)
    }

    /// Weak residual `∫ ε(∇φ)∇φ·∇ψ − b` with fixed rows zeroed.
    pub fn weak_residual(&self, coeffs: &DVector<f64>, load: &DVector<f64>) -> DVector<f64> {
        let grads = self.gradients_of(coeffs);
        self.residual_from(&grads, load)
    }

    fn residual_from(&self, grads: &[Vec2], load: &DVector<f64>) -> DVector<f64> {
        let mut r = -load.clone();
        for (p, g) in self.mesh.points.iter().zip(grads) {
            let flux = self.params.permittivity(g) * g * p.weight;
            for (k, &a) in p.shapes.indices.iter().enumerate() {
                r[a] += flux.dot(&p.shapes.grads[k]);
            }
        }
        for (k, &f) in self.fixed.iter().enumerate() {
            if f {
                r[k] = 0.0;
            }
        }
        r
    }

    fn matrix(&self, grads: &[Vec2], newton: bool) -> BandedSym {
        let n = self.ndofs();
        let pr = &self.params;
        let mut m = BandedSym::zeros(n, self.bw);
        for (p, g) in self.mesh.points.iter().zip(grads) {
            let gn = g.norm();
            let eps = pr.permittivity(g);
            let extra = if newton && pr.eps1 > 0.0 && gn > 1e-12 {
                pr.eps1 * (pr.p - 2.0) * gn.powf(pr.p - 4.0)
            } else {
                0.0
            };
            let sh = &p.shapes;
            for (i, &a) in sh.indices.iter().enumerate() {
                let ga = sh.grads[i];
                for (j, &b) in sh.indices.iter().enumerate() {
                    if b > a {
                        continue;
                    }
                    let gb = sh.grads[j];
                    let v = eps * ga.dot(&gb) + extra * g.dot(&ga) * g.dot(&gb);
                    m.add(a, b, p.weight * v);
                }
            }
        }
        for (k, &f) in self.fixed.iter().enumerate() {
            if f {
                m.pin(k);
            }
        }
        m
    }

    /// Damped Newton with Armijo backtracking on the convex objective, with
    /// a Picard step when the line search stalls.
    pub fn solve_with_load(&self, load: &DVector<f64>, init: Option<&DVector<f64>>) -> Result<PotentialField> {
        let mut c = init.cloned().unwrap_or_else(|| DVector::zeros(self.ndofs()));
        for (k, &f) in self.fixed.iter().enumerate() {
            if f {
                c[k] = 0.0;
            }
        }
        let scale = 1.0 + load.norm();
        let mut grads = self.gradients_of(&c);
        let mut obj = self.objective(&c, &grads, load);
        let mut history = vec![obj];
        let mut picard = 0;
        for it in 0..self.max_iter {
            let r = self.residual_from(&grads, load);
            let rn = r.norm();
            if rn <= self.tol * scale {
                return Ok(PotentialField {
                    coeffs: c,
                    grads,
                    iterations: it,
                    residual: rn,
                    objective_history: history,
                    picard_steps: picard,
                });
            }
            let chol = self.matrix(&grads, true).cholesky()?;
            let d = -chol.solve(&r);
            // A correction at round-off level cannot reduce the residual further.
            if d.norm() <= 1e-14 * (1.0 + c.norm()) * (self.ndofs() as f64).sqrt() {
                return Ok(PotentialField {
                    coeffs: c,
                    grads,
                    iterations: it,
                    residual: rn,
                    objective_history: history,
                    picard_steps: picard,
                });
            }
            let slope = r.dot(&d);
            let noise = slope.abs() <= 1e-13 * (1.0 + obj.abs());
            let mut alpha = 1.0;
            let mut accepted = None;
            while alpha > 1e-12 {
                let trial = &c + alpha * &d;
                let tg = self.gradients_of(&trial);
                let to = self.objective(&trial, &tg, load);
                if noise || to <= obj + 1e-4 * alpha * slope || (to - obj).abs() <= 1e-15 * obj.abs().max(1.0) {
                    accepted = Some((trial, tg, to));
                    break;
                }
                alpha *= 0.5;
            }
            let (nc, ng, no) = match accepted {
                Some(a) => a,
                None => {
                    picard += 1;
                    let chol = self.matrix(&grads, false).cholesky()?;
                    let nc = chol.solve(load);
                    let ng = self.gradients_of(&nc);
                    let no = self.objective(&nc, &ng, load);
                    (nc, ng, no)
                }
            };
            c = nc;
            grads = ng;
            obj = no;
            history.push(obj);
        }
        let residual = self.residual_from(&grads, load).norm();
        Err(Error::NoConvergence {
            solver: "potential newton",
            iterations: self.max_iter,
            residual,
        })
    }

    pub fn solve_potential(
        &self,
        basis: &GalerkinBasis,
        state: &DeformationState,
        q: &[f64],
        init: Option<&DVector<f64>>,
    ) -> Result<PotentialField> {
        let load = self.load(basis, state, q)?;
        self.solve_with_load(&load, init)
    }

    /// Coupling term `∫_Ω q φ∘χ dx + ∫ q_ext φ d𝗑`.
    pub fn coupling(&self, load: &DVector<f64>, pot: &PotentialField) -> f64 {
        load.dot(&pot.coeffs)
    }

    /// Reduced electrostatic energy: coupling minus field energy.
    pub fn electrostatic_energy(&self, load: &DVector<f64>, pot: &PotentialField) -> f64 {
        self.coupling(load, pot) - self.field_energy(pot)
    }

    /// `∫ ε0/2 |∇φ_ξ|² + ε1/p′ |∇φ_ξ|^p` for a potential solving the shifted
    /// problem.
    pub fn dual_value(&self, pot: &PotentialField) -> f64 {
        let pr = &self.params;
        let pp = pr.p / (pr.p - 1.0);
        self.mesh
            .points
            .iter()
            .zip(&pot.grads)
            .map(|(p, g)| {
                let n = g.norm();
                p.weight * (0.5 * pr.eps0 * n * n + pr.eps1 / pp * n.powf(pr.p))
            })
            .sum()
    }

    /// Load vector of a spatial density `ξ`.
    pub fn density_load(&self, xi: impl Fn(&Vec2) -> f64) -> DVector<f64> {
        let mut b = DVector::zeros(self.ndofs());
        for p in &self.mesh.points {
            let v = xi(&p.x) * p.weight;
            for (k, &a) in p.shapes.indices.iter().enumerate() {
                b[a] += v * p.shapes.values[k];
            }
        }
        for (k, &f) in self.fixed.iter().enumerate() {
            if f {
                b[k] = 0.0;
            }
        }
        b
    }

    /// `∫ ε0|∇φ|² + ε1|∇φ|^p d𝗑`, the right side of the tested weak equation.
    pub fn tested_field(&self, pot: &PotentialField) -> f64 {
        let pr = &self.params;
        self.mesh
            .points
            .iter()
            .zip(&pot.grads)
            .map(|(p, g)| {
                let n = g.norm();
                p.weight * (pr.eps0 * n * n + pr.eps1 * n.powf(pr.p))
            })
            .sum()
    }

    /// `(φ, ∇φ, ∇²φ)` at a spatial point; zero outside the box.
    pub fn evaluate(&self, pot: &PotentialField, y: &Vec2) -> (f64, Vec2, Mat2) {
        self.mesh
            .evaluate(pot.coeffs.as_slice(), y)
            .unwrap_or((0.0, Vec2::zeros(), Mat2::zeros()))
    }

    pub fn maxwell_stress(&self, pot: &PotentialField, y: &Vec2) -> Mat2 {
        let e = -self.evaluate(pot, y).1;
        self.params.maxwell(self.dim(), &e)
    }

    /// Factor of the Newton Hessian at a solved potential; its inverse is the
    /// derivative of the potential with respect to the load.
    pub fn tangent_factor(&self, pot: &PotentialField) -> Result<BandedCholesky> {
        self.matrix(&pot.grads, true).cholesky()
    }

    /// `C_{Ab} = ∫_Ω ψ_A(χ(x)) ψ_b(x) dx`, the derivative of the charge load
    /// with respect to referential charge coefficients.
    pub fn charge_coupling(&self, basis: &GalerkinBasis, state: &DeformationState) -> Result<DMatrix<f64>> {
        let mut c = DMatrix::zeros(self.ndofs(), basis.dofs_per_component());
        for (p, k) in basis.points.iter().zip(&state.cache) {
            let s = self.mesh.eval_shapes(&k.pos, 0)?;
            for (i, &a) in s.indices.iter().enumerate() {
                if self.fixed[a] {
                    continue;
                }
                for (j, &b) in p.shapes.indices.iter().enumerate() {
                    c[(a, b)] += p.weight * s.values[i] * p.shapes.values[j];
                }
            }
        }
        Ok(c)
    }

    /// `H¹` seminorm of the difference between two potentials.
    pub fn h1_seminorm_diff(&self, a: &PotentialField, b: &PotentialField) -> f64 {
        self.mesh
            .points
            .iter()
            .zip(a.grads.iter().zip(&b.grads))
            .map(|(p, (ga, gb))| p.weight * (ga - gb).norm_squared())
            .sum::<f64>()
            .sqrt()
    }
}
