//! Scenario files: TOML schema, validation, overrides and problem assembly.
//!
//! Quantities are nondimensional. Lengths are in units of the reference
//! domain, times in units of the elastic wave transit time, energies per
//! unit reference volume.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use elastocharge::basis::{build_basis, BasisFamily, GalerkinBasis, ReferenceDomain};
use elastocharge::diffusion::DiffusionParams;
use elastocharge::dynamics::{mass_matrix, vector_mass, ElectroForceForm, LoadSpec, Problem, StepOptions};
use elastocharge::electrostatics::{ElectrostaticParams, Electrostatics};
use elastocharge::energy::{BiotParams, NonlocalKernel, NonlocalOperator, StoredEnergy};
use elastocharge::fields::ChargeSample;
use elastocharge::kinematics::{DeformationState, MonitorSet};
use elastocharge::tensor::Vec2;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::expr::{Expr, VectorExpr};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Mechanics with electrostatics; any diffusion section is ignored.
    #[default]
    Dynamic,
    Static,
    /// Staggered mechanics and diffusion; needs `[diffusion]`.
    Diffusion,
    Audit,
    Study,
}

impl std::str::FromStr for Mode {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "dynamic" => Mode::Dynamic,
            "static" => Mode::Static,
            "diffusion" => Mode::Diffusion,
            "audit" => Mode::Audit,
            "study" => Mode::Study,
            _ => bail!("unknown mode `{s}` (expected dynamic, static, diffusion, audit or study)"),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    /// Lower corner; its length fixes the dimension.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSpec {
    /// `hermite` (d = 1) or `bfs` (d = 2); chosen from the dimension when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<String>,
    /// Refinement level: `2^level` elements per axis.
    pub level: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialSpec {
    /// Shear modulus.
    pub mu: f64,
    /// Bulk penalty on `(det F − 1)²`.
    pub kappa: f64,
    /// Barrier coefficient.
    pub eps_b: f64,
    /// Barrier exponent.
    pub p_b: f64,
    /// Referential mass density, an expression in `x`, `y`.
    #[serde(default = "one")]
    pub rho: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub biot: Option<BiotParams>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElectroSpec {
    /// Vacuum-like permittivity (nondimensional).
    pub eps0: f64,
    /// Coefficient of the `|∇φ|^p` regularization.
    pub eps1: f64,
    /// Regularization exponent; must exceed the dimension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    /// Centre of the truncation box; the domain centre when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
    /// Half-width of the truncation box.
    pub radius: f64,
    /// Spatial elements per axis.
    pub elements: usize,
    /// Referential charge per unit reference volume.
    #[serde(default = "zero")]
    pub q: String,
    /// External spatial charge density.
    #[serde(default = "zero")]
    pub q_ext: String,
    #[serde(default)]
    pub force_form: ElectroForceForm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionSpec {
    /// Spatial mobility, row-major.
    pub mobility: [[f64; 2]; 2],
    /// Boundary permeability.
    #[serde(default)]
    pub alpha: f64,
    #[serde(default = "floor_rel")]
    pub floor_rel: f64,
    #[serde(default = "diff_tol")]
    pub tol: f64,
    #[serde(default = "diff_iter")]
    pub max_iter: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadsSpec {
    /// Body force per unit reference volume, one expression per component.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<Vec<String>>,
    /// Boundary traction per unit reference area.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<Vec<String>>,
    /// Outer chemical potential at the permeable boundary.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_flat: Option<String>,
    /// Faces held at their initial position (`left`, `right`, `bottom`, `top`).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub clamp: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    /// Initial deformation; the identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chi: Option<Vec<String>>,
    /// Initial velocity; zero (with a warning) when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<Vec<String>>,
    /// Initial concentration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSpec {
    /// Final time.
    pub t_end: f64,
    pub dt: f64,
    #[serde(default = "newton_tol")]
    pub newton_tol: f64,
    #[serde(default = "max_newton")]
    pub max_newton: usize,
    #[serde(default = "refresh")]
    pub refresh: usize,
    #[serde(default = "dt_min")]
    pub dt_min: f64,
    /// Smallest admissible `det ∇χ` at monitor points.
    #[serde(default = "det_floor")]
    pub det_floor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Steps between snapshots; 0 disables them.
    #[serde(default = "one_usize")]
    pub snapshot_every: usize,
    /// Reference point tracked in `probe.csv`; the upper corner when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<Vec<f64>>,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            snapshot_every: 1,
            probe: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaticSpec {
    #[serde(default = "static_tol")]
    pub tol: f64,
    #[serde(default = "static_iter")]
    pub max_iter: usize,
    /// Levels of a nested-space sweep; only `basis.level` when empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub levels: Vec<usize>,
}

impl Default for StaticSpec {
    fn default() -> Self {
        StaticSpec {
            tol: static_tol(),
            max_iter: static_iter(),
            levels: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    /// Maximum relative drift of `𝓣 + 𝓔` over the run.
    Drift,
    /// Probe displacement at the final time.
    Probe,
    /// Static equilibrium energy.
    Energy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySpec {
    pub axis: elastocharge::diagnostics::StudyAxis,
    pub values: Vec<f64>,
    pub observable: Observable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditSpec {
    /// Random samples per check.
    #[serde(default = "samples")]
    pub samples: usize,
    /// Time steps taken before auditing.
    #[serde(default)]
    pub steps: usize,
}

impl Default for AuditSpec {
    fn default() -> Self {
        AuditSpec {
            samples: samples(),
            steps: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default)]
    pub mode: Mode,
    /// Seed for audit sampling.
    #[serde(default)]
    pub seed: u64,
    pub domain: DomainSpec,
    pub basis: BasisSpec,
    pub material: MaterialSpec,
    pub kernel: NonlocalKernel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub electrostatics: Option<ElectroSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diffusion: Option<DiffusionSpec>,
    #[serde(default)]
    pub loads: LoadsSpec,
    #[serde(default)]
    pub initial: InitialSpec,
    pub time: TimeSpec,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default, rename = "static")]
    pub statics: StaticSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub study: Option<StudySpec>,
    #[serde(default)]
    pub audit: AuditSpec,
}

fn one() -> String {
    "1".into()
}
fn zero() -> String {
    "0".into()
}
fn one_usize() -> usize {
    1
}
fn floor_rel() -> f64 {
    DiffusionParams::default().floor_rel
}
fn diff_tol() -> f64 {
    DiffusionParams::default().tol
}
fn diff_iter() -> usize {
    DiffusionParams::default().max_iter
}
fn newton_tol() -> f64 {
    StepOptions::default().newton_tol
}
fn max_newton() -> usize {
    StepOptions::default().max_newton
}
fn refresh() -> usize {
    StepOptions::default().refresh
}
fn dt_min() -> f64 {
    StepOptions::default().dt_min
}
fn det_floor() -> f64 {
    StepOptions::default().det_floor
}
fn static_tol() -> f64 {
    1e-10
}
fn static_iter() -> usize {
    100
}
fn samples() -> usize {
    50
}

/// Sets `key` (dotted path) in a TOML document. The value is read as TOML
/// when possible and as a bare string otherwise.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| anyhow!("override `{assignment}` is not of the form key=value"))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("override key `{key}` is malformed");
    }
    let mut table = doc;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| anyhow!("override `{key}`: `{part}` is not a table"))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Parses scenario text after applying overrides.
pub fn parse_str(text: &str, overrides: &[String]) -> Result<Scenario> {
    let mut doc: toml::Table = toml::from_str(text).map_err(|e| anyhow!("scenario is not valid TOML: {e}"))?;
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let sc: Scenario = if overrides.is_empty() {
        toml::from_str(text).map_err(|e| anyhow!("invalid scenario: {e}"))?
    } else {
        toml::Value::Table(doc)
            .try_into()
            .map_err(|e| anyhow!("invalid scenario after overrides: {e}"))?
    };
    for w in sc.validate()? {
        log::warn!("{w}");
    }
    Ok(sc)
}

pub fn parse_scenario(path: &Path, overrides: &[String]) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_str(&text, overrides).with_context(|| format!("in {}", path.display()))
}

fn field<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| anyhow!("field `{name}`: {e}"))
}

fn core<T>(r: elastocharge::Result<T>) -> Result<T> {
    r.map_err(|e| anyhow!("{e}"))
}

impl Scenario {
    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn dim(&self) -> usize {
        self.domain.lower.len()
    }

    pub fn domain(&self) -> Result<ReferenceDomain> {
        let dim = self.dim();
        if !(dim == 1 || dim == 2) {
            bail!("field `domain.lower`: dimension must be 1 or 2, found {dim}");
        }
        if self.domain.upper.len() != dim {
            bail!("field `domain.upper`: needs {dim} entries like `domain.lower`");
        }
        core(ReferenceDomain::new(self.domain.lower.clone(), self.domain.upper.clone()))
    }

    pub fn family(&self) -> Result<BasisFamily> {
        let dim = self.dim();
        let fam = match &self.basis.family {
            Some(s) => field("basis.family", s.parse::<BasisFamily>().map_err(|e| anyhow!("{e}")))?,
            None => BasisFamily::for_dim(dim),
        };
        if fam != BasisFamily::for_dim(dim) {
            bail!("field `basis.family`: {} does not support dimension {dim}", fam.name());
        }
        Ok(fam)
    }

    pub fn stored_energy(&self) -> StoredEnergy {
        let m = &self.material;
        StoredEnergy {
            mu: m.mu,
            kappa: m.kappa,
            eps_b: m.eps_b,
            p_b: m.p_b,
            biot: m.biot.clone(),
        }
    }

    pub fn electro_params(&self) -> Option<ElectrostaticParams> {
        let dim = self.dim();
        self.electrostatics.as_ref().map(|e| ElectrostaticParams {
            eps0: e.eps0,
            eps1: e.eps1,
            p: e.p.unwrap_or_else(|| ElectrostaticParams::default_p(dim)),
            center: e.center.clone().unwrap_or_else(|| {
                self.domain.lower.iter().zip(&self.domain.upper).map(|(a, b)| 0.5 * (a + b)).collect()
            }),
            radius: e.radius,
            elements: e.elements,
        })
    }

    pub fn diffusion_params(&self) -> Option<DiffusionParams> {
        self.diffusion.as_ref().map(|d| DiffusionParams {
            mobility: d.mobility,
            alpha: d.alpha,
            floor_rel: d.floor_rel,
            tol: d.tol,
            max_iter: d.max_iter,
        })
    }

    /// Whether the diffusion coupling is active in this mode.
    pub fn uses_diffusion(&self) -> bool {
        match self.mode {
            Mode::Dynamic | Mode::Static => false,
            _ => self.diffusion.is_some(),
        }
    }

    pub fn step_options(&self) -> StepOptions {
        let t = &self.time;
        StepOptions {
            newton_tol: t.newton_tol,
            max_newton: t.max_newton,
            refresh: t.refresh,
            dt_min: t.dt_min,
            det_floor: t.det_floor,
            force_form: self.electrostatics.as_ref().map(|e| e.force_form).unwrap_or_default(),
        }
    }

    pub fn steps(&self) -> usize {
        (self.time.t_end / self.time.dt).round() as usize
    }

    pub fn probe_point(&self) -> Vec2 {
        let mut p = Vec2::zeros();
        match &self.output.probe {
            Some(v) => p.as_mut_slice()[..v.len()].copy_from_slice(v),
            None => p.as_mut_slice()[..self.dim()].copy_from_slice(&self.domain.upper),
        }
        p
    }

    /// Checks every parameter constraint; returns warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let mut warnings = Vec::new();
        let domain = self.domain()?;
        let dim = self.dim();
        self.family()?;
        if self.basis.level > 7 {
            bail!("field `basis.level`: must be at most 7, found {}", self.basis.level);
        }
        let model = self.stored_energy();
        core(model.validate()).map_err(|e| anyhow!("material: {e}"))?;
        core(self.kernel.validate(dim))?;
        if let Some(w) = model.barrier_warning(dim, self.kernel.gamma) {
            warnings.push(w);
        }
        field("material.rho", Expr::parse(&self.material.rho, dim))?;

        if let Some(p) = self.electro_params() {
            core(p.validate(dim))?;
            let e = self.electrostatics.as_ref().unwrap();
            field("electrostatics.q", Expr::parse(&e.q, dim))?;
            field("electrostatics.q_ext", Expr::parse(&e.q_ext, dim))?;
        }
        if let Some(d) = self.diffusion_params() {
            core(d.validate(dim))?;
            if self.material.biot.is_none() {
                bail!("field `material.biot`: required when a [diffusion] section is present");
            }
            match &self.initial.m {
                None => bail!("field `initial.m`: required when a [diffusion] section is present"),
                Some(m) => {
                    field("initial.m", Expr::parse(m, dim))?;
                }
            }
            if self.electrostatics.as_ref().is_some_and(|e| e.q.trim() != "0") && self.uses_diffusion() {
                warnings.push("electrostatics.q is replaced by the concentration m when diffusion is active".into());
            }
        }
        if self.mode == Mode::Diffusion && self.diffusion.is_none() {
            bail!("field `mode`: diffusion mode needs a [diffusion] section");
        }
        if self.mode == Mode::Dynamic && self.diffusion.is_some() {
            warnings.push("[diffusion] is ignored in dynamic mode".into());
        }

        if let Some(f) = &self.loads.f {
            field("loads.f", VectorExpr::parse(f, dim))?;
        }
        if let Some(g) = &self.loads.g {
            field("loads.g", VectorExpr::parse(g, dim))?;
        }
        if let Some(m) = &self.loads.mu_flat {
            field("loads.mu_flat", Expr::parse(m, dim))?;
            if self.diffusion.is_none() {
                warnings.push("loads.mu_flat has no effect without diffusion".into());
            }
        }
        for c in &self.loads.clamp {
            if domain.face(c).is_none() {
                bail!("field `loads.clamp`: unknown face `{c}` (expected one of {:?})", domain.boundary_tags());
            }
        }
        if let Some(chi) = &self.initial.chi {
            field("initial.chi", VectorExpr::parse(chi, dim))?;
        }
        match &self.initial.v {
            Some(v) => {
                field("initial.v", VectorExpr::parse(v, dim))?;
            }
            None => warnings.push("initial.v missing; using a zero velocity field".into()),
        }

        let t = &self.time;
        if !(t.t_end >= 0.0 && t.t_end.is_finite()) {
            bail!("field `time.t_end`: must be finite and nonnegative");
        }
        if !(t.dt > 0.0) {
            bail!("field `time.dt`: must be positive");
        }
        core(self.step_options().validate()).map_err(|e| anyhow!("time: {e}"))?;
        if let Some(p) = &self.output.probe {
            if p.len() != dim {
                bail!("field `output.probe`: needs {dim} coordinates");
            }
            let mut x = Vec2::zeros();
            x.as_mut_slice()[..dim].copy_from_slice(p);
            if !domain.contains(&x) {
                bail!("field `output.probe`: point {p:?} lies outside the domain");
            }
        }
        if !(self.statics.tol > 0.0) || self.statics.max_iter == 0 {
            bail!("field `static`: tol must be positive and max_iter at least 1");
        }
        if let Some(l) = self.statics.levels.iter().find(|&&l| l > 7) {
            bail!("field `static.levels`: level {l} exceeds 7");
        }
        if self.mode == Mode::Study {
            let s = self
                .study
                .as_ref()
                .ok_or_else(|| anyhow!("field `study`: study mode needs a [study] section"))?;
            if s.values.len() < 3 {
                bail!("field `study.values`: a convergence study needs at least 3 values");
            }
            if s.axis == elastocharge::diagnostics::StudyAxis::Radius && self.electrostatics.is_none() {
                bail!("field `study.axis`: the radius axis needs [electrostatics]");
            }
            if s.axis == elastocharge::diagnostics::StudyAxis::Level
                && s.values.iter().any(|v| v.fract() != 0.0 || *v < 0.0 || *v > 7.0)
            {
                bail!("field `study.values`: levels must be integers in 0..=7");
            }
        }
        if self.audit.samples == 0 {
            bail!("field `audit.samples`: must be at least 1");
        }
        Ok(warnings)
    }

    pub fn build_basis(&self, level: usize) -> Result<GalerkinBasis> {
        core(build_basis(&self.domain()?, level, self.family()?))
    }

    /// Assembles the discrete problem at `level`.
    pub fn build_problem(&self, level: usize) -> Result<Problem> {
        let dim = self.dim();
        let basis = self.build_basis(level)?;
        let model = self.stored_energy();
        let nonlocal = NonlocalOperator::assemble(&self.kernel, &basis);
        let rho = Expr::parse(&self.material.rho, dim)?;
        let mass = vector_mass(dim, &core(mass_matrix(&basis, |x| rho.value(x, 0.0)))?);
        let mut loads = LoadSpec::default();
        if let Some(f) = &self.loads.f {
            loads.body_force = Some(VectorExpr::parse(f, dim)?.vector_fn());
        }
        if let Some(g) = &self.loads.g {
            loads.traction = Some(VectorExpr::parse(g, dim)?.vector_fn());
        }
        if let Some(m) = &self.loads.mu_flat {
            loads.mu_flat = Some(Expr::parse(m, dim)?.scalar_fn());
        }
        let (electro, charge) = match (self.electro_params(), &self.electrostatics) {
            (Some(p), Some(spec)) => {
                let q_ext = Expr::parse(&spec.q_ext, dim)?;
                loads.q_ext = Some(q_ext.scalar_fn());
                let es = core(Electrostatics::new(dim, p, |y| q_ext.value(y, 0.0)))?;
                let q = Expr::parse(&spec.q, dim)?;
                (Some(es), ChargeSample::from_fn(&basis, &q.scalar_fn()))
            }
            _ => (None, ChargeSample::zeros(&basis)),
        };
        let n = basis.dofs_per_component();
        let faces: Vec<_> = self.loads.clamp.iter().filter_map(|c| basis.domain.face(c)).collect();
        let clamp = if faces.is_empty() {
            Vec::new()
        } else {
            let trace = basis.trace_dofs(&faces);
            (0..dim).flat_map(|c| trace.iter().map(move |k| c * n + k)).collect()
        };
        let monitor = MonitorSet::new(&basis, 4);
        Ok(Problem {
            basis,
            material: model,
            nonlocal,
            electro,
            diffusion: if self.uses_diffusion() { self.diffusion_params() } else { None },
            charge,
            mass,
            loads,
            clamp,
            monitor,
            opts: self.step_options(),
        })
    }

    /// Initial deformation and velocity interpolated on `basis`.
    pub fn initial_mech(&self, basis: &GalerkinBasis) -> Result<DeformationState> {
        let dim = self.dim();
        let chi = match &self.initial.chi {
            Some(c) => Some(VectorExpr::parse(c, dim)?),
            None => None,
        };
        let v = match &self.initial.v {
            Some(v) => Some(VectorExpr::parse(v, dim)?),
            None => None,
        };
        core(DeformationState::from_fns(
            basis,
            |x| chi.as_ref().map_or(*x, |c| c.value(x, 0.0)),
            |x| v.as_ref().map_or(Vec2::zeros(), |v| v.value(x, 0.0)),
        ))
    }

    pub fn initial_concentration(&self, basis: &GalerkinBasis) -> Result<Option<DVector<f64>>> {
        if !self.uses_diffusion() {
            return Ok(None);
        }
        let m = Expr::parse(self.initial.m.as_deref().unwrap_or("1"), self.dim())?;
        Ok(Some(basis.interpolate_fn(|x| m.value(x, 0.0))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[domain]
lower = [0.0]
upper = [1.0]

[basis]
level = 1

[material]
mu = 1.0
kappa = 1.0
eps_b = 0.5
p_b = 2.0

[kernel]
gamma = 0.25
k0 = 1e-3
delta = 0.05

[electrostatics]
eps0 = 1.0
eps1 = 0.1
radius = 4.0
elements = 32
q = "0.5"

[initial]
v = ["0"]

[time]
t_end = 0.1
dt = 0.01
"#;

    #[test]
    fn minimal_parses_and_round_trips() {
        let sc = parse_str(MINIMAL, &[]).unwrap();
        assert_eq!(sc.mode, Mode::Dynamic);
        let again = parse_str(&sc.to_toml().unwrap(), &[]).unwrap();
        assert_eq!(sc, again);
    }

    #[test]
    fn p_equal_to_dimension_rejected() {
        let e = parse_str(MINIMAL, &["electrostatics.p=1.0".into()]).unwrap_err();
        let msg = format!("{e:#}");
        assert!(msg.contains("p > d") && msg.contains("electrostatics.p"), "{msg}");
    }

    #[test]
    fn missing_velocity_warns() {
        let text = MINIMAL.replace("[initial]\nv = [\"0\"]\n", "");
        let sc: Scenario = toml::from_str(&text).unwrap();
        let w = sc.validate().unwrap();
        assert!(w.iter().any(|w| w.contains("initial.v")), "{w:?}");
        let p = sc.build_problem(1).unwrap();
        assert_eq!(sc.initial_mech(&p.basis).unwrap().chidot.amax(), 0.0);
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let sc = parse_str(MINIMAL, &["time.dt=0.005".into(), "mode=static".into(), "loads.f=[\"x\"]".into()]).unwrap();
        assert_eq!(sc.time.dt, 0.005);
        assert_eq!(sc.mode, Mode::Static);
        assert_eq!(sc.loads.f, Some(vec!["x".to_string()]));
    }

    #[test]
    fn parse_errors_carry_location() {
        let e = parse_str("[domain]\nlower = [0.0\n", &[]).unwrap_err();
        assert!(format!("{e:#}").contains("line"), "{e:#}");
    }

    #[test]
    fn constraint_violations_name_the_field() {
        let cases: [(&str, &str); 10] = [
            ("material.mu=-1.0", "mu"),
            ("kernel.gamma=-0.6", "kernel.gamma"),
            ("kernel.delta=0.0", "kernel.delta"),
            ("electrostatics.radius=0.0", "electrostatics.radius"),
            ("electrostatics.elements=1", "electrostatics.elements"),
            ("electrostatics.q=\"z\"", "electrostatics.q"),
            ("time.dt=0.0", "time.dt"),
            ("time.det_floor=0.0", "det_floor"),
            ("loads.clamp=[\"top\"]", "loads.clamp"),
            ("initial.chi=[\"x\", \"y\"]", "initial.chi"),
        ];
        for (o, name) in cases {
            let e = parse_str(MINIMAL, &[o.to_string()]).unwrap_err();
            let msg = format!("{e:#}");
            assert!(msg.contains(name), "{o}: {msg}");
        }
    }

    #[test]
    fn diffusion_needs_biot_and_concentration() {
        let base = format!("{MINIMAL}\n[diffusion]\nmobility = [[1.0, 0.0], [0.0, 1.0]]\n");
        let e = parse_str(&base, &["mode=diffusion".into()]).unwrap_err();
        assert!(format!("{e:#}").contains("material.biot"));
        let with_biot = ["mode=diffusion", "material.biot.modulus=1.0", "material.biot.beta=0.5", "material.biot.m_e=1.0", "material.biot.kappa=0.2"];
        let o: Vec<String> = with_biot.iter().map(|s| s.to_string()).collect();
        let e = parse_str(&base, &o).unwrap_err();
        assert!(format!("{e:#}").contains("initial.m"));
        let mut o2 = o.clone();
        o2.push("diffusion.mobility=[[1.0, 0.0], [0.0, -1.0]]".into());
        o2.push("initial.m=\"1\"".into());
        let sc = parse_str(&base, &o2);
        assert!(sc.is_ok(), "1D ignores the second row");
        o2.push("domain.lower=[0.0, 0.0]".into());
        o2.push("domain.upper=[1.0, 1.0]".into());
        let e = parse_str(&base, &o2).unwrap_err();
        assert!(format!("{e:#}").contains("mobility") || format!("{e:#}").contains("entries"), "{e:#}");
    }
}
