#![allow(dead_code)]

use std::sync::Arc;

use elastocharge::basis::{build_basis, BasisFamily, GalerkinBasis, ReferenceDomain};
use elastocharge::dynamics::{mass_matrix, vector_mass, LoadSpec, Problem, StepOptions};
use elastocharge::electrostatics::{ElectrostaticParams, Electrostatics};
use elastocharge::energy::{NonlocalKernel, NonlocalOperator, StoredEnergy};
use elastocharge::fields::{ChargeSample, ScalarFn};
use elastocharge::kinematics::MonitorSet;

pub fn material() -> StoredEnergy {
    StoredEnergy {
        mu: 1.0,
        kappa: 1.0,
        eps_b: 0.5,
        p_b: 2.0,
        biot: None,
    }
}

pub fn kernel() -> NonlocalKernel {
    NonlocalKernel {
        gamma: 0.25,
        k0: 1e-3,
        delta: 0.05,
    }
}

pub fn electro_params(dim: usize) -> ElectrostaticParams {
    ElectrostaticParams {
        eps0: 1.0,
        eps1: 0.1,
        p: ElectrostaticParams::default_p(dim),
        center: vec![0.5; dim],
        radius: 4.0,
        elements: if dim == 1 { 64 } else { 16 },
    }
}

pub fn basis(dim: usize, level: usize) -> GalerkinBasis {
    build_basis(&ReferenceDomain::unit(dim), level, BasisFamily::for_dim(dim)).unwrap()
}

/// Free body with optional uniform charge.
pub type Setup = Problem;

pub fn problem(dim: usize, level: usize, charge: Option<f64>) -> Problem {
    problem_rho(dim, level, charge, 1.0)
}

pub fn problem_rho(dim: usize, level: usize, charge: Option<f64>, rho: f64) -> Problem {
    let b = basis(dim, level);
    let (electro, q) = match charge {
        Some(c) => {
            let es = Electrostatics::new(dim, electro_params(dim), |_| 0.0).unwrap();
            let f: ScalarFn = Arc::new(move |_, _| c);
            (Some(es), ChargeSample::from_fn(&b, &f))
        }
        None => (None, ChargeSample::zeros(&b)),
    };
    let nonlocal = NonlocalOperator::assemble(&kernel(), &b);
    let mass = vector_mass(dim, &mass_matrix(&b, |_| rho).unwrap());
    let monitor = MonitorSet::new(&b, 4);
    Problem {
        basis: b,
        material: material(),
        nonlocal,
        electro,
        diffusion: None,
        charge: q,
        mass,
        loads: LoadSpec::default(),
        clamp: vec![],
        monitor,
        opts: StepOptions::default(),
    }
}

pub fn biot_material() -> StoredEnergy {
    StoredEnergy {
        biot: Some(elastocharge::energy::BiotParams {
            modulus: 1.0,
            beta: 0.5,
            m_e: 1.0,
            kappa: 0.2,
        }),
        ..material()
    }
}

/// 1D poroelastic bar, charged by its diffusant, exchanging through the
/// boundary.
pub fn poroelastic(level: usize, mobility: f64, alpha: f64) -> Problem {
    let mut p = problem_rho(1, level, Some(0.0), 10.0);
    p.material = biot_material();
    p.diffusion = Some(elastocharge::diffusion::DiffusionParams {
        mobility: [[mobility, 0.0], [0.0, mobility]],
        alpha,
        ..Default::default()
    });
    p.loads.mu_flat = Some(Arc::new(|_, _| 3.0));
    p
}
