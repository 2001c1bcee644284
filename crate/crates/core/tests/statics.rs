mod common;

use std::f64::consts::PI;
use std::sync::Arc;

use elastocharge::dynamics::Problem;
use elastocharge::kinematics::DeformationState;
use elastocharge::tensor::Vec2;

fn loaded(dim: usize, level: usize, charge: Option<f64>) -> Problem {
    let mut p = common::problem(dim, level, charge);
    let face = p.basis.domain.face("left").unwrap();
    let n = p.basis.dofs_per_component();
    p.clamp = (0..dim)
        .flat_map(|c| p.basis.trace_dofs(&[face]).into_iter().map(move |k| c * n + k))
        .collect();
    p.loads.body_force = Some(Arc::new(|x, _| Vec2::new(0.3 * (3.0 * PI * x[0]).sin(), -0.1 * x[0])));
    p.loads.traction = Some(Arc::new(|x, _| if x[0] > 0.999 { Vec2::new(0.2, 0.0) } else { Vec2::zeros() }));
    p
}

fn level_energies(dim: usize, charge: Option<f64>, levels: usize) -> Vec<f64> {
    let mut out = Vec::new();
    let mut prev: Option<(Problem, DeformationState)> = None;
    for level in 0..levels {
        let p = loaded(dim, level, charge);
        let init = match &prev {
            None => DeformationState::identity(&p.basis),
            Some((pp, st)) => {
                let n = p.basis.dofs_per_component();
                let nc = pp.basis.dofs_per_component();
                let mut chi = nalgebra::DVector::zeros(dim * n);
                for c in 0..dim {
                    let fine = p.basis.prolongate(&pp.basis, &st.chi.as_slice()[c * nc..(c + 1) * nc]).unwrap();
                    chi.rows_mut(c * n, n).copy_from(&fine);
                }
                DeformationState::new(&p.basis, chi.clone(), chi * 0.0).unwrap()
            }
        };
        let sol = p.solve_static(&init, 0.0, 1e-10, 100).unwrap();
        out.push(sol.energy);
        prev = Some((p, sol.state));
    }
    out
}

#[test]
fn static_energy_is_nonincreasing_over_levels() {
    for (dim, charge, levels) in [(1, None, 4), (1, Some(0.5), 4), (2, None, 3)] {
        let e = level_energies(dim, charge, levels);
        for w in e.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * w[0].abs(), "d = {dim}, charge {charge:?}: {e:?}");
        }
    }
}
