mod common;

use std::f64::consts::PI;

use elastocharge::diffusion::{gradient_identity_defect, variational_inequality_residual, DiffusionContext};
use elastocharge::dynamics::{Problem, SimulationState};
use elastocharge::kinematics::DeformationState;
use elastocharge::tensor::Vec2;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn start(p: &Problem) -> SimulationState {
    let mech = DeformationState::identity(&p.basis);
    let m0 = p.basis.interpolate_fn(|x| 1.0 + 0.2 * (PI * x[0]).cos());
    p.initial_state(mech, Some(m0), 0.0).unwrap()
}

/// Galerkin samples `m̃ = m + s r` kept positive at quadrature points.
fn samples(p: &Problem, m: &DVector<f64>, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let r = DVector::from_fn(m.len(), |_, _| rng.random_range(-1.0..1.0));
            let mut s = rng.random_range(0.01..0.5);
            loop {
                let trial = m + &r * s;
                if p.basis.points.iter().all(|q| q.shapes.value(trial.as_slice()) > 1e-3) {
                    return trial;
                }
                s *= 0.5;
            }
        })
        .collect()
}

fn ctx(p: &Problem) -> DiffusionContext<'_> {
    DiffusionContext {
        basis: &p.basis,
        material: &p.material,
        params: p.diffusion.as_ref().unwrap(),
        electro: p.electro.as_ref(),
    }
}

#[test]
fn converged_steps_satisfy_the_variational_inequality() {
    let p = common::poroelastic(2, 1e-2, 0.5);
    let mut s = start(&p);
    for k in 0..5 {
        s = p.advance(&s, 0.01).unwrap();
        let d = s.diff.as_ref().unwrap();
        let v = variational_inequality_residual(&ctx(&p), &s.mech, d, s.pot.as_ref(), &samples(&p, &d.m, 50, k)).unwrap();
        assert!(v <= 1e-8, "step {k}: violation {v:e}");
    }
    let d = s.diff.as_ref().unwrap();
    let mut bad = d.clone();
    bad.mu += p.basis.interpolate_fn(|x| 0.2 * (PI * x[0]).sin());
    let v = variational_inequality_residual(&ctx(&p), &s.mech, &bad, s.pot.as_ref(), &samples(&p, &d.m, 50, 99)).unwrap();
    assert!(v > 1e-6, "corrupted potential not detected: {v:e}");
}

/// Largest per-step change of the balance residual at first release.
const STEP_RESIDUAL_BASELINE: f64 = 5.94e-6;

#[test]
fn staggered_step_balances_energy() {
    let p = common::poroelastic(2, 1e-3, 0.05);
    let mut s = start(&p);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let prev = s.ledger.residual;
        s = p.advance(&s, 0.01).unwrap();
        worst = worst.max((s.ledger.residual - prev).abs());
    }
    let l = s.ledger;
    assert!(l.dissipated > 0.0);
    assert!(l.residual.abs() <= 1e-3 * l.dissipated, "residual {:e} dissipated {:e}", l.residual, l.dissipated);
    assert!(worst <= 10.0 * STEP_RESIDUAL_BASELINE, "per-step residual {worst:e}");
}

#[test]
fn closed_system_conserves_mass() {
    let p = common::poroelastic(2, 1e-2, 0.0);
    let s0 = start(&p);
    let mut s = s0.clone();
    for _ in 0..5 {
        s = p.advance(&s, 0.01).unwrap();
    }
    let m0 = s0.diff.as_ref().unwrap().total_mass(&p.basis);
    let m1 = s.diff.as_ref().unwrap().total_mass(&p.basis);
    assert!((m0 - m1).abs() <= 1e-10 * m0);
    assert_eq!(s.ledger.work_mu, 0.0);
}

#[test]
fn chemical_potential_gradient_is_consistent_under_refinement() {
    let mut defects = Vec::new();
    for level in 0..4 {
        let p = common::poroelastic(level, 1e-2, 0.0);
        let c = ctx(&p);
        let mech = DeformationState::from_fns(
            &p.basis,
            |x| Vec2::new(x[0] + 0.05 * (PI * x[0]).sin(), 0.0),
            |_| Vec2::zeros(),
        )
        .unwrap();
        let (mut d, mut pot) = c.initial_state(&mech, p.basis.interpolate_fn(|x| 1.0 + 0.2 * (PI * x[0]).cos())).unwrap();
        let mut worst: f64 = 0.0;
        for _ in 0..4 {
            let step = c.step(&mech, &d, pot.as_ref(), &[], 0.01).unwrap();
            d = step.state;
            pot = step.potential;
            worst = worst.max(gradient_identity_defect(&c, &mech, &d, pot.as_ref()).unwrap());
        }
        defects.push(worst);
    }
    for w in defects.windows(2) {
        assert!(w[1] < 0.5 * w[0], "defects {defects:?}");
    }
    assert!(defects[3] <= 1e-3, "defects {defects:?}");
}
