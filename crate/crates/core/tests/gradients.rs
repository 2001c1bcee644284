//! Analytic derivatives against central differences of their energies.

mod common;

use elastocharge::diffusion::chemical_potential;
use elastocharge::energy::{hyperstress_pairing, mech_energy, mech_force, BiotParams, StoredEnergy};
use elastocharge::kinematics::DeformationState;
use elastocharge::tensor::Mat2;
use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-6;

fn biot_material() -> StoredEnergy {
    StoredEnergy {
        biot: Some(BiotParams {
            modulus: 2.0,
            beta: 0.4,
            m_e: 1.0,
            kappa: 0.3,
        }),
        ..common::material()
    }
}

fn perturbed(dim: usize, level: usize, seed: u64, amp: f64) -> (elastocharge::basis::GalerkinBasis, DeformationState) {
    let b = common::basis(dim, level);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut st = DeformationState::identity(&b);
    let chi = st.chi.map(|c| c + amp * rng.random_range(-1.0..1.0));
    st.set_chi(&b, chi);
    (b, st)
}

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 24,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn stress_is_derivative_of_density(
        a in -0.3..0.3f64, b in -0.3..0.3f64, c in -0.3..0.3f64, d in -0.3..0.3f64,
        m in 0.5..2.0f64, with_biot in any::<bool>(), dim in 1usize..=2,
    ) {
        let model = if with_biot { biot_material() } else { common::material() };
        let mut f = Mat2::identity() + Mat2::new(a, b, c, d);
        if dim == 1 {
            f = Mat2::new(f[(0, 0)], 0.0, 0.0, 0.0);
        }
        let m = with_biot.then_some(m);
        let s = model.stress(dim, &f, m).unwrap();
        let h = 1e-6;
        let mut fd = Mat2::zeros();
        for i in 0..dim {
            for j in 0..dim {
                let mut fp = f;
                let mut fm = f;
                fp[(i, j)] += h;
                fm[(i, j)] -= h;
                fd[(i, j)] = (model.density(dim, &fp, m).unwrap() - model.density(dim, &fm, m).unwrap()) / (2.0 * h);
            }
        }
        let err = (s - fd).amax() / s.amax().max(1.0);
        prop_assert!(err <= TOL, "stress error {err:e}");
    }

    #[test]
    fn chemical_potential_is_derivative_in_m(
        a in -0.3..0.3f64, d in -0.3..0.3f64, m in 0.3..3.0f64, phi in -1.0..1.0f64,
    ) {
        let model = biot_material();
        let f = Mat2::new(1.0 + a, 0.1, -0.05, 1.0 + d);
        let mu = chemical_potential(&model, 2, &f, m, phi).unwrap();
        let h = 1e-6;
        let fd = (model.density(2, &f, Some(m + h)).unwrap() - model.density(2, &f, Some(m - h)).unwrap()) / (2.0 * h) + phi;
        let err = (mu - fd).abs() / mu.abs().max(1.0);
        prop_assert!(err <= TOL, "chemical potential error {err:e}");
    }

    #[test]
    fn hyperstress_pairing_is_derivative_of_nonlocal_energy(seed in 0u64..1000, dim in 1usize..=2) {
        let (b, st) = perturbed(dim, if dim == 1 { 2 } else { 0 }, seed, 0.02);
        let op = elastocharge::energy::NonlocalOperator::assemble(&common::kernel(), &b);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
        let zeta = DVector::from_fn(st.chi.len(), |_, _| rng.random_range(-1.0..1.0));
        let an = hyperstress_pairing(&op, &st, &b, &zeta);
        let h = 1e-4;
        let fd = (op.energy(dim, &(&st.chi + &zeta * h)) - op.energy(dim, &(&st.chi - &zeta * h))) / (2.0 * h);
        let err = (an - fd).abs() / an.abs().max(1e-8);
        prop_assert!(err <= TOL, "hyperstress error {err:e} ({an} vs {fd})");
    }

    #[test]
    fn mech_force_is_gradient_of_mech_energy(seed in 0u64..1000, dim in 1usize..=2, with_biot in any::<bool>()) {
        let (b, st) = perturbed(dim, if dim == 1 { 2 } else { 0 }, seed, 0.02);
        let model = if with_biot { biot_material() } else { common::material() };
        let op = elastocharge::energy::NonlocalOperator::assemble(&common::kernel(), &b);
        let m_q: Option<Vec<f64>> = with_biot.then(|| b.points.iter().map(|p| 1.0 + 0.3 * p.x[0]).collect());
        let f = mech_force(&model, &op, &st, &b, m_q.as_deref()).unwrap();
        let h = 1e-6;
        let mut fd = DVector::zeros(f.len());
        for k in 0..f.len() {
            let mut sp = st.clone();
            let mut sm = st.clone();
            let mut cp = st.chi.clone();
            let mut cm = st.chi.clone();
            cp[k] += h;
            cm[k] -= h;
            sp.set_chi(&b, cp);
            sm.set_chi(&b, cm);
            fd[k] = (mech_energy(&model, &op, &sp, &b, m_q.as_deref()).unwrap()
                - mech_energy(&model, &op, &sm, &b, m_q.as_deref()).unwrap())
                / (2.0 * h);
        }
        let err = (&f - &fd).norm() / f.norm().max(1e-8);
        prop_assert!(err <= TOL, "force error {err:e}");
    }
}
