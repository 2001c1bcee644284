//! Frame indifference, Piola, Maxwell virtual work and flux split.

mod common;

use std::f64::consts::PI;

use elastocharge::diffusion::{darcy_fick_split, DiffusionContext, DiffusionParams};
use elastocharge::dynamics::electro_force_direct;
use elastocharge::energy::{mech_energy, BiotParams, NonlocalOperator, StoredEnergy};
use elastocharge::kinematics::{interpolate_vector, DeformationState};
use elastocharge::tensor::{d_cofactor, rotation, Mat2, Vec2};
use nalgebra::DVector;
use proptest::prelude::*;

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 20,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn bent(b: &elastocharge::basis::GalerkinBasis, s: f64) -> DeformationState {
    DeformationState::from_fns(
        b,
        |x| Vec2::new(x[0] + s * (PI * x[1]).sin(), x[1] + 0.5 * s * x[0] * x[0]),
        |_| Vec2::zeros(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn mechanical_energy_is_frame_indifferent(theta in -PI..PI, c0 in -2.0..2.0f64, c1 in -2.0..2.0f64, s in -0.1..0.1f64) {
        let b = common::basis(2, 1);
        let op = NonlocalOperator::assemble(&common::kernel(), &b);
        let model = common::material();
        let st = bent(&b, s);
        let q = rotation(theta);
        let n = b.dofs_per_component();
        let shift = interpolate_vector(&b, |_| Vec2::new(c0, c1));
        let mut chi = DVector::zeros(2 * n);
        for a in 0..n {
            for c in 0..2 {
                chi[c * n + a] = q[(c, 0)] * st.chi[a] + q[(c, 1)] * st.chi[n + a] + shift[c * n + a];
            }
        }
        let mut rotated = st.clone();
        rotated.set_chi(&b, chi);
        let e0 = mech_energy(&model, &op, &st, &b, None).unwrap();
        let e1 = mech_energy(&model, &op, &rotated, &b, None).unwrap();
        prop_assert!((e0 - e1).abs() <= 1e-10 * e0.abs().max(1.0), "{e0} vs {e1}");
    }

    #[test]
    fn piola_identity_holds(s in -0.15..0.15f64, x in 0.0..1.0f64, y in 0.0..1.0f64) {
        let b = common::basis(2, 1);
        let st = bent(&b, s);
        let (f, g) = st.gradients(&b, &Vec2::new(x, y)).unwrap();
        for i in 0..2 {
            let mut div = 0.0;
            for j in 0..2 {
                for k in 0..2 {
                    for l in 0..2 {
                        div += d_cofactor(2, i, j, k, l) * g[k][(l, j)];
                    }
                }
            }
            prop_assert!(div.abs() <= 1e-10, "div Cof = {div:e}");
        }
        let cof = elastocharge::tensor::cofactor(2, &f);
        let jac = elastocharge::tensor::det(2, &f);
        prop_assert!((cof.transpose() * f - Mat2::identity() * jac).amax() <= 1e-12);
    }
}

#[test]
fn maxwell_virtual_work() {
    for dim in [1, 2] {
        let p = common::problem(dim, if dim == 1 { 3 } else { 1 }, Some(0.5));
        let es = p.electro.as_ref().unwrap();
        let chi = |x: &Vec2| {
            let mut y = *x;
            y[0] += 0.05 * (PI * x[0]).sin();
            y
        };
        let st = DeformationState::from_fns(&p.basis, chi, |_| Vec2::zeros()).unwrap();
        let pot = p.solve_potential(&st, &p.charge, None).unwrap().unwrap();
        let c = Vec2::from_element(0.5);
        let sigma2 = 1.5 * 1.5;
        let v = |y: &Vec2| {
            let mut d = y - c;
            if dim == 1 {
                d[1] = 0.0;
            }
            d * (-d.norm_squared() / sigma2).exp()
        };
        let zeta = interpolate_vector(&p.basis, |x| v(&chi(x)));
        let work = electro_force_direct(es, &p.basis, &st, &pot, &p.charge).dot(&zeta);
        let h = 1e-6;
        let mut stress_work = 0.0;
        for (qp, g) in es.mesh.points.iter().zip(&pot.grads) {
            let t = es.params.maxwell(dim, &(-g));
            let mut gv = Mat2::zeros();
            for a in 0..dim {
                let mut e = Vec2::zeros();
                e[a] = h;
                let col = (v(&(qp.x + e)) - v(&(qp.x - e))) / (2.0 * h);
                gv.set_column(a, &col);
            }
            stress_work += qp.weight * t.component_mul(&gv).sum();
        }
        let rel = (work - stress_work).abs() / work.abs();
        assert!(rel <= 0.02, "d = {dim}: {work} vs {stress_work} ({rel:e})");
    }
}

#[test]
fn flux_split_sums_to_total() {
    let b = common::basis(2, 1);
    let model = StoredEnergy {
        biot: Some(BiotParams {
            modulus: 2.0,
            beta: 0.4,
            m_e: 1.0,
            kappa: 0.3,
        }),
        ..common::material()
    };
    let es = elastocharge::electrostatics::Electrostatics::new(2, common::electro_params(2), |_| 0.0).unwrap();
    let params = DiffusionParams {
        mobility: [[1.0, 0.2], [0.2, 0.5]],
        ..DiffusionParams::default()
    };
    let ctx = DiffusionContext {
        basis: &b,
        material: &model,
        params: &params,
        electro: Some(&es),
    };
    let mech = bent(&b, 0.08);
    let m = b.interpolate_fn(|x| 1.0 + 0.3 * x[0] * x[1]);
    let (state, pot) = ctx.initial_state(&mech, m).unwrap();
    for x in [Vec2::new(0.2, 0.3), Vec2::new(0.7, 0.9), Vec2::new(0.45, 0.05)] {
        let s = darcy_fick_split(&ctx, &mech, &state, pot.as_ref(), &x).unwrap();
        let sum = s.darcy + s.fick + s.drift;
        assert!((sum - s.total).norm() <= 1e-10 * s.total.norm().max(1.0));
    }
}
