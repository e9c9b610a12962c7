mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rkb::model::{Coefficients, Interpolation};
use rkb::riccati::{impulse_response, solve_riccati, transition_matrix, RiccatiOptions};
use rkb::{ModelSpec64, TimeGrid};

use common::scalar;

fn terminal(spec: &ModelSpec64, substeps: usize) -> f64 {
    solve_riccati(
        spec,
        RiccatiOptions {
            substeps,
            ..Default::default()
        },
    )
    .unwrap()
    .at(spec.n_steps())[(0, 0)]
}

#[test]
fn rk4_error_shrinks_sixteenfold_per_halving() {
    let exact = 1f64.tanh();
    let e1 = (terminal(&scalar(0.0, 1.0, 1.0, 1.0, 0.5, 1.0, 10), 1) - exact).abs();
    let e2 = (terminal(&scalar(0.0, 1.0, 1.0, 1.0, 0.5, 1.0, 20), 1) - exact).abs();
    let ratio = e1 / e2;
    assert!((ratio / 16.0 - 1.0).abs() < 0.3, "ratio {ratio}");
}

#[test]
fn steady_state_impulse_response_decays_at_unit_rate() {
    let spec = scalar(0.0, 1.0, 1.0, 1.0, 0.5, 12.0, 1200);
    let p = solve_riccati(&spec, RiccatiOptions::default()).unwrap();
    for (s, t) in [(1000, 1050), (1000, 1200), (1100, 1150)] {
        let a = impulse_response(&spec, &p, s, t).unwrap()[(0, 0)];
        let want = (-(spec.grid.node(t) - spec.grid.node(s))).exp();
        assert!((a - want).abs() < 1e-6, "A = {a}, want {want}");
    }
}

#[test]
fn larger_signal_noise_gives_larger_variance() {
    let lo = solve_riccati(
        &scalar(-0.3, 1.0, 0.5, 1.0, 0.5, 2.0, 200),
        RiccatiOptions::default(),
    )
    .unwrap();
    let hi = solve_riccati(
        &scalar(-0.3, 1.0, 0.9, 1.0, 0.5, 2.0, 200),
        RiccatiOptions::default(),
    )
    .unwrap();
    for k in 0..=200 {
        assert!(hi.at(k)[(0, 0)] >= lo.at(k)[(0, 0)]);
    }
}

fn model_2x2(a: [f64; 4], q: [f64; 3], g: [f64; 2], r: f64) -> ModelSpec64 {
    let l = DMatrix::from_row_slice(2, 2, &[q[0], 0.0, q[1], q[2]]);
    let c = Coefficients {
        state_matrix: DMatrix::from_row_slice(2, 2, &a),
        state_drift: nalgebra::DVector::zeros(2),
        obs_matrix: DMatrix::from_row_slice(1, 2, &g),
        obs_drift: nalgebra::DVector::zeros(1),
        signal_noise: &l * l.transpose(),
        obs_noise: DMatrix::from_element(1, 1, r),
    };
    let mut spec = ModelSpec64::constant(
        TimeGrid::new(1.0, 50).unwrap(),
        c,
        nalgebra::DVector::zeros(2),
        nalgebra::DVector::from_element(1, 0.5),
    );
    spec.coeffs.interpolation = Interpolation::PiecewiseLinear;
    spec
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn variance_stays_symmetric_psd(
        a in prop::array::uniform4(-2.0f64..2.0),
        q in prop::array::uniform3(-1.0f64..1.0),
        g in prop::array::uniform2(-2.0f64..2.0),
        r in 0.2f64..3.0,
    ) {
        let spec = model_2x2(a, q, g, r);
        let p = solve_riccati(&spec, RiccatiOptions::default()).unwrap();
        prop_assert!(p.at(0).iter().all(|&v| v == 0.0));
        for m in p.nodes() {
            prop_assert!(rkb::linalg::asymmetry(m) == 0.0);
            prop_assert!(rkb::linalg::min_eigenvalue(m) >= -1e-10);
        }
    }

    #[test]
    fn flow_property_holds(
        a in prop::array::uniform4(-2.0f64..2.0),
        q in prop::array::uniform3(-1.0f64..1.0),
        g in prop::array::uniform2(-2.0f64..2.0),
        idx in prop::array::uniform3(0usize..=50),
    ) {
        let spec = model_2x2(a, q, g, 1.0);
        let p = solve_riccati(&spec, RiccatiOptions::default()).unwrap();
        let mut i = idx;
        i.sort();
        let (r, s, t) = (i[0], i[1], i[2]);
        let lhs = transition_matrix(&p, s, t).unwrap() * transition_matrix(&p, r, s).unwrap();
        let rhs = transition_matrix(&p, r, t).unwrap();
        prop_assert!((lhs - rhs).abs().max() < 1e-8);
        prop_assert_eq!(transition_matrix(&p, s, s).unwrap(), DMatrix::identity(2, 2));
        prop_assert!(transition_matrix(&p, t, r).is_err() || t == r);
    }
}
