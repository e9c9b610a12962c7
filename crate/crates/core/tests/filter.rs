mod common;

use nalgebra::DVector;
use proptest::prelude::*;
use rkb::eval::{innovation_whiteness, WhitenessBands};
use rkb::filter::innovation_path;
use rkb::sde::{Simulator, ThetaPolicy, ThetaTable};
use rkb::{KalmanBucy, ModelSpec64};

use common::{bench, mean_se};

#[test]
fn classical_error_matches_riccati_under_reference_measure() {
    let spec = bench(500);
    let kb = KalmanBucy::new(&spec).unwrap();
    let sim = Simulator::new(&spec).unwrap();
    let errs = sim
        .map_paths(None, 20_000, 8, |p| {
            let out = kb.classical_filter(&p.dm)?;
            Ok([250, 500].map(|k| (p.x[(0, k)] - out.estimate[(0, k)]).powi(2)))
        })
        .unwrap();
    for (i, k) in [250, 500].into_iter().enumerate() {
        let e: Vec<f64> = errs.iter().map(|r| r[i]).collect();
        let (m, se) = mean_se(&e);
        let p = kb.variance().at(k)[(0, 0)];
        assert!((m - p).abs() < 3.0 * se, "node {k}: {m} ± {se} vs {p}");
    }
}

#[test]
fn matched_corrected_filter_keeps_riccati_variance() {
    let spec = ModelSpec64::scalar(-0.5, 0.2, 1.0, 0.1, 0.8, 1.0, 0.5, 0.5, 1.0, 500).unwrap();
    let kb = KalmanBucy::new(&spec).unwrap();
    let sim = Simulator::new(&spec).unwrap();
    let theta = ThetaTable::from_fn(&spec, |k, _| {
        DVector::from_element(1, if k < 250 { 0.5 } else { -0.3 })
    });
    let policy = ThetaPolicy::deterministic("steps", theta.clone());
    let errs = sim
        .map_paths(Some(&policy), 20_000, 2, |p| {
            let out = kb.theta_filter(&p.dm, &theta)?;
            Ok((p.x[(0, 500)] - out.estimate[(0, 500)]).powi(2))
        })
        .unwrap();
    let (m, se) = mean_se(&errs);
    let p = kb.variance().at(500)[(0, 0)];
    assert!((m - p).abs() < 3.0 * se, "{m} ± {se} vs {p}");
}

fn decompose_gap(steps: usize, theta: impl Fn(usize, usize) -> f64) -> (f64, f64) {
    let spec = bench(steps);
    let kb = KalmanBucy::new(&spec).unwrap();
    let table = ThetaTable::from_fn(&spec, |k, _| DVector::from_element(1, theta(k, steps)));
    let path = Simulator::new(&spec)
        .unwrap()
        .simulate_path(None, 0, 5)
        .unwrap();
    let xbar = kb.classical_filter(&path.dm).unwrap().estimate;
    let xhat = kb.theta_filter(&path.dm, &table).unwrap().estimate;
    let dec = kb.decompose(&xbar, &table).unwrap();
    ((xhat - dec).abs().max(), spec.dt())
}

#[test]
fn decomposition_converges_at_first_order() {
    let flip = |k: usize, n: usize| {
        if (4 * k / n).is_multiple_of(2) {
            0.5
        } else {
            -0.5
        }
    };
    let constant = |_: usize, _: usize| 0.5;
    for (name, th) in [
        ("constant", &constant as &dyn Fn(usize, usize) -> f64),
        ("flip", &flip),
    ] {
        let (e1, dt1) = decompose_gap(1000, th);
        let (e2, _) = decompose_gap(2000, th);
        assert!(e1 < 10.0 * dt1, "{name}: {e1}");
        let order = (e1 / e2).log2();
        assert!((0.7..=1.3).contains(&order), "{name}: order {order}");
    }
}

#[test]
fn matched_innovations_are_white_and_mismatched_are_not() {
    let spec = bench(1000);
    let kb = KalmanBucy::new(&spec).unwrap();
    let sim = Simulator::new(&spec).unwrap();
    let theta = ThetaTable::constant_scalar(&spec, 0.5);
    let policy = ThetaPolicy::deterministic("mu", theta.clone());
    let (matched, blind): (Vec<_>, Vec<_>) = sim
        .map_paths(Some(&policy), 1000, 21, |p| {
            let a = kb.theta_filter(&p.dm, &theta)?;
            let b = kb.classical_filter(&p.dm)?;
            let again = innovation_path(&spec, &p.dm, &a.estimate, Some(theta.values()))?;
            assert_eq!(again, a.innovations);
            Ok((a.innovations, b.innovations))
        })
        .unwrap()
        .into_iter()
        .unzip();
    let r = spec.coeffs.obs_noise[0].clone();
    let good = innovation_whiteness(&matched, &r, spec.dt(), WhitenessBands::default()).unwrap();
    assert!(good.pass(), "{good:?}");
    let bad = innovation_whiteness(&blind, &r, spec.dt(), WhitenessBands::default()).unwrap();
    assert!(!bad.mean_pass, "{bad:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn zero_drift_filter_is_classical_bitwise(
        f in -1.0f64..1.0, g in -2.0f64..2.0, q in 0.0f64..2.0, r in 0.1f64..2.0, seed in any::<u64>(),
    ) {
        let spec = ModelSpec64::scalar(f, 0.1, g, -0.2, q, r, 0.3, 0.0, 1.0, 40).unwrap();
        let kb = KalmanBucy::new(&spec).unwrap();
        let path = Simulator::new(&spec).unwrap().simulate_path(None, 0, seed).unwrap();
        let a = kb.classical_filter(&path.dm).unwrap();
        let b = kb.theta_filter(&path.dm, &ThetaTable::zeros(&spec)).unwrap();
        prop_assert_eq!(a.estimate, b.estimate);
        prop_assert_eq!(a.innovations, b.innovations);
    }

    #[test]
    fn decomposition_is_linear(
        a in prop::collection::vec(-0.5f64..0.5, 4), b in prop::collection::vec(-0.5f64..0.5, 4),
    ) {
        let spec = bench(40);
        let kb = KalmanBucy::new(&spec).unwrap();
        let path = Simulator::new(&spec).unwrap().simulate_path(None, 0, 1).unwrap();
        let xbar = kb.classical_filter(&path.dm).unwrap().estimate;
        let ta = ThetaTable::blocks(&spec, &a.iter().map(|&v| DVector::from_element(1, v)).collect::<Vec<_>>());
        let tb = ThetaTable::blocks(&spec, &b.iter().map(|&v| DVector::from_element(1, v)).collect::<Vec<_>>());
        let da = kb.decompose(&xbar, &ta).unwrap() - &xbar;
        let db = kb.decompose(&xbar, &tb).unwrap() - &xbar;
        let dab = kb.decompose(&xbar, &(&ta + &tb)).unwrap() - &xbar;
        prop_assert!((dab - da - db).abs().max() < 1e-10);
    }
}
