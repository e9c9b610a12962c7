mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rkb::sde::{
    convex_mix_theta, girsanov_density, DensityKernel, Simulator, ThetaPolicy, ThetaTable,
};

use common::{bench, mean_se};

#[test]
fn density_is_a_martingale_with_known_second_moment() {
    let spec = bench(100);
    let sim = Simulator::new(&spec).unwrap();
    let kernel = DensityKernel::new(&spec).unwrap();
    for theta in [0.3, 0.5] {
        let table = ThetaTable::constant_scalar(&spec, theta);
        let f = sim
            .map_paths(None, 100_000, 17, |p| {
                kernel.terminal(table.values(), &p.dv)
            })
            .unwrap();
        let (m1, se1) = mean_se(&f);
        assert!(
            (m1 - 1.0).abs() < 3.0 * se1,
            "theta {theta}: E f = {m1} ± {se1}"
        );
        let f2: Vec<f64> = f.iter().map(|v| v * v).collect();
        let (m2, _) = mean_se(&f2);
        let want = (theta * theta).exp();
        assert!(
            (m2 / want - 1.0).abs() < 0.05,
            "theta {theta}: E f² = {m2}, want {want}"
        );
    }
}

#[test]
fn reweighting_matches_direct_simulation() {
    let spec = bench(100);
    let sim = Simulator::new(&spec).unwrap();
    let kernel = DensityKernel::new(&spec).unwrap();
    let policy = ThetaPolicy::constant(&spec, &DVector::from_element(1, 0.5));
    let table = policy.table().unwrap().clone();
    let n = 40_000;
    let direct = sim
        .map_paths(Some(&policy), n, 3, |p| Ok(p.m[(0, 100)]))
        .unwrap();
    let weighted = sim
        .map_paths(None, n, 4, |p| {
            Ok((kernel.terminal(table.values(), &p.dv)?, p.m[(0, 100)]))
        })
        .unwrap();
    for power in [1, 2] {
        let a: Vec<f64> = direct.iter().map(|m| m.powi(power)).collect();
        let b: Vec<f64> = weighted.iter().map(|(f, m)| f * m.powi(power)).collect();
        let (ma, sa) = mean_se(&a);
        let (mb, sb) = mean_se(&b);
        assert!(
            (ma - mb).abs() < 3.0 * (sa * sa + sb * sb).sqrt(),
            "power {power}: {ma} vs {mb}"
        );
    }
}

#[test]
fn bundles_do_not_depend_on_thread_count() {
    let spec = bench(50);
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            rkb::sde::simulate_theta(&spec, &ThetaPolicy::sign_feedback(), 64, 99).unwrap()
        })
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn path_arrays_have_documented_shapes() {
    let spec = bench(25);
    let bundle = rkb::sde::simulate_p(&spec, 3, 1).unwrap();
    for p in &bundle.paths {
        assert_eq!(p.x.ncols(), 26);
        assert_eq!(p.m.ncols(), 26);
        assert_eq!(p.dm.ncols(), 25);
        assert_eq!(p.dv.ncols(), 25);
        assert_eq!(p.x[(0, 0)], spec.x0[0]);
        assert_eq!(p.m[(0, 0)], 0.0);
    }
    assert_eq!(bundle.measure.tag(), "P");
}

#[test]
fn zero_theta_density_is_exactly_one() {
    let spec = bench(40);
    let bundle = rkb::sde::simulate_p(&spec, 10, 2).unwrap();
    let zero = DMatrix::zeros(1, 40);
    for p in &bundle.paths {
        assert_eq!(girsanov_density(&spec, &zero, &p.dv).unwrap(), 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mixed_drift_stays_in_the_box(
        t1 in prop::collection::vec(-0.5f64..=0.5, 12),
        t2 in prop::collection::vec(-0.5f64..=0.5, 12),
        f1 in prop::collection::vec(0.01f64..10.0, 12),
        f2 in prop::collection::vec(0.01f64..10.0, 12),
        lambda in 0.0f64..=1.0,
    ) {
        let a = DMatrix::from_row_slice(1, 12, &t1);
        let b = DMatrix::from_row_slice(1, 12, &t2);
        let mix = convex_mix_theta(&a, &b, lambda, &f1, &f2).unwrap();
        for k in 0..12 {
            let lo = t1[k].min(t2[k]);
            let hi = t1[k].max(t2[k]);
            prop_assert!(mix[(0, k)] >= lo - 1e-15 && mix[(0, k)] <= hi + 1e-15);
        }
    }

    #[test]
    fn same_seed_same_path(seed in any::<u64>(), id in 0u64..1000) {
        let spec = bench(10);
        let sim = Simulator::new(&spec).unwrap();
        prop_assert_eq!(sim.simulate_path(None, id, seed).unwrap(), sim.simulate_path(None, id, seed).unwrap());
    }
}
