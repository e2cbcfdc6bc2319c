use std::f64::consts::{FRAC_PI_2, PI, TAU};

use approx::assert_abs_diff_eq;
use fourbar::datagen::{generate_dims, GenConfig};
use fourbar::kinematics::{
    classify, dims_from_t, input_range, loop_closure_residual, normalize_angle, simulate_cycle, solve_output,
    t_params, InputRange, KinematicsError, TParams, DEFAULT_FOLD_TOL,
};
use fourbar::{Inversion, LinkageDims, LinkageType, TypeConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::{circle_oracle, reach_margin};

fn valid_dims() -> impl Strategy<Value = LinkageDims> {
    prop::array::uniform4(0.05f64..10.0)
        .prop_map(LinkageDims::from_array)
        .prop_filter("closed linkage", |r| r.is_valid())
}

fn angle_diff(a: f64, b: f64) -> f64 {
    normalize_angle(a - b).abs()
}

#[test]
fn parallelogram_branches() {
    let r = LinkageDims::new(2.0, 1.0, 2.0, 1.0);
    let minus = solve_output(&r, FRAC_PI_2, Inversion::Minus).unwrap();
    let plus = solve_output(&r, FRAC_PI_2, Inversion::Plus).unwrap();
    assert_abs_diff_eq!(minus, FRAC_PI_2, epsilon = 1e-12);
    assert_abs_diff_eq!(plus, 2.0 * (-3.0f64).atan(), epsilon = 1e-12);
    assert_abs_diff_eq!(plus, -2.498091544796509, epsilon = 1e-12);
    assert_abs_diff_eq!(circle_oracle(&r, FRAC_PI_2, Inversion::Minus).unwrap(), minus, epsilon = 1e-12);
    assert_abs_diff_eq!(circle_oracle(&r, FRAC_PI_2, Inversion::Plus).unwrap(), plus, epsilon = 1e-12);
}

#[test]
fn residual_of_a_wrong_pose() {
    let r = LinkageDims::new(2.0, 1.0, 2.0, 1.0);
    assert_abs_diff_eq!(loop_closure_residual(&r, FRAC_PI_2, 0.0), 10f64.sqrt() - 2.0, epsilon = 1e-15);
    assert_abs_diff_eq!(loop_closure_residual(&r.scaled(3.0), FRAC_PI_2, 0.0), 3.0 * (10f64.sqrt() - 2.0), epsilon = 1e-14);
}

#[test]
fn reachability_follows_the_triangle_inequality() {
    // |A-joint - O4| = 2 at theta_in = 0, inside [0.5, 2.5]; 4 at theta_in = pi, outside.
    let r = LinkageDims::new(1.0, 3.0, 1.0, 1.5);
    assert!(reach_margin(&r, 0.0) > 0.0);
    for branch in Inversion::BOTH {
        assert!(solve_output(&r, 0.0, branch).is_ok());
        assert!(matches!(solve_output(&r, PI, branch), Err(KinematicsError::Unreachable { .. })));
    }
    let mut scan = 0;
    for k in 0..3600 {
        let theta = -PI + TAU * k as f64 / 3600.0;
        let margin = reach_margin(&r, theta);
        if margin.abs() < 1e-9 {
            continue;
        }
        scan += 1;
        assert_eq!(solve_output(&r, theta, Inversion::Plus).is_ok(), margin > 0.0, "theta {theta}");
    }
    assert!(scan > 3500);
}

#[test]
fn table_linkages_classify() {
    let double_crank = LinkageDims::new(0.78543, 2.62035, 2.98265, 3.60855);
    let triple_rocker = LinkageDims::new(1.63001, 4.72686, 1.83387, 2.08299);
    let crank_rocker = LinkageDims::new(3.15884, 1.55958, 1.63900, 3.16858);
    assert_eq!(classify(&double_crank, DEFAULT_FOLD_TOL).unwrap(), LinkageType::DoubleCrank);
    assert_eq!(classify(&triple_rocker, DEFAULT_FOLD_TOL).unwrap(), LinkageType::TripleRocker00);
    assert_eq!(classify(&crank_rocker, DEFAULT_FOLD_TOL).unwrap(), LinkageType::CrankRocker);
}

#[test]
fn sign_table() {
    use LinkageType::*;
    let expected = [
        (CrankRocker, [true, true, true]),
        (RockerCrank, [true, false, false]),
        (DoubleCrank, [false, false, true]),
        (DoubleRocker, [false, true, false]),
        (TripleRocker00, [false, false, false]),
        (TripleRocker0Pi, [true, true, false]),
        (TripleRockerPi0, [true, false, true]),
        (TripleRockerPiPi, [false, true, true]),
    ];
    for (ty, signs) in expected {
        assert_eq!(LinkageType::from_signs(signs), ty);
        assert_eq!(ty.input_is_crank(), matches!(ty, CrankRocker | DoubleCrank));
    }
}

#[test]
fn folding_linkage_is_rejected() {
    let r = LinkageDims::new(2.0, 1.0, 2.0, 1.0);
    assert!(matches!(classify(&r, DEFAULT_FOLD_TOL), Err(KinematicsError::Folding { .. })));
    let bad = TParams::from_array([5.0, 0.0, 0.0, 1.0]);
    assert!(matches!(dims_from_t(&bad), Err(KinematicsError::ResultNotValidLinkage(_))));
}

fn rocker_dims(count: usize, seed: u64) -> Vec<(TypeConfig, LinkageDims)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rockers: Vec<TypeConfig> = TypeConfig::all().filter(|c| !c.input_is_crank()).collect();
    (0..count)
        .map(|i| {
            let cfg = rockers[i % rockers.len()];
            (cfg, generate_dims(&GenConfig::new(cfg, 0), &mut rng).unwrap())
        })
        .collect()
}

/// Maximal reachable arcs found by a uniform sweep, refined by bisection.
fn swept_arcs(r: &LinkageDims, steps: usize) -> Vec<(f64, f64)> {
    let at = |k: usize| -PI + TAU * k as f64 / steps as f64;
    let refine = |mut lo: f64, mut hi: f64| {
        let inside_lo = reach_margin(r, lo) >= 0.0;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if (reach_margin(r, mid) >= 0.0) == inside_lo {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let mut edges = Vec::new();
    for k in 0..steps {
        let (a, b) = (at(k), at(k + 1));
        let (ia, ib) = (reach_margin(r, a) >= 0.0, reach_margin(r, b) >= 0.0);
        if ia != ib {
            edges.push((refine(a, b), ib));
        }
    }
    // pair each rising edge with the next falling edge, cyclically
    let mut arcs = Vec::new();
    for (i, &(start, rising)) in edges.iter().enumerate() {
        if rising {
            let (end, _) = edges[(i + 1) % edges.len()];
            let end = if end < start { end + TAU } else { end };
            arcs.push((start, end));
        }
    }
    arcs
}

#[test]
fn rocker_limits_match_a_sweep() {
    for (cfg, r) in rocker_dims(1000, 41) {
        let InputRange::RockerRange { theta_min, theta_max } = input_range(&r, cfg).unwrap() else {
            panic!("{cfg} should rock");
        };
        assert!(theta_min > -PI && theta_min <= PI && theta_min < theta_max);
        let mut steps = 20_000;
        let mut arcs = swept_arcs(&r, steps);
        while arcs.is_empty() && steps < 50_000_000 {
            steps *= 8;
            arcs = swept_arcs(&r, steps);
        }
        assert!(!arcs.is_empty(), "{cfg} {:?}", r.to_array());
        let hit = arcs.iter().any(|&(a, b)| {
            angle_diff(a, theta_min) < 1e-6 && angle_diff(b, theta_max) < 1e-6 && ((b - a) - (theta_max - theta_min)).abs() < 1e-6
        });
        assert!(hit, "{cfg} {:?}: [{theta_min}, {theta_max}] vs {arcs:?}", r.to_array());
        for branch in Inversion::BOTH {
            let lo = solve_output(&r, theta_min, branch).unwrap();
            let hi = solve_output(&r, theta_max, branch).unwrap();
            assert!(angle_diff(lo, solve_output(&r, theta_min, branch.opposite()).unwrap()) < 1e-6, "{cfg} {:?} {} {}", r.to_array(), lo, solve_output(&r, theta_min, branch.opposite()).unwrap());
            assert!(angle_diff(hi, solve_output(&r, theta_max, branch.opposite()).unwrap()) < 1e-6);
        }
    }
}

#[test]
fn rocker_limits_match_a_dense_sweep() {
    for (cfg, r) in rocker_dims(12, 5) {
        let InputRange::RockerRange { theta_min, theta_max } = input_range(&r, cfg).unwrap() else {
            unreachable!()
        };
        let steps = 1_000_000;
        let step = TAU / steps as f64;
        let arcs = swept_arcs(&r, steps);
        assert!(arcs.iter().any(|&(a, b)| angle_diff(a, theta_min) < step && angle_diff(b, theta_max) < step));
    }
}

#[test]
fn crank_inputs_revolve() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for cfg in TypeConfig::all().filter(TypeConfig::input_is_crank) {
        for _ in 0..50 {
            let r = generate_dims(&GenConfig::new(cfg, 0), &mut rng).unwrap();
            assert_eq!(input_range(&r, cfg).unwrap(), InputRange::CrankFull);
            for k in 0..72 {
                let theta = -PI + TAU * k as f64 / 72.0;
                assert!(reach_margin(&r, theta) > 0.0);
                assert_abs_diff_eq!(simulate_cycle(&r, cfg, theta).unwrap(), solve_output(&r, theta, cfg.inversion).unwrap());
            }
        }
    }
}

#[test]
fn return_leg_switches_branch() {
    for (cfg, r) in rocker_dims(64, 8) {
        let InputRange::RockerRange { theta_min, theta_max } = input_range(&r, cfg).unwrap() else {
            unreachable!()
        };
        let mid = 0.5 * (theta_min + theta_max);
        assert_eq!(simulate_cycle(&r, cfg, mid).unwrap(), solve_output(&r, mid, cfg.inversion).unwrap());
        let back = simulate_cycle(&r, cfg, TAU + mid).unwrap();
        assert_abs_diff_eq!(back, solve_output(&r, mid, cfg.inversion.opposite()).unwrap(), epsilon = 1e-12);
        assert!(simulate_cycle(&r, cfg, theta_max + 0.5 * (TAU - (theta_max - theta_min))).is_err());
    }
}

proptest! {
    #[test]
    fn t_round_trip(r in valid_dims()) {
        let back = dims_from_t(&t_params(&r)).unwrap();
        for (a, b) in back.to_array().iter().zip(r.to_array()) {
            prop_assert!((a - b).abs() <= 1e-12 * r.perimeter());
        }
    }

    #[test]
    fn classify_reproduces_sign_triple(t in prop::array::uniform3(-5.0f64..5.0), t4 in 0.0f64..30.0) {
        prop_assume!(t.iter().all(|x| x.abs() > 1e-3));
        let tp = TParams::from_array([t[0], t[1], t[2], t4]);
        if let Ok(r) = dims_from_t(&tp) {
            let ty = classify(&r, DEFAULT_FOLD_TOL).unwrap();
            prop_assert_eq!(ty.signs(), [t[0].signum(), t[1].signum(), t[2].signum()]);
        }
    }

    #[test]
    fn matches_circle_intersection(r in valid_dims(), theta in -PI..PI) {
        prop_assume!(reach_margin(&r, theta) > 1e-6 * r.perimeter());
        for branch in Inversion::BOTH {
            let out = solve_output(&r, theta, branch).unwrap();
            let oracle = circle_oracle(&r, theta, branch).unwrap();
            prop_assert!(angle_diff(out, oracle) < 1e-9, "{} vs {}", out, oracle);
            prop_assert!(loop_closure_residual(&r, theta, out) <= 1e-9 * r.perimeter());
            prop_assert!(out > -PI && out <= PI);
        }
        let a = solve_output(&r, theta, Inversion::Plus).unwrap();
        let b = solve_output(&r, theta, Inversion::Minus).unwrap();
        prop_assert!(angle_diff(a, b) > 0.0);
    }

    #[test]
    fn scale_invariance(r in valid_dims(), theta in -PI..PI, k in 0.01f64..100.0) {
        prop_assume!(reach_margin(&r, theta) > 1e-6 * r.perimeter());
        for branch in Inversion::BOTH {
            let a = solve_output(&r, theta, branch).unwrap();
            let b = solve_output(&r.scaled(k), theta, branch).unwrap();
            prop_assert!(angle_diff(a, b) < 1e-9);
        }
    }

    #[test]
    fn normalized_angles_lie_in_half_open_interval(x in -100.0f64..100.0) {
        let a = normalize_angle(x);
        prop_assert!(a > -PI && a <= PI);
        prop_assert!(angle_diff(a, x) < 1e-12);
    }
}

#[test]
fn random_inputs_hit_reachable_and_unreachable_regions() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (mut ok, mut unreachable) = (0, 0);
    for (_, r) in rocker_dims(200, 2) {
        let theta: f64 = rng.gen_range(-PI..PI);
        match solve_output(&r, theta, Inversion::Plus) {
            Ok(_) => ok += 1,
            Err(KinematicsError::Unreachable { .. }) => {
                assert!(reach_margin(&r, theta) < 1e-9 * r.perimeter());
                unreachable += 1
            }
            Err(e) => panic!("{e}"),
        }
    }
    assert!(ok > 0 && unreachable > 0);
}
