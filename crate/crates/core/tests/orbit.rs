mod common;

use approx::assert_abs_diff_eq;
use billiard_spectrum::geometry::{Obstacle, Scene, ValidatedScene, Vec2};
use billiard_spectrum::orbit::{
    multistart_spread, shoot, solve_orbit, validate_orbit, OrbitError, PeriodicOrbit, ROUNDTRIP_TOL,
};
use billiard_spectrum::symbolic::{enumerate_configurations, Configuration};
use proptest::prelude::*;

fn cfg(s: &str) -> Configuration {
    Configuration::parse(s).unwrap()
}

/// Angle of `v` measured from `n`.
fn angle_from(n: Vec2, v: Vec2) -> f64 {
    (n.x * v.y - n.y * v.x).atan2(n.dot(&v))
}

/// Checks the reflection law directly on the reflection points.
fn reflection_defect(scene: &Scene, orbit: &PeriodicOrbit) -> f64 {
    let k = orbit.k();
    (0..k)
        .map(|j| {
            let o = scene.obstacle(orbit.obstacle_at(j));
            let p = orbit.points[j];
            let n = (p - o.c()).normalize();
            let back = orbit.points[(j + k - 1) % k] - p;
            let fwd = orbit.points[(j + 1) % k] - p;
            (angle_from(n, back) + angle_from(n, fwd)).abs()
        })
        .fold(0.0, f64::max)
}

#[test]
fn reference_lengths() {
    let vs = common::s3();
    for w in ["1-2", "1-3", "2-3"] {
        assert_abs_diff_eq!(solve_orbit(&vs, &cfg(w)).unwrap().tau_primitive, 8.0, epsilon = 1e-9);
    }
    let tri = 3.0 * (6.0 - 3f64.sqrt());
    for w in ["1-2-3", "1-3-2"] {
        assert_abs_diff_eq!(solve_orbit(&vs, &cfg(w)).unwrap().tau_primitive, tri, epsilon = 1e-9);
    }
}

#[test]
fn two_bounce_length_is_twice_the_gap() {
    for vs in common::fleet(7, 6) {
        let n = vs.len();
        for i in 0..n {
            for j in i + 1..n {
                let orbit = solve_orbit(&vs, &Configuration::new(vec![i, j]).unwrap()).unwrap();
                assert_abs_diff_eq!(orbit.tau_primitive, 2.0 * vs.scene().gap(i, j), epsilon = 1e-9);
            }
        }
    }
}

#[test]
fn multistart_agrees() {
    let vs = common::s3();
    for c in enumerate_configurations(3, 6).unwrap() {
        let spread = multistart_spread(&vs, &c, 8, 11).unwrap();
        assert!(spread <= 1e-10, "{c}: spread {spread}");
    }
}

#[test]
fn reflection_law_and_round_trip_up_to_eight() {
    let vs = common::s3();
    for c in enumerate_configurations(3, 8).unwrap() {
        let orbit = solve_orbit(&vs, &c).unwrap();
        assert!(reflection_defect(vs.scene(), &orbit) < 1e-9, "{c}");
        assert!(validate_orbit(&vs, &orbit).passed(), "{c}");
        // Plain f64 shooting loses about a digit per reflection; the
        // extended-precision round trip above covers longer words.
        if c.len() > 6 {
            continue;
        }
        let path = shoot(vs.scene(), orbit.outgoing(0), orbit.k()).unwrap();
        let visited: Vec<usize> = path.iter().map(|b| b.obstacle).collect();
        let mut expected: Vec<usize> = c.word()[1..].to_vec();
        expected.push(c.word()[0]);
        assert_eq!(visited, expected, "{c}");
        let back = path.last().unwrap().state;
        assert!(back.distance(&orbit.outgoing(0)) < ROUNDTRIP_TOL, "{c}");
        let length: f64 = path.iter().map(|b| b.flight).sum();
        assert_abs_diff_eq!(length, orbit.tau_primitive, epsilon = 1e-9);
    }
}

#[test]
fn reversed_ray_has_the_same_length() {
    let vs = common::fleet(3, 1).remove(0);
    for c in enumerate_configurations(vs.len(), 5).unwrap() {
        let a = solve_orbit(&vs, &c).unwrap().tau_primitive;
        let b = solve_orbit(&vs, &c.reversed()).unwrap().tau_primitive;
        assert_abs_diff_eq!(a, b, epsilon = 1e-9);
    }
}

#[test]
fn letter_beyond_scene_is_rejected() {
    let vs = common::s3();
    assert!(matches!(
        solve_orbit(&vs, &cfg("1-4")),
        Err(OrbitError::LetterOutOfRange { letter: 3, r: 3, .. })
    ));
}

#[test]
fn validation_catches_a_moved_obstacle() {
    let vs = common::s3();
    let orbit = solve_orbit(&vs, &cfg("1-2-3")).unwrap();
    let mut scene = vs.scene().clone();
    scene.obstacles[2] = Obstacle::new(3.0, 5.3, 1.0);
    let moved = ValidatedScene::new(scene).unwrap();
    let report = validate_orbit(&moved, &orbit);
    assert!(!report.passed());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn lengths_invariant_under_rigid_motion(
        angle in -3.2f64..3.2,
        dx in -20.0f64..20.0,
        dy in -20.0f64..20.0,
        pick in 0usize..30,
    ) {
        let vs = common::s3();
        let configs = enumerate_configurations(3, 6).unwrap();
        let c = &configs[pick % configs.len()];
        let moved = ValidatedScene::new(vs.scene().rigid_motion(angle, Vec2::new(dx, dy))).unwrap();
        let a = solve_orbit(&vs, c).unwrap().tau_primitive;
        let b = solve_orbit(&moved, c).unwrap().tau_primitive;
        prop_assert!((a - b).abs() < 1e-9 * a);
    }

    #[test]
    fn lengths_scale_with_the_scene(s in 0.5f64..4.0, pick in 0usize..30) {
        let configs = enumerate_configurations(3, 5).unwrap();
        let c = &configs[pick % configs.len()];
        let base = solve_orbit(&common::s3(), c).unwrap().tau_primitive;
        let big = ValidatedScene::new(Scene::equilateral(6.0 * s, s)).unwrap();
        let scaled = solve_orbit(&big, c).unwrap().tau_primitive;
        prop_assert!((scaled - s * base).abs() < 1e-9 * scaled);
    }
}
