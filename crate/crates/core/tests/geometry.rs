mod common;

use approx::assert_abs_diff_eq;
use billiard_spectrum::geometry::{GeometryError, Obstacle, Scene, ValidatedScene, Vec2};
use proptest::prelude::*;

#[test]
fn reference_constants_match_closed_form() {
    let c = *common::s3().constants();
    assert_abs_diff_eq!(c.d0, 8.0, epsilon = 1e-12);
    assert_abs_diff_eq!(c.d1, 4.0, epsilon = 1e-12);
    assert_abs_diff_eq!(c.d2, 1.0, epsilon = 1e-12);
    // Distance from a disk to the segment joining the other two centers,
    // minus the radius: the triangle height minus one.
    assert_abs_diff_eq!(c.eta0, 3.0 * 3f64.sqrt() - 2.0, epsilon = 1e-9);
    assert!(c.psi0 > 0.0 && c.psi0 < std::f64::consts::PI);
}

#[test]
fn gaps_of_unequal_disks() {
    let scene = Scene::new(
        "uneven",
        vec![
            Obstacle::new(0.0, 0.0, 1.0),
            Obstacle::new(7.0, 0.0, 0.5),
            Obstacle::new(3.0, 6.0, 1.5),
        ],
    );
    let c = *ValidatedScene::new(scene.clone()).unwrap().constants();
    let gaps = [5.5, (9.0f64 + 36.0).sqrt() - 2.5, (16.0f64 + 36.0).sqrt() - 2.0];
    let lo = gaps.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = gaps.iter().cloned().fold(0.0, f64::max);
    assert_abs_diff_eq!(c.d0, 2.0 * lo, epsilon = 1e-12);
    assert_abs_diff_eq!(c.d1, hi, epsilon = 1e-12);
    assert_abs_diff_eq!(c.d2, 2.0 * hi / (2.0 * lo), epsilon = 1e-12);
    assert_abs_diff_eq!(scene.min_gap(), lo, epsilon = 1e-12);
}

#[test]
fn rejects_bad_scenes() {
    let two = Scene::new("two", vec![Obstacle::new(0.0, 0.0, 1.0), Obstacle::new(5.0, 0.0, 1.0)]);
    assert_eq!(ValidatedScene::new(two).unwrap_err(), GeometryError::TooFewObstacles(2));

    let overlap = Scene::new(
        "overlap",
        vec![
            Obstacle::new(0.0, 0.0, 1.0),
            Obstacle::new(1.5, 0.0, 1.0),
            Obstacle::new(0.0, 5.0, 1.0),
        ],
    );
    assert!(matches!(
        ValidatedScene::new(overlap),
        Err(GeometryError::OverlappingObstacles(0, 1))
    ));

    let collinear = Scene::new(
        "collinear",
        vec![
            Obstacle::new(0.0, 0.0, 1.0),
            Obstacle::new(4.0, 0.0, 1.0),
            Obstacle::new(8.0, 0.0, 1.0),
        ],
    );
    assert!(matches!(
        ValidatedScene::new(collinear),
        Err(GeometryError::EclipseViolation(..))
    ));

    let negative = Scene::new(
        "negative",
        vec![
            Obstacle::new(0.0, 0.0, -1.0),
            Obstacle::new(4.0, 0.0, 1.0),
            Obstacle::new(8.0, 3.0, 1.0),
        ],
    );
    assert!(matches!(
        ValidatedScene::new(negative),
        Err(GeometryError::InvalidRadius { index: 0, .. })
    ));
}

#[test]
fn toml_round_trip() {
    let scene = common::s3().scene().clone();
    let text = scene.to_toml();
    assert!(text.contains("[[obstacle]]"));
    assert_eq!(Scene::from_toml(&text).unwrap(), scene);
}

#[test]
fn fleet_scenes_are_valid() {
    for vs in common::fleet(2024, 10) {
        assert!(vs.scene().min_gap() >= 1.2);
        assert!(ValidatedScene::new(vs.scene().clone()).is_ok());
    }
}

proptest! {
    #[test]
    fn constants_invariant_under_rigid_motion(
        angle in -3.2f64..3.2,
        dx in -50.0f64..50.0,
        dy in -50.0f64..50.0,
        seed in 0u64..1000,
    ) {
        let vs = common::fleet(seed, 1).remove(0);
        let moved = vs.scene().rigid_motion(angle, Vec2::new(dx, dy));
        let a = *vs.constants();
        let b = *ValidatedScene::new(moved).unwrap().constants();
        prop_assert!((a.d0 - b.d0).abs() < 1e-9);
        prop_assert!((a.d1 - b.d1).abs() < 1e-9);
        prop_assert!((a.d2 - b.d2).abs() < 1e-9);
        prop_assert!((a.eta0 - b.eta0).abs() < 1e-9);
        prop_assert!((a.psi0 - b.psi0).abs() < 1e-6);
    }

    #[test]
    fn signed_distance_matches_definition(x in -10.0f64..10.0, y in -10.0f64..10.0, r in 0.1f64..3.0) {
        let o = Obstacle::new(1.0, -2.0, r);
        let p = Vec2::new(x, y);
        prop_assert!((o.signed_distance(p) - ((p - o.c()).norm() - r)).abs() < 1e-12);
    }
}
