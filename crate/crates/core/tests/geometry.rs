mod common;

use std::f64::consts::PI;

use facelm::geometry::*;
use proptest::prelude::*;

fn point() -> impl Strategy<Value = Point2> {
    (-500.0..500.0f64, -500.0..500.0f64).prop_map(|(x, y)| Point2::new(x, y))
}

fn shape() -> impl Strategy<Value = Shape68> {
    proptest::collection::vec(point(), NUM_LANDMARKS)
        .prop_map(|v| Shape68::from_slice(&v).unwrap())
}

fn transform() -> impl Strategy<Value = SimilarityTransform> {
    (0.25..4.0f64, -PI + 1e-6..PI - 1e-6, point())
        .prop_map(|(s, r, t)| SimilarityTransform::new(s, r, t).unwrap())
}

fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn procrustes_recovers_known_transform(s in shape(), t in transform()) {
        let moved: Vec<Point2> = s.iter().map(|p| apply_transform(&t, *p)).collect();
        let got = procrustes_align(s.points(), &moved).unwrap();
        prop_assert!((got.scale - t.scale).abs() < 1e-9, "{} vs {}", got.scale, t.scale);
        prop_assert!(angle_diff(got.rotation, t.rotation) < 1e-9);
        prop_assert!(got.translation.distance(&t.translation) < 1e-6);
    }
}

proptest! {
    #[test]
    fn transform_scales_all_distances(t in transform(), a in point(), b in point()) {
        prop_assume!(a.distance(&b) > 1e-6);
        let ratio = t.apply(a).distance(&t.apply(b)) / a.distance(&b);
        prop_assert!((ratio / t.scale - 1.0).abs() < 1e-9);
    }

    #[test]
    fn compose_and_inverse_agree_with_application(t in transform(), u in transform(), p in point()) {
        let composed = t.compose(&u).apply(p);
        let sequential = t.apply(u.apply(p));
        prop_assert!(composed.distance(&sequential) < 1e-9 * (1.0 + sequential.norm()));
        let back = t.inverse().apply(t.apply(p));
        prop_assert!(back.distance(&p) < 1e-9 * (1.0 + p.norm() * t.scale.max(1.0 / t.scale)));
    }

    #[test]
    fn interocular_distance_is_rigid_invariant(s in shape(), r in -PI..PI, off in point()) {
        prop_assume!(s[36].distance(&s[45]) > 1e-3);
        let rigid = SimilarityTransform::new(1.0, r, off).unwrap();
        let moved = s.map(|p| rigid.apply(p));
        let before = interocular_distance(&s).unwrap();
        let after = interocular_distance(&moved).unwrap();
        prop_assert!((before - after).abs() <= 1e-9 * before.max(1.0));
    }

    #[test]
    fn mirror_is_an_involution(
        coords in proptest::collection::vec((-32000i32..32000, -32000i32..32000), NUM_LANDMARKS),
        axis in -100i32..100,
    ) {
        // dyadic coordinates and an integer axis keep 2a − x exact
        let s = Shape68::from_fn(|i| Point2::new(coords[i].0 as f64 / 64.0, coords[i].1 as f64 / 64.0));
        let a = axis as f64;
        prop_assert_eq!(mirror_shape(&mirror_shape(&s, a), a), s);
    }

    #[test]
    fn mirror_preserves_interocular_distance(s in shape(), axis in -100.0..100.0f64) {
        prop_assume!(s[36].distance(&s[45]) > 1e-3);
        let m = mirror_shape(&s, axis);
        let d = interocular_distance(&s).unwrap();
        prop_assert!((interocular_distance(&m).unwrap() - d).abs() < 1e-9 * d.max(1.0));
    }
}

/// The swap table must agree with matching every reflected landmark of an
/// asymmetric labelled face to its nearest original landmark.
#[test]
fn mirror_table_matches_nearest_point_oracle() {
    let sym = common::face(100.0, Point2::new(0.0, 0.0));
    // small index-dependent perturbation breaks the symmetry but stays far
    // below the spacing between neighbouring landmarks
    let labelled = Shape68::from_fn(|i| sym[i] + Point2::new(0.01 * (i % 5) as f64, 0.013 * (i % 3) as f64));
    let reflected: Vec<Point2> = labelled.iter().map(|p| Point2::new(-p.x, p.y)).collect();
    let mirrored = mirror_shape(&labelled, 0.0);
    for i in 0..NUM_LANDMARKS {
        let nearest = (0..NUM_LANDMARKS)
            .min_by(|&a, &b| {
                mirrored[i].distance(&sym[a]).total_cmp(&mirrored[i].distance(&sym[b]))
            })
            .unwrap();
        assert_eq!(nearest, i, "landmark {i}");
        assert_eq!(MIRROR_INDEX[MIRROR_INDEX[i]], i);
        assert_eq!(mirrored[i], reflected[MIRROR_INDEX[i]]);
    }
    for fixed in [27, 28, 29, 30, 33, 51, 57, 62, 66] {
        assert_eq!(MIRROR_INDEX[fixed], fixed);
    }
    let pairs = [(0, 16), (17, 26), (36, 45), (39, 42), (40, 47), (31, 35), (48, 54), (59, 55), (60, 64), (67, 65)];
    for (a, b) in pairs {
        assert_eq!(MIRROR_INDEX[a], b);
    }
}

#[test]
fn symmetric_face_is_mirror_fixed_point() {
    let s = common::face(64.0, Point2::new(128.0, 100.0));
    assert!(common::max_point_error(&mirror_shape(&s, 128.0), &s) < 1e-9);
}
