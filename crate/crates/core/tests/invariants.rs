use handbooster::assets::AssetRegistry;
use handbooster::fixture::{canonical_grasp, object_mesh, Flaw, OBJECTS};
use handbooster::labeler::{label_sequence, LabelThresholds, MotionRule};
use handbooster::mesh::shapes;
use handbooster::pose::{build_pose_vector, canonicalize, GraspRecord, HandPose, ObjectPose, PoseVector, Quaternion, Source};
use handbooster::sampler::{cross_distribution_weights, farthest_pose_sampling_from, greedy_minmax_oracle};
use handbooster::skinning::toy;
use handbooster::validator::{intersection_volume, min_surface_distance, validate_grasp, ValidationThresholds};
use nalgebra::{Point3, Vector3};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn vectors(max: usize, dim: usize) -> impl Strategy<Value = Vec<PoseVector>> {
    prop::collection::vec(prop::collection::vec(-1.0f64..1.0, dim), 2..max).prop_filter_map("zero vector", |vs| {
        vs.into_iter().map(|v| PoseVector::new(v).ok()).collect::<Option<Vec<_>>>()
    })
}

fn quaternion() -> impl Strategy<Value = Quaternion> {
    (prop::array::uniform3(-1.0f64..1.0), -3.1f64..3.1).prop_filter_map("degenerate axis", |(a, angle)| {
        let axis = Vector3::from(a);
        (axis.norm() > 1e-3).then(|| Quaternion::from_axis_angle(&axis.normalize(), angle))
    })
}

fn translation() -> impl Strategy<Value = Vector3<f64>> {
    prop::array::uniform3(-300.0f64..300.0).prop_map(Vector3::from)
}

proptest! {
    #[test]
    fn fps_matches_the_oracle(vs in vectors(24, 5), m_frac in 0.0f64..1.0, start_frac in 0.0f64..1.0) {
        let n = vs.len();
        let m = 1 + ((n - 1) as f64 * m_frac) as usize;
        let start = ((n - 1) as f64 * start_frac) as usize;
        let sel = farthest_pose_sampling_from(&vs, m, start).unwrap();
        prop_assert_eq!(&sel.indices, &greedy_minmax_oracle(&vs, m, start).unwrap());
        let mut sorted = sel.indices.clone();
        sorted.sort();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), m);
    }

    #[test]
    fn fps_trace_never_increases(vs in vectors(24, 5)) {
        let sel = farthest_pose_sampling_from(&vs, vs.len(), 0).unwrap();
        prop_assert!(sel.trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn cross_weights_form_a_distribution(syn in vectors(16, 4), real in vectors(8, 4)) {
        let d = cross_distribution_weights("obj", &syn, &real).unwrap();
        let total: f64 = d.probabilities.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        prop_assert!(d.probabilities.iter().all(|p| *p > 0.0));
    }

    #[test]
    fn quaternion_double_cover(q in quaternion(), v in prop::array::uniform3(-10.0f64..10.0)) {
        let [w, x, y, z] = q.components();
        let neg = Quaternion::new(-w, -x, -y, -z).unwrap();
        let v = Vector3::from(v);
        prop_assert!((q.rotate(&v) - neg.rotate(&v)).norm() < 1e-9);
        prop_assert!(q.angle_to(&neg) < 1e-6);
        let (a, b) = (q.sign_normalized().components(), neg.sign_normalized().components());
        prop_assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn triangle_mesh_distance_is_symmetric(t in translation(), q in quaternion()) {
        let a = shapes::cube(Point3::origin(), 20.0);
        let b = shapes::cube(Point3::origin(), 15.0).transformed(&q, &t);
        let ab = min_surface_distance(&a, &b).unwrap();
        let ba = min_surface_distance(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-9);
    }

    #[test]
    fn halving_the_pitch_keeps_cube_fixtures_within_5_percent(
        shift in prop::array::uniform3(-50.0f64..50.0),
        slab in 2.0f64..18.0,
        inner in 4.0f64..16.0,
        contained in any::<bool>(),
    ) {
        let s = Vector3::from(shift);
        let (a, b) = if contained {
            (shapes::cube(Point3::from(s), 20.0), shapes::cube(Point3::from(s), inner))
        } else {
            (
                shapes::cube(Point3::from(s), 20.0),
                shapes::cube(Point3::from(s + Vector3::new(20.0 - slab, 0.0, 0.0)), 20.0),
            )
        };
        let coarse = intersection_volume(&a, &b, 2.0).unwrap();
        let fine = intersection_volume(&a, &b, 1.0).unwrap();
        prop_assert!((coarse - fine).abs() / fine < 0.05, "coarse {coarse} fine {fine}");
    }

    #[test]
    fn labels_follow_the_motion_rule(
        steps in prop::collection::vec((0.0f64..20.0, 0.0f64..30.0), 1..12),
        rre in 1.0f64..15.0,
        rte in 1.0f64..25.0,
    ) {
        let frames: Vec<GraspRecord> = steps
            .iter()
            .enumerate()
            .map(|(i, (deg, mm))| GraspRecord {
                sequence_id: "s".into(),
                frame_index: i as u64,
                object_id: "box".into(),
                source: Source::Real,
                hand: HandPose::neutral(15),
                hand_translation: Vector3::zeros(),
                object: ObjectPose::new(
                    Quaternion::from_axis_angle(&Vector3::z(), if i == 0 { 0.0 } else { deg.to_radians() }),
                    Vector3::new(if i == 0 { 0.0 } else { *mm }, 0.0, 0.0),
                ),
                grasping: None,
            })
            .collect();
        let or = label_sequence(&frames, &LabelThresholds { rre_deg: rre, rte_mm: rte, rule: MotionRule::Or }).unwrap();
        let and = label_sequence(&frames, &LabelThresholds { rre_deg: rre, rte_mm: rte, rule: MotionRule::And }).unwrap();
        prop_assert_eq!(or[0].grasping, Some(false));
        for (o, a) in or.iter().zip(&and) {
            prop_assert!(a.grasping.unwrap() <= o.grasping.unwrap());
        }
        // Raising both thresholds can only clear labels.
        let loose = label_sequence(&frames, &LabelThresholds { rre_deg: rre * 2.0, rte_mm: rte * 2.0, rule: MotionRule::Or }).unwrap();
        for (o, l) in or.iter().zip(&loose) {
            prop_assert!(l.grasping.unwrap() <= o.grasping.unwrap());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn validation_and_embedding_are_rigid_invariant(seed in 0u64..1000, obj in 0usize..3, q in quaternion(), t in translation()) {
        let rig = toy::rig();
        let assets = AssetRegistry::from_meshes(OBJECTS.iter().map(|id| (id.to_string(), object_mesh(id).unwrap())));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = canonical_grasp(&rig, OBJECTS[obj], Flaw::None, &mut rng).unwrap();
        let moved = g.transformed(&q, &t);
        let thresholds = ValidationThresholds::default();
        let a = validate_grasp(&g, &rig, &assets, &thresholds).unwrap();
        let b = validate_grasp(&moved, &rig, &assets, &thresholds).unwrap();
        prop_assert!(a.valid);
        prop_assert_eq!(a.valid, b.valid);
        prop_assert!((a.contact_distance - b.contact_distance).abs() < 1e-6);
        prop_assert_eq!(a.self_penetration_pairs, b.self_penetration_pairs);

        let va = build_pose_vector(&canonicalize(&g)).unwrap();
        let vb = build_pose_vector(&canonicalize(&moved)).unwrap();
        let err = va.as_slice().iter().zip(vb.as_slice()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        prop_assert!(err < 1e-6, "embedding moved by {err}");
    }

    #[test]
    fn stricter_thresholds_only_reject_more(seed in 0u64..1000, obj in 0usize..3, flaw in 0usize..4) {
        let rig = toy::rig();
        let assets = AssetRegistry::from_meshes(OBJECTS.iter().map(|id| (id.to_string(), object_mesh(id).unwrap())));
        let flaw = [Flaw::None, Flaw::PushedIn, Flaw::PulledAway, Flaw::HyperCurled][flaw];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = canonical_grasp(&rig, OBJECTS[obj], flaw, &mut rng).unwrap();
        let loose = ValidationThresholds { contact_mm: 4.0, volume_cm3: 8.0, voxel_mm: 2.0 };
        let strict = ValidationThresholds { contact_mm: 1.5, volume_cm3: 2.0, voxel_mm: 2.0 };
        let l = validate_grasp(&g, &rig, &assets, &loose).unwrap();
        let s = validate_grasp(&g, &rig, &assets, &strict).unwrap();
        prop_assert!(l.reasons.iter().all(|r| s.reasons.contains(r)));
        prop_assert!(s.valid <= l.valid);
    }
}
