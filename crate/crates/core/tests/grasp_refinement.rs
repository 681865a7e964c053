use graspopt::bench::{attach_gripper, ChainPreset};
use graspopt::chain::{Configuration, SerialChain};
use graspopt::geometry::Primitive;
use graspopt::graspref::{
    cspace_isf_step, grasp_cost, hand_collision_at, hand_collision_cost, isf_loss, nearest_correspondences,
    point_match_loss, transform_contacts, GraspRefineConfig, GripperDims, GripperModel, IsfStatus,
};
use graspopt::scene::{ObjectSurface, SceneSdf, Target};
use graspopt::trajopt::CollisionModel;
use nalgebra::{Isometry3, Point3, Translation3, Unit, UnitQuaternion, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn planar3() -> (SerialChain, GripperModel) {
    let gripper = GripperModel::new(GripperDims::default()).unwrap();
    let chain = attach_gripper(ChainPreset::Planar3.arm(), &gripper).unwrap();
    (chain, gripper)
}

/// Closed-form planar end effector: heading is the joint sum, links add up
/// along the running heading.
fn planar_ee(chain: &SerialChain, q: &Configuration) -> (Point3<f64>, f64) {
    let mut heading = 0.0;
    let mut p = Vector3::zeros();
    for (i, qi) in q.iter().enumerate() {
        heading += qi;
        let len = match chain.joints().get(i + 1) {
            Some(j) => j.origin.translation.x,
            None => chain.ee_offset().translation.x,
        };
        p += len * Vector3::new(heading.cos(), heading.sin(), 0.0);
    }
    (Point3::from(p), heading)
}

#[test]
fn contacts_follow_the_closed_form_planar_pose() {
    let (chain, gripper) = planar3();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let q = Configuration::from_fn(3, |_, _| rng.random_range(-2.5..2.5));
        let (origin, heading) = planar_ee(&chain, &q);
        let rot = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), heading);
        let (pts, normals) = transform_contacts(&chain, &gripper, &q).unwrap();
        for ((p, n), (h, hn)) in pts.iter().zip(&normals).zip(gripper.contacts().iter().zip(gripper.contact_normals())) {
            assert!((p - (origin + rot * h.coords)).norm() < 1e-12);
            assert!((n.into_inner() - rot * hn.into_inner()).norm() < 1e-12);
        }
    }
}

#[test]
fn pure_translation_keeps_normals() {
    let gripper = GripperModel::new(GripperDims::default()).unwrap();
    let arm = SerialChain::planar(&[0.4], 0.02, 3.0).unwrap();
    let chain = attach_gripper(arm, &gripper).unwrap();
    let q = Configuration::zeros(1);
    let (_, normals) = transform_contacts(&chain, &gripper, &q).unwrap();
    for (n, h) in normals.iter().zip(gripper.contact_normals()) {
        assert!((n.into_inner() - h.into_inner()).norm() < 1e-15);
    }
}

#[test]
fn correspondences_match_exhaustive_search_with_duplicate_filter() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let surface = ObjectSurface::from_primitive(&Primitive::sphere(Point3::origin(), 0.05), 300, 2).unwrap();
    let pts: Vec<Point3<f64>> = (0..100)
        .map(|_| Point3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)))
        .collect();
    let normals = vec![Vector3::x_axis(); pts.len()];
    let corr = nearest_correspondences(&pts, &normals, &surface).unwrap();

    let nearest: Vec<(usize, f64)> = pts
        .iter()
        .map(|p| {
            surface
                .points()
                .iter()
                .enumerate()
                .map(|(i, s)| (i, (s - p).norm()))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap()
        })
        .collect();
    let mut expected = Vec::new();
    for (j, &(idx, d)) in nearest.iter().enumerate() {
        let beaten = nearest
            .iter()
            .enumerate()
            .any(|(k, &(other, dk))| other == idx && (dk < d || (dk == d && k < j)));
        if !beaten {
            expected.push((j, idx));
        }
    }
    let got: Vec<(usize, usize)> = corr.iter().map(|c| (c.contact, c.object)).collect();
    assert_eq!(got, expected);
    assert!(got.len() < pts.len());
}

#[test]
fn empty_surface_is_an_error() {
    let empty = ObjectSurface::new(Vec::new(), Vec::new()).unwrap();
    assert!(nearest_correspondences(&[Point3::origin()], &[Vector3::x_axis()], &empty).is_err());
}

#[test]
fn hand_collision_twist_matches_pose_finite_differences() {
    let gripper = GripperModel::new(GripperDims::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ee = Isometry3::from_parts(
        Translation3::new(0.2, -0.1, 0.05),
        UnitQuaternion::from_scaled_axis(Vector3::new(0.3, -0.2, 0.9)),
    );
    // samples around the inner finger faces, some inside the fingers
    let local: Vec<Point3<f64>> = (0..60)
        .map(|k| {
            let side = if k % 2 == 0 { 1.0 } else { -1.0 };
            Point3::new(
                rng.random_range(0.005..0.055),
                side * rng.random_range(0.035..0.056),
                rng.random_range(-0.008..0.008),
            )
        })
        .collect();
    let surface = ObjectSurface::new(
        local.iter().map(|p| ee * p).collect(),
        vec![Unit::new_normalize(Vector3::new(1.0, 0.0, 0.0)); local.len()],
    )
    .unwrap();
    let padding = 0.02;
    let (cost, grad) = hand_collision_at(&ee, &gripper, &surface, padding);
    assert!(cost > 0.0);
    let origin = ee.translation.vector;
    let moved = |d: &Vector6<f64>| {
        let r = UnitQuaternion::from_scaled_axis(Vector3::new(d[0], d[1], d[2]));
        let pose = Isometry3::from_parts(
            Translation3::from(r * origin + Vector3::new(d[3], d[4], d[5]) + (origin - r * origin)),
            r * ee.rotation,
        );
        hand_collision_at(&pose, &gripper, &surface, padding).0
    };
    let h = 1e-7;
    let fd = Vector6::from_fn(|i, _| {
        let e = Vector6::ith(i, h);
        (moved(&e) - moved(&-e)) / (2.0 * h)
    });
    assert!((fd - grad).norm() / grad.norm() < 1e-3, "fd {fd:?} analytic {grad:?}");
}

#[test]
fn far_object_has_no_hand_cost() {
    let (chain, gripper) = planar3();
    let surface = ObjectSurface::from_primitive(&Primitive::sphere(Point3::new(5.0, 5.0, 0.0), 0.1), 100, 0).unwrap();
    let (c, g) = hand_collision_cost(&Configuration::zeros(3), &chain, &gripper, &surface, 0.02).unwrap();
    assert_eq!(c, 0.0);
    assert_eq!(g, Vector6::zeros());
}

fn sphere_grasp_fixture(offset: &Configuration) -> (SerialChain, GripperModel, SceneSdf, Configuration) {
    let (chain, gripper) = planar3();
    let q_true = Configuration::from_vec(vec![0.3, 0.5, 0.4]);
    let ee = chain.end_effector(&q_true).unwrap();
    let target = Target::new(Primitive::sphere(ee * Point3::new(0.05, 0.0, 0.0), 0.03), 800, 1).unwrap();
    let scene = SceneSdf::new(Vec::new(), Some(target));
    (chain, gripper, scene, q_true + offset)
}

#[test]
fn grasp_cost_is_the_weighted_sum_of_its_parts() {
    let (chain, gripper, scene, q) = sphere_grasp_fixture(&Configuration::from_vec(vec![0.02, -0.03, 0.05]));
    let points = chain.sample_body_points(10, 0);
    let model = CollisionModel::new(&scene, &chain, &points);
    let object = &scene.target.as_ref().unwrap().surface;
    let cfg = GraspRefineConfig::default();
    let c = grasp_cost(&q, &gripper, object, &model, &cfg).unwrap();

    let (pts, normals) = transform_contacts(&chain, &gripper, &q).unwrap();
    let isf = isf_loss(&nearest_correspondences(&pts, &normals, object).unwrap(), cfg.alpha);
    let (hand, _) = hand_collision_cost(&q, &chain, &gripper, object, cfg.hand_padding).unwrap();
    let (arm, _) = model.configuration_cost(&q).unwrap();
    assert_eq!(c.isf, isf);
    assert_eq!(c.hand, hand);
    assert_eq!(c.arm, arm);
    assert!((c.total - (isf + cfg.gamma * (hand + cfg.beta * arm))).abs() < 1e-15);

    let no_collision = GraspRefineConfig { gamma: 0.0, ..cfg };
    assert_eq!(grasp_cost(&q, &gripper, object, &model, &no_collision).unwrap().total, isf);
}

#[test]
fn zero_step_size_leaves_the_grasp_unchanged() {
    let (chain, gripper, scene, q) = sphere_grasp_fixture(&Configuration::from_vec(vec![0.05, -0.05, 0.08]));
    let points = chain.sample_body_points(10, 0);
    let model = CollisionModel::new(&scene, &chain, &points);
    let cfg = GraspRefineConfig {
        eta_grasp: 0.0,
        ..Default::default()
    };
    let step = cspace_isf_step(&q, &gripper, &scene.target.as_ref().unwrap().surface, &model, &cfg).unwrap();
    assert_eq!(step.status, IsfStatus::Applied);
    assert_eq!(step.q, q);
}

#[test]
fn out_of_limit_grasp_is_rejected() {
    let (chain, gripper, scene, _) = sphere_grasp_fixture(&Configuration::zeros(3));
    let points = chain.sample_body_points(10, 0);
    let model = CollisionModel::new(&scene, &chain, &points);
    let q = Configuration::from_vec(vec![10.0, 0.0, 0.0]);
    let object = &scene.target.as_ref().unwrap().surface;
    assert!(cspace_isf_step(&q, &gripper, object, &model, &GraspRefineConfig::default()).is_err());
}

#[test]
fn refinement_pulls_a_retracted_grasp_onto_a_sphere() {
    let (chain, gripper) = planar3();
    let q_true = Configuration::from_vec(vec![0.3, 0.5, 0.4]);
    let ee = chain.end_effector(&q_true).unwrap();
    // object sits deeper between the fingers than the contact set expects
    let target = Target::new(Primitive::sphere(ee * Point3::new(0.07, 0.01, 0.0), 0.03), 800, 1).unwrap();
    let scene = SceneSdf::new(Vec::new(), Some(target));
    let points = chain.sample_body_points(10, 0);
    let model = CollisionModel::new(&scene, &chain, &points);
    let object = &scene.target.as_ref().unwrap().surface;
    let cfg = GraspRefineConfig::default();
    let pml = |q: &Configuration| {
        let (pts, normals) = transform_contacts(&chain, &gripper, q).unwrap();
        point_match_loss(&nearest_correspondences(&pts, &normals, object).unwrap())
    };
    let mut q = q_true;
    let c0 = grasp_cost(&q, &gripper, object, &model, &cfg).unwrap().total;
    let p0 = pml(&q);
    for _ in 0..30 {
        let step = cspace_isf_step(&q, &gripper, object, &model, &cfg).unwrap();
        assert_eq!(step.status, IsfStatus::Applied);
        assert!((&step.q - &q).norm() <= cfg.max_step + 1e-12);
        q = step.q;
    }
    let c1 = grasp_cost(&q, &gripper, object, &model, &cfg).unwrap().total;
    let p1 = pml(&q);
    assert!(c1 < 0.5 * c0, "{c0} -> {c1}");
    assert!(p1 < 0.7 * p0, "{p0} -> {p1}");
}
