use graspopt::chain::{BodyPoint, SerialChain};
use graspopt::geometry::Primitive;
use graspopt::scene::{Field, SceneSdf};
use graspopt::trajopt::{
    motion_cost, obstacle_cost, obstacle_gradient, obstacle_terms, select_worst, gradient_of_terms,
    CollisionModel, MotionObjectiveConfig, Trajectory,
};
use nalgebra::{DMatrix, DVector, Point3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sweep_scene() -> SceneSdf {
    SceneSdf::new(
        vec![Field::Primitive(Primitive::sphere(Point3::new(0.9, 0.9, 0.0), 0.3))],
        None,
    )
}

fn perturbed(traj: &Trajectory, i: usize, j: usize, h: f64) -> Trajectory {
    let mut w = traj.waypoints().clone();
    w[(i, j)] += h;
    let mut out = traj.clone();
    out.set_waypoints(w).unwrap();
    out
}

/// Naive double loop over (t, u) using only public kinematics and SDF queries.
fn brute_force_cost(traj: &Trajectory, scene: &SceneSdf, chain: &SerialChain, pts: &[BodyPoint]) -> f64 {
    let mut total = 0.0;
    for t in 0..traj.n() {
        for u in pts {
            let a = chain.body_point_position(&traj.point(t), u).unwrap();
            let b = chain.body_point_position(&traj.point(t + 1), u).unwrap();
            let (c, _) = scene.workspace_cost(&a, true);
            total += c * (b - a).norm();
        }
    }
    total
}

#[test]
fn free_space_and_static_trajectories_cost_nothing() {
    let chain = SerialChain::planar(&[1.0, 1.0], 0.05, 3.0).unwrap();
    let pts = chain.sample_body_points(10, 0);
    let far = SceneSdf::new(vec![Field::Primitive(Primitive::sphere(Point3::new(10.0, 0.0, 0.0), 0.3))], None);
    let model = CollisionModel::new(&far, &chain, &pts);
    let traj = Trajectory::linear(&DVector::zeros(2), &DVector::from_vec(vec![1.5, 0.5]), 20).unwrap();
    assert_eq!(obstacle_cost(&traj, &model).unwrap(), 0.0);
    assert!(obstacle_gradient(&traj, &model, 500).unwrap().abs().max() == 0.0);

    let scene = sweep_scene();
    let model = CollisionModel::new(&scene, &chain, &pts);
    let q = DVector::from_vec(vec![0.8, 0.0]);
    let still = Trajectory::stationary(&q, 20).unwrap();
    assert_eq!(obstacle_cost(&still, &model).unwrap(), 0.0);
}

#[test]
fn sweep_matches_brute_force_double_loop() {
    let chain = SerialChain::planar(&[1.0, 1.0], 0.05, 3.0).unwrap();
    let pts = chain.sample_body_points(10, 1);
    let scene = sweep_scene();
    let model = CollisionModel::new(&scene, &chain, &pts);
    let traj = Trajectory::linear(&DVector::from_vec(vec![-0.5, 0.2]), &DVector::from_vec(vec![2.0, -0.3]), 30).unwrap();
    let fast = obstacle_cost(&traj, &model).unwrap();
    let slow = brute_force_cost(&traj, &scene, &chain, &pts);
    assert!(fast > 0.0);
    assert!((fast - slow).abs() < 1e-12 * slow.max(1.0));
}

#[test]
fn full_selection_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let chain = SerialChain::planar(&[0.5, 0.4, 0.3], 0.04, 3.0).unwrap();
    let pts = chain.sample_body_points(10, 2);
    let mut checked = 0;
    for _ in 0..20 {
        let obstacles = (0..3)
            .map(|_| {
                Field::Primitive(Primitive::sphere(
                    Point3::new(rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8), 0.0),
                    rng.random_range(0.1..0.25),
                ))
            })
            .collect();
        let scene = SceneSdf::new(obstacles, None);
        let model = CollisionModel::new(&scene, &chain, &pts);
        let a = DVector::from_fn(3, |_, _| rng.random_range(-1.5..1.5));
        let b = DVector::from_fn(3, |_, _| rng.random_range(-1.5..1.5));
        let mut traj = Trajectory::linear(&a, &b, 12).unwrap();
        let noise = DMatrix::from_fn(12, 3, |_, _| rng.random_range(-0.05..0.05));
        traj.set_waypoints(traj.waypoints() + noise).unwrap();
        if obstacle_cost(&traj, &model).unwrap() == 0.0 {
            continue;
        }
        let grad = obstacle_gradient(&traj, &model, usize::MAX).unwrap();
        let h = 1e-6;
        let mut fd = DMatrix::zeros(12, 3);
        for i in 0..12 {
            for j in 0..3 {
                let p = obstacle_cost(&perturbed(&traj, i, j, h), &model).unwrap();
                let m = obstacle_cost(&perturbed(&traj, i, j, -h), &model).unwrap();
                fd[(i, j)] = (p - m) / (2.0 * h);
            }
        }
        let rel = (&fd - &grad).norm() / grad.norm().max(1e-8);
        assert!(rel < 1e-4, "relative error {rel}");
        checked += 1;
    }
    assert!(checked >= 10);
}

#[test]
fn single_worst_term_gradient() {
    let chain = SerialChain::planar(&[1.0, 1.0], 0.05, 3.0).unwrap();
    let pts = chain.sample_body_points(10, 3);
    let scene = sweep_scene();
    let model = CollisionModel::new(&scene, &chain, &pts);
    let traj = Trajectory::linear(&DVector::from_vec(vec![-0.5, 0.2]), &DVector::from_vec(vec![2.0, -0.3]), 30).unwrap();
    let terms = obstacle_terms(&traj, &model).unwrap();
    let best = terms.iter().copied().fold(terms[0], |a, b| if b.value > a.value { b } else { a });
    let g1 = obstacle_gradient(&traj, &model, 1).unwrap();
    let alone = gradient_of_terms(&traj, &model, &[best]).unwrap();
    assert_eq!(g1, alone);
    assert_eq!(select_worst(terms, 1)[0], best);

    // the lone term's gradient by finite differences of that term only
    let term_value = |tr: &Trajectory| {
        let u = &pts[best.u];
        let a = chain.body_point_position(&tr.point(best.t), u).unwrap();
        let b = chain.body_point_position(&tr.point(best.t + 1), u).unwrap();
        scene.workspace_cost(&a, true).0 * (b - a).norm()
    };
    let h = 1e-6;
    for i in 0..30 {
        for j in 0..2 {
            let fd = (term_value(&perturbed(&traj, i, j, h)) - term_value(&perturbed(&traj, i, j, -h))) / (2.0 * h);
            assert!((fd - g1[(i, j)]).abs() < 1e-6 * g1.abs().max().max(1.0));
        }
    }
}

#[test]
fn motion_cost_composition() {
    let chain = SerialChain::planar(&[1.0, 1.0], 0.05, 3.0).unwrap();
    let pts = chain.sample_body_points(10, 4);
    let scene = sweep_scene();
    let model = CollisionModel::new(&scene, &chain, &pts);
    let traj = Trajectory::linear(&DVector::from_vec(vec![-0.5, 0.2]), &DVector::from_vec(vec![2.0, -0.3]), 30).unwrap();
    let zero = MotionObjectiveConfig { lambda: 0.0, ..Default::default() };
    let obs = obstacle_cost(&traj, &model).unwrap();
    assert_eq!(motion_cost(&traj, &model, &zero).unwrap().total, obs);
    let cfg = MotionObjectiveConfig::default();
    let m = motion_cost(&traj, &model, &cfg).unwrap();
    assert!((m.total - (obs + cfg.lambda * graspopt::trajopt::prior_cost(&traj))).abs() < 1e-12);
}
