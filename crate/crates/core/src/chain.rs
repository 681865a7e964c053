//! Revolute serial-chain kinematics.
//!
//! Frame convention: `frames[0]` is the base, `frames[j + 1]` is the frame of
//! link `j`, obtained as `frames[j] * joints[j].origin * Rot(axis_j, q_j)`.
//! The gripper frame is `frames[d] * ee_offset`. Planar arms are ordinary
//! chains whose axes are all `z` and whose geometry sits at `z = 0`.

use nalgebra::{
    DVector, Isometry3, Matrix3xX, Matrix6, Matrix6xX, Point3, Translation3, Unit, UnitQuaternion,
    Vector3, Vector6,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::geometry::Primitive;

pub type Configuration = DVector<f64>;

#[derive(Clone, Debug, PartialEq)]
pub struct Joint {
    /// Fixed transform from the parent link frame to this joint.
    pub origin: Isometry3<f64>,
    pub axis: Unit<Vector3<f64>>,
    /// `[lo, hi]` in radians.
    pub limits: [f64; 2],
}

impl Joint {
    pub fn revolute(origin: Isometry3<f64>, axis: Vector3<f64>, limits: [f64; 2]) -> Self {
        Joint {
            origin,
            axis: Unit::new_normalize(axis),
            limits,
        }
    }
}

/// A primitive rigidly attached to a link, expressed in that link's frame.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkPart {
    pub link: usize,
    pub shape: Primitive,
    /// Part of the hand (palm or finger) rather than the arm.
    pub hand: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BodyPoint {
    pub link: usize,
    pub local: Point3<f64>,
    pub normal: Option<Unit<Vector3<f64>>>,
    pub hand: bool,
}

impl BodyPoint {
    pub fn new(link: usize, local: Point3<f64>) -> Self {
        BodyPoint {
            link,
            local,
            normal: None,
            hand: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum IkOutcome {
    Converged {
        q: Configuration,
        error: f64,
        iterations: usize,
    },
    Failed {
        best: Configuration,
        error: f64,
    },
}

impl IkOutcome {
    pub fn configuration(&self) -> Option<&Configuration> {
        match self {
            IkOutcome::Converged { q, .. } => Some(q),
            IkOutcome::Failed { .. } => None,
        }
    }
}

pub const IK_DAMPING: f64 = 1e-2;
/// Meters of pose error counted per radian of orientation error.
pub const IK_ROTATION_WEIGHT: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SerialChain {
    base: Isometry3<f64>,
    joints: Vec<Joint>,
    parts: Vec<LinkPart>,
    ee_offset: Isometry3<f64>,
}

impl SerialChain {
    pub fn new(
        base: Isometry3<f64>,
        joints: Vec<Joint>,
        parts: Vec<LinkPart>,
        ee_offset: Isometry3<f64>,
    ) -> Result<Self> {
        if joints.is_empty() {
            return invalid("chain needs at least one joint");
        }
        for (i, j) in joints.iter().enumerate() {
            if (j.axis.norm() - 1.0).abs() > 1e-9 || !j.axis.iter().all(|x| x.is_finite()) {
                return invalid(format!("joint {i} axis is not unit norm"));
            }
            if !(j.limits[0] <= j.limits[1]) {
                return invalid(format!("joint {i} has lo > hi"));
            }
        }
        for p in &parts {
            if p.link >= joints.len() {
                return invalid(format!("part attached to missing link {}", p.link));
            }
            if matches!(p.shape, Primitive::Sphere { .. }) {
                return invalid("link geometry must be a capsule or a box");
            }
            p.shape.validate()?;
        }
        Ok(SerialChain {
            base,
            joints,
            parts,
            ee_offset,
        })
    }

    /// Planar arm along `x` with `z` axes, capsule links of the given radius.
    pub fn planar(lengths: &[f64], radius: f64, limit: f64) -> Result<Self> {
        let mut joints = Vec::new();
        let mut parts = Vec::new();
        let mut prev = 0.0;
        for (i, &len) in lengths.iter().enumerate() {
            joints.push(Joint::revolute(
                Isometry3::translation(prev, 0.0, 0.0),
                Vector3::z(),
                [-limit, limit],
            ));
            parts.push(LinkPart {
                link: i,
                shape: Primitive::capsule(Point3::origin(), Point3::new(len, 0.0, 0.0), radius),
                hand: false,
            });
            prev = len;
        }
        SerialChain::new(
            Isometry3::identity(),
            joints,
            parts,
            Isometry3::translation(prev, 0.0, 0.0),
        )
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn parts(&self) -> &[LinkPart] {
        &self.parts
    }

    pub fn base(&self) -> &Isometry3<f64> {
        &self.base
    }

    pub fn ee_offset(&self) -> &Isometry3<f64> {
        &self.ee_offset
    }

    pub fn limits(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        self.joints.iter().map(|j| j.limits)
    }

    /// Attaches extra geometry (e.g. the hand) to the chain.
    pub fn with_parts(mut self, parts: impl IntoIterator<Item = LinkPart>) -> Result<Self> {
        self.parts.extend(parts);
        SerialChain::new(self.base, self.joints, self.parts, self.ee_offset)
    }

    pub fn within_limits(&self, q: &Configuration) -> bool {
        q.len() == self.dof()
            && q
                .iter()
                .zip(&self.joints)
                .all(|(v, j)| *v >= j.limits[0] && *v <= j.limits[1])
    }

    pub fn clamp(&self, q: &mut Configuration) {
        for (v, j) in q.iter_mut().zip(&self.joints) {
            *v = v.clamp(j.limits[0], j.limits[1]);
        }
    }

    fn check_dim(&self, q: &Configuration) -> Result<()> {
        if q.len() != self.dof() {
            return invalid(format!(
                "configuration has {} entries, chain has {} joints",
                q.len(),
                self.dof()
            ));
        }
        Ok(())
    }

    /// Base frame followed by one frame per link (`d + 1` frames).
    pub fn forward_kinematics(&self, q: &Configuration) -> Result<Vec<Isometry3<f64>>> {
        self.check_dim(q)?;
        let mut frames = Vec::with_capacity(self.dof() + 1);
        let mut current = self.base;
        frames.push(current);
        for (joint, &angle) in self.joints.iter().zip(q.iter()) {
            current = current * joint.origin * UnitQuaternion::from_axis_angle(&joint.axis, angle);
            frames.push(current);
        }
        Ok(frames)
    }

    pub fn end_effector_from_frames(&self, frames: &[Isometry3<f64>]) -> Isometry3<f64> {
        frames[self.dof()] * self.ee_offset
    }

    pub fn end_effector(&self, q: &Configuration) -> Result<Isometry3<f64>> {
        Ok(self.end_effector_from_frames(&self.forward_kinematics(q)?))
    }

    fn check_point(&self, u: &BodyPoint) -> Result<()> {
        if u.link >= self.dof() {
            return invalid(format!("body point on missing link {}", u.link));
        }
        Ok(())
    }

    pub fn body_point_position(&self, q: &Configuration, u: &BodyPoint) -> Result<Point3<f64>> {
        self.check_point(u)?;
        let frames = self.forward_kinematics(q)?;
        Ok(frames[u.link + 1] * u.local)
    }

    pub fn body_direction(
        &self,
        q: &Configuration,
        direction: &Vector3<f64>,
        link: usize,
    ) -> Result<Vector3<f64>> {
        if (direction.norm() - 1.0).abs() > 1e-9 {
            return invalid("direction must be unit norm");
        }
        if link >= self.dof() {
            return invalid(format!("missing link {link}"));
        }
        let frames = self.forward_kinematics(q)?;
        Ok(frames[link + 1].rotation * direction)
    }

    /// Position Jacobian of a world point rigidly attached to `link`.
    pub fn point_jacobian_from_frames(
        &self,
        frames: &[Isometry3<f64>],
        link: usize,
        world: &Point3<f64>,
    ) -> Matrix3xX<f64> {
        let mut jac = Matrix3xX::zeros(self.dof());
        for j in 0..=link {
            let frame = &frames[j + 1];
            let axis = frame.rotation * self.joints[j].axis.into_inner();
            let origin = Point3::from(frame.translation.vector);
            jac.set_column(j, &axis.cross(&(world - origin)));
        }
        jac
    }

    pub fn point_jacobian(&self, q: &Configuration, u: &BodyPoint) -> Result<Matrix3xX<f64>> {
        self.check_point(u)?;
        let frames = self.forward_kinematics(q)?;
        let world = frames[u.link + 1] * u.local;
        Ok(self.point_jacobian_from_frames(&frames, u.link, &world))
    }

    /// Angular rows on top, linear velocity of the gripper origin below.
    pub fn spatial_jacobian_from_frames(&self, frames: &[Isometry3<f64>]) -> Matrix6xX<f64> {
        let ee = Point3::from(self.end_effector_from_frames(frames).translation.vector);
        let mut jac = Matrix6xX::zeros(self.dof());
        for j in 0..self.dof() {
            let frame = &frames[j + 1];
            let axis = frame.rotation * self.joints[j].axis.into_inner();
            let origin = Point3::from(frame.translation.vector);
            let lin = axis.cross(&(ee - origin));
            jac.fixed_view_mut::<3, 1>(0, j).copy_from(&axis);
            jac.fixed_view_mut::<3, 1>(3, j).copy_from(&lin);
        }
        jac
    }

    pub fn spatial_jacobian(&self, q: &Configuration) -> Result<Matrix6xX<f64>> {
        Ok(self.spatial_jacobian_from_frames(&self.forward_kinematics(q)?))
    }

    /// `per_part` area-uniform samples on every link and hand primitive.
    pub fn sample_body_points(&self, per_part: usize, seed: u64) -> Vec<BodyPoint> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(per_part * self.parts.len());
        for part in &self.parts {
            for _ in 0..per_part {
                let (local, normal) = part.shape.sample_surface(&mut rng);
                out.push(BodyPoint {
                    link: part.link,
                    local,
                    normal: Some(normal),
                    hand: part.hand,
                });
            }
        }
        out
    }

    /// Damped least-squares IK on the full gripper pose.
    pub fn inverse_kinematics(
        &self,
        target: &Isometry3<f64>,
        seed: &Configuration,
        tol: f64,
        max_iters: usize,
    ) -> Result<IkOutcome> {
        if !(tol > 0.0) {
            return invalid("ik tolerance must be positive");
        }
        self.check_dim(seed)?;
        let mut q = seed.clone();
        self.clamp(&mut q);
        let mut best = (q.clone(), f64::INFINITY);
        for it in 0..=max_iters {
            let frames = self.forward_kinematics(&q)?;
            let ee = self.end_effector_from_frames(&frames);
            let err = pose_error(&ee, target);
            let err_norm = err.fixed_rows::<3>(3).norm()
                + IK_ROTATION_WEIGHT * err.fixed_rows::<3>(0).norm();
            if err_norm < best.1 {
                best = (q.clone(), err_norm);
            }
            if err_norm < tol {
                return Ok(IkOutcome::Converged {
                    q,
                    error: err_norm,
                    iterations: it,
                });
            }
            if it == max_iters {
                break;
            }
            let jac = self.spatial_jacobian_from_frames(&frames);
            let jjt: Matrix6<f64> = &jac * jac.transpose()
                + Matrix6::identity() * (IK_DAMPING * IK_DAMPING);
            let solved = jjt
                .cholesky()
                .ok_or_else(|| Error::NumericalFailure("ik normal matrix".into()))?
                .solve(&err);
            let mut dq = jac.transpose() * solved;
            let step = dq.norm();
            if step > 0.5 {
                dq *= 0.5 / step;
            }
            q += dq;
            self.clamp(&mut q);
        }
        Ok(IkOutcome::Failed {
            best: best.0,
            error: best.1,
        })
    }
}

/// `(rotation vector, translation)` taking `current` to `target`, world aligned.
pub fn pose_error(current: &Isometry3<f64>, target: &Isometry3<f64>) -> Vector6<f64> {
    let rot = (target.rotation * current.rotation.inverse()).scaled_axis();
    let trans = target.translation.vector - current.translation.vector;
    let mut e = Vector6::zeros();
    e.fixed_rows_mut::<3>(0).copy_from(&rot);
    e.fixed_rows_mut::<3>(3).copy_from(&trans);
    e
}

/// Pose with the gripper approach axis (`x`) along `approach` and the
/// closing axis (`y`) orthogonal to it and to `up` when possible.
pub fn pose_from_approach(
    position: Point3<f64>,
    approach: &Vector3<f64>,
    up: &Vector3<f64>,
) -> Isometry3<f64> {
    let x = approach.normalize();
    let mut z = up - x * up.dot(&x);
    if z.norm() < 1e-9 {
        z = crate::geometry::orthonormal_pair(&x).0;
    }
    let z = z.normalize();
    let y = z.cross(&x);
    let rot = nalgebra::Rotation3::from_basis_unchecked(&[x, y, z]);
    Isometry3::from_parts(
        Translation3::from(position.coords),
        UnitQuaternion::from_rotation_matrix(&rot),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::FRAC_PI_2;

    fn planar2() -> SerialChain {
        SerialChain::planar(&[1.0, 1.0], 0.05, 3.0).unwrap()
    }

    /// A 3-joint spatial chain with mixed axes and offsets.
    pub(crate) fn spatial3() -> SerialChain {
        let joints = vec![
            Joint::revolute(Isometry3::translation(0.0, 0.0, 0.1), Vector3::z(), [-3.0, 3.0]),
            Joint::revolute(
                Isometry3::new(Vector3::new(0.0, 0.0, 0.3), Vector3::new(0.2, 0.0, 0.0)),
                Vector3::y(),
                [-3.0, 3.0],
            ),
            Joint::revolute(
                Isometry3::translation(0.25, 0.05, 0.0),
                Vector3::new(1.0, 1.0, 0.0),
                [-3.0, 3.0],
            ),
        ];
        let parts = (0..3)
            .map(|i| LinkPart {
                link: i,
                shape: Primitive::capsule(Point3::origin(), Point3::new(0.2, 0.0, 0.0), 0.03),
                hand: false,
            })
            .collect();
        SerialChain::new(
            Isometry3::identity(),
            joints,
            parts,
            Isometry3::translation(0.1, 0.0, 0.0),
        )
        .unwrap()
    }

    #[test]
    fn planar_end_effector() {
        let c = planar2();
        let ee = c.end_effector(&DVector::from_vec(vec![0.0, 0.0])).unwrap();
        assert!((ee.translation.vector - Vector3::new(2.0, 0.0, 0.0)).norm() < 1e-12);
        let ee = c.end_effector(&DVector::from_vec(vec![FRAC_PI_2, 0.0])).unwrap();
        assert!((ee.translation.vector - Vector3::new(0.0, 2.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        assert!(planar2().forward_kinematics(&DVector::zeros(3)).is_err());
    }

    #[test]
    fn frames_equal_product_of_joint_transforms() {
        let c = spatial3();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let q = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
            let frames = c.forward_kinematics(&q).unwrap();
            assert_eq!(frames.len(), 4);
            // independent oracle: homogeneous 4x4 matrix products
            let mut m = c.base().to_homogeneous();
            for (j, joint) in c.joints().iter().enumerate() {
                let rot = nalgebra::Rotation3::from_axis_angle(&joint.axis, q[j]).to_homogeneous();
                m = m * joint.origin.to_homogeneous() * rot;
                assert!((frames[j + 1].to_homogeneous() - m).abs().max() < 1e-12);
            }
        }
    }

    #[test]
    fn frames_are_proper_rigid_transforms() {
        let c = spatial3();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let q = DVector::from_fn(3, |_, _| rng.random_range(-3.0..3.0));
            for f in c.forward_kinematics(&q).unwrap() {
                let r = f.rotation.to_rotation_matrix().into_inner();
                assert!((r.determinant() - 1.0).abs() < 1e-9);
                assert!((r.transpose() * r - nalgebra::Matrix3::identity()).abs().max() < 1e-9);
            }
        }
    }

    #[test]
    fn body_points_and_directions() {
        let c = planar2();
        let zero = DVector::zeros(2);
        let origin = BodyPoint::new(0, Point3::origin());
        let q = DVector::from_vec(vec![0.7, -0.2]);
        assert!(c.body_point_position(&q, &origin).unwrap().coords.norm() < 1e-12);
        let tip = BodyPoint::new(1, Point3::new(1.0, 0.0, 0.0));
        let p = c.body_point_position(&zero, &tip).unwrap();
        assert!((p - Point3::new(2.0, 0.0, 0.0)).norm() < 1e-12);
        assert!(c.body_point_position(&zero, &BodyPoint::new(5, Point3::origin())).is_err());

        let d = c.body_direction(&zero, &Vector3::z(), 0).unwrap();
        assert!((d - Vector3::z()).norm() < 1e-12);
        let one = SerialChain::planar(&[1.0], 0.05, 3.0).unwrap();
        let d = one
            .body_direction(&DVector::from_vec(vec![FRAC_PI_2]), &Vector3::x(), 0)
            .unwrap();
        assert!((d - Vector3::y()).norm() < 1e-12);
        assert!(c.body_direction(&zero, &Vector3::new(1.0, 1.0, 0.0), 0).is_err());
    }

    #[test]
    fn body_direction_preserves_norm() {
        let c = spatial3();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            let q = DVector::from_fn(3, |_, _| rng.random_range(-3.0..3.0));
            let dir = crate::geometry::random_unit(&mut rng);
            let out = c.body_direction(&q, &dir, rng.random_range(0..3)).unwrap();
            assert!((out.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_link_jacobians() {
        let c = SerialChain::planar(&[1.0], 0.05, 3.0).unwrap();
        let q = DVector::zeros(1);
        let j = c.point_jacobian(&q, &BodyPoint::new(0, Point3::new(1.0, 0.0, 0.0))).unwrap();
        assert!((j.column(0) - Vector3::y()).norm() < 1e-12);
        let s = c.spatial_jacobian(&q).unwrap();
        // tip p = (1, 0, 0): column (0, 0, 1, -p_y, p_x, 0)
        let expected = Vector6::new(0.0, 0.0, 1.0, 0.0, 1.0, 0.0);
        assert!((s.column(0) - expected).norm() < 1e-12);
    }

    #[test]
    fn distal_columns_are_zero() {
        let c = spatial3();
        let q = DVector::from_vec(vec![0.3, 0.4, 0.5]);
        let j = c.point_jacobian(&q, &BodyPoint::new(0, Point3::new(0.1, 0.0, 0.0))).unwrap();
        assert_eq!(j.column(1).norm(), 0.0);
        assert_eq!(j.column(2).norm(), 0.0);
    }

    #[test]
    fn spatial_linear_rows_equal_point_jacobian_at_gripper() {
        let c = spatial3();
        let q = DVector::from_vec(vec![0.3, -0.4, 1.1]);
        let s = c.spatial_jacobian(&q).unwrap();
        let ee = BodyPoint::new(2, Point3::from(c.ee_offset().translation.vector));
        let p = c.point_jacobian(&q, &ee).unwrap();
        assert!((s.fixed_rows::<3>(3) - p).abs().max() < 1e-12);
    }

    #[test]
    fn spatial_jacobian_matches_pose_log_differences() {
        let c = spatial3();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let h = 1e-6;
        for _ in 0..20 {
            let q = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
            let s = c.spatial_jacobian(&q).unwrap();
            for j in 0..3 {
                let mut qp = q.clone();
                let mut qm = q.clone();
                qp[j] += h;
                qm[j] -= h;
                let tp = c.end_effector(&qp).unwrap();
                let tm = c.end_effector(&qm).unwrap();
                let w = (tp.rotation * tm.rotation.inverse()).scaled_axis() / (2.0 * h);
                let v = (tp.translation.vector - tm.translation.vector) / (2.0 * h);
                let mut fd = Vector6::zeros();
                fd.fixed_rows_mut::<3>(0).copy_from(&w);
                fd.fixed_rows_mut::<3>(3).copy_from(&v);
                let col = s.column(j);
                assert!((col - fd).norm() <= 1e-4 * col.norm().max(1.0));
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_and_on_surface() {
        let c = SerialChain::planar(&[0.4, 0.3, 0.2], 0.04, 3.0).unwrap();
        let pts = c.sample_body_points(10, 5);
        assert_eq!(pts.len(), 30);
        assert_eq!(pts, c.sample_body_points(10, 5));
        assert_eq!(c.sample_body_points(1, 5).len(), 3);
        for u in &pts {
            let part = c.parts().iter().find(|p| p.link == u.link).unwrap();
            assert!(part.shape.distance(&u.local).distance.abs() < 1e-9);
        }
    }

    #[test]
    fn ik_identity_and_unreachable() {
        let c = SerialChain::planar(&[0.4, 0.3, 0.2], 0.04, 3.0).unwrap();
        let q = DVector::from_vec(vec![0.3, 0.5, -0.4]);
        let target = c.end_effector(&q).unwrap();
        match c.inverse_kinematics(&target, &q, 1e-6, 100).unwrap() {
            IkOutcome::Converged { q: out, iterations, .. } => {
                assert_eq!(out, q);
                assert_eq!(iterations, 0);
            }
            other => panic!("{other:?}"),
        }
        let far = Isometry3::translation(2.0, 0.0, 0.0);
        assert!(matches!(
            c.inverse_kinematics(&far, &q, 1e-4, 200).unwrap(),
            IkOutcome::Failed { .. }
        ));
        assert!(c.inverse_kinematics(&far, &q, 0.0, 10).is_err());
    }

    #[test]
    fn ik_reaches_random_planar_targets() {
        let c = SerialChain::planar(&[0.4, 0.3, 0.2], 0.04, 3.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let mut ok = 0;
        for _ in 0..50 {
            let goal = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
            let target = c.end_effector(&goal).unwrap();
            let seed = &goal + DVector::from_fn(3, |_, _| rng.random_range(-0.8..0.8));
            if let IkOutcome::Converged { q, error, .. } =
                c.inverse_kinematics(&target, &seed, 1e-6, 500).unwrap()
            {
                ok += 1;
                assert!(error < 1e-6);
                assert!(c.within_limits(&q));
                let e = pose_error(&c.end_effector(&q).unwrap(), &target);
                assert!(e.fixed_rows::<3>(3).norm() + e.fixed_rows::<3>(0).norm() < 1e-6);
            }
        }
        assert!(ok >= 48, "only {ok} of 50 targets reached");
    }

    #[test]
    fn approach_pose_axes() {
        let p = pose_from_approach(Point3::new(1.0, 2.0, 0.0), &Vector3::new(0.0, 2.0, 0.0), &Vector3::z());
        assert!((p.rotation * Vector3::x() - Vector3::y()).norm() < 1e-12);
        assert!((p.rotation * Vector3::z() - Vector3::z()).norm() < 1e-12);
    }
}
