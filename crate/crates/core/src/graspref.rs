//! Parallel-jaw gripper model and grasp refinement by iterative surface
//! fitting driven through the arm's Jacobian.
//!
//! Twists are 6-vectors `[omega; v]` with world-aligned axes about the
//! gripper origin, the same layout as [`SerialChain::spatial_jacobian`].

use nalgebra::{Isometry3, Matrix3, Point3, Unit, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::chain::{Configuration, LinkPart, SerialChain};
use crate::error::{invalid, Error, Result};
use crate::geometry::Primitive;
use crate::scene::{obstacle_cost, obstacle_cost_derivative, ObjectSurface};
use crate::trajopt::CollisionModel;

/// Gripper dimensions in meters. The gripper approaches along `+x` and
/// closes along `y`; its origin sits at the center of the palm face.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GripperDims {
    /// Distance between the inner finger faces.
    pub gap: f64,
    pub finger_length: f64,
    pub finger_thickness: f64,
    /// Extent of palm and fingers along `z`.
    pub height: f64,
    pub palm_depth: f64,
    /// Contacts sit this far in front of the faces they belong to.
    pub standoff: f64,
    /// Contact grid per finger face, along `x` then `z`.
    pub finger_grid: [usize; 2],
    /// Contact grid on the palm face, along `y` then `z`.
    pub palm_grid: [usize; 2],
}

impl Default for GripperDims {
    fn default() -> Self {
        GripperDims {
            gap: 0.1,
            finger_length: 0.06,
            finger_thickness: 0.01,
            height: 0.02,
            palm_depth: 0.02,
            standoff: 0.02,
            finger_grid: [4, 2],
            palm_grid: [2, 2],
        }
    }
}

fn grid(count: usize, lo: f64, hi: f64) -> impl Iterator<Item = f64> {
    (0..count).map(move |k| lo + (hi - lo) * (k as f64 + 0.5) / count as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GripperModel {
    dims: GripperDims,
    palm: Primitive,
    fingers: [Primitive; 2],
    contacts: Vec<Point3<f64>>,
    normals: Vec<Unit<Vector3<f64>>>,
}

impl GripperModel {
    pub fn new(dims: GripperDims) -> Result<Self> {
        let positive = [
            dims.gap,
            dims.finger_length,
            dims.finger_thickness,
            dims.height,
            dims.palm_depth,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) || !(dims.standoff >= 0.0) {
            return invalid("gripper dimensions must be positive");
        }
        if dims.standoff >= 0.5 * dims.gap || dims.standoff >= dims.finger_length {
            return invalid("contact standoff must be smaller than half the gap and the finger length");
        }
        let half_gap = 0.5 * dims.gap;
        let hz = 0.5 * dims.height;
        let palm = Primitive::cuboid(
            Point3::new(-0.5 * dims.palm_depth, 0.0, 0.0),
            Vector3::new(0.5 * dims.palm_depth, half_gap + dims.finger_thickness, hz),
        );
        let finger = |side: f64| {
            Primitive::cuboid(
                Point3::new(0.5 * dims.finger_length, side * (half_gap + 0.5 * dims.finger_thickness), 0.0),
                Vector3::new(0.5 * dims.finger_length, 0.5 * dims.finger_thickness, hz),
            )
        };
        let mut contacts = Vec::new();
        let mut normals = Vec::new();
        for side in [1.0, -1.0] {
            for x in grid(dims.finger_grid[0], dims.standoff, dims.finger_length) {
                for z in grid(dims.finger_grid[1], -hz, hz) {
                    contacts.push(Point3::new(x, side * (half_gap - dims.standoff), z));
                    normals.push(Unit::new_unchecked(Vector3::new(0.0, -side, 0.0)));
                }
            }
        }
        let reach = half_gap - dims.standoff;
        for y in grid(dims.palm_grid[0], -reach, reach) {
            for z in grid(dims.palm_grid[1], -hz, hz) {
                contacts.push(Point3::new(dims.standoff, y, z));
                normals.push(Vector3::x_axis());
            }
        }
        if contacts.len() < 2 {
            return invalid("gripper needs at least two contacts");
        }
        Ok(GripperModel {
            palm,
            fingers: [finger(1.0), finger(-1.0)],
            contacts,
            normals,
            dims,
        })
    }

    pub fn dims(&self) -> &GripperDims {
        &self.dims
    }

    pub fn palm(&self) -> &Primitive {
        &self.palm
    }

    pub fn fingers(&self) -> &[Primitive; 2] {
        &self.fingers
    }

    pub fn contacts(&self) -> &[Point3<f64>] {
        &self.contacts
    }

    pub fn contact_normals(&self) -> &[Unit<Vector3<f64>>] {
        &self.normals
    }

    pub fn finger_length(&self) -> f64 {
        self.dims.finger_length
    }

    /// Signed distance to the hand in the gripper frame, with its gradient.
    pub fn hand_distance(&self, p: &Point3<f64>) -> (f64, Vector3<f64>) {
        let mut best = self.palm.distance(p);
        for f in &self.fingers {
            let s = f.distance(p);
            if s.distance < best.distance {
                best = s;
            }
        }
        (best.distance, best.gradient)
    }

    /// Radius of a ball around the origin containing the whole hand.
    pub fn bounding_radius(&self) -> f64 {
        let d = &self.dims;
        let x = d.finger_length.max(d.palm_depth);
        let y = 0.5 * d.gap + d.finger_thickness;
        (x * x + y * y + 0.25 * d.height * d.height).sqrt()
    }

    /// Hand geometry as chain parts on the last link, given the chain's
    /// gripper offset.
    pub fn link_parts(&self, link: usize, ee_offset: &Isometry3<f64>) -> Vec<LinkPart> {
        std::iter::once(&self.palm)
            .chain(&self.fingers)
            .map(|shape| LinkPart {
                link,
                shape: shape.transformed(ee_offset),
                hand: true,
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraspRefineConfig {
    /// Normal-alignment weight.
    pub alpha: f64,
    /// Arm obstacle weight (inside the collision term).
    pub beta: f64,
    /// Collision weight.
    pub gamma: f64,
    pub eta_grasp: f64,
    /// Padding of the hand collision cost.
    pub hand_padding: f64,
    /// Largest joint-space displacement of one refinement step.
    pub max_step: f64,
}

impl Default for GraspRefineConfig {
    fn default() -> Self {
        GraspRefineConfig {
            alpha: 0.01,
            beta: 0.001,
            gamma: 0.5,
            eta_grasp: 0.05,
            hand_padding: 0.02,
            max_step: 0.01,
        }
    }
}

impl GraspRefineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.gamma >= 0.0) {
            return invalid("grasp weights must be non-negative");
        }
        if !(self.eta_grasp >= 0.0) || !(self.hand_padding > 0.0) || !(self.max_step > 0.0) {
            return invalid("grasp step, step cap and hand padding must be positive");
        }
        Ok(())
    }
}

/// Contact points and normals in the world for configuration `g`.
pub fn transform_contacts(
    chain: &SerialChain,
    gripper: &GripperModel,
    g: &Configuration,
) -> Result<(Vec<Point3<f64>>, Vec<Unit<Vector3<f64>>>)> {
    let ee = chain.end_effector(g)?;
    Ok(contacts_at(&ee, gripper))
}

fn contacts_at(ee: &Isometry3<f64>, gripper: &GripperModel) -> (Vec<Point3<f64>>, Vec<Unit<Vector3<f64>>>) {
    (
        gripper.contacts().iter().map(|h| ee * h).collect(),
        gripper.contact_normals().iter().map(|n| ee.rotation * *n).collect(),
    )
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correspondence {
    pub contact: usize,
    pub object: usize,
    pub hand_point: Point3<f64>,
    pub hand_normal: Unit<Vector3<f64>>,
    pub object_point: Point3<f64>,
    pub object_normal: Unit<Vector3<f64>>,
}

/// Nearest object sample for every contact. An object sample claimed by
/// several contacts stays with the closest one (lowest index on ties).
pub fn nearest_correspondences(
    points: &[Point3<f64>],
    normals: &[Unit<Vector3<f64>>],
    object: &ObjectSurface,
) -> Result<Vec<Correspondence>> {
    if object.is_empty() {
        return invalid("object surface has no points");
    }
    if points.len() != normals.len() {
        return invalid("contact points and normals differ in length");
    }
    let matches: Vec<(usize, f64)> = points
        .iter()
        .map(|p| object.nearest(p).expect("surface is non-empty"))
        .collect();
    let mut owner = std::collections::HashMap::<usize, usize>::new();
    for (j, &(idx, dist)) in matches.iter().enumerate() {
        owner
            .entry(idx)
            .and_modify(|o| {
                if dist < matches[*o].1 {
                    *o = j;
                }
            })
            .or_insert(j);
    }
    Ok(matches
        .iter()
        .enumerate()
        .filter(|(j, (idx, _))| owner[idx] == *j)
        .map(|(j, &(idx, _))| Correspondence {
            contact: j,
            object: idx,
            hand_point: points[j],
            hand_normal: normals[j],
            object_point: object.points()[idx],
            object_normal: object.normals()[idx],
        })
        .collect())
}

pub fn point_match_loss(corr: &[Correspondence]) -> f64 {
    corr.iter()
        .map(|c| (c.hand_point - c.object_point).dot(&c.object_normal).powi(2))
        .sum()
}

pub fn normal_align_loss(corr: &[Correspondence]) -> f64 {
    corr.iter()
        .map(|c| (c.hand_normal.dot(&c.object_normal) + 1.0).powi(2))
        .sum()
}

pub fn isf_loss(corr: &[Correspondence], alpha: f64) -> f64 {
    point_match_loss(corr) + alpha * normal_align_loss(corr)
}

fn twist(omega: Vector3<f64>, v: Vector3<f64>) -> Vector6<f64> {
    let mut t = Vector6::zeros();
    t.fixed_rows_mut::<3>(0).copy_from(&omega);
    t.fixed_rows_mut::<3>(3).copy_from(&v);
    t
}

/// Gradient of `isf_loss` with respect to a twist of the gripper about
/// `origin`, correspondences held fixed.
pub fn isf_twist_gradient(corr: &[Correspondence], origin: &Point3<f64>, alpha: f64) -> Vector6<f64> {
    let mut omega = Vector3::zeros();
    let mut v = Vector3::zeros();
    for c in corr {
        let m = c.object_normal.into_inner();
        let e = (c.hand_point - c.object_point).dot(&m);
        let r = c.hand_point - origin;
        v += 2.0 * e * m;
        omega += 2.0 * e * r.cross(&m);
        let a = c.hand_normal.dot(&m) + 1.0;
        omega += alpha * 2.0 * a * c.hand_normal.cross(&m);
    }
    twist(omega, v)
}

/// Object samples evaluated in the hand's distance field under the padded
/// obstacle cost, with the twist gradient of that cost.
pub fn hand_collision_at(
    ee: &Isometry3<f64>,
    gripper: &GripperModel,
    object: &ObjectSurface,
    padding: f64,
) -> (f64, Vector6<f64>) {
    let origin = Point3::from(ee.translation.vector);
    let reach = gripper.bounding_radius() + padding;
    let inv = ee.inverse();
    let mut cost = 0.0;
    let mut omega = Vector3::zeros();
    let mut v = Vector3::zeros();
    for p in object.points() {
        if (p - origin).norm() > reach {
            continue;
        }
        let (d, g_local) = gripper.hand_distance(&(inv * p));
        if !(d < padding) {
            continue;
        }
        cost += obstacle_cost(d, padding);
        // moving the hand by (omega, v) moves the point by -(v + omega x r)
        // relative to the hand
        let g = ee.rotation * g_local * obstacle_cost_derivative(d, padding);
        v -= g;
        omega -= (p - origin).cross(&g);
    }
    (cost, twist(omega, v))
}

pub fn hand_collision_cost(
    g: &Configuration,
    chain: &SerialChain,
    gripper: &GripperModel,
    object: &ObjectSurface,
    padding: f64,
) -> Result<(f64, Vector6<f64>)> {
    Ok(hand_collision_at(&chain.end_effector(g)?, gripper, object, padding))
}

/// Components of the grasp objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GraspCost {
    pub isf: f64,
    pub hand: f64,
    pub arm: f64,
    pub total: f64,
}

/// `isf + gamma (hand + beta arm)`; `arm` is the plain single-configuration
/// obstacle sum over the chain's body points.
pub fn grasp_cost(
    g: &Configuration,
    gripper: &GripperModel,
    object: &ObjectSurface,
    arm: &CollisionModel,
    cfg: &GraspRefineConfig,
) -> Result<GraspCost> {
    let (pts, normals) = transform_contacts(arm.chain, gripper, g)?;
    let corr = nearest_correspondences(&pts, &normals, object)?;
    let isf = isf_loss(&corr, cfg.alpha);
    let (hand, _) = hand_collision_cost(g, arm.chain, gripper, object, cfg.hand_padding)?;
    let (arm_cost, _) = arm.configuration_cost(g)?;
    Ok(GraspCost {
        isf,
        hand,
        arm: arm_cost,
        total: isf + cfg.gamma * (hand + cfg.beta * arm_cost),
    })
}

fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Left Jacobian of SO(3): maps a twist's linear part to the translation of
/// its exponential.
fn so3_left_jacobian(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta = w.norm();
    let k = skew(w);
    if theta < 1e-6 {
        return Matrix3::identity() + 0.5 * k + k * k / 6.0;
    }
    let t2 = theta * theta;
    Matrix3::identity() + (1.0 - theta.cos()) / t2 * k + (theta - theta.sin()) / (t2 * theta) * (k * k)
}

#[derive(Clone, Debug, PartialEq)]
pub enum IsfStatus {
    Applied,
    /// Fewer than two correspondences survived filtering.
    Skipped { correspondences: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct IsfStep {
    pub q: Configuration,
    pub gradient: Configuration,
    pub status: IsfStatus,
}

/// One refinement step in configuration space.
pub fn cspace_isf_step(
    g: &Configuration,
    gripper: &GripperModel,
    object: &ObjectSurface,
    arm: &CollisionModel,
    cfg: &GraspRefineConfig,
) -> Result<IsfStep> {
    cfg.validate()?;
    let chain = arm.chain;
    if !chain.within_limits(g) {
        return invalid("grasp configuration outside joint limits");
    }
    let frames = chain.forward_kinematics(g)?;
    let ee = chain.end_effector_from_frames(&frames);
    let origin = Point3::from(ee.translation.vector);
    let (pts, normals) = contacts_at(&ee, gripper);
    let corr = nearest_correspondences(&pts, &normals, object)?;
    if corr.len() < 2 {
        log::warn!("grasp refinement skipped: {} correspondences", corr.len());
        return Ok(IsfStep {
            q: g.clone(),
            gradient: Configuration::zeros(g.len()),
            status: IsfStatus::Skipped {
                correspondences: corr.len(),
            },
        });
    }
    let (_, hand_twist) = hand_collision_at(&ee, gripper, object, cfg.hand_padding);
    let grad_twist = isf_twist_gradient(&corr, &origin, cfg.alpha) + cfg.gamma * hand_twist;

    // exponential-map displacement per unit step
    let omega: Vector3<f64> = grad_twist.fixed_rows::<3>(0).into();
    let v: Vector3<f64> = grad_twist.fixed_rows::<3>(3).into();
    let moved = twist(omega, so3_left_jacobian(&(cfg.eta_grasp * omega)) * v);

    let jac = chain.spatial_jacobian_from_frames(&frames);
    let mut gradient = jac.transpose() * moved;
    if cfg.beta * cfg.gamma > 0.0 {
        let (_, arm_grad) = arm.configuration_cost(g)?;
        gradient += cfg.beta * cfg.gamma * arm_grad;
    }
    if gradient.iter().any(|x| !x.is_finite()) {
        return Err(Error::NumericalFailure("grasp gradient is not finite".into()));
    }
    let mut step = cfg.eta_grasp * &gradient;
    let norm = step.norm();
    if norm > cfg.max_step {
        step *= cfg.max_step / norm;
    }
    let mut q = g - step;
    chain.clamp(&mut q);
    Ok(IsfStep {
        q,
        gradient,
        status: IsfStatus::Applied,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Translation3, UnitQuaternion};

    fn slab_surface(g: &GripperModel) -> ObjectSurface {
        // exactly the surface patches the contacts should touch
        let (pts, normals): (Vec<_>, Vec<_>) = g
            .contacts()
            .iter()
            .zip(g.contact_normals())
            .map(|(p, n)| (*p, -*n))
            .unzip();
        ObjectSurface::new(pts, normals).unwrap()
    }

    #[test]
    fn contact_layout() {
        let g = GripperModel::new(GripperDims::default()).unwrap();
        assert_eq!(g.contacts().len(), 20);
        for (p, n) in g.contacts().iter().zip(g.contact_normals()) {
            assert!((n.norm() - 1.0).abs() < 1e-15);
            // standoff in front of the owning face, inside the open gap
            let (d, _) = g.hand_distance(p);
            assert!((d - 0.02).abs() < 1e-12, "{d}");
            let (d_ahead, _) = g.hand_distance(&(p + n.into_inner() * 0.005));
            assert!(d_ahead > d);
        }
    }

    #[test]
    fn loss_examples() {
        let o = Point3::origin();
        let pair = |hp: Point3<f64>, hn: Vector3<f64>, on: Vector3<f64>| Correspondence {
            contact: 0,
            object: 0,
            hand_point: hp,
            hand_normal: Unit::new_normalize(hn),
            object_point: o,
            object_normal: Unit::new_normalize(on),
        };
        let z = Vector3::z();
        let c = pair(Point3::new(0.0, 0.0, 0.3), -z, z);
        assert!((point_match_loss(&[c]) - 0.09).abs() < 1e-15);
        assert_eq!(normal_align_loss(&[c]), 0.0);
        let c = pair(Point3::new(0.4, -0.2, 0.0), z, z);
        assert_eq!(point_match_loss(&[c]), 0.0);
        assert_eq!(normal_align_loss(&[c]), 4.0);
        let c = pair(o, Vector3::x(), z);
        assert_eq!(normal_align_loss(&[c]), 1.0);
        let c = pair(Point3::new(0.1, 0.0, 0.2), Vector3::x(), z);
        assert_eq!(isf_loss(&[c], 0.0), point_match_loss(&[c]));
        assert!((isf_loss(&[c], 0.5) - (0.04 + 0.5)).abs() < 1e-15);
    }

    #[test]
    fn duplicate_matches_keep_the_closest_contact() {
        let surf = ObjectSurface::new(
            vec![Point3::origin(), Point3::new(5.0, 0.0, 0.0)],
            vec![Vector3::z_axis(), Vector3::z_axis()],
        )
        .unwrap();
        let pts = vec![Point3::new(0.3, 0.0, 0.0), Point3::new(0.1, 0.0, 0.0), Point3::new(5.0, 0.0, 0.0)];
        let normals = vec![Vector3::z_axis(); 3];
        let corr = nearest_correspondences(&pts, &normals, &surf).unwrap();
        assert_eq!(corr.len(), 2);
        assert_eq!((corr[0].contact, corr[0].object), (1, 0));
        assert_eq!((corr[1].contact, corr[1].object), (2, 1));
        assert!(nearest_correspondences(&pts, &normals, &ObjectSurface::new(vec![], vec![]).unwrap()).is_err());
    }

    #[test]
    fn perfect_grasp_has_zero_loss_and_no_collision() {
        let g = GripperModel::new(GripperDims::default()).unwrap();
        let surf = slab_surface(&g);
        let ee = Isometry3::from_parts(
            Translation3::new(0.3, -0.2, 0.1),
            UnitQuaternion::from_scaled_axis(Vector3::new(0.2, 0.4, -0.7)),
        );
        let moved = ObjectSurface::new(
            surf.points().iter().map(|p| ee * p).collect(),
            surf.normals().iter().map(|n| ee.rotation * *n).collect(),
        )
        .unwrap();
        let (pts, normals) = contacts_at(&ee, &g);
        let corr = nearest_correspondences(&pts, &normals, &moved).unwrap();
        assert_eq!(corr.len(), 20);
        assert!(isf_loss(&corr, 0.01) < 1e-24);
        let (c, t) = hand_collision_at(&ee, &g, &moved, 0.02);
        assert!(c < 1e-24);
        assert!(t.norm() < 1e-12);
        assert!(isf_twist_gradient(&corr, &Point3::from(ee.translation.vector), 0.01).norm() < 1e-9);
    }

    #[test]
    fn symmetric_penetration_cancels_along_closing_axis() {
        let g = GripperModel::new(GripperDims::default()).unwrap();
        let mut pts = Vec::new();
        for x in [0.01, 0.03, 0.05] {
            for z in [-0.005, 0.005] {
                for y in [0.052, -0.052] {
                    pts.push(Point3::new(x, y, z));
                }
            }
        }
        let normals = vec![Vector3::x_axis(); pts.len()];
        let surf = ObjectSurface::new(pts, normals).unwrap();
        let (c, t) = hand_collision_at(&Isometry3::identity(), &g, &surf, 0.02);
        assert!(c > 0.0);
        assert!(t[4].abs() < 1e-12);
    }

    #[test]
    fn so3_left_jacobian_matches_exponential() {
        let w = Vector3::new(0.3, -0.5, 0.9);
        let v = Vector3::new(0.2, 0.1, -0.4);
        // integrate the screw motion numerically
        let steps = 20000;
        let mut p = Vector3::zeros();
        for k in 0..steps {
            let s = (k as f64 + 0.5) / steps as f64;
            p += UnitQuaternion::from_scaled_axis(w * s) * v / steps as f64;
        }
        assert!((so3_left_jacobian(&w) * v - p).norm() < 1e-8);
        let tiny = Vector3::new(1e-8, 0.0, 0.0);
        assert!((so3_left_jacobian(&tiny) - Matrix3::identity()).norm() < 1e-7);
    }
}
