//! Analytic primitives shared by link geometry, obstacles, targets and the hand.

use nalgebra::{Isometry3, Point3, Rotation3, Unit, UnitQuaternion, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{invalid, Result};

/// Signed distance with its spatial gradient.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistanceSample {
    pub distance: f64,
    pub gradient: Vector3<f64>,
}

/// Sphere, oriented box or capsule, all in meters.
///
/// `rotation` on boxes is a scaled rotation axis (axis-angle, radians).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum Primitive {
    Sphere {
        center: Point3<f64>,
        radius: f64,
    },
    Box {
        center: Point3<f64>,
        half_extents: Vector3<f64>,
        #[serde(default = "Vector3::zeros")]
        rotation: Vector3<f64>,
    },
    Capsule {
        a: Point3<f64>,
        b: Point3<f64>,
        radius: f64,
    },
}

fn unit_or_x(v: Vector3<f64>) -> Vector3<f64> {
    let n = v.norm();
    if n > 0.0 {
        v / n
    } else {
        Vector3::x()
    }
}

fn signum_pos(x: f64) -> f64 {
    if x < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Any unit vector orthogonal to `axis`.
pub(crate) fn orthonormal_pair(axis: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if axis.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let u = axis.cross(&helper).normalize();
    let v = axis.cross(&u);
    (u, v)
}

pub(crate) fn random_unit<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n: f64 = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

impl Primitive {
    pub fn sphere(center: Point3<f64>, radius: f64) -> Self {
        Primitive::Sphere { center, radius }
    }

    pub fn cuboid(center: Point3<f64>, half_extents: Vector3<f64>) -> Self {
        Primitive::Box {
            center,
            half_extents,
            rotation: Vector3::zeros(),
        }
    }

    pub fn capsule(a: Point3<f64>, b: Point3<f64>, radius: f64) -> Self {
        Primitive::Capsule { a, b, radius }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            Primitive::Sphere { center, radius } => {
                if !(*radius > 0.0) || !finite(center.coords.as_slice()) {
                    return invalid("sphere radius must be positive and center finite");
                }
            }
            Primitive::Box {
                center,
                half_extents,
                rotation,
            } => {
                if half_extents.iter().any(|h| !(*h > 0.0))
                    || !finite(center.coords.as_slice())
                    || !finite(rotation.as_slice())
                {
                    return invalid("box half-extents must be positive");
                }
            }
            Primitive::Capsule { a, b, radius } => {
                if !(*radius > 0.0) || !finite(a.coords.as_slice()) || !finite(b.coords.as_slice())
                {
                    return invalid("capsule radius must be positive");
                }
            }
        }
        Ok(())
    }

    fn box_pose(center: &Point3<f64>, rotation: &Vector3<f64>) -> Isometry3<f64> {
        Isometry3::from_parts(center.coords.into(), UnitQuaternion::new(*rotation))
    }

    /// Exact signed distance (negative inside) and its gradient.
    pub fn distance(&self, p: &Point3<f64>) -> DistanceSample {
        match self {
            Primitive::Sphere { center, radius } => {
                let v = p - center;
                DistanceSample {
                    distance: v.norm() - radius,
                    gradient: unit_or_x(v),
                }
            }
            Primitive::Capsule { a, b, radius } => {
                let ab = b - a;
                let len2 = ab.norm_squared();
                let t = if len2 > 0.0 {
                    ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let v = p - (a + ab * t);
                let gradient = if v.norm() > 0.0 {
                    v.normalize()
                } else if len2 > 0.0 {
                    orthonormal_pair(&ab.normalize()).0
                } else {
                    Vector3::x()
                };
                DistanceSample {
                    distance: v.norm() - radius,
                    gradient,
                }
            }
            Primitive::Box {
                center,
                half_extents,
                rotation,
            } => {
                let pose = Self::box_pose(center, rotation);
                let local = pose.inverse_transform_point(p).coords;
                let q = local.abs() - half_extents;
                let outside = q.map(|x| x.max(0.0));
                let on = outside.norm();
                let (distance, grad_local) = if on > 0.0 {
                    let g = Vector3::new(
                        signum_pos(local.x) * outside.x,
                        signum_pos(local.y) * outside.y,
                        signum_pos(local.z) * outside.z,
                    ) / on;
                    (on, g)
                } else {
                    let mut axis = 0;
                    for i in 1..3 {
                        if q[i] > q[axis] {
                            axis = i;
                        }
                    }
                    let mut g = Vector3::zeros();
                    g[axis] = signum_pos(local[axis]);
                    (q[axis], g)
                };
                DistanceSample {
                    distance,
                    gradient: pose.rotation * grad_local,
                }
            }
        }
    }

    /// Same primitive expressed after applying `iso`.
    pub fn transformed(&self, iso: &Isometry3<f64>) -> Primitive {
        match self {
            Primitive::Sphere { center, radius } => Primitive::Sphere {
                center: iso * center,
                radius: *radius,
            },
            Primitive::Capsule { a, b, radius } => Primitive::Capsule {
                a: iso * a,
                b: iso * b,
                radius: *radius,
            },
            Primitive::Box {
                center,
                half_extents,
                rotation,
            } => {
                let pose = iso * Self::box_pose(center, rotation);
                Primitive::Box {
                    center: pose.translation.vector.into(),
                    half_extents: *half_extents,
                    rotation: pose.rotation.scaled_axis(),
                }
            }
        }
    }

    pub fn surface_area(&self) -> f64 {
        match self {
            Primitive::Sphere { radius, .. } => 4.0 * PI * radius * radius,
            Primitive::Capsule { a, b, radius } => {
                2.0 * PI * radius * (b - a).norm() + 4.0 * PI * radius * radius
            }
            Primitive::Box { half_extents: h, .. } => 8.0 * (h.x * h.y + h.y * h.z + h.x * h.z),
        }
    }

    /// Axis-aligned bounds `(min, max)`.
    pub fn bounds(&self) -> (Point3<f64>, Point3<f64>) {
        match self {
            Primitive::Sphere { center, radius } => {
                let r = Vector3::repeat(*radius);
                (center - r, center + r)
            }
            Primitive::Capsule { a, b, radius } => {
                let r = Vector3::repeat(*radius);
                (a.inf(b) - r, a.sup(b) + r)
            }
            Primitive::Box {
                center,
                half_extents,
                rotation,
            } => {
                let rot = Rotation3::new(*rotation);
                let ext = rot.matrix().abs() * half_extents;
                (center - ext, center + ext)
            }
        }
    }

    /// Uniform-by-area surface point with its outward unit normal.
    pub fn sample_surface<R: Rng + ?Sized>(&self, rng: &mut R) -> (Point3<f64>, Unit<Vector3<f64>>) {
        match self {
            Primitive::Sphere { center, radius } => {
                let n = random_unit(rng);
                (center + n * *radius, Unit::new_unchecked(n))
            }
            Primitive::Capsule { a, b, radius } => {
                let ab = b - a;
                let len = ab.norm();
                let cyl = 2.0 * PI * radius * len;
                let caps = 4.0 * PI * radius * radius;
                if len > 0.0 && rng.random::<f64>() * (cyl + caps) < cyl {
                    let axis = ab / len;
                    let (u, v) = orthonormal_pair(&axis);
                    let t: f64 = rng.random();
                    let phi = 2.0 * PI * rng.random::<f64>();
                    let n = u * phi.cos() + v * phi.sin();
                    (a + ab * t + n * *radius, Unit::new_normalize(n))
                } else {
                    let n = random_unit(rng);
                    let base = if n.dot(&ab) >= 0.0 { b } else { a };
                    (base + n * *radius, Unit::new_unchecked(n))
                }
            }
            Primitive::Box {
                center,
                half_extents: h,
                rotation,
            } => {
                let pose = Self::box_pose(center, rotation);
                let areas = [h.y * h.z, h.x * h.z, h.x * h.y];
                let total: f64 = areas.iter().sum();
                let mut pick = rng.random::<f64>() * total;
                let mut axis = 2;
                for (i, a) in areas.iter().enumerate() {
                    if pick < *a {
                        axis = i;
                        break;
                    }
                    pick -= a;
                }
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let mut local = Vector3::zeros();
                for i in 0..3 {
                    local[i] = if i == axis {
                        sign * h[i]
                    } else {
                        (2.0 * rng.random::<f64>() - 1.0) * h[i]
                    };
                }
                let mut n = Vector3::zeros();
                n[axis] = sign;
                (
                    pose * Point3::from(local),
                    Unit::new_unchecked(pose.rotation * n),
                )
            }
        }
    }
}

/// Triangle surface with outward (counter-clockwise) winding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriMesh {
    pub vertices: Vec<Point3<f64>>,
    pub triangles: Vec<[usize; 3]>,
}

impl TriMesh {
    /// Closed box mesh with outward-facing triangles.
    pub fn cuboid(center: Point3<f64>, h: Vector3<f64>) -> Self {
        let mut vertices = Vec::with_capacity(8);
        for i in 0..8 {
            let s = |bit: usize| if i & bit != 0 { 1.0 } else { -1.0 };
            vertices.push(center + Vector3::new(s(1) * h.x, s(2) * h.y, s(4) * h.z));
        }
        let quads = [
            [0, 4, 6, 2], // -x
            [1, 3, 7, 5], // +x
            [0, 1, 5, 4], // -y
            [2, 6, 7, 3], // +y
            [0, 2, 3, 1], // -z
            [4, 5, 7, 6], // +z
        ];
        let mut triangles = Vec::new();
        for q in quads {
            triangles.push([q[0], q[1], q[2]]);
            triangles.push([q[0], q[2], q[3]]);
        }
        TriMesh {
            vertices,
            triangles,
        }
    }

    fn triangle_area_normal(&self, t: &[usize; 3]) -> (f64, Vector3<f64>) {
        let (a, b, c) = (self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]);
        let cross = (b - a).cross(&(c - a));
        let n = cross.norm();
        (0.5 * n, if n > 0.0 { cross / n } else { Vector3::zeros() })
    }

    pub fn area(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| self.triangle_area_normal(t).0)
            .sum()
    }

    /// `count` area-uniform samples with face normals.
    pub fn sample_surface<R: Rng + ?Sized>(
        &self,
        count: usize,
        rng: &mut R,
    ) -> Result<Vec<(Point3<f64>, Unit<Vector3<f64>>)>> {
        if self
            .triangles
            .iter()
            .flatten()
            .any(|&i| i >= self.vertices.len())
        {
            return invalid("triangle references a missing vertex");
        }
        let mut cumulative = Vec::with_capacity(self.triangles.len());
        let mut total = 0.0;
        for t in &self.triangles {
            total += self.triangle_area_normal(t).0;
            cumulative.push(total);
        }
        if !(total > 0.0) {
            return invalid("mesh has zero surface area");
        }
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let x = rng.random::<f64>() * total;
            let idx = cumulative
                .partition_point(|&c| c <= x)
                .min(self.triangles.len() - 1);
            let t = &self.triangles[idx];
            let (_, n) = self.triangle_area_normal(t);
            let (a, b, c) = (self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]);
            let r1: f64 = rng.random::<f64>().sqrt();
            let r2: f64 = rng.random();
            let p = a.coords * (1.0 - r1) + b.coords * (r1 * (1.0 - r2)) + c.coords * (r1 * r2);
            out.push((Point3::from(p), Unit::new_unchecked(n)));
        }
        Ok(out)
    }
}
