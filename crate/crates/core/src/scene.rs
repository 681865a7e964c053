//! Signed distance fields, the padded obstacle cost, and target surfaces.

use kiddo::immutable::float::kdtree::ImmutableKdTree;
use kiddo::SquaredEuclidean;
use nalgebra::{Point3, Unit, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::geometry::{Primitive, TriMesh};

pub const DEFAULT_PADDING: f64 = 0.2;
pub const DEFAULT_CLEARANCE: f64 = 0.05;
pub const DEFAULT_SURFACE_POINTS: usize = 1000;

/// Padded obstacle cost: linear inside, quadratic within `eps`, zero beyond.
pub fn obstacle_cost(d: f64, eps: f64) -> f64 {
    if d < 0.0 {
        -d + 0.5 * eps
    } else if d <= eps {
        (d - eps) * (d - eps) / (2.0 * eps)
    } else {
        0.0
    }
}

pub fn obstacle_cost_derivative(d: f64, eps: f64) -> f64 {
    if d < 0.0 {
        -1.0
    } else if d <= eps {
        (d - eps) / eps
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SdfQuery {
    pub distance: f64,
    pub gradient: Vector3<f64>,
    /// The point fell outside a grid's interpolation domain and was clamped.
    pub clamped: bool,
}

impl SdfQuery {
    fn empty() -> Self {
        SdfQuery {
            distance: f64::INFINITY,
            gradient: Vector3::zeros(),
            clamped: false,
        }
    }
}

/// Signed distances sampled at cell centers, trilinearly interpolated.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSdf {
    origin: Point3<f64>,
    cell_size: f64,
    dims: [usize; 3],
    values: Vec<f64>,
}

impl GridSdf {
    pub fn new(origin: Point3<f64>, cell_size: f64, dims: [usize; 3], values: Vec<f64>) -> Result<Self> {
        if !(cell_size > 0.0) {
            return invalid("cell size must be positive");
        }
        if dims.iter().any(|&d| d == 0) || dims.iter().product::<usize>() != values.len() {
            return invalid("grid dims do not match value count");
        }
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("grid values must be finite");
        }
        Ok(GridSdf {
            origin,
            cell_size,
            dims,
            values,
        })
    }

    /// Samples the exact field of `primitives` over `[lo, hi]`. With no
    /// primitives every cell holds the length of the bounds diagonal.
    pub fn from_primitives(
        primitives: &[Primitive],
        lo: Point3<f64>,
        hi: Point3<f64>,
        cell_size: f64,
    ) -> Result<Self> {
        if !(cell_size > 0.0) {
            return invalid("cell size must be positive");
        }
        let extent = hi - lo;
        if extent.iter().any(|e| !(*e > 0.0)) {
            return invalid("grid bounds are empty");
        }
        let dims = [0, 1, 2].map(|i| ((extent[i] / cell_size).ceil() as usize).max(1));
        let diagonal = extent.norm();
        let mut values = Vec::with_capacity(dims.iter().product());
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    let p = Self::center_of(&lo, cell_size, [i, j, k]);
                    let d = primitives
                        .iter()
                        .map(|s| s.distance(&p).distance)
                        .fold(f64::INFINITY, f64::min);
                    values.push(if primitives.is_empty() { diagonal } else { d });
                }
            }
        }
        GridSdf::new(lo, cell_size, dims, values)
    }

    fn center_of(origin: &Point3<f64>, cell: f64, idx: [usize; 3]) -> Point3<f64> {
        origin + Vector3::new(idx[0] as f64 + 0.5, idx[1] as f64 + 0.5, idx[2] as f64 + 0.5) * cell
    }

    pub fn cell_center(&self, idx: [usize; 3]) -> Point3<f64> {
        Self::center_of(&self.origin, self.cell_size, idx)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn origin(&self) -> Point3<f64> {
        self.origin
    }

    /// Row-major (x slowest) storage.
    pub fn value(&self, idx: [usize; 3]) -> f64 {
        self.values[(idx[0] * self.dims[1] + idx[1]) * self.dims[2] + idx[2]]
    }

    pub fn query(&self, p: &Point3<f64>) -> SdfQuery {
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        let mut clamped = false;
        for a in 0..3 {
            let mut s = (p[a] - self.origin[a]) / self.cell_size - 0.5;
            if (s - s.round()).abs() < 1e-9 {
                s = s.round();
            }
            let max = (self.dims[a] - 1) as f64;
            let sc = if s < 0.0 {
                clamped = true;
                0.0
            } else if s > max {
                clamped = true;
                max
            } else {
                s
            };
            let i = (sc.floor() as usize).min(self.dims[a].saturating_sub(2));
            base[a] = i;
            frac[a] = if self.dims[a] > 1 { sc - i as f64 } else { 0.0 };
        }
        let at = |dx: usize, dy: usize, dz: usize| {
            let idx = [
                (base[0] + dx).min(self.dims[0] - 1),
                (base[1] + dy).min(self.dims[1] - 1),
                (base[2] + dz).min(self.dims[2] - 1),
            ];
            self.value(idx)
        };
        let [tx, ty, tz] = frac;
        let mut distance = 0.0;
        let mut grad = Vector3::zeros();
        for dx in 0..2 {
            for dy in 0..2 {
                for dz in 0..2 {
                    let wx = if dx == 1 { tx } else { 1.0 - tx };
                    let wy = if dy == 1 { ty } else { 1.0 - ty };
                    let wz = if dz == 1 { tz } else { 1.0 - tz };
                    let sx = if dx == 1 { 1.0 } else { -1.0 };
                    let sy = if dy == 1 { 1.0 } else { -1.0 };
                    let sz = if dz == 1 { 1.0 } else { -1.0 };
                    let v = at(dx, dy, dz);
                    distance += wx * wy * wz * v;
                    grad += Vector3::new(sx * wy * wz, wx * sy * wz, wx * wy * sz) * v;
                }
            }
        }
        for a in 0..3 {
            if self.dims[a] == 1 {
                grad[a] = 0.0;
            }
        }
        SdfQuery {
            distance,
            gradient: grad / self.cell_size,
            clamped,
        }
    }

    /// Little-endian block: origin (3 x f64), cell size (f64), dims (3 x u64),
    /// then the row-major values (f64).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(56 + 8 * self.values.len());
        for a in 0..3 {
            out.extend_from_slice(&self.origin[a].to_le_bytes());
        }
        out.extend_from_slice(&self.cell_size.to_le_bytes());
        for d in self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let word = |i: usize| -> Result<[u8; 8]> {
            bytes
                .get(8 * i..8 * i + 8)
                .map(|s| s.try_into().expect("8-byte slice"))
                .ok_or_else(|| Error::Parse("grid block truncated".into()))
        };
        let f = |i: usize| word(i).map(f64::from_le_bytes);
        let origin = Point3::new(f(0)?, f(1)?, f(2)?);
        let cell = f(3)?;
        let mut dims = [0usize; 3];
        for (a, d) in dims.iter_mut().enumerate() {
            *d = usize::try_from(u64::from_le_bytes(word(4 + a)?))
                .map_err(|_| Error::Parse("grid dims overflow".into()))?;
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Parse("grid dims overflow".into()))?;
        if bytes.len() != 56 + 8 * count {
            return Err(Error::Parse(format!(
                "grid block has {} bytes, expected {}",
                bytes.len(),
                56 + 8 * count
            )));
        }
        let values = (0..count).map(|i| f(7 + i)).collect::<Result<Vec<_>>>()?;
        GridSdf::new(origin, cell, dims, values)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Field {
    Primitive(Primitive),
    Grid(GridSdf),
}

impl Field {
    pub fn query(&self, p: &Point3<f64>) -> SdfQuery {
        match self {
            Field::Primitive(s) => {
                let d = s.distance(p);
                SdfQuery {
                    distance: d.distance,
                    gradient: d.gradient,
                    clamped: false,
                }
            }
            Field::Grid(g) => g.query(p),
        }
    }
}

/// Sampled target surface with outward normals and a nearest-neighbor index.
#[derive(Clone, Debug)]
pub struct ObjectSurface {
    points: Vec<Point3<f64>>,
    normals: Vec<Unit<Vector3<f64>>>,
    index: Option<ImmutableKdTree<f64, u64, 3, 32>>,
}

impl ObjectSurface {
    pub fn new(points: Vec<Point3<f64>>, normals: Vec<Unit<Vector3<f64>>>) -> Result<Self> {
        if points.len() != normals.len() {
            return invalid("points and normals differ in length");
        }
        let coords: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        let index = (!coords.is_empty()).then(|| ImmutableKdTree::new_from_slice(&coords));
        Ok(ObjectSurface { points, normals, index })
    }

    pub fn from_primitive(shape: &Primitive, count: usize, seed: u64) -> Result<Self> {
        shape.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (points, normals) = (0..count).map(|_| shape.sample_surface(&mut rng)).unzip();
        ObjectSurface::new(points, normals)
    }

    pub fn from_mesh(mesh: &TriMesh, count: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (points, normals) = mesh.sample_surface(count, &mut rng)?.into_iter().unzip();
        ObjectSurface::new(points, normals)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    pub fn normals(&self) -> &[Unit<Vector3<f64>>] {
        &self.normals
    }

    /// Nearest sample index and its Euclidean distance.
    pub fn nearest(&self, p: &Point3<f64>) -> Option<(usize, f64)> {
        let nn = self.index.as_ref()?.nearest_one::<SquaredEuclidean>(&[p.x, p.y, p.z]);
        Some((nn.item as usize, nn.distance.sqrt()))
    }
}

/// The grasp target: its analytic shape and its sampled surface.
#[derive(Clone, Debug)]
pub struct Target {
    pub shape: Primitive,
    pub surface: ObjectSurface,
    /// Seed of the surface sampling.
    pub seed: u64,
}

impl Target {
    pub fn new(shape: Primitive, count: usize, seed: u64) -> Result<Self> {
        let surface = ObjectSurface::from_primitive(&shape, count, seed)?;
        Ok(Target { shape, surface, seed })
    }

    pub fn center(&self) -> Point3<f64> {
        let (lo, hi) = self.shape.bounds();
        nalgebra::center(&lo, &hi)
    }
}

#[derive(Clone, Debug)]
pub struct SceneSdf {
    pub obstacles: Vec<Field>,
    pub target: Option<Target>,
    padding: f64,
    clearance: f64,
}

impl SceneSdf {
    pub fn new(obstacles: Vec<Field>, target: Option<Target>) -> Self {
        SceneSdf {
            obstacles,
            target,
            padding: DEFAULT_PADDING,
            clearance: DEFAULT_CLEARANCE,
        }
    }

    pub fn with_margins(mut self, padding: f64, clearance: f64) -> Result<Self> {
        if !(padding > clearance && clearance > 0.0) {
            return invalid("require padding > clearance > 0");
        }
        self.padding = padding;
        self.clearance = clearance;
        Ok(self)
    }

    pub fn padding(&self) -> f64 {
        self.padding
    }

    pub fn clearance(&self) -> f64 {
        self.clearance
    }

    /// Minimum over the selected fields; ties keep the earliest field, the
    /// target coming last.
    pub fn signed_distance(&self, p: &Point3<f64>, include_target: bool) -> SdfQuery {
        let mut best = SdfQuery::empty();
        let mut clamped = false;
        let target = self
            .target
            .as_ref()
            .filter(|_| include_target)
            .map(|t| Field::Primitive(t.shape.clone()));
        for field in self.obstacles.iter().chain(target.as_ref()) {
            let q = field.query(p);
            clamped |= q.clamped;
            if q.distance < best.distance {
                best = q;
            }
        }
        best.clamped = clamped;
        best
    }

    /// Obstacle cost at `p` and its spatial gradient.
    pub fn workspace_cost(&self, p: &Point3<f64>, include_target: bool) -> (f64, Vector3<f64>) {
        let q = self.signed_distance(p, include_target);
        if !(q.distance < self.padding) {
            return (0.0, Vector3::zeros());
        }
        (
            obstacle_cost(q.distance, self.padding),
            q.gradient * obstacle_cost_derivative(q.distance, self.padding),
        )
    }
}
