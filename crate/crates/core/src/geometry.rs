//! Rigid-body math for end-effector poses, waypoints and rotation costs.
//!
//! World frame convention: right-handed, +z up, meters. Rotations are unit
//! quaternions; the 4×4 homogeneous matrix is only an import/export form.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Numeric comparison tolerance for geometry identities.
pub const GEOM_EPS: f64 = 1e-9;
/// Task-level position tolerance (meters).
pub const TASK_POS_TOL: f64 = 1e-3;
/// Task-level rotation tolerance (radians).
pub const TASK_ROT_TOL: f64 = 1e-2;

/// Quaternions read from files are renormalized when within this distance of unit norm.
const INPUT_NORM_SLACK: f64 = 1e-3;
/// Orthonormality slack accepted when importing 4×4 matrices.
const MATRIX_SLACK: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("non-finite component in {0}")]
    NonFinite(&'static str),
    #[error("quaternion norm {0} is not 1")]
    NotUnit(f64),
    #[error("cannot normalize a zero-length vector")]
    ZeroVector,
    #[error("matrix is not a rigid transform: {0}")]
    NotRigid(&'static str),
    #[error("interpolation parameter {0} outside [0, 1]")]
    Parameter(f64),
}

/// A point or free vector in the world frame, meters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn try_new(x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        let p = Point3 { x, y, z };
        if p.is_finite() {
            Ok(p)
        } else {
            Err(GeometryError::NonFinite("point"))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn dot(&self, other: &Point3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(&self, other: &Point3) -> Point3 {
        Point3::new(
            self.y * other.z - self.z * other.y,
            self.z * other.x - self.x * other.z,
            self.x * other.y - self.y * other.x,
        )
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        (*self - *other).norm()
    }

    pub fn lerp(&self, other: &Point3, t: f64) -> Point3 {
        *self + (*other - *self) * t
    }

    pub fn component(&self, i: usize) -> f64 {
        match i {
            0 => self.x,
            1 => self.y,
            2 => self.z,
            _ => panic!("component index {i} out of range"),
        }
    }

    pub fn with_component(mut self, i: usize, v: f64) -> Point3 {
        match i {
            0 => self.x = v,
            1 => self.y = v,
            2 => self.z = v,
            _ => panic!("component index {i} out of range"),
        }
        self
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub(crate) fn to_na(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub(crate) fn from_na(v: &Vector3<f64>) -> Point3 {
        Point3::new(v.x, v.y, v.z)
    }
}

impl TryFrom<[f64; 3]> for Point3 {
    type Error = GeometryError;

    fn try_from(v: [f64; 3]) -> Result<Self, Self::Error> {
        Point3::try_new(v[0], v[1], v[2])
    }
}

impl From<Point3> for [f64; 3] {
    fn from(p: Point3) -> Self {
        p.to_array()
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Point3 {
    type Output = Point3;
    fn neg(self) -> Point3 {
        Point3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl fmt::Display for Point3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

/// A direction with unit Euclidean norm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct UnitVector3(Point3);

impl UnitVector3 {
    pub const X: UnitVector3 = UnitVector3(Point3::new(1.0, 0.0, 0.0));
    pub const Y: UnitVector3 = UnitVector3(Point3::new(0.0, 1.0, 0.0));
    pub const Z: UnitVector3 = UnitVector3(Point3::new(0.0, 0.0, 1.0));

    pub fn normalize(v: Point3) -> Result<Self, GeometryError> {
        if !v.is_finite() {
            return Err(GeometryError::NonFinite("vector"));
        }
        let n = v.norm();
        if n < 1e-12 {
            return Err(GeometryError::ZeroVector);
        }
        Ok(UnitVector3(v * (1.0 / n)))
    }

    pub fn x(&self) -> f64 {
        self.0.x
    }
    pub fn y(&self) -> f64 {
        self.0.y
    }
    pub fn z(&self) -> f64 {
        self.0.z
    }

    pub fn as_point(&self) -> Point3 {
        self.0
    }

    /// Angle to another direction in [0, π].
    pub fn angle_to(&self, other: &UnitVector3) -> f64 {
        angle_between(&self.0, &other.0)
    }
}

impl TryFrom<[f64; 3]> for UnitVector3 {
    type Error = GeometryError;
    fn try_from(v: [f64; 3]) -> Result<Self, Self::Error> {
        UnitVector3::normalize(Point3::try_new(v[0], v[1], v[2])?)
    }
}

impl From<UnitVector3> for [f64; 3] {
    fn from(u: UnitVector3) -> Self {
        u.0.to_array()
    }
}

/// Angle between two (non-zero) vectors, robust near 0 and π.
pub fn angle_between(a: &Point3, b: &Point3) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

/// Unit-quaternion rotation. Equality is sign-invariant (q and -q are the same rotation).
#[derive(Clone, Copy, Debug)]
pub struct Rotation(UnitQuaternion<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(UnitQuaternion::identity())
    }

    /// Builds from (w, x, y, z). Inputs within 1e-3 of unit norm are renormalized.
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        let q = Quaternion::new(w, x, y, z);
        if !(w.is_finite() && x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(GeometryError::NonFinite("quaternion"));
        }
        let n = q.norm();
        if (n - 1.0).abs() > INPUT_NORM_SLACK {
            return Err(GeometryError::NotUnit(n));
        }
        Ok(Rotation(UnitQuaternion::from_quaternion(q)))
    }

    pub fn from_axis_angle(axis: &UnitVector3, angle: f64) -> Self {
        Self::from_scaled_axis(axis.as_point() * angle)
    }

    /// Exponential map: rotation by |v| radians about v.
    pub fn from_scaled_axis(v: Point3) -> Self {
        Rotation(UnitQuaternion::from_scaled_axis(v.to_na()))
    }

    pub fn rot_x(angle: f64) -> Self {
        Self::from_axis_angle(&UnitVector3::X, angle)
    }
    pub fn rot_y(angle: f64) -> Self {
        Self::from_axis_angle(&UnitVector3::Y, angle)
    }
    pub fn rot_z(angle: f64) -> Self {
        Self::from_axis_angle(&UnitVector3::Z, angle)
    }

    /// Builds from a row-major 3×3 matrix that must be a proper rotation.
    pub fn from_matrix(m: &[[f64; 3]; 3]) -> Result<Self, GeometryError> {
        let mat = Matrix3::new(
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        );
        if mat.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite("rotation matrix"));
        }
        let should_be_identity = mat.transpose() * mat;
        if (should_be_identity - Matrix3::identity()).abs().max() > MATRIX_SLACK {
            return Err(GeometryError::NotRigid("rotation block is not orthonormal"));
        }
        if mat.determinant() < 0.0 {
            return Err(GeometryError::NotRigid("rotation block is a reflection"));
        }
        let rot = nalgebra::Rotation3::from_matrix_unchecked(mat);
        Ok(Rotation(UnitQuaternion::from_rotation_matrix(&rot)))
    }

    /// Canonical (w, x, y, z) with w ≥ 0.
    pub fn to_wxyz(&self) -> [f64; 4] {
        let q = self.0.quaternion();
        let s = if q.w < 0.0 { -1.0 } else { 1.0 };
        [s * q.w, s * q.i, s * q.j, s * q.k]
    }

    /// Row-major rotation matrix.
    pub fn matrix(&self) -> [[f64; 3]; 3] {
        let m = self.0.to_rotation_matrix();
        let m = m.matrix();
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }

    /// Image of the i-th local basis axis (0 = x, 1 = y, 2 = z).
    pub fn axis(&self, i: usize) -> Point3 {
        let e = Point3::ORIGIN.with_component(i, 1.0);
        self.apply(&e)
    }

    /// Applies `self` after `other`.
    pub fn compose(&self, other: &Rotation) -> Rotation {
        Rotation(self.0 * other.0)
    }

    pub fn inverse(&self) -> Rotation {
        Rotation(self.0.inverse())
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        Point3::from_na(&(self.0 * p.to_na()))
    }

    /// Logarithm map as a scaled axis with angle in [0, π].
    pub fn log(&self) -> Point3 {
        let [w, x, y, z] = self.to_wxyz();
        let v = Point3::new(x, y, z);
        let s = v.norm();
        if s < 1e-15 {
            return Point3::ORIGIN;
        }
        let angle = 2.0 * s.atan2(w);
        v * (angle / s)
    }

    /// Geodesic distance on SO(3), in [0, π].
    pub fn geodesic(&self, other: &Rotation) -> f64 {
        let rel = self.inverse().compose(other);
        let [w, x, y, z] = rel.to_wxyz();
        2.0 * (x * x + y * y + z * z).sqrt().atan2(w)
    }

    /// Shortest-arc interpolation; t = 0 → self, t = 1 → other.
    pub fn slerp(&self, other: &Rotation, t: f64) -> Rotation {
        let delta = self.inverse().compose(other).log();
        self.compose(&Rotation::from_scaled_axis(delta * t))
    }

    pub fn approx_eq(&self, other: &Rotation, tol: f64) -> bool {
        self.geodesic(other) <= tol
    }
}

impl PartialEq for Rotation {
    fn eq(&self, other: &Self) -> bool {
        self.to_wxyz() == other.to_wxyz()
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Rotation::identity()
    }
}

/// A rigid transform: rotation then translation.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Point3,
}

impl Pose {
    pub fn identity() -> Self {
        Pose::default()
    }

    pub fn new(rotation: Rotation, translation: Point3) -> Self {
        Pose {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Point3) -> Self {
        Pose::new(Rotation::identity(), t)
    }

    pub fn from_rotation(r: Rotation) -> Self {
        Pose::new(r, Point3::ORIGIN)
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation.compose(&other.rotation),
            translation: self.rotation.apply(&other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose {
            rotation: inv,
            translation: -inv.apply(&self.translation),
        }
    }

    pub fn transform_point(&self, p: &Point3) -> Point3 {
        self.rotation.apply(p) + self.translation
    }

    pub fn transform_vector(&self, v: &Point3) -> Point3 {
        self.rotation.apply(v)
    }

    /// Linear in translation, shortest geodesic in rotation.
    pub fn interpolate(a: &Pose, b: &Pose, t: f64) -> Result<Pose, GeometryError> {
        if !(0.0..=1.0).contains(&t) {
            return Err(GeometryError::Parameter(t));
        }
        Ok(Pose {
            rotation: a.rotation.slerp(&b.rotation, t),
            translation: a.translation.lerp(&b.translation, t),
        })
    }

    /// Row-major homogeneous matrix.
    pub fn to_matrix(&self) -> [f64; 16] {
        let r = self.rotation.matrix();
        let t = self.translation;
        [
            r[0][0], r[0][1], r[0][2], t.x, //
            r[1][0], r[1][1], r[1][2], t.y, //
            r[2][0], r[2][1], r[2][2], t.z, //
            0.0, 0.0, 0.0, 1.0,
        ]
    }

    pub fn from_matrix(m: &[f64; 16]) -> Result<Pose, GeometryError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite("matrix"));
        }
        let bottom = [m[12], m[13], m[14], m[15]];
        if (bottom[0].abs() + bottom[1].abs() + bottom[2].abs() + (bottom[3] - 1.0).abs())
            > MATRIX_SLACK
        {
            return Err(GeometryError::NotRigid("bottom row must be [0 0 0 1]"));
        }
        let rotation =
            Rotation::from_matrix(&[[m[0], m[1], m[2]], [m[4], m[5], m[6]], [m[8], m[9], m[10]]])?;
        Ok(Pose::new(rotation, Point3::new(m[3], m[7], m[11])))
    }

    pub fn approx_eq(&self, other: &Pose, tol: f64) -> bool {
        self.translation.distance(&other.translation) <= tol
            && self.rotation.approx_eq(&other.rotation, tol)
    }

    /// Moves along a tangent `[dx, dy, dz, ωx, ωy, ωz]`: translation is added,
    /// rotation is left-multiplied by exp(ω) (world-frame tangent).
    pub fn retract(&self, d: &[f64; 6]) -> Pose {
        Pose {
            rotation: Rotation::from_scaled_axis(Point3::new(d[3], d[4], d[5]))
                .compose(&self.rotation),
            translation: self.translation + Point3::new(d[0], d[1], d[2]),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum PoseRepr {
    Matrix([f64; 16]),
    Quaternion {
        quaternion: [f64; 4],
        translation: [f64; 3],
    },
}

impl Serialize for Pose {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        PoseRepr::Matrix(self.to_matrix()).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        match PoseRepr::deserialize(d)? {
            PoseRepr::Matrix(m) => Pose::from_matrix(&m).map_err(D::Error::custom),
            PoseRepr::Quaternion {
                quaternion: [w, x, y, z],
                translation,
            } => {
                let rotation = Rotation::from_wxyz(w, x, y, z).map_err(D::Error::custom)?;
                let translation = Point3::try_from(translation).map_err(D::Error::custom)?;
                Ok(Pose::new(rotation, translation))
            }
        }
    }
}

/// Gripper command attached to a waypoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gripper {
    Open,
    Close,
    Hold,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub pose: Pose,
    pub gripper: Gripper,
}

impl Waypoint {
    pub fn hold(pose: Pose) -> Self {
        Waypoint {
            pose,
            gripper: Gripper::Hold,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("trajectory has no waypoints")]
    Empty,
    #[error("stage index must be ≥ 1")]
    StageIndex,
}

/// Waypoints for one stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    stage_index: usize,
    waypoints: Vec<Waypoint>,
}

impl Trajectory {
    pub fn new(stage_index: usize, waypoints: Vec<Waypoint>) -> Result<Self, TrajectoryError> {
        if stage_index < 1 {
            return Err(TrajectoryError::StageIndex);
        }
        if waypoints.is_empty() {
            return Err(TrajectoryError::Empty);
        }
        Ok(Trajectory {
            stage_index,
            waypoints,
        })
    }

    pub fn stage_index(&self) -> usize {
        self.stage_index
    }

    pub fn waypoints(&self) -> &[Waypoint] {
        &self.waypoints
    }

    pub fn first(&self) -> &Waypoint {
        &self.waypoints[0]
    }

    pub fn last(&self) -> &Waypoint {
        &self.waypoints[self.waypoints.len() - 1]
    }

    /// Translational length of the polyline, starting from `from`.
    pub fn path_length_from(&self, from: &Point3) -> f64 {
        let mut prev = *from;
        let mut total = 0.0;
        for w in &self.waypoints {
            total += prev.distance(&w.pose.translation);
            prev = w.pose.translation;
        }
        total
    }

    /// Appends another stage's waypoints (used by stage programs).
    pub fn extend(&mut self, other: &Trajectory) {
        self.waypoints.extend_from_slice(&other.waypoints);
    }
}

/// Axis-aligned box in the world frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb {
    pub fn new(min: Point3, max: Point3) -> Self {
        Aabb { min, max }
    }

    pub fn is_inverted(&self) -> bool {
        self.min.x > self.max.x || self.min.y > self.max.y || self.min.z > self.max.z
    }

    pub fn contains(&self, p: &Point3) -> bool {
        (0..3).all(|i| {
            let v = p.component(i);
            v >= self.min.component(i) - GEOM_EPS && v <= self.max.component(i) + GEOM_EPS
        })
    }

    pub fn center(&self) -> Point3 {
        self.min.lerp(&self.max, 0.5)
    }

    pub fn overlaps(&self, other: &Aabb) -> bool {
        (0..3).all(|i| {
            self.min.component(i) < other.max.component(i)
                && other.min.component(i) < self.max.component(i)
        })
    }

    pub fn inflate(&self, d: f64) -> Aabb {
        let v = Point3::new(d, d, d);
        Aabb::new(self.min - v, self.max + v)
    }
}

/// Box with a pose and half-extents.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub pose: Pose,
    pub half_extents: [f64; 3],
}

impl OrientedBox {
    /// World-frame axis-aligned bounds.
    pub fn aabb(&self) -> Aabb {
        let r = self.pose.rotation.matrix();
        let mut h = [0.0; 3];
        for (i, hi) in h.iter_mut().enumerate() {
            *hi = (0..3).map(|j| r[i][j].abs() * self.half_extents[j]).sum();
        }
        let c = self.pose.translation;
        let h = Point3::new(h[0], h[1], h[2]);
        Aabb::new(c - h, c + h)
    }

    /// Euclidean distance from a point to the box (0 inside).
    pub fn distance_to(&self, p: &Point3) -> f64 {
        let local = self.pose.inverse().transform_point(p);
        let mut d = Point3::ORIGIN;
        for i in 0..3 {
            let v = local.component(i).abs() - self.half_extents[i];
            d = d.with_component(i, v.max(0.0));
        }
        d.norm()
    }
}
