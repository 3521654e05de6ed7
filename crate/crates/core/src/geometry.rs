//! Rigid poses, point containers and the polar sector-pillar grid.
//!
//! Everything downstream (features, labels, predictions) is indexed by the
//! same [`PolarGridSpec`]. Azimuth is measured with `atan2(y, x)` folded into
//! `[0, 2π)`, so bin 0 starts along the vehicle's forward `+x` axis. Radial
//! and azimuthal bins use floor semantics: a point exactly on a boundary
//! belongs to the higher bin.

use std::f64::consts::TAU;

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::GeometryError;

/// Tolerance for orthonormality checks on rotation matrices.
pub const ROTATION_TOL: f64 = 1e-9;

/// One LiDAR return.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64, intensity: f64) -> Self {
        Self { x, y, z, intensity }
    }

    pub fn is_valid(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.z.is_finite()
            && (0.0..=1.0).contains(&self.intensity)
    }

    /// Horizontal distance from the sensor axis.
    pub fn radius(&self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Azimuth folded into `[0, 2π)`.
    pub fn azimuth(&self) -> f64 {
        normalize_angle(self.y.atan2(self.x))
    }
}

/// Folds an angle into `[0, 2π)`.
pub fn normalize_angle(a: f64) -> f64 {
    let mut a = a % TAU;
    if a < 0.0 {
        a += TAU;
    }
    if a >= TAU {
        a = 0.0;
    }
    a
}

/// Rigid transform mapping points from a local frame into its parent frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose, rejecting rotations that are not proper orthonormal
    /// matrices within [`ROTATION_TOL`].
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let ortho_err = (rotation.transpose() * rotation - Matrix3::identity()).amax();
        let det_err = (rotation.determinant() - 1.0).abs();
        if ortho_err > ROTATION_TOL || det_err > ROTATION_TOL {
            return Err(GeometryError::InvalidRotation {
                orthonormality: ortho_err,
                determinant: rotation.determinant(),
            });
        }
        Ok(Self { rotation, translation })
    }

    /// Planar pose: rotation about `z` by `yaw` radians, then translation.
    pub fn from_xyz_yaw(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Self {
            rotation: *Rotation3::from_axis_angle(&Vector3::z_axis(), yaw).matrix(),
            translation: Vector3::new(x, y, z),
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::from_xyz_yaw(x, y, z, 0.0)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Heading of the local `+x` axis in the parent frame.
    pub fn yaw(&self) -> f64 {
        self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
    }

    /// `self ∘ other`: first apply `other`, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn invert(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        let v = self.rotation * Vector3::new(p.x, p.y, p.z) + self.translation;
        Point3::new(v.x, v.y, v.z, p.intensity)
    }

    pub fn apply_vec(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v + self.translation
    }

    /// Row-major `[R | t]`, the KITTI odometry layout.
    pub fn to_row_major_3x4(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
        ]
    }

    /// Inverse of [`Pose::to_row_major_3x4`] with strict validation.
    pub fn from_row_major_3x4(v: &[f64; 12]) -> Result<Self, GeometryError> {
        let rotation = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        Self::new(rotation, Vector3::new(v[3], v[7], v[11]))
    }

    /// Largest elementwise difference between two poses.
    pub fn max_abs_diff(&self, other: &Pose) -> f64 {
        (self.rotation - other.rotation)
            .amax()
            .max((self.translation - other.translation).amax())
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

/// Provenance of a simulated return.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PointTag {
    pub object_id: u32,
    pub dynamic: bool,
}

/// One sweep, `frame_index` 0 being the current frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PointFrame {
    pub points: Vec<Point3>,
    pub pose: Pose,
    pub frame_index: usize,
    pub tags: Option<Vec<PointTag>>,
}

impl PointFrame {
    pub fn new(points: Vec<Point3>, pose: Pose, frame_index: usize) -> Self {
        Self { points, pose, frame_index, tags: None }
    }

    pub fn with_tags(
        points: Vec<Point3>,
        pose: Pose,
        frame_index: usize,
        tags: Vec<PointTag>,
    ) -> Result<Self, GeometryError> {
        if tags.len() != points.len() {
            return Err(GeometryError::TagCount { points: points.len(), tags: tags.len() });
        }
        Ok(Self { points, pose, frame_index, tags: Some(tags) })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Iterates points with their optional tag.
    pub fn tagged_points(&self) -> impl Iterator<Item = (&Point3, Option<&PointTag>)> {
        let tags = self.tags.as_deref();
        self.points
            .iter()
            .enumerate()
            .map(move |(i, p)| (p, tags.map(|t| &t[i])))
    }
}

/// Re-expresses `frame` in the coordinate system of `current_pose`.
///
/// Both poses are absolute (world) poses. The returned frame carries the
/// identity pose, tags and frame index untouched.
pub fn transform_to_current(frame: &PointFrame, current_pose: &Pose) -> PointFrame {
    let rel = current_pose.invert().compose(&frame.pose);
    PointFrame {
        points: frame.points.iter().map(|p| rel.apply(p)).collect(),
        pose: Pose::identity(),
        frame_index: frame.frame_index,
        tags: frame.tags.clone(),
    }
}

/// Cylinder discretisation shared by features, labels and predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGridSpec", into = "RawGridSpec")]
pub struct PolarGridSpec {
    max_radius: f64,
    z_min: f64,
    z_max: f64,
    n_r: usize,
    n_phi: usize,
}

#[derive(Serialize, Deserialize)]
struct RawGridSpec {
    max_radius: f64,
    z_min: f64,
    z_max: f64,
    n_r: usize,
    n_phi: usize,
}

impl TryFrom<RawGridSpec> for PolarGridSpec {
    type Error = GeometryError;

    fn try_from(r: RawGridSpec) -> Result<Self, Self::Error> {
        PolarGridSpec::new(r.max_radius, r.z_min, r.z_max, r.n_r, r.n_phi)
    }
}

impl From<PolarGridSpec> for RawGridSpec {
    fn from(s: PolarGridSpec) -> Self {
        RawGridSpec {
            max_radius: s.max_radius,
            z_min: s.z_min,
            z_max: s.z_max,
            n_r: s.n_r,
            n_phi: s.n_phi,
        }
    }
}

/// Default lower height bound of the pillar cylinder, relative to the ground
/// under the vehicle.
pub const DEFAULT_Z_MIN: f64 = -0.3;
/// Default upper height bound of the pillar cylinder.
pub const DEFAULT_Z_MAX: f64 = 2.0;

impl PolarGridSpec {
    pub fn new(
        max_radius: f64,
        z_min: f64,
        z_max: f64,
        n_r: usize,
        n_phi: usize,
    ) -> Result<Self, GeometryError> {
        if !(max_radius.is_finite() && max_radius > 0.0) {
            return Err(GeometryError::InvalidGrid(format!("max_radius must be > 0, got {max_radius}")));
        }
        if !(z_min.is_finite() && z_max.is_finite() && z_max > z_min) {
            return Err(GeometryError::InvalidGrid(format!("need z_max > z_min, got [{z_min}, {z_max}]")));
        }
        for (name, n) in [("n_r", n_r), ("n_phi", n_phi)] {
            if n == 0 || n % 8 != 0 {
                return Err(GeometryError::InvalidGrid(format!("{name} must be a positive multiple of 8, got {n}")));
            }
        }
        Ok(Self { max_radius, z_min, z_max, n_r, n_phi })
    }

    /// 15 m radius, 128 × 384 pillars.
    pub fn full() -> Self {
        Self::new(15.0, DEFAULT_Z_MIN, DEFAULT_Z_MAX, 128, 384).expect("static grid is valid")
    }

    /// Small grid used for CPU-scale training runs: 9.6 m, 32 × 48.
    pub fn desk() -> Self {
        Self::new(9.6, DEFAULT_Z_MIN, DEFAULT_Z_MAX, 32, 48).expect("static grid is valid")
    }

    pub fn max_radius(&self) -> f64 {
        self.max_radius
    }
    pub fn z_min(&self) -> f64 {
        self.z_min
    }
    pub fn z_max(&self) -> f64 {
        self.z_max
    }
    pub fn height(&self) -> f64 {
        self.z_max - self.z_min
    }
    pub fn n_r(&self) -> usize {
        self.n_r
    }
    pub fn n_phi(&self) -> usize {
        self.n_phi
    }
    pub fn n_pillars(&self) -> usize {
        self.n_r * self.n_phi
    }

    /// Radial bin width in meters.
    pub fn r_width(&self) -> f64 {
        self.max_radius / self.n_r as f64
    }

    /// Azimuthal bin width in radians.
    pub fn phi_width(&self) -> f64 {
        TAU / self.n_phi as f64
    }

    pub fn phi_width_degrees(&self) -> f64 {
        360.0 / self.n_phi as f64
    }

    /// Azimuth of the center of sector `j`, radians.
    pub fn phi_center(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.phi_width()
    }

    /// Sector containing azimuth `phi` (any real angle).
    pub fn phi_bin_of(&self, phi: f64) -> usize {
        let b = (normalize_angle(phi) / self.phi_width()).floor() as usize;
        b.min(self.n_phi - 1)
    }

    /// Radial bin of a horizontal distance, `None` beyond the grid.
    pub fn r_bin_of(&self, r: f64) -> Option<usize> {
        if !(r >= 0.0 && r < self.max_radius) {
            return None;
        }
        Some(((r / self.r_width()).floor() as usize).min(self.n_r - 1))
    }

    /// Pillar of a point; `None` when outside the radius or height band.
    pub fn bin_point(&self, p: &Point3) -> Option<PolarIndex> {
        if !(p.z >= self.z_min && p.z <= self.z_max) {
            return None;
        }
        self.bin_xy(p.x, p.y)
    }

    /// Pillar of a horizontal position, ignoring height.
    pub fn bin_xy(&self, x: f64, y: f64) -> Option<PolarIndex> {
        let r_bin = self.r_bin_of(x.hypot(y))?;
        let phi_bin = self.phi_bin_of(y.atan2(x));
        Some(PolarIndex { r_bin, phi_bin })
    }

    /// Center of radial bin `d`, meters.
    pub fn depth_of_bin(&self, d: usize) -> Result<f64, GeometryError> {
        if d >= self.n_r {
            return Err(GeometryError::BinOutOfRange { bin: d, n: self.n_r });
        }
        Ok((d as f64 + 0.5) * self.r_width())
    }

    pub fn bin_of_depth(&self, depth: f64) -> Result<usize, GeometryError> {
        self.r_bin_of(depth)
            .ok_or(GeometryError::DepthOutOfRange { depth, max: self.max_radius })
    }

    /// Accessible-depth index for a border at metric distance `border`: the
    /// last bin whose center lies strictly before the border, clamped to the
    /// grid.
    pub fn depth_index_for_border(&self, border: f64) -> usize {
        if !border.is_finite() || border >= self.max_radius {
            return self.n_r - 1;
        }
        let centers_before = (border / self.r_width() - 0.5).ceil();
        if centers_before <= 1.0 {
            return 0;
        }
        ((centers_before as usize) - 1).min(self.n_r - 1)
    }

    /// Flat row-major pillar id, `r_bin * n_phi + phi_bin`.
    pub fn flat(&self, idx: PolarIndex) -> usize {
        idx.r_bin * self.n_phi + idx.phi_bin
    }
}

/// Pillar address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PolarIndex {
    pub r_bin: usize,
    pub phi_bin: usize,
}

/// Per-direction accessible depth, the label and prediction type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CadProfile {
    pub depth_index: Vec<usize>,
    pub confidence: Vec<f64>,
    pub labeled: bool,
}

impl CadProfile {
    /// Profile with full confidence, as produced by the labelers.
    pub fn from_depths(depth_index: Vec<usize>) -> Self {
        let n = depth_index.len();
        Self { depth_index, confidence: vec![1.0; n], labeled: true }
    }

    pub fn len(&self) -> usize {
        self.depth_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depth_index.is_empty()
    }

    /// Checks lengths, index bounds and confidence range against `spec`.
    pub fn validate(&self, spec: &PolarGridSpec) -> Result<(), GeometryError> {
        if self.depth_index.len() != spec.n_phi() || self.confidence.len() != spec.n_phi() {
            return Err(GeometryError::ProfileLength {
                expected: spec.n_phi(),
                depth: self.depth_index.len(),
                confidence: self.confidence.len(),
            });
        }
        if let Some(&d) = self.depth_index.iter().find(|&&d| d >= spec.n_r()) {
            return Err(GeometryError::BinOutOfRange { bin: d, n: spec.n_r() });
        }
        if let Some(&c) = self.confidence.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(GeometryError::InvalidConfidence(c));
        }
        Ok(())
    }

    /// Metric depth per direction (bin centers).
    pub fn depths_m(&self, spec: &PolarGridSpec) -> Result<Vec<f64>, GeometryError> {
        self.depth_index.iter().map(|&d| spec.depth_of_bin(d)).collect()
    }

    /// Circularly shifts all per-direction arrays by `k` sectors.
    pub fn rotated(&self, k: usize) -> Self {
        let mut out = self.clone();
        let n = out.len();
        if n > 0 {
            out.depth_index.rotate_right(k % n);
            out.confidence.rotate_right(k % n);
        }
        out
    }
}

/// Obstacle category of the structure that bounds a direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Thin,
    Dynamic,
    Negative,
    Others,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::Thin, Category::Dynamic, Category::Negative, Category::Others];

    pub fn name(self) -> &'static str {
        match self {
            Category::Thin => "thin",
            Category::Dynamic => "dynamic",
            Category::Negative => "negative",
            Category::Others => "others",
        }
    }
}
