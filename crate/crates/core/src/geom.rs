//! Geometry and imaging primitives shared by every stage: boxes, rigid
//! transforms, pinhole cameras, rasters, point clouds and IoU.

use nalgebra::{Matrix4, Point3, Quaternion, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("point lies behind the camera (z = {z})")]
    BehindCamera { z: f64 },
    #[error("frame mismatch: {a} vs {b}")]
    FrameMismatch { a: String, b: String },
    #[error("invalid value: {0}")]
    Invalid(String),
}

/// Position of a gaze sample, either on the image plane or in the world.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GazePos {
    Pixel([f64; 2]),
    World([f64; 3]),
}

impl GazePos {
    /// Coordinates padded to three components (z = 0 for pixel samples).
    pub fn xyz(&self) -> [f64; 3] {
        match *self {
            GazePos::Pixel([x, y]) => [x, y, 0.0],
            GazePos::World(p) => p,
        }
    }

    pub fn is_3d(&self) -> bool {
        matches!(self, GazePos::World(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GazeSample {
    /// Milliseconds.
    pub t: f64,
    pub pos: GazePos,
    pub frame_id: String,
}

impl GazeSample {
    pub fn new(t: f64, pos: GazePos, frame_id: impl Into<String>) -> Result<Self, GeomError> {
        if !t.is_finite() || t < 0.0 {
            return Err(GeomError::Invalid(format!("timestamp {t}")));
        }
        if pos.xyz().iter().any(|v| !v.is_finite()) {
            return Err(GeomError::Invalid("non-finite gaze coordinate".into()));
        }
        Ok(Self {
            t,
            pos,
            frame_id: frame_id.into(),
        })
    }
}

/// Axis-aligned image box with real-valued inclusive corners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox2D {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox2D {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, GeomError> {
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(GeomError::Invalid("non-finite box corner".into()));
        }
        if x1 > x2 || y1 > y2 {
            return Err(GeomError::Invalid(format!(
                "corner order violated: ({x1},{y1})-({x2},{y2})"
            )));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// Builds a box from `x, y, width, height` as used by COCO files.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self, GeomError> {
        Self::new(x, y, x + w, y + h)
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Inclusive point containment.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.x1 <= x && x <= self.x2 && self.y1 <= y && y <= self.y2
    }

    pub fn intersection_area(&self, other: &BBox2D) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }
}

/// Intersection over union of two boxes, computed analytically.
///
/// Degenerate (zero-area) boxes only reach an IoU of 1 against an identical
/// box.
pub fn iou2d(a: &BBox2D, b: &BBox2D) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BBox3D {
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub frame_id: String,
}

impl BBox3D {
    pub fn new(center: [f64; 3], size: [f64; 3], frame_id: impl Into<String>) -> Result<Self, GeomError> {
        if center.iter().chain(size.iter()).any(|v| !v.is_finite()) {
            return Err(GeomError::Invalid("non-finite 3D box".into()));
        }
        if size.iter().any(|&s| s <= 0.0) {
            return Err(GeomError::Invalid(format!("non-positive box size {size:?}")));
        }
        Ok(Self {
            center,
            size,
            frame_id: frame_id.into(),
        })
    }

    /// Tight box around a set of points. Zero extents are floored at `min_size`.
    pub fn from_points<'a>(
        points: impl IntoIterator<Item = &'a [f64; 3]>,
        min_size: f64,
        frame_id: impl Into<String>,
    ) -> Option<Self> {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        let mut any = false;
        for p in points {
            any = true;
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        if !any {
            return None;
        }
        let center = [0, 1, 2].map(|a| 0.5 * (lo[a] + hi[a]));
        let size = [0, 1, 2].map(|a| (hi[a] - lo[a]).max(min_size));
        Some(Self {
            center,
            size,
            frame_id: frame_id.into(),
        })
    }

    pub fn min(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| self.center[a] - 0.5 * self.size[a])
    }

    pub fn max(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| self.center[a] + 0.5 * self.size[a])
    }

    pub fn volume(&self) -> f64 {
        self.size.iter().product()
    }

    pub fn diagonal(&self) -> f64 {
        self.size.iter().map(|s| s * s).sum::<f64>().sqrt()
    }
}

/// Volumetric IoU of two axis-aligned boxes in the same frame.
pub fn iou3d(a: &BBox3D, b: &BBox3D) -> Result<f64, GeomError> {
    if a.frame_id != b.frame_id {
        return Err(GeomError::FrameMismatch {
            a: a.frame_id.clone(),
            b: b.frame_id.clone(),
        });
    }
    let (amin, amax, bmin, bmax) = (a.min(), a.max(), b.min(), b.max());
    let mut inter = 1.0;
    for k in 0..3 {
        let e = amax[k].min(bmax[k]) - amin[k].max(bmin[k]);
        if e <= 0.0 {
            return Ok(0.0);
        }
        inter *= e;
    }
    let union = a.volume() + b.volume() - inter;
    Ok((inter / union).clamp(0.0, 1.0))
}

/// Rigid motion `x -> R x + t`. `compose(a, b)` applies `b` first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    translation: Vector3<f64>,
    rotation: UnitQuaternion<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub const QUAT_TOLERANCE: f64 = 1e-9;

    pub fn identity() -> Self {
        Self {
            translation: Vector3::zeros(),
            rotation: UnitQuaternion::identity(),
        }
    }

    /// Builds a transform from a translation and a `[w, x, y, z]` quaternion.
    ///
    /// Quaternions within `QUAT_TOLERANCE` of unit norm are taken verbatim so
    /// that stored values survive a save/load cycle bit-exactly; anything else
    /// is renormalized.
    pub fn from_parts(t: [f64; 3], q_wxyz: [f64; 4]) -> Result<Self, GeomError> {
        if t.iter().chain(q_wxyz.iter()).any(|v| !v.is_finite()) {
            return Err(GeomError::Invalid("non-finite transform".into()));
        }
        let q = Quaternion::new(q_wxyz[0], q_wxyz[1], q_wxyz[2], q_wxyz[3]);
        let norm = q.norm();
        if norm < 1e-12 {
            return Err(GeomError::Invalid("zero quaternion".into()));
        }
        let rotation = if (norm - 1.0).abs() <= Self::QUAT_TOLERANCE {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::new_normalize(q)
        };
        Ok(Self {
            translation: Vector3::from(t),
            rotation,
        })
    }

    pub fn from_translation(t: [f64; 3]) -> Self {
        Self {
            translation: Vector3::from(t),
            rotation: UnitQuaternion::identity(),
        }
    }

    pub fn from_rotation(rotation: UnitQuaternion<f64>) -> Self {
        Self {
            translation: Vector3::zeros(),
            rotation,
        }
    }

    pub fn from_rotation_translation(rotation: UnitQuaternion<f64>, t: [f64; 3]) -> Self {
        Self {
            translation: Vector3::from(t),
            rotation,
        }
    }

    pub fn translation(&self) -> [f64; 3] {
        [self.translation.x, self.translation.y, self.translation.z]
    }

    /// `[w, x, y, z]`.
    pub fn quaternion(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let v = self.rotation * Point3::from(p) + self.translation;
        [v.x, v.y, v.z]
    }

    pub fn apply_vector(&self, v: [f64; 3]) -> [f64; 3] {
        let r = self.rotation * Vector3::from(v);
        [r.x, r.y, r.z]
    }

    pub fn inverse(&self) -> Self {
        let rotation = self.rotation.inverse();
        let translation = -(rotation * self.translation);
        Self {
            translation,
            rotation,
        }
    }

    /// Homogeneous 4x4 matrix.
    pub fn to_matrix(&self) -> Matrix4<f64> {
        nalgebra::Isometry3::from_parts(Translation3::from(self.translation), self.rotation)
            .to_homogeneous()
    }
}

/// `a ∘ b`: the transform that applies `b`, then `a`.
pub fn compose(a: &RigidTransform, b: &RigidTransform) -> RigidTransform {
    let rotation = UnitQuaternion::new_normalize((a.rotation * b.rotation).into_inner());
    RigidTransform {
        translation: a.rotation * b.translation + a.translation,
        rotation,
    }
}

pub fn invert(a: &RigidTransform) -> RigidTransform {
    a.inverse()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinholeCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl PinholeCamera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeomError> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        let ok = self.fx.is_finite()
            && self.fy.is_finite()
            && self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cy >= 0.0
            && self.cx < self.width as f64
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(GeomError::Invalid(format!("invalid intrinsics {self:?}")))
        }
    }

    pub fn project(&self, p: [f64; 3]) -> Result<[f64; 2], GeomError> {
        let [x, y, z] = p;
        if z <= 0.0 {
            return Err(GeomError::BehindCamera { z });
        }
        Ok([self.fx * x / z + self.cx, self.fy * y / z + self.cy])
    }

    /// Inverse projection of pixel `(u, v)` at depth `z`.
    pub fn back_project(&self, uv: [f64; 2], z: f64) -> [f64; 3] {
        [(uv[0] - self.cx) * z / self.fx, (uv[1] - self.cy) * z / self.fy, z]
    }

    /// Continuous in-frame test: `0 <= u < width`, `0 <= v < height`.
    pub fn in_frame(&self, uv: [f64; 2]) -> bool {
        uv[0] >= 0.0 && uv[1] >= 0.0 && uv[0] < self.width as f64 && uv[1] < self.height as f64
    }
}

pub fn project(cam: &PinholeCamera, p_cam: [f64; 3]) -> Result<[f64; 2], GeomError> {
    cam.project(p_cam)
}

/// Row-major multi-channel image with `f64` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self, GeomError> {
        if data.len() != width * height * channels {
            return Err(GeomError::Invalid(format!(
                "raster {width}x{height}x{channels} needs {} samples, got {}",
                width * height * channels,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(GeomError::Invalid("non-finite raster sample".into()));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_empty(&self) -> bool {
        self.width == 0 || self.height == 0 || self.channels == 0
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = (y * self.width + x) * self.channels + c;
        self.data[i] = v;
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
    pub frame_id: String,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>, frame_id: impl Into<String>) -> Result<Self, GeomError> {
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(GeomError::Invalid("non-finite point".into()));
        }
        Ok(Self {
            points,
            frame_id: frame_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn transformed(&self, t: &RigidTransform, frame_id: impl Into<String>) -> Self {
        Self {
            points: self.points.iter().map(|&p| t.apply(p)).collect(),
            frame_id: frame_id.into(),
        }
    }
}
