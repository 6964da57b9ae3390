//! Pinhole cameras, rigid poses, rays, and plane intersection.
//!
//! Conventions used throughout the crate:
//!
//! - World frame is z-up with the nominal ground plane at `z = 0`; a camera's
//!   altitude is simply `position.z`.
//! - Camera frame is x-right, y-down, z-forward (along the viewing direction).
//!   `Pose::rotation` maps camera coordinates to world coordinates.
//! - Pixel `(u, v)` of a raster samples the continuous image-plane coordinate
//!   `(u + 0.5, v + 0.5)`; continuous coordinates therefore cover
//!   `[0, width] x [0, height]`.
//! - Angles are degrees in files and public parameters, radians internally.

use nalgebra::{Matrix3, Rotation3, Unit, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const ORTHONORMAL_TOL: f64 = 1e-9;
const PARALLEL_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("field of view must be in (0, 180) degrees, got {0}")]
    InvalidFov(f64),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("rotation is not a proper orthonormal matrix (tolerance 1e-9)")]
    InvalidRotation,
    #[error("pixel ({0}, {1}) outside image bounds")]
    PixelOutOfBounds(f64, f64),
    #[error("direction vector has zero length")]
    ZeroDirection,
}

/// Ideal pinhole intrinsics with square pixels and a single focal length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub image_width: u32,
    pub image_height: u32,
    /// Focal length in pixels.
    pub focal_length: f64,
    /// Principal point in continuous pixel coordinates.
    pub principal_point: [f64; 2],
}

impl CameraIntrinsics {
    pub fn new(
        image_width: u32,
        image_height: u32,
        focal_length: f64,
        principal_point: [f64; 2],
    ) -> Result<Self, GeometryError> {
        let intr = Self {
            image_width,
            image_height,
            focal_length,
            principal_point,
        };
        intr.validate()?;
        Ok(intr)
    }

    /// Builds intrinsics from a horizontal field of view, with the principal
    /// point at the image center: `f = (w/2) / tan(fov/2)`.
    pub fn from_fov(fov_deg: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        if !(fov_deg > 0.0 && fov_deg < 180.0) || !fov_deg.is_finite() {
            return Err(GeometryError::InvalidFov(fov_deg));
        }
        let focal = (width as f64 / 2.0) / (fov_deg.to_radians() / 2.0).tan();
        Self::new(
            width,
            height,
            focal,
            [width as f64 / 2.0, height as f64 / 2.0],
        )
    }

    /// Horizontal field of view in degrees; inverse of [`Self::from_fov`].
    pub fn fov_deg(&self) -> f64 {
        2.0 * (self.image_width as f64 / 2.0 / self.focal_length)
            .atan()
            .to_degrees()
    }

    /// True if a continuous pixel coordinate lies within the image footprint.
    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && u <= self.image_width as f64 && v >= 0.0 && v <= self.image_height as f64
    }

    fn validate(&self) -> Result<(), GeometryError> {
        if self.image_width == 0 || self.image_height == 0 {
            return Err(GeometryError::InvalidIntrinsics(
                "image dimensions must be positive".into(),
            ));
        }
        if self.focal_length <= 0.0 || !self.focal_length.is_finite() {
            return Err(GeometryError::InvalidIntrinsics(
                "focal length must be positive and finite".into(),
            ));
        }
        let [px, py] = self.principal_point;
        if !self.contains(px, py) {
            return Err(GeometryError::InvalidIntrinsics(
                "principal point outside image".into(),
            ));
        }
        Ok(())
    }
}

/// Rigid camera placement: rotation maps camera axes into the world frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    /// Camera center in world coordinates (meters); `position.z` is the
    /// altitude above the nominal ground plane.
    pub position: Vector3<f64>,
    /// World direction of "image up" (the negative camera y-axis). Derived
    /// from the rotation; kept explicit for virtual-camera construction.
    pub up_hint: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, position: Vector3<f64>) -> Result<Self, GeometryError> {
        let residual = (rotation.transpose() * rotation - Matrix3::identity()).norm();
        if residual > ORTHONORMAL_TOL * 10.0 || (rotation.determinant() - 1.0).abs() > 1e-6 {
            return Err(GeometryError::InvalidRotation);
        }
        let up_hint = -rotation.column(1).into_owned();
        Ok(Self {
            rotation,
            position,
            up_hint,
        })
    }

    /// A camera looking straight down, with the image up-direction rotated by
    /// `up_angle_deg` about the optical axis. At 0 degrees, image right is
    /// world +x and image up is world +y.
    pub fn nadir(position: Vector3<f64>, up_angle_deg: f64) -> Self {
        let theta = up_angle_deg.to_radians();
        let (s, c) = theta.sin_cos();
        let x_cam = Vector3::new(c, s, 0.0);
        let y_cam = Vector3::new(s, -c, 0.0);
        let z_cam = Vector3::new(0.0, 0.0, -1.0);
        let rotation = Matrix3::from_columns(&[x_cam, y_cam, z_cam]);
        Self {
            rotation,
            position,
            up_hint: -y_cam,
        }
    }

    /// Viewing direction (camera z-axis) in world coordinates.
    pub fn forward(&self) -> Vector3<f64> {
        self.rotation.column(2).into_owned()
    }

    pub fn world_to_camera(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (point - self.position)
    }

    pub fn camera_to_world(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * point + self.position
    }
}

/// Half-line with unit direction.
#[derive(Debug, Clone, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
}

impl Ray {
    pub fn new(origin: Vector3<f64>, direction: Vector3<f64>) -> Result<Self, GeometryError> {
        let norm = direction.norm();
        if norm < PARALLEL_TOL {
            return Err(GeometryError::ZeroDirection);
        }
        Ok(Self {
            origin,
            direction: direction / norm,
        })
    }

    pub fn point_at(&self, t: f64) -> Vector3<f64> {
        self.origin + self.direction * t
    }
}

/// Infinite plane through `point` with unit `normal`.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
}

impl Plane {
    pub fn new(point: Vector3<f64>, normal: Vector3<f64>) -> Result<Self, GeometryError> {
        let norm = normal.norm();
        if norm < PARALLEL_TOL {
            return Err(GeometryError::ZeroDirection);
        }
        Ok(Self {
            point,
            normal: normal / norm,
        })
    }

    /// Horizontal plane at the given altitude.
    pub fn horizontal(z: f64) -> Self {
        Self {
            point: Vector3::new(0.0, 0.0, z),
            normal: Vector3::new(0.0, 0.0, 1.0),
        }
    }
}

/// Ray-plane intersection with a strictly positive ray parameter. Returns
/// `None` when the ray is parallel to the plane or the hit lies behind the
/// ray origin; both are values, not errors.
pub fn intersect_plane(ray: &Ray, plane: &Plane) -> Option<Vector3<f64>> {
    let denom = ray.direction.dot(&plane.normal);
    if denom.abs() < PARALLEL_TOL {
        return None;
    }
    let t = (plane.point - ray.origin).dot(&plane.normal) / denom;
    if t <= 0.0 {
        return None;
    }
    Some(ray.point_at(t))
}

/// A pose paired with intrinsics: everything needed to project and
/// back-project.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub intrinsics: CameraIntrinsics,
    pub pose: Pose,
}

impl Camera {
    pub fn new(intrinsics: CameraIntrinsics, pose: Pose) -> Self {
        Self { intrinsics, pose }
    }

    /// Projects a world point to continuous pixel coordinates and depth.
    /// Points at or behind the camera plane yield `None`; projections may
    /// fall outside the image bounds (the caller decides what to do).
    pub fn project_point(&self, world_point: &Vector3<f64>) -> Option<(Vector2<f64>, f64)> {
        let pc = self.pose.world_to_camera(world_point);
        if pc.z <= 0.0 {
            return None;
        }
        let f = self.intrinsics.focal_length;
        let [px, py] = self.intrinsics.principal_point;
        let u = px + f * pc.x / pc.z;
        let v = py + f * pc.y / pc.z;
        Some((Vector2::new(u, v), pc.z))
    }

    /// Back-projects a continuous pixel coordinate into a world-space ray
    /// from the camera center. Round-trips with [`Self::project_point`] to
    /// within 1e-6 px.
    pub fn pixel_ray(&self, u: f64, v: f64) -> Result<Ray, GeometryError> {
        if !self.intrinsics.contains(u, v) {
            return Err(GeometryError::PixelOutOfBounds(u, v));
        }
        let f = self.intrinsics.focal_length;
        let [px, py] = self.intrinsics.principal_point;
        let dir_cam = Vector3::new((u - px) / f, (v - py) / f, 1.0);
        Ray::new(self.pose.position, self.pose.rotation * dir_cam)
    }

    /// Ground footprint width (meters) seen by a nadir camera at altitude
    /// `h` above the sampled plane: `w_px * h / f` per axis.
    pub fn ground_sample_spacing(&self, altitude_above_plane: f64) -> f64 {
        altitude_above_plane / self.intrinsics.focal_length
    }
}

/// Rotation by `angle_deg` about an arbitrary axis.
pub fn rotation_about_axis(axis: &Vector3<f64>, angle_deg: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle_deg.to_radians())
        .matrix()
        .into_owned()
}

/// Serialized camera geometry for a capture directory: shared intrinsics plus
/// one record per view. Rotations are row-major 3x3, positions are meters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaptureGeometry {
    pub intrinsics: CameraIntrinsics,
    pub poses: Vec<PoseRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoseRecord {
    pub id: u32,
    /// Row-major camera-to-world rotation.
    pub rotation: [f64; 9],
    pub position: [f64; 3],
}

impl PoseRecord {
    pub fn from_pose(id: u32, pose: &Pose) -> Self {
        let r = &pose.rotation;
        let mut rotation = [0.0; 9];
        for row in 0..3 {
            for col in 0..3 {
                rotation[row * 3 + col] = r[(row, col)];
            }
        }
        Self {
            id,
            rotation,
            position: [pose.position.x, pose.position.y, pose.position.z],
        }
    }

    pub fn to_pose(&self) -> Result<Pose, GeometryError> {
        let r = &self.rotation;
        let rotation = Matrix3::new(r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8]);
        Pose::new(rotation, Vector3::from(self.position))
    }
}
