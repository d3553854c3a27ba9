//! Camera parameterization.
//!
//! Conventions, fixed for the whole crate:
//!
//! * World frame is right-handed with `+y` up. Objects are centered at the origin.
//! * Camera frame is the usual vision frame: `+x` right, `+y` down, `+z` forward
//!   along the optical axis. A point is in front of the camera iff its camera-space
//!   `z > 0`.
//! * Extrinsics map world to camera: `p_cam = R · p_world + t`.
//! * The camera sits at `distance · (cos el · sin az, sin el, cos el · cos az)`, so
//!   `az = el = 0` places it on the `+z` world axis looking towards `-z`. Positive
//!   elevation lifts the camera above the object.
//! * `theta` rolls the camera about its optical axis after the look-at.
//! * Pixel origin is the top-left image corner; pixel `(i, j)` has its center at
//!   `(i + 0.5, j + 0.5)`.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{GeometryError, RotationMatrix};

/// Sensor width used when none is configured.
pub const DEFAULT_SENSOR_WIDTH_MM: f64 = 32.0;
pub const DEFAULT_FOCAL_LENGTH_MM: f64 = 35.0;
pub const DEFAULT_IMAGE_SIZE: u32 = 512;

/// Spherical camera placement plus in-plane roll.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawViewpoint")]
pub struct Viewpoint {
    azimuth: f64,
    elevation: f64,
    theta: f64,
    distance: f64,
}

#[derive(Deserialize)]
struct RawViewpoint {
    azimuth: f64,
    elevation: f64,
    theta: f64,
    distance: f64,
}

impl TryFrom<RawViewpoint> for Viewpoint {
    type Error = GeometryError;

    fn try_from(raw: RawViewpoint) -> Result<Self, Self::Error> {
        Viewpoint::new(raw.azimuth, raw.elevation, raw.theta, raw.distance)
    }
}

impl Viewpoint {
    /// Builds a viewpoint, normalizing azimuth into `[0, 2π)`, clamping elevation
    /// to `[-π/2, π/2]` and wrapping theta into `(-π, π]`. Values already in range
    /// are stored unchanged.
    pub fn new(azimuth: f64, elevation: f64, theta: f64, distance: f64) -> Result<Self, GeometryError> {
        if !(azimuth.is_finite() && elevation.is_finite() && theta.is_finite()) {
            return Err(GeometryError::InvalidViewpoint(format!(
                "non-finite angle (azimuth={azimuth}, elevation={elevation}, theta={theta})"
            )));
        }
        if !(distance.is_finite() && distance > 0.0) {
            return Err(GeometryError::InvalidViewpoint(format!("distance must be positive, got {distance}")));
        }
        Ok(Self {
            azimuth: normalize_azimuth(azimuth),
            elevation: elevation.clamp(-FRAC_PI_2, FRAC_PI_2),
            theta: wrap_theta(theta),
            distance,
        })
    }

    pub fn azimuth(&self) -> f64 {
        self.azimuth
    }

    pub fn elevation(&self) -> f64 {
        self.elevation
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn distance(&self) -> f64 {
        self.distance
    }

    /// Camera center in world coordinates.
    pub fn eye(&self) -> Vector3<f64> {
        let (sa, ca) = self.azimuth.sin_cos();
        let (se, ce) = self.elevation.sin_cos();
        self.distance * Vector3::new(ce * sa, se, ce * ca)
    }

    /// Extrinsics looking at the origin from [`Viewpoint::eye`], then rolled by theta.
    pub fn to_extrinsics(&self) -> CameraExtrinsics {
        let (sa, ca) = self.azimuth.sin_cos();
        let (se, ce) = self.elevation.sin_cos();
        // Rows are the camera axes expressed in world coordinates. `right` is the
        // closed form of normalize(forward × up), which stays defined at the poles.
        let right = Vector3::new(ca, 0.0, -sa);
        let down = Vector3::new(se * sa, -ce, se * ca);
        let forward = Vector3::new(-ce * sa, -se, -ce * ca);
        let look_at = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let roll = RotationMatrix::about_z(self.theta);
        let rotation = roll.matrix() * look_at;
        let translation = -(rotation * self.eye());
        CameraExtrinsics { rotation: RotationMatrix::new(rotation).expect("look-at frame is orthonormal"), translation }
    }
}

/// `viewpoint_to_extrinsics` as a free function.
pub fn viewpoint_to_extrinsics(vp: &Viewpoint) -> CameraExtrinsics {
    vp.to_extrinsics()
}

fn normalize_azimuth(a: f64) -> f64 {
    if (0.0..TAU).contains(&a) {
        return a;
    }
    let r = a.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

fn wrap_theta(t: f64) -> f64 {
    if t > -PI && t <= PI {
        return t;
    }
    let r = (t + PI).rem_euclid(TAU) - PI;
    if r <= -PI {
        r + TAU
    } else {
        r
    }
}

/// World-to-camera rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraExtrinsics {
    pub rotation: RotationMatrix,
    pub translation: Vector3<f64>,
}

impl CameraExtrinsics {
    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.apply(p) + self.translation
    }

    pub fn camera_center(&self) -> Vector3<f64> {
        -(self.rotation.matrix().transpose() * self.translation)
    }
}

/// Pinhole intrinsics with square pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawIntrinsics")]
pub struct CameraIntrinsics {
    focal_length_mm: f64,
    sensor_width_mm: f64,
    image_width: u32,
    image_height: u32,
    principal_point: [f64; 2],
}

#[derive(Deserialize)]
struct RawIntrinsics {
    focal_length_mm: f64,
    sensor_width_mm: f64,
    image_width: u32,
    image_height: u32,
    principal_point: [f64; 2],
}

impl TryFrom<RawIntrinsics> for CameraIntrinsics {
    type Error = GeometryError;

    fn try_from(r: RawIntrinsics) -> Result<Self, Self::Error> {
        CameraIntrinsics::new(r.focal_length_mm, r.sensor_width_mm, r.image_width, r.image_height, r.principal_point)
    }
}

impl CameraIntrinsics {
    pub fn new(
        focal_length_mm: f64,
        sensor_width_mm: f64,
        image_width: u32,
        image_height: u32,
        principal_point: [f64; 2],
    ) -> Result<Self, GeometryError> {
        let invalid = |msg: String| Err(GeometryError::InvalidIntrinsics(msg));
        if !(focal_length_mm.is_finite() && focal_length_mm > 0.0) {
            return invalid(format!("focal length must be positive, got {focal_length_mm}"));
        }
        if !(sensor_width_mm.is_finite() && sensor_width_mm > 0.0) {
            return invalid(format!("sensor width must be positive, got {sensor_width_mm}"));
        }
        if image_width == 0 || image_height == 0 {
            return invalid(format!("image size must be non-zero, got {image_width}x{image_height}"));
        }
        let [cx, cy] = principal_point;
        if !(cx >= 0.0 && cx <= image_width as f64 && cy >= 0.0 && cy <= image_height as f64) {
            return invalid(format!("principal point ({cx}, {cy}) outside the image"));
        }
        Ok(Self { focal_length_mm, sensor_width_mm, image_width, image_height, principal_point })
    }

    /// Intrinsics with the principal point at the image center.
    pub fn centered(
        focal_length_mm: f64,
        sensor_width_mm: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        Self::new(focal_length_mm, sensor_width_mm, width, height, [width as f64 / 2.0, height as f64 / 2.0])
    }

    pub fn focal_length_mm(&self) -> f64 {
        self.focal_length_mm
    }

    pub fn sensor_width_mm(&self) -> f64 {
        self.sensor_width_mm
    }

    pub fn width(&self) -> u32 {
        self.image_width
    }

    pub fn height(&self) -> u32 {
        self.image_height
    }

    pub fn principal_point(&self) -> [f64; 2] {
        self.principal_point
    }

    /// Focal length in pixels.
    pub fn focal_px(&self) -> f64 {
        self.focal_length_mm / self.sensor_width_mm * self.image_width as f64
    }

    /// The 3×3 calibration matrix.
    pub fn matrix(&self) -> Matrix3<f64> {
        let f = self.focal_px();
        let [cx, cy] = self.principal_point;
        Matrix3::new(f, 0.0, cx, 0.0, f, cy, 0.0, 0.0, 1.0)
    }

    /// Pinhole projection of a camera-space point.
    pub fn project_camera(&self, p: &Vector3<f64>) -> Result<Projection, GeometryError> {
        if !(p.z > 0.0) {
            return Err(GeometryError::BehindCamera { depth: p.z });
        }
        let f = self.focal_px();
        let [cx, cy] = self.principal_point;
        Ok(Projection { u: cx + f * p.x / p.z, v: cy + f * p.y / p.z, depth: p.z })
    }
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self::centered(DEFAULT_FOCAL_LENGTH_MM, DEFAULT_SENSOR_WIDTH_MM, DEFAULT_IMAGE_SIZE, DEFAULT_IMAGE_SIZE)
            .expect("default intrinsics are valid")
    }
}

/// Pixel coordinates plus camera-space depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

/// Projects a world point through `xi` then `k`.
pub fn project(p: &Vector3<f64>, k: &CameraIntrinsics, xi: &CameraExtrinsics) -> Result<Projection, GeometryError> {
    k.project_camera(&xi.to_camera(p))
}
