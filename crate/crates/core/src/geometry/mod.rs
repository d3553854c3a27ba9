//! Camera models, rotations, projection and mesh loading.

mod camera;
mod mesh;
mod rotation;

use thiserror::Error;

pub use camera::{
    project, viewpoint_to_extrinsics, CameraExtrinsics, CameraIntrinsics, Projection, Viewpoint,
    DEFAULT_FOCAL_LENGTH_MM, DEFAULT_IMAGE_SIZE, DEFAULT_SENSOR_WIDTH_MM,
};
pub use mesh::{load_mesh, parse_obj, Mesh, MeshError, Normalization};
pub use rotation::{orthonormality_defect, RotationMatrix, ROTATION_TOLERANCE};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GeometryError {
    #[error("invalid viewpoint: {0}")]
    InvalidViewpoint(String),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("not a rotation matrix (|RᵀR - I|∞ = {orthogonality:e}, det = {determinant})")]
    InvalidRotation { orthogonality: f64, determinant: f64 },
    #[error("rotation axis has zero length")]
    ZeroAxis,
    #[error("point is behind the camera (depth {depth})")]
    BehindCamera { depth: f64 },
}
