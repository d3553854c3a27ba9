//! Z-buffered software rasterizer producing flat-shaded grayscale sketches.
//!
//! Each triangle is transformed to camera space, clipped against a near plane,
//! projected, and scan-converted by testing pixel centers against edge functions.
//! Depth is interpolated as `1/z` in screen space, which is exact for planar
//! triangles under perspective. The nearest surface wins; on exact depth ties the
//! earlier triangle keeps the pixel.
//!
//! Shading is Lambertian under a headlight at the camera center, evaluated once
//! per face at its centroid and mapped to `[SHADE_MIN, SHADE_MAX]`. Faces are
//! two-sided since CAD exports rarely have consistent winding.

use std::path::Path;

use nalgebra::Vector3;
use thiserror::Error;

use crate::geometry::{CameraExtrinsics, CameraIntrinsics, Mesh};
use crate::imaging::{self, ImageIoError};

pub const BACKGROUND: u8 = 255;
pub const SHADE_MIN: u8 = 30;
pub const SHADE_MAX: u8 = 220;
/// Depth tolerance for vertex visibility against the z-buffer.
pub const VISIBILITY_EPSILON: f64 = 1e-3;
/// Camera-space near clipping plane.
pub const NEAR_PLANE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("nothing visible: mesh is entirely behind the camera or outside the frame")]
    EmptyRender,
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("mesh has no triangles")]
    EmptyMesh,
}

/// Row-major 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayscaleImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl GrayscaleImage {
    pub fn filled(width: u32, height: u32, value: u8) -> Self {
        Self { width, height, pixels: vec![value; width as usize * height as usize] }
    }

    pub fn from_raw(width: u32, height: u32, pixels: Vec<u8>) -> Option<Self> {
        (pixels.len() == width as usize * height as usize).then_some(Self { width, height, pixels })
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    pub fn save_png(&self, path: &Path) -> Result<(), ImageIoError> {
        imaging::save_gray(path, self.width, self.height, &self.pixels)
    }
}

/// Per-pixel rasterization result.
#[derive(Debug, Clone)]
pub struct Raster {
    pub width: u32,
    pub height: u32,
    /// Camera-space depth of the winning surface, `+inf` for background.
    pub depth: Vec<f64>,
    /// Index of the winning triangle, `None` for background.
    pub face: Vec<Option<u32>>,
    /// Shade of every mesh triangle.
    pub face_shade: Vec<u8>,
}

impl Raster {
    fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    pub fn depth_at(&self, x: u32, y: u32) -> f64 {
        self.depth[self.index(x, y)]
    }

    pub fn face_at(&self, x: u32, y: u32) -> Option<u32> {
        self.face[self.index(x, y)]
    }

    pub fn to_image(&self) -> GrayscaleImage {
        let pixels = self.face.iter().map(|f| f.map_or(BACKGROUND, |i| self.face_shade[i as usize])).collect();
        GrayscaleImage { width: self.width, height: self.height, pixels }
    }
}

#[derive(Clone, Copy)]
struct ScreenVertex {
    u: f64,
    v: f64,
    inv_z: f64,
}

fn headlight_shade(cam: &[Vector3<f64>; 3]) -> Option<u8> {
    let normal = (cam[1] - cam[0]).cross(&(cam[2] - cam[0]));
    let centroid = (cam[0] + cam[1] + cam[2]) / 3.0;
    let denom = normal.norm() * centroid.norm();
    if !(denom > 0.0) {
        return None;
    }
    let cos = (normal.dot(&centroid) / denom).abs().min(1.0);
    let span = f64::from(SHADE_MAX - SHADE_MIN);
    Some((f64::from(SHADE_MIN) + span * cos).round() as u8)
}

/// Sutherland–Hodgman against `z >= NEAR_PLANE`.
fn clip_near(poly: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    let mut out = Vec::with_capacity(poly.len() + 1);
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let a_in = a.z >= NEAR_PLANE;
        let b_in = b.z >= NEAR_PLANE;
        if a_in {
            out.push(a);
        }
        if a_in != b_in {
            let t = (NEAR_PLANE - a.z) / (b.z - a.z);
            let mut p = a + (b - a) * t;
            p.z = NEAR_PLANE;
            out.push(p);
        }
    }
    out
}

fn edge(a: &ScreenVertex, b: &ScreenVertex, px: f64, py: f64) -> f64 {
    (b.u - a.u) * (py - a.v) - (b.v - a.v) * (px - a.u)
}

/// Screen coordinates are relative to the principal point, and so are the pixel
/// centers tested against them. Shifting the principal point by whole pixels then
/// shifts coverage and depth exactly.
fn fill_triangle(raster: &mut Raster, tri: [ScreenVertex; 3], face: u32, principal: [f64; 2]) -> bool {
    let [a, b, c] = tri;
    let area = edge(&a, &b, c.u, c.v);
    if !(area.abs() > 0.0) || !area.is_finite() {
        return false;
    }
    let [cx, cy] = principal;
    let (w, h) = (raster.width as f64, raster.height as f64);
    let min_u = a.u.min(b.u).min(c.u) + cx;
    let max_u = a.u.max(b.u).max(c.u) + cx;
    let min_v = a.v.min(b.v).min(c.v) + cy;
    let max_v = a.v.max(b.v).max(c.v) + cy;
    if max_u < -1.0 || max_v < -1.0 || min_u > w + 1.0 || min_v > h + 1.0 {
        return false;
    }
    // Candidate pixels have centers in [min, max], padded by one pixel so the
    // bounding-box rounding never decides coverage; the edge test does.
    let x0 = ((min_u - 0.5).ceil() - 1.0).max(0.0) as u32;
    let y0 = ((min_v - 0.5).ceil() - 1.0).max(0.0) as u32;
    let x1 = ((max_u - 0.5).floor() + 1.0).min(w - 1.0);
    let y1 = ((max_v - 0.5).floor() + 1.0).min(h - 1.0);
    if x1 < 0.0 || y1 < 0.0 {
        return false;
    }
    let (x1, y1) = (x1 as u32, y1 as u32);
    let mut wrote = false;
    for y in y0..=y1 {
        let py = (y as f64 + 0.5) - cy;
        for x in x0..=x1 {
            let px = (x as f64 + 0.5) - cx;
            let w0 = edge(&b, &c, px, py) / area;
            let w1 = edge(&c, &a, px, py) / area;
            let w2 = edge(&a, &b, px, py) / area;
            if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                continue;
            }
            let inv_z = w0 * a.inv_z + w1 * b.inv_z + w2 * c.inv_z;
            if !(inv_z > 0.0) {
                continue;
            }
            let z = 1.0 / inv_z;
            let idx = y as usize * raster.width as usize + x as usize;
            if z < raster.depth[idx] {
                raster.depth[idx] = z;
                raster.face[idx] = Some(face);
                wrote = true;
            }
        }
    }
    wrote
}

/// Scan-converts `mesh` into depth and face-id buffers.
pub fn rasterize(mesh: &Mesh, k: &CameraIntrinsics, xi: &CameraExtrinsics) -> Result<Raster, RenderError> {
    let (width, height) = (k.width(), k.height());
    if width == 0 || height == 0 {
        return Err(RenderError::InvalidIntrinsics(format!("zero-area image {width}x{height}")));
    }
    if mesh.triangles.is_empty() {
        return Err(RenderError::EmptyMesh);
    }
    let n = width as usize * height as usize;
    let mut raster = Raster {
        width,
        height,
        depth: vec![f64::INFINITY; n],
        face: vec![None; n],
        face_shade: vec![BACKGROUND; mesh.triangles.len()],
    };
    let cam: Vec<Vector3<f64>> = mesh.vertices.iter().map(|p| xi.to_camera(p)).collect();
    let f = k.focal_px();
    let principal = k.principal_point();
    let mut any = false;

    for (fi, tri) in mesh.triangles.iter().enumerate() {
        let pts = [cam[tri[0]], cam[tri[1]], cam[tri[2]]];
        let Some(shade) = headlight_shade(&pts) else { continue };
        raster.face_shade[fi] = shade;
        if pts.iter().all(|p| p.z < NEAR_PLANE) {
            continue;
        }
        let poly = if pts.iter().all(|p| p.z >= NEAR_PLANE) { pts.to_vec() } else { clip_near(&pts) };
        if poly.len() < 3 {
            continue;
        }
        let screen: Vec<ScreenVertex> =
            poly.iter().map(|p| ScreenVertex { u: f * p.x / p.z, v: f * p.y / p.z, inv_z: 1.0 / p.z }).collect();
        for j in 1..screen.len() - 1 {
            any |= fill_triangle(&mut raster, [screen[0], screen[j], screen[j + 1]], fi as u32, principal);
        }
    }
    if !any {
        return Err(RenderError::EmptyRender);
    }
    Ok(raster)
}

/// Renders the shaded sketch: white background, faces in `[30, 220]`.
pub fn render_sketch(mesh: &Mesh, k: &CameraIntrinsics, xi: &CameraExtrinsics) -> Result<GrayscaleImage, RenderError> {
    rasterize(mesh, k, xi).map(|r| r.to_image())
}

/// A mesh vertex that survives the visibility test, in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisibleVertex {
    pub index: usize,
    pub u: f64,
    pub v: f64,
}

/// Vertices in front of the camera, inside the frame, and not occluded.
///
/// A vertex counts as unoccluded when its own pixel, or one of the 8 neighbors,
/// shows background or a surface no nearer than `depth - VISIBILITY_EPSILON`.
/// The neighborhood absorbs the sub-pixel offset between a vertex and the pixel
/// centers around it, where silhouette corners often fall on background and
/// steep faces change depth faster than the tolerance.
pub fn visible_vertices_in(
    raster: &Raster,
    mesh: &Mesh,
    k: &CameraIntrinsics,
    xi: &CameraExtrinsics,
) -> Vec<VisibleVertex> {
    let (w, h) = (raster.width as i64, raster.height as i64);
    let mut out = Vec::new();
    for (index, p) in mesh.vertices.iter().enumerate() {
        let c = xi.to_camera(p);
        let Ok(proj) = k.project_camera(&c) else { continue };
        if !(proj.u >= 0.0 && proj.v >= 0.0 && proj.u < w as f64 && proj.v < h as f64) {
            continue;
        }
        let (px, py) = (proj.u.floor() as i64, proj.v.floor() as i64);
        let unoccluded = |x: i64, y: i64| {
            let zbuf = raster.depth[(y * w + x) as usize];
            zbuf.is_infinite() || proj.depth <= zbuf + VISIBILITY_EPSILON
        };
        let visible = unoccluded(px, py)
            || (-1..=1).any(|dy| {
                (-1..=1).any(|dx| {
                    let (x, y) = (px + dx, py + dy);
                    x >= 0 && y >= 0 && x < w && y < h && unoccluded(x, y)
                })
            });
        if visible {
            out.push(VisibleVertex { index, u: proj.u, v: proj.v });
        }
    }
    out
}

pub fn visible_vertices(
    mesh: &Mesh,
    k: &CameraIntrinsics,
    xi: &CameraExtrinsics,
) -> Result<Vec<VisibleVertex>, RenderError> {
    let raster = rasterize(mesh, k, xi)?;
    Ok(visible_vertices_in(&raster, mesh, k, xi))
}
