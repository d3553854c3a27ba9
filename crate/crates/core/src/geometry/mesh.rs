//! Triangle meshes and a Wavefront OBJ subset loader.
//!
//! Only `v` and `f` records are interpreted; polygons are fan-triangulated. Every
//! other record (`vt`, `vn`, `o`, `g`, `s`, `usemtl`, `mtllib`, ...) is ignored.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("mesh file not found: {0}")]
    Missing(PathBuf),
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed OBJ at line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("mesh has no faces")]
    NoFaces,
    #[error("mesh has degenerate extent (all vertices coincide)")]
    DegenerateExtent,
    #[error("triangle {triangle} is invalid: {message}")]
    InvalidTriangle { triangle: usize, message: String },
}

/// How raw file coordinates were mapped to the normalized frame:
/// `normalized = (raw - center) * scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub center: Vector3<f64>,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[usize; 3]>,
    pub face_normals: Option<Vec<Vector3<f64>>>,
    pub class_name: String,
    pub keywords: Vec<String>,
    pub source_id: String,
    pub normalization: Option<Normalization>,
    /// Faces dropped while loading because they referenced a vertex twice.
    pub dropped_faces: usize,
}

impl Mesh {
    /// Builds a mesh from raw geometry, checking index ranges and distinctness.
    pub fn new(vertices: Vec<Vector3<f64>>, triangles: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        if triangles.is_empty() {
            return Err(MeshError::NoFaces);
        }
        for (i, t) in triangles.iter().enumerate() {
            if let Some(&bad) = t.iter().find(|&&idx| idx >= vertices.len()) {
                return Err(MeshError::InvalidTriangle {
                    triangle: i,
                    message: format!("index {bad} out of range for {} vertices", vertices.len()),
                });
            }
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(MeshError::InvalidTriangle { triangle: i, message: format!("repeated vertex in {t:?}") });
            }
        }
        Ok(Self {
            vertices,
            triangles,
            face_normals: None,
            class_name: String::new(),
            keywords: Vec::new(),
            source_id: String::new(),
            normalization: None,
            dropped_faces: 0,
        })
    }

    pub fn with_labels(mut self, class_name: impl Into<String>, keywords: Vec<String>) -> Self {
        self.class_name = class_name.into();
        self.keywords = keywords;
        self
    }

    pub fn with_source_id(mut self, id: impl Into<String>) -> Self {
        self.source_id = id.into();
        self
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    /// Recenters the bounding box on the origin and scales its diagonal to 1.
    /// Vertices not referenced by any triangle still count towards the bounds.
    pub fn normalize(&mut self) -> Result<Normalization, MeshError> {
        let (lo, hi) = self.bounds();
        let center = (lo + hi) / 2.0;
        let diagonal = (hi - lo).norm();
        if !(diagonal.is_finite() && diagonal > 0.0) {
            return Err(MeshError::DegenerateExtent);
        }
        let scale = 1.0 / diagonal;
        for v in &mut self.vertices {
            *v = (*v - center) * scale;
        }
        let n = Normalization { center, scale };
        self.normalization = Some(n);
        self.face_normals = None;
        Ok(n)
    }

    /// Unit face normals from the triangle winding (zero for degenerate triangles).
    pub fn compute_face_normals(&self) -> Vec<Vector3<f64>> {
        self.triangles
            .iter()
            .map(|&[a, b, c]| {
                let n = (self.vertices[b] - self.vertices[a]).cross(&(self.vertices[c] - self.vertices[a]));
                n.try_normalize(0.0).unwrap_or_else(Vector3::zeros)
            })
            .collect()
    }

    /// Serializes vertices and triangles as OBJ text. Coordinates are written in
    /// shortest round-trip form so that reloading reproduces them exactly.
    pub fn to_obj_string(&self) -> String {
        let mut out = String::new();
        for v in &self.vertices {
            let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
        }
        for t in &self.triangles {
            let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
        out
    }
}

/// Parses OBJ text into raw (unnormalized) geometry.
pub fn parse_obj(text: &str) -> Result<Mesh, MeshError> {
    let mut vertices: Vec<Vector3<f64>> = Vec::new();
    // (line, polygon) so that range errors can point at the source line.
    let mut faces: Vec<(usize, Vec<i64>)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut parts = line.split_whitespace();
        let Some(tag) = parts.next() else { continue };
        match tag {
            "v" => {
                let coords: Vec<&str> = parts.collect();
                if coords.len() < 3 || coords.len() > 4 {
                    return Err(MeshError::Malformed {
                        line: line_no,
                        message: format!("vertex needs 3 coordinates, got {}", coords.len()),
                    });
                }
                let mut xyz = [0.0; 3];
                for (slot, text) in xyz.iter_mut().zip(&coords) {
                    *slot = text.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| MeshError::Malformed {
                        line: line_no,
                        message: format!("invalid coordinate {text:?}"),
                    })?;
                }
                vertices.push(Vector3::new(xyz[0], xyz[1], xyz[2]));
            }
            "f" => {
                let mut poly = Vec::new();
                for token in parts {
                    let index_text = token.split('/').next().unwrap_or("");
                    let index: i64 = index_text.parse().map_err(|_| MeshError::Malformed {
                        line: line_no,
                        message: format!("invalid face index {token:?}"),
                    })?;
                    let resolved = match index {
                        0 => {
                            return Err(MeshError::Malformed { line: line_no, message: "face index 0".into() });
                        }
                        i if i > 0 => i - 1,
                        // Negative indices are relative to the vertices read so far.
                        i => vertices.len() as i64 + i,
                    };
                    if resolved < 0 {
                        return Err(MeshError::Malformed {
                            line: line_no,
                            message: format!("relative index {index} precedes the first vertex"),
                        });
                    }
                    poly.push(resolved);
                }
                if poly.len() < 3 {
                    return Err(MeshError::Malformed {
                        line: line_no,
                        message: format!("face needs at least 3 vertices, got {}", poly.len()),
                    });
                }
                faces.push((line_no, poly));
            }
            _ => {}
        }
    }

    let mut triangles = Vec::new();
    let mut dropped = 0;
    for (line_no, poly) in faces {
        if let Some(&bad) = poly.iter().find(|&&i| i as usize >= vertices.len()) {
            return Err(MeshError::Malformed {
                line: line_no,
                message: format!("face index {} out of range for {} vertices", bad + 1, vertices.len()),
            });
        }
        let poly: Vec<usize> = poly.into_iter().map(|i| i as usize).collect();
        for k in 1..poly.len() - 1 {
            let t = [poly[0], poly[k], poly[k + 1]];
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                dropped += 1;
            } else {
                triangles.push(t);
            }
        }
    }
    let mut mesh = Mesh::new(vertices, triangles)?;
    mesh.dropped_faces = dropped;
    Ok(mesh)
}

/// Loads and normalizes an OBJ file. The source id defaults to the file stem.
pub fn load_mesh(path: &Path) -> Result<Mesh, MeshError> {
    let text = std::fs::read_to_string(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            MeshError::Missing(path.to_path_buf())
        } else {
            MeshError::Io { path: path.to_path_buf(), source }
        }
    })?;
    let mut mesh = parse_obj(&text)?;
    mesh.normalize()?;
    mesh.source_id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(mesh)
}
